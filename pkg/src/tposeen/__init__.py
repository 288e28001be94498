"""Time-periodic Oseen flow: kernels, whole-space solver and decay harness."""

from . import _backend
from .special import FlowParams, ein, ein_derivatives, wake
from .steady import gamma0, grad_gamma0, grad_phi0, phi0, verify_gamma0_bounds
from .periodic import constants, gamma_H, grad_gamma_H, grad_phi_perp, lq_time_norm, multiplier_diag, phi_perp
from .quadrature import (
    AnalyticSource,
    Envelope,
    GridSource,
    QuadratureSpec,
    convolve_r3,
    convolve_spacetime,
    verify_conv_exp,
    verify_exp_shift,
    verify_farwig,
    verify_wake_conv,
)
from .solver import (
    CutoffSpec,
    ForcingSpec,
    Grid,
    TimePeriodicField,
    compute_Fs,
    compute_Hs,
    dump_field,
    eval_velocity_farfield_periodic,
    eval_velocity_farfield_steady,
    eval_vorticity_farfield,
    fixed_point_residual,
    load_field,
    picard_solve,
    solve_linear,
)
from .harness import RaySpec, SampleTable, fit_decay, kernel_surrogate_decay, sample_quantities, weighted_norms

BACKEND = _backend.NAME
__version__ = "0.1.0"
