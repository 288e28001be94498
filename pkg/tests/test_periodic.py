import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdutil import laplacian4, off_axis_points, richardson_grad
from oracles import phi_perp_time_domain, spectral_velocity_kernel
from tposeen import _backend
from tposeen.harness import perp_gradient_l1
from tposeen.periodic import (
    choose_modes,
    constants,
    gamma_H,
    gamma_perp_mode,
    grad_gamma_H,
    grad_phi_perp,
    hess_gamma_H,
    lq_time_norm,
    multiplier_diag,
    multiplier_values,
    perp_tail_bound,
    phi_perp,
)
from tposeen.special import FlowParams, c4_constant, sqrt_neg_mu

P = FlowParams(1.0, 2 * np.pi)


def test_gamma_H_example():
    p = FlowParams(2.0)
    g = gamma_H(np.array([0.0, 1.0, 0.0]), 1.0, p)
    assert abs(g) == pytest.approx(np.exp(-1.098684) / (4 * np.pi), rel=1e-6)
    assert abs(g) == pytest.approx(0.02652, abs=5e-6)


@settings(max_examples=50)
@given(st.tuples(*[st.floats(-20, 20)] * 3).filter(lambda v: np.linalg.norm(v) > 1e-3), st.floats(0.05, 100), st.floats(0.1, 5))
def test_gamma_H_modulus_and_conjugation(x, eta, lam):
    x = np.array(x)
    p = FlowParams(lam)
    r = np.linalg.norm(x)
    w = sqrt_neg_mu(eta, lam)
    g = gamma_H(x, eta, p)
    expo = -w.imag * r - lam * x[0] / 2
    mod = np.exp(expo) / (4 * np.pi * r)
    # exp(a) carries a relative rounding error ~ |a| eps, so compare logarithms
    assert abs(np.log(abs(g)) - np.log(mod)) <= 1e-14 * max(1.0, abs(np.log(mod)))
    assert gamma_H(x, -eta, p) == pytest.approx(np.conj(g), rel=1e-14, abs=1e-300)
    assert np.allclose(grad_gamma_H(x, -eta, p), np.conj(grad_gamma_H(x, eta, p)), rtol=1e-13, atol=1e-300)


def test_grad_gamma_H_fd_example():
    x = np.array([1.0, 0.0, 1.0])
    fd = richardson_grad(lambda y: gamma_H(y, 2.0, P), x, 1e-3)
    assert np.max(np.abs(fd - grad_gamma_H(x, 2.0, P))) <= 1e-7 * np.max(np.abs(fd))


def test_hess_gamma_H_fd():
    x = np.array([0.7, -0.4, 1.1])
    fd = richardson_grad(lambda y: grad_gamma_H(y, 3.0, P), x, 1e-3)
    assert np.max(np.abs(fd - hess_gamma_H(x, 3.0, P))) <= 1e-7 * np.max(np.abs(fd))


@pytest.mark.parametrize("eta", [1.0, 2 * np.pi])
def test_gamma_H_pde_residual(eta):
    for x in off_axis_points(12, 1.0, 5.0, seed=int(eta * 7), min_rho=0.0):
        lap, d = laplacian4(lambda y: gamma_H(y, eta, P), x, 1e-2)
        res = 1j * eta * gamma_H(x, eta, P) - lap - P.lam * d[0]
        assert abs(res) <= 1e-5 * abs(gamma_H(x, eta, P))


def test_grad_gamma_H_bound_shape_finite():
    rng = np.random.default_rng(0)
    for eta in (1.0, 10.0, 100.0):
        x = off_axis_points(200, 0.5, 20, seed=int(eta), min_rho=0.0)
        r = np.linalg.norm(x, axis=-1)
        w = sqrt_neg_mu(eta, 1.0)
        shape = (1 + abs(w) + 1 / r) * np.exp(-w.imag * r - x[:, 0] / 2) / (4 * np.pi * r)
        ratio = np.linalg.norm(grad_gamma_H(x, eta, P), axis=-1) / shape
        assert np.all(np.isfinite(ratio)) and ratio.max() <= 1.0 + 1e-12
    del rng


def test_phi_perp_against_heat_kernel_sum():
    for x in (np.array([2.0, 0.0, 0.0]), np.array([-1.5, 0.5, 0.3]), np.array([0.2, 1.0, -0.8])):
        for t in (0.4, 2.0, 5.5):
            v, cert = phi_perp(t, x, P, tol=1e-10)
            ref = phi_perp_time_domain(t, x, P.lam, P.period, mmax=200)
            assert v == pytest.approx(ref, abs=1e-9)


def test_phi_perp_time_average_zero():
    x = np.array([1.3, -0.2, 0.5])
    t = P.period * np.arange(64) / 64
    # below the sampling Nyquist limit the discrete mean of every mode is exact
    v, _ = phi_perp(t, x, P, K=31)
    assert abs(v.mean()) <= 1e-15
    g, _ = grad_phi_perp(t, x, P, K=31)
    assert np.max(np.abs(g.mean(axis=0))) <= 1e-15


def test_phi_perp_refinement_example():
    x = np.array([2.0, 0.0, 0.0])
    v, cert = phi_perp(0.0, x, P, tol=1e-8)
    v2, _ = phi_perp(0.0, x, P, K=2 * cert.K_used)
    assert abs(v - v2) <= float(cert.tail_bound)
    g, gc = grad_phi_perp(0.0, x, P, tol=1e-8)
    g2, _ = grad_phi_perp(0.0, x, P, K=2 * gc.K_used)
    assert np.max(np.abs(g - g2)) <= float(gc.tail_bound)


@settings(max_examples=40, deadline=None)
@given(st.floats(1.0, 10.0), st.floats(0, 2 * np.pi), st.floats(-1, 1), st.floats(0, 2 * np.pi), st.sampled_from([1e-4, 1e-6, 1e-9]))
def test_truncation_certificate_sound(r, t, c, phi, tol):
    s = np.sqrt(1 - c * c)
    x = r * np.array([c, s * np.cos(phi), s * np.sin(phi)])
    v, cert = phi_perp(t, x, P, tol=tol)
    v2, _ = phi_perp(t, x, P, K=2 * cert.K_used)
    assert abs(v - v2) <= float(cert.tail_bound)
    assert float(cert.tail_bound) <= tol


def test_tail_bound_monotone():
    K = np.arange(1, 50)
    b = np.array([perp_tail_bound(1.0, k, P) for k in K])
    assert np.all(np.diff(b) < 0)
    assert choose_modes(1.0, 1e-8, P) <= choose_modes(1.0, 1e-10, P)


def test_grad_phi_perp_fd():
    for x in off_axis_points(6, 1.0, 6.0, seed=4):
        fd = richardson_grad(lambda y: phi_perp(0.7, y, P, K=400)[0], x, 1e-3)
        g, _ = grad_phi_perp(0.7, x, P, K=400)
        assert np.max(np.abs(fd - g)) <= 1e-5 * np.max(np.abs(fd))


def test_lq_norm_monotone_and_jensen():
    kw = dict(rtol=1e-5, series_tol=1e-8)
    n1 = [lq_time_norm("phi_perp", np.array([-r, 0.0, 0.0]), 1, P, **kw) for r in (1.0, 2.0, 4.0)]
    assert n1[0] > n1[1] > n1[2] > 0
    x = np.array([0.0, 2.0, 0.0])
    assert lq_time_norm("phi_perp", x, 2, P, **kw) >= lq_time_norm("phi_perp", x, 1, P, **kw)


def test_lq_norm_rate_scan():
    c = constants(P)
    vals = []
    for r in (1.0, 2.0, 4.0):
        n = lq_time_norm("phi_perp", np.array([-r, 0.0, 0.0]), 1, P, rtol=1e-5, series_tol=1e-8)
        vals.append(n * r**1.5 * np.exp(c.C3 * r))
    assert max(vals) / min(vals) < 3


def test_lq_norm_rejects_small_q():
    with pytest.raises(ValueError):
        lq_time_norm("phi_perp", np.array([1.0, 0, 0]), 0.5, P)


def test_time_l1_heat_sum_matches_mode_series():
    # the surrogate's heat-kernel time integral against the mode series
    for x in (np.array([-3.0, 0.5, 0.0]), np.array([0.0, 2.0, 1.0]), np.array([-10.0, 2.0, 0.0])):
        a = perp_gradient_l1(x, P)[0]
        b = P.period * lq_time_norm("grad_phi_perp", x, 1, P)
        assert a == pytest.approx(b, rel=5e-4)


def test_heat_backends_agree():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(20, 3)) * 3
    ref = perp_gradient_l1(z, P, backend="python")
    for name in _backend.BACKENDS:
        assert np.allclose(perp_gradient_l1(z, P, backend=name), ref, rtol=1e-12, atol=1e-300)
    with pytest.raises(ValueError):
        _backend.get("fortran")


def test_constants_identities():
    c = constants(P, S0=1.0, S=2.0)
    assert c.C4 == pytest.approx(c4_constant(1.0, 1.0), rel=1e-15)
    assert c.C5 == pytest.approx(np.sqrt(np.pi / P.period) * c.C4 / 2, rel=1e-15)
    assert c.C3 == c.C5
    assert c.K == pytest.approx(min(P.lam, c.C3) / 4, rel=1e-15)
    assert c.C5 == pytest.approx(0.106152, abs=5e-7)
    assert c.to_dict()["S"] == 2.0


def test_multiplier_vanishes_below_cutoff():
    eta = np.linspace(-0.5, 0.5, 101)
    for alpha in (0, 1):
        m, dm = multiplier_values(alpha, np.array([-2.0, 0, 0]), 0.25, P, eta)
        assert np.all(m == 0) and np.all(dm == 0)


def test_multiplier_eta_derivative_fd():
    x = np.array([-1.5, 0.5, 0.0])
    eta = np.array([0.8, 3.0, 40.0])
    h = 1e-5 * eta
    for alpha in (0, 1):
        m, edm = multiplier_values(alpha, x, 0.25, P, eta)
        mp, _ = multiplier_values(alpha, x, 0.25, P, eta + h)
        mm, _ = multiplier_values(alpha, x, 0.25, P, eta - h)
        assert np.allclose(edm, eta * (mp - mm) / (2 * h), rtol=1e-6)


@pytest.mark.parametrize("alpha", [0, 1])
def test_multiplier_normalized_sup(alpha):
    reps = [multiplier_diag(alpha, np.array([-r, 0.0, 0.0]), 0.25, P) for r in (1.0, 2.0, 4.0)]
    vals = [rep.normalized for rep in reps]
    assert all(np.isfinite(v) and v > 0 for v in vals)
    assert max(vals) / min(vals) < 3


@pytest.mark.parametrize("gamma", [0.1, 0.5, 0.9])
def test_multiplier_sup_finite(gamma):
    for alpha in (0, 1, 2):
        rep = multiplier_diag(alpha, np.array([0.5, 1.0, -0.3]), gamma, P, n_eta=2001)
        assert np.isfinite(rep.sup)
    with pytest.raises(ValueError):
        multiplier_diag(0, np.array([1.0, 0, 0]), 1.0, P)


@pytest.mark.slow
def test_gamma_perp_mode_against_spectral_inversion():
    eta = P.mode_frequency(1)
    for x in (np.array([0.0, 1.5, 0.0]), np.array([-1.0, 0.6, 0.4])):
        G = gamma_perp_mode(1, x, P, tol=1e-6)
        ref = spectral_velocity_kernel(x, P.lam, eta=eta)
        scale = np.max(np.abs(ref))
        assert np.max(np.abs(G - G.T)) <= 1e-2 * scale
        assert np.max(np.abs(G - ref)) <= 1e-2 * scale
        assert abs(np.trace(G) - 2 * gamma_H(x, eta, P)) <= 5e-2 * abs(2 * gamma_H(x, eta, P))


def test_gamma_perp_mode_rejects_steady():
    with pytest.raises(ValueError):
        gamma_perp_mode(0, np.array([1.0, 0, 0]), P)
