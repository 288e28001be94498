import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from oracles import ein_quad
from tposeen import _backend
from tposeen.special import EIN_SWITCH, FlowParams, c4_constant, ein, ein_derivatives, sqrt_neg_mu, wake

finite = st.floats(-50, 50, allow_nan=False)
points = st.tuples(finite, finite, finite)


def ein_alternating(z, nmax=200):
    # sum_{n>=1} (-1)^{n+1} z^n / (n n!), exact rational steps in mpmath
    import mpmath as mp

    mp.mp.dps = 40
    z = mp.mpf(z)
    total, term = mp.mpf(0), mp.mpf(1)
    for n in range(1, nmax):
        term = term * z / n
        total += (-1) ** (n + 1) * term / n
    return float(total)


def test_wake_examples():
    assert wake([1.0, 0.0, 0.0]) == 2.0
    assert wake([-1.0, 0.0, 0.0]) == 0.0
    assert wake([0.0, 3.0, 4.0]) == pytest.approx(5.0, abs=1e-15)
    assert wake([0.0, 0.0, 0.0]) == 0.0


def test_wake_no_cancellation_behind():
    x = np.array([-1e8, 1.0, 0.0])
    # |x| + x1 = 1/(|x| - x1) for rho = 1
    assert wake(x) == pytest.approx(1.0 / (2e8), rel=1e-12)


@given(points, st.floats(0.01, 100))
@example((0.0, 0.0, 7.315260582670813e-158), 0.5)
def test_wake_nonnegative_and_homogeneous(p, lam):
    x = np.array(p)
    s = wake(x)
    assert s >= 0
    assert wake(lam * x) == pytest.approx(lam * s, rel=1e-12, abs=1e-300)


def test_ein_examples():
    assert ein(0.0) == 0.0
    assert ein(1.0) == pytest.approx(0.796600, abs=5e-7)
    assert ein(2.0) == pytest.approx(1.319263, abs=5e-7)


def test_ein_against_independent_series():
    for z in (1.0, 2.0, 5.0, 12.5):
        assert ein(z) == pytest.approx(ein_alternating(z), rel=1e-13)


def test_ein_against_quadrature_e1_form():
    from scipy.special import exp1

    z = 2.0
    assert ein(z) == pytest.approx(np.euler_gamma + np.log(z) + exp1(z), rel=1e-14)
    for z in (0.3, 7.0, 29.9, 30.0, 30.1, 250.0):
        assert ein(z) == pytest.approx(ein_quad(z), rel=1e-12)


def test_ein_branches_agree_at_switch():
    from scipy.special import exp1

    z = np.array([EIN_SWITCH * (1 - 1e-9), EIN_SWITCH])
    v = ein(z)
    assert abs(v[0] - (np.euler_gamma + np.log(z[0]) + exp1(z[0]))) < 1e-12
    assert abs(v[1] - v[0]) < 1e-7


def test_ein_rejects_negative():
    with pytest.raises(ValueError):
        ein(-1.0)


def test_ein_derivative_fd():
    z = np.geomspace(0.1, 100, 40)
    h = 1e-4 * z
    fd = (ein(z + h) - ein(z - h)) / (2 * h)
    fd2 = (ein(z + 2 * h) - ein(z - 2 * h)) / (4 * h)
    rich = (4 * fd - fd2) / 3
    exact = -np.expm1(-z) / z
    assert np.max(np.abs(rich / exact - 1)) < 1e-8
    a = ein_derivatives(z, 0)[0]
    assert np.allclose(a, exact, rtol=1e-14)


def test_ein_derivatives_series_branch_continuous():
    u = np.array([0.5 - 1e-12, 0.5 + 1e-12])
    for m, d in enumerate(ein_derivatives(u, 3)):
        assert abs(d[0] - d[1]) < 1e-10, m


def test_backends_agree_on_ein_series():
    z = np.linspace(0.0, 29.99, 1001)
    ref = _backend.get("python").ein_series(z)
    for name in _backend.BACKENDS:
        assert np.allclose(_backend.get(name).ein_series(z), ref, rtol=1e-14, atol=0)


def test_sqrt_neg_mu_examples():
    w = sqrt_neg_mu(1.0, 2.0)
    assert w.real == pytest.approx(-0.455090, abs=5e-7)
    assert w.imag == pytest.approx(1.098684, abs=5e-7)
    assert abs(w * w - (-1 - 1j)) < 1e-14
    w0 = sqrt_neg_mu(1e-12, 2.0)
    assert abs(w0 - 1j) < 1e-11


@given(st.floats(-1e4, 1e4).filter(lambda e: abs(e) > 1e-6), st.floats(0.01, 50))
def test_sqrt_neg_mu_identity(eta, lam):
    w = sqrt_neg_mu(eta, lam)
    mu = lam**2 / 4 + 1j * eta
    assert abs(w * w + mu) <= 1e-14 * max(1.0, abs(mu))
    assert w.imag >= lam / 2 - 1e-12


def test_sqrt_neg_mu_rejects_zero():
    with pytest.raises(ValueError):
        sqrt_neg_mu(0.0, 1.0)


def _ratio_closed(eta, lam):
    a = lam**2 / 4
    im = np.sqrt((np.hypot(a, eta) + a) / 2)
    return (im - lam / 2) / np.sqrt(eta)


def test_c4_brute_force_scan():
    eta = np.geomspace(1.0, 1e6, 10**7)
    brute = float(np.min(_ratio_closed(eta, 1.0)))
    c4 = c4_constant(1.0, 1.0)
    assert c4 <= brute + 1e-12
    assert c4 == pytest.approx(brute, abs=1e-9)
    assert c4 == pytest.approx(0.300243, abs=5e-7)


def test_c4_large_eta_limit():
    assert c4_constant(1.0, 1e8) == pytest.approx(1 / np.sqrt(2), abs=1e-3)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 100))
def test_c4_lower_bound(lam, eta0):
    c4 = c4_constant(lam, eta0)
    assert c4 > 0
    eta = np.geomspace(eta0, 1e3 * eta0, 200)
    im = np.imag(sqrt_neg_mu(eta, lam))
    assert np.all(im - lam / 2 >= c4 * np.sqrt(eta) - 1e-12)


def test_flow_params():
    p = FlowParams(1.0, 2 * np.pi)
    assert p.omega == pytest.approx(1.0)
    assert p.mode_frequency(3) == pytest.approx(3.0)
    for bad in ((0.0, 1.0), (1.0, -1.0), (np.nan, 1.0)):
        with pytest.raises(ValueError):
            FlowParams(*bad)
