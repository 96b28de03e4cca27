"""Free-kernel checks against closed forms and high-precision quadrature.

Frozen reference values were produced with 30-digit mpmath quadrature of the
one-dimensional radial inversion formulas; the closed forms (Cauchy-type
constants, Yukawa resolvent, Gaussian limits) are stated inline.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy.integrate import quad

from heatlab import stable_kernel as sk
from heatlab.stable_kernel import StableParams

# mpmath oracles for p^a(t, r), radial inversion at 30 digits
FROZEN_DENSITY = [
    # (d, alpha, a, t, r, value)
    (1, 1.0, 1.0, 1.0, 0.0, 0.17368303944229079),
    (1, 1.0, 1.0, 1.0, 1.0, 0.15040073050133135),
    (1, 0.7, 1.0, 0.5, 2.0, 0.07265368992356294),
    (1, 1.5, 2.0, 0.3, 0.9, 0.21019681109647325),
    (2, 1.2, 1.0, 0.8, 1.3, 0.035289882918360849),
    (3, 0.9, 0.5, 0.6, 0.5, 0.028601894677325885),
]

# spectral-route values of Delta^{alpha/2} exp(-x^2/2) in d = 1
FROZEN_FRAC_LAP = [
    (0.8, 0.0, -0.7955434356753691),
    (0.8, 0.7, -0.49432353012381463),
    (1.5, 0.3, -0.76648813733390859),
]


def test_levy_constant_cauchy_value():
    # alpha = d = 1 gives exactly 1/pi
    assert_allclose(sk.levy_constant(1, 1.0), 1.0 / math.pi, rtol=1e-15)
    assert sk.levy_constant(2, 0.5) > 0
    assert sk.levy_constant(3, 1.9) > 0


def test_density_matches_frozen_values():
    for d, alpha, a, t, r, ref in FROZEN_DENSITY:
        p = StableParams(d, alpha, a, M=max(a, 1.0))
        got = sk.eval_density_radial(p, t, r, exact=True)
        assert_allclose(got, ref, rtol=1e-12)


def test_density_closed_form_at_origin():
    # d = 1, alpha = a = t = 1: exp(1/4) erfc(1/2) / (2 sqrt(pi))
    from scipy.special import erfc
    ref = math.exp(0.25) * erfc(0.5) / (2.0 * math.sqrt(math.pi))
    got = sk.eval_density(StableParams(1, 1.0, 1.0), 1.0, 0.0, exact=True)
    assert_allclose(got, ref, rtol=1e-13)


def test_gaussian_limit_small_a():
    p1 = StableParams(1, 1.0, 1e-9)
    assert_allclose(sk.eval_density(p1, 1.0, 0.0, exact=True),
                    sk.gaussian_density(1, 1.0, 0.0), rtol=1e-8)
    p3 = StableParams(3, 1.5, 1e-9)
    x = np.array([0.3, -0.2, 0.1])
    assert_allclose(sk.eval_density(p3, 0.7, x, exact=True),
                    sk.gaussian_density(3, 0.7, np.linalg.norm(x)), rtol=1e-8)


def test_scaling_identity():
    # p^a(t, r) = th^d p^{a'}(th^2 t, th r) with a' = a th^{-(2-alpha)/alpha}
    th = 2.0
    for d, alpha, a, t, r in [(1, 0.8, 1.0, 0.4, 0.7), (2, 1.4, 0.6, 1.1, 2.0)]:
        lhs = sk.eval_density_radial(StableParams(d, alpha, a, 10.0), t, r, exact=True)
        a2 = a * th ** (-(2.0 - alpha) / alpha)
        rhs = th**d * sk.eval_density_radial(
            StableParams(d, alpha, a2, max(10.0, a2)), th**2 * t, th * r, exact=True)
        assert_allclose(lhs, rhs, rtol=1e-10)


@pytest.mark.parametrize("d,alpha,a,t,tol", [
    (1, 0.5, 1.0, 1.0, 2e-7),
    (1, 1.5, 0.5, 0.1, 2e-7),
    (2, 1.0, 1.0, 1.0, 1e-6),
    (3, 1.2, 0.5, 0.5, 1e-6),
])
def test_mass_normalization(d, alpha, a, t, tol):
    mass, report = sk.density_mass(StableParams(d, alpha, a), t)
    assert abs(mass - 1.0) < tol, report


def test_slice_interpolation_accuracy():
    p = StableParams(1, 1.2, 1.0)
    sl = sk.build_slice(p, 0.6)
    rs = np.array([0.02, 0.3, 1.7, 4.0, 0.5 * sl.r_max])
    exact = sk.eval_density_radial(p, 0.6, rs, exact=True)
    assert_allclose(sl.eval(rs), exact, rtol=1e-5)
    # beyond the table the tail law takes over
    r_far = np.array([1.5 * sl.r_max])
    assert_allclose(sl.eval(r_far),
                    sk.eval_density_radial(p, 0.6, r_far, exact=True), rtol=1e-4)


def test_slice_cache_returns_same_object():
    sk.clear_slice_cache()
    p = StableParams(2, 0.9, 0.7)
    assert sk.build_slice(p, 0.25) is sk.build_slice(p, 0.25)


def test_gradient_frozen_value():
    # mpmath derivative of the radial profile, d = 1, alpha = a = t = 1, x = 1
    g = sk.grad_density(StableParams(1, 1.0, 1.0), 1.0, 1.0)
    assert_allclose(g, -0.042690600431301556, rtol=1e-10)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    p = StableParams(1, 1.3, 0.8)
    t = 0.45
    for _ in range(10):
        x = rng.uniform(-3.0, 3.0)
        h = 1e-3
        stencil = np.array([x - 2 * h, x - h, x + h, x + 2 * h])
        v = sk.eval_density_radial(p, t, np.abs(stencil), exact=True)
        fd = (v[0] - 8 * v[1] + 8 * v[2] - v[3]) / (12 * h)
        assert_allclose(sk.grad_density(p, t, x), fd, rtol=1e-6, atol=1e-12)


def test_gradient_vector_points():
    p = StableParams(2, 1.0, 1.0)
    x = np.array([[0.5, -0.2], [-0.5, 0.2]])
    g = sk.grad_density(p, 0.7, x)
    assert g.shape == (2, 2)
    assert_allclose(g[0], -g[1], rtol=1e-12)  # odd under x -> -x


def test_tail_matches_direct_quadrature():
    p = StableParams(1, 0.7, 1.0)
    for r, tol in [(12.0, 1e-5), (25.0, 1e-7)]:
        tv = sk.tail_value(p, 0.5, r)
        ev = sk.eval_density_radial(p, 0.5, r, exact=True)
        assert_allclose(tv, ev, rtol=tol)


def test_tail_structural_zero_is_harmless():
    # k alpha even kills sin(pi k alpha / 2); later orders must still be summed
    p = StableParams(1, 0.5, 1.0)
    tv = sk.tail_value(p, 1.0, 14.0)
    ev = sk.eval_density_radial(p, 1.0, 14.0, exact=True)
    assert_allclose(tv, ev, rtol=5e-6)


def test_tail_mass_internal_consistency():
    # difference of two tail masses equals the quadrature of tail_value
    p = StableParams(1, 1.1, 1.0)
    t, r1, r2 = 0.8, 15.0, 40.0
    omega = sk.sphere_surface(1)
    band, _ = quad(lambda r: omega * sk.tail_value(p, t, r), r1, r2, limit=200)
    diff = sk.tail_mass_beyond(p, t, r1) - sk.tail_mass_beyond(p, t, r2)
    assert_allclose(band, diff, rtol=1e-7)


def test_threshold_jump_rate_closed_form():
    got = sk.threshold_jump_rate(StableParams(1, 1.0, 1.0), 1.0)
    assert_allclose(got, 2.0 / math.pi, rtol=1e-15)


def test_ball_jump_intensity_d1_vs_quadrature():
    p = StableParams(1, 1.2, 1.0)
    got = sk.ball_jump_intensity(p, [2.0], [0.0], 0.5)
    kap = sk.levy_constant(1, 1.2)
    ref, _ = quad(lambda y: kap * abs(2.0 - y) ** (-2.2), -0.5, 0.5)
    assert_allclose(got, ref, rtol=1e-10)


def test_ball_jump_intensity_d2_vs_polar_quadrature():
    p = StableParams(2, 0.8, 1.0)
    x0, c, R = np.array([1.8, 0.4]), np.array([0.0, 0.0]), 0.6
    got = sk.ball_jump_intensity(p, x0, c, R)
    kap = p.a**p.alpha * sk.levy_constant(2, 0.8)

    def ring(s):
        val, _ = quad(
            lambda th: kap * np.linalg.norm(
                x0 - (c + s * np.array([math.cos(th), math.sin(th)]))) ** (-2.8),
            0.0, 2.0 * math.pi, limit=100)
        return s * val

    ref, _ = quad(ring, 0.0, R, limit=100)
    assert_allclose(got, ref, rtol=1e-7)


def test_fractional_laplacian_spectral_oracle():
    f = lambda x: np.exp(-np.asarray(x) ** 2 / 2.0)
    lap = lambda x: (np.asarray(x) ** 2 - 1.0) * np.exp(-np.asarray(x) ** 2 / 2.0)
    for alpha, x, ref in FROZEN_FRAC_LAP:
        got = sk.fractional_laplacian(alpha, f, x, delta=0.02, lap_f=lap)
        assert_allclose(got, ref, rtol=1e-5)


def test_resolvent_yukawa_limit():
    # d = 3, a -> 0: u_lambda(r) = exp(-sqrt(lam) r) / (4 pi r)
    p = StableParams(3, 1.0, 1e-9)
    for lam, r in [(1.0, 0.5), (2.0, 1.5)]:
        ref = math.exp(-math.sqrt(lam) * r) / (4.0 * math.pi * r)
        assert_allclose(sk.resolvent_density(p, lam, [r, 0.0, 0.0]), ref, rtol=1e-8)


def test_resolvent_d1_gaussian_limit():
    # d = 1, a -> 0: u_lambda(x) = exp(-sqrt(lam)|x|) / (2 sqrt(lam))
    p = StableParams(1, 1.0, 1e-9)
    ref = math.exp(-math.sqrt(3.0) * 0.7) / (2.0 * math.sqrt(3.0))
    assert_allclose(sk.resolvent_density(p, 3.0, [0.7]), ref, rtol=1e-8)


def test_resolvent_frozen_value():
    # mpmath oscillatory quadrature of cos(rho r)/(lam + psi(rho))/pi
    # at lam = 2, |x| = 0.8, a = 1, alpha = 1.2
    got = sk.resolvent_density(StableParams(1, 1.2, 1.0), 2.0, [0.8])
    assert_allclose(got, 0.099931278005997203, rtol=1e-8)


def test_resolvent_batch_matches_pointwise():
    p = StableParams(2, 1.3, 0.9)
    radii = np.array([0.05, 0.4, 2.0, 11.0])
    batch = sk._resolvent_radial_batch(p, 1.5, radii)
    singles = [sk.resolvent_density(p, 1.5, [r, 0.0]) for r in radii]
    assert_allclose(batch, singles, rtol=1e-7)


def test_resolvent_grad_kernel_vs_finite_difference():
    p = StableParams(1, 1.2, 1.0)
    lam, x0, h = 2.0, 0.8, 1e-4
    fd = (sk.resolvent_density(p, lam, [x0 + h])
          - sk.resolvent_density(p, lam, [x0 - h])) / (2 * h)
    G = sk.resolvent_grad_kernel(p, lam, x0)
    assert_allclose(-x0 * G, fd, rtol=1e-6)


@pytest.mark.parametrize("d", [1, 2])
def test_resolvent_apply_preserves_constants(d):
    p = StableParams(d, 1.0, 1.0)
    out = sk.resolvent_apply(p, 2.0, lambda pts: np.ones(pts.shape[0]),
                             np.zeros((1, d)))
    assert_allclose(out[0], 0.5, rtol=1e-6)


def test_grad_resolvent_apply_vs_finite_difference():
    p = StableParams(1, 1.2, 1.0)
    lam = 4.0
    f = lambda pts: np.exp(-np.sum(np.atleast_2d(pts) ** 2, axis=-1))
    g = sk.grad_resolvent_apply(p, lam, f, np.array([[0.4]]))
    h = 1e-3
    up = sk.resolvent_apply(p, lam, f, np.array([[0.4 + h]]))
    dn = sk.resolvent_apply(p, lam, f, np.array([[0.4 - h]]))
    assert_allclose(g[0, 0], (up[0] - dn[0]) / (2 * h), rtol=1e-4)


def test_domain_validation():
    with pytest.raises(sk.DomainError):
        StableParams(1, 2.0, 1.0)
    with pytest.raises(sk.DomainError):
        StableParams(1, 0.0, 1.0)
    with pytest.raises(sk.DomainError):
        StableParams(1, 1.0, 2.0, M=1.0)
    with pytest.raises(sk.DomainError):
        StableParams(0, 1.0, 1.0)
    with pytest.raises(sk.DomainError):
        sk.eval_density_radial(StableParams(1, 1.0, 1.0), -0.1, 1.0)
    with pytest.raises(sk.SingularityError):
        sk.levy_density(StableParams(1, 1.0, 1.0), [0.3], [0.3])
    with pytest.raises(sk.SingularityError):
        sk.resolvent_density(StableParams(2, 1.0, 1.0), 1.0, [0.0, 0.0])
    with pytest.raises(sk.SingularityError):
        sk.ball_jump_intensity(StableParams(1, 1.0, 1.0), [0.2], [0.0], 0.5)


@settings(max_examples=20, deadline=None)
@given(
    alpha=st.floats(0.4, 1.8),
    a=st.floats(0.3, 2.0),
    t=st.floats(0.05, 2.0),
    r=st.floats(0.0, 5.0),
)
def test_density_positive_and_radially_monotone(alpha, a, t, r):
    p = StableParams(1, alpha, a, M=2.0)
    v0 = sk.eval_density_radial(p, t, r, exact=True)
    v1 = sk.eval_density_radial(p, t, r + 0.3, exact=True)
    assert v0 > 0
    assert v1 <= v0 * (1 + 1e-9)


@settings(max_examples=15, deadline=None)
@given(alpha=st.floats(0.4, 1.8), a=st.floats(0.3, 2.0), t=st.floats(0.05, 2.0))
def test_scaling_identity_property(alpha, a, t):
    th = 1.7
    r = 0.9
    lhs = sk.eval_density_radial(StableParams(1, alpha, a, M=2.0), t, r, exact=True)
    a2 = a * th ** (-(2.0 - alpha) / alpha)
    rhs = th * sk.eval_density_radial(
        StableParams(1, alpha, a2, M=max(2.0, a2)), th**2 * t, th * r, exact=True)
    assert_allclose(lhs, rhs, rtol=1e-9)
