"""Drift-class diagnostics: moduli, H/N kernels, functionals, mollification."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from heatlab import kato
from heatlab.stable_kernel import DomainError, SingularityError


def test_constant_modulus_closed_form():
    # f = 1 in d = 2: the weight cancels the Jacobian, M_f(r) = 2 pi r
    f = kato.constant_drift(2, [1.0, 0.0])
    for r in (0.5, 1.0, 2.0):
        assert_allclose(kato.kato_modulus(f, r), 2.0 * math.pi * r, rtol=1e-12)


def test_modulus_zero_field_and_scaling():
    z = kato.constant_drift(2, [0.0, 0.0])
    assert kato.kato_modulus(z, 1.0) == 0.0
    f1 = kato.bump_drift(2, amplitude=1.0)
    f3 = kato.bump_drift(2, amplitude=3.0)
    assert_allclose(kato.kato_modulus(f3, 0.7),
                    3.0 * kato.kato_modulus(f1, 0.7), rtol=1e-12)


def test_invpow_modulus_closed_form():
    # |x|^{-1/2} in d = 2, center at the singularity:
    # M(r) = omega r^{1/2} / (1/2) = 4 pi sqrt(r) for r <= cutoff
    f = kato.invpow_drift(2, 0.5, cutoff=1.0)
    for r in (0.0625, 0.25):
        assert_allclose(kato.kato_modulus(f, r), 4.0 * math.pi * math.sqrt(r),
                        rtol=1e-6)


def test_modulus_nondecreasing_in_r():
    f = kato.bump_drift(2, amplitude=1.5, width=0.8)
    radii = [0.1, 0.2, 0.4, 0.8, 1.6]
    vals = [kato.kato_modulus(f, r) for r in radii]
    # independent quadratures per radius, so allow their error in the ordering
    assert all(b >= a * (1 - 1e-6) for a, b in zip(vals, vals[1:]))


def test_modulus_rejects_d1():
    with pytest.raises(DomainError):
        kato.kato_modulus(kato.bump_drift(1), 0.5)


def test_h_kernel_branches():
    # crossover at |x|^2 = r, hand value at (d=2, beta=1, r=1, |x|=2)
    assert_allclose(kato.h_kernel(1.0, 1.0, [2.0, 0.0]), 0.125, rtol=1e-15)
    assert_allclose(kato.h_kernel(1.0, 4.0, [2.0, 0.0]), 0.5, rtol=1e-15)
    # beta-monotone beyond the crossover
    assert kato.h_kernel(2.0, 1.0, [2.0, 0.0]) <= kato.h_kernel(0.8, 1.0, [2.0, 0.0])
    with pytest.raises(SingularityError):
        kato.h_kernel(1.0, 1.0, [0.0, 0.0])


def test_h_functional_constant_closed_form():
    # f = c: H_f = c omega sqrt(r) 2 beta/(2 beta - 1), independent of x
    f = kato.constant_drift(2, [1.0, 0.0])
    for x in ([0.0, 0.0], [0.3, -0.7], [5.0, 2.0]):
        got = kato.h_functional(f, 1.0, 1.0, x)
        assert_allclose(got, 4.0 * math.pi, rtol=1e-10)


def test_h_functional_sandwich_single_center():
    # H_f(r, x) dominates the local modulus integral at the same center
    f = kato.bump_drift(2, amplitude=2.0, width=1.0)
    x = np.array([0.2, 0.1])
    r = 0.49
    h = kato.h_functional(f, 1.0, r, x)
    local = kato.kato_modulus(f, math.sqrt(r), centers=x[None, :])
    assert h >= local * (1 - 1e-9)


def test_n_kernel_identity_two_routes():
    # incomplete-gamma form vs direct time quadrature
    cases = [(2, 1.0, 1.0, 1.0), (2, 0.7, 0.3, 0.8), (3, 1.3, 2.0, 1.1),
             (1, 2.0, 1.0, 0.5)]
    for d, beta, r, s in cases:
        x = np.zeros(d)
        x[0] = s
        a = kato.n_kernel(beta, r, x)
        b = kato.n_kernel_direct(beta, r, x)
        assert_allclose(a, b, rtol=1e-8)


def test_n_kernel_full_gamma_limit():
    # r -> infinity: beta^{-(d-1)/2} |x|^{-(d-1)} Gamma((d-1)/2)
    got = kato.n_kernel(2.0, 1e14, [1.5, 0.0])
    ref = 2.0**-0.5 / 1.5 * math.gamma(0.5)
    assert_allclose(got, ref, rtol=1e-6)


def test_n_functional_trend_kato_vs_not():
    # compact bump: decays along r = 4^{-k}; the p = 1 inverse power stays up
    bump = kato.bump_drift(2, amplitude=1.0, width=1.0)
    hard = kato.invpow_drift(2, 1.0, cutoff=1.0)
    radii = [1.0, 0.25, 0.0625, 0.015625]
    ctr_b = np.array([[0.0, 0.0], [0.4, 0.0], [0.0, -0.4]])
    ctr_h = np.array([[0.0, 0.0], [0.3, 0.3]])
    nb = [kato.n_functional_sup(bump, 1.0, r, centers=ctr_b) for r in radii]
    nh = [kato.n_functional_sup(hard, 1.0, r, centers=ctr_h) for r in radii]
    assert all(b1 > b2 for b1, b2 in zip(nb, nb[1:]))
    assert nb[-1] < 0.25 * nb[0]
    assert min(nh) > 0.8 * max(nh)  # bounded away from zero


def test_mollify_preserves_constants():
    f = kato.constant_drift(2, [0.7, -0.2])
    fm = kato.mollify(f, 3)
    pts = np.array([[0.0, 0.0], [1.2, -3.4]])
    assert_allclose(fm.eval(pts), f.eval(pts), rtol=1e-12)


def test_mollify_modulus_monotone():
    f = kato.bump_drift(2, amplitude=1.0, width=1.0)
    ctrs = np.array([[0.0, 0.0], [0.3, 0.2], [-0.5, 0.0]])
    for n in (2, 4):
        fn = kato.mollify(f, n)
        for r in (0.25, 0.5):
            assert (kato.kato_modulus(fn, r, centers=ctrs)
                    <= kato.kato_modulus(f, r, centers=ctrs) + 1e-8)


def test_mollify_converges_on_continuous_field():
    f = kato.bump_drift(2, amplitude=1.0, width=1.0)
    box = np.stack(np.meshgrid(np.linspace(-1, 1, 9), np.linspace(-1, 1, 9),
                               indexing="ij"), axis=-1).reshape(-1, 2)
    dists = []
    for n in (2, 8, 32):
        fn = kato.mollify(f, n)
        dists.append(float(np.max(np.abs(fn.eval(box) - f.eval(box)))))
    assert dists[2] < dists[1] < dists[0]
    assert dists[2] < 0.01


def test_kato_report_modes():
    rep2 = kato.kato_report(kato.bump_drift(2, amplitude=1.0), alpha=0.6)
    assert rep2.mode == "kato-modulus"
    assert rep2.verdict
    assert_allclose(rep2.gamma, 0.8)
    assert np.all(np.diff(rep2.moduli) <= 1e-12)  # decreasing with the radii

    rep1 = kato.kato_report(kato.bump_drift(1, amplitude=2.0), alpha=1.5)
    assert rep1.mode == "sup-norm"
    assert rep1.verdict
    assert_allclose(rep1.gamma, 1.0)
    assert_allclose(rep1.moduli[0], 2.0, rtol=1e-6)


def test_gamma_exponent_kink():
    assert_allclose(kato.gamma_exponent(0.5), 0.75)
    assert_allclose(kato.gamma_exponent(1.7), 1.0)


def test_parse_drift_round_trip():
    f = kato.parse_drift("bump:amplitude=2,width=1.5", 2)
    assert f.kind == "bump"
    assert f.bound_hint == 2.0
    g = kato.parse_drift("constant:value=0.5", 1)
    assert_allclose(g.eval(np.zeros((1, 1)))[0, 0], 0.5)
    h = kato.parse_drift("invpow:p=0.5", 2)
    assert h.singular_points == ((0.0, 0.0),)
    with pytest.raises(DomainError):
        kato.parse_drift("mystery:p=1", 2)


def test_sampled_drift_interpolates():
    g = np.linspace(-2, 2, 41)
    v = np.sin(g)[:, None]
    f = kato.sampled_drift(1, g, v)
    assert_allclose(f.eval(np.array([[0.45]]))[0, 0], math.sin(0.45), atol=2e-3)
    assert f.eval(np.array([[5.0]]))[0, 0] == 0.0
