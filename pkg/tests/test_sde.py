"""Path sampling: subordinator laws, Euler marginals, jump and exit statistics."""

import csv
import json
import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from heatlab.duhamel import SpaceTimeGrid, build_table_p0, sum_series
from heatlab.kato import bump_drift, constant_drift, invpow_drift
from heatlab.sde import (
    PathEnsemble,
    SimConfig,
    empirical_density,
    ensemble_to_csv,
    exit_kappa_uniformity,
    exit_time_stats,
    jump_rate_check,
    sample_levy_increment,
    sample_subordinator_increment,
    save_report,
    simulate_paths,
)
from heatlab.stable_kernel import (
    AccuracyWarning,
    DomainError,
    StableParams,
    ball_jump_intensity,
    eval_density,
)

P1 = StableParams(d=1, alpha=1.5, a=0.75, M=2.0)


def test_config_validation():
    with pytest.raises(DomainError):
        SimConfig(params=P1, drift=None, x0=(0.0,), T=1.0, dt=0.0, N=10, seed=1)
    with pytest.raises(DomainError):
        SimConfig(params=P1, drift=None, x0=(0.0,), T=1.0, dt=0.1, N=0, seed=1)
    with pytest.raises(DomainError):
        SimConfig(params=P1, drift=None, x0=(0.0,), T=0.05, dt=0.1, N=10, seed=1)
    with pytest.raises(DomainError):
        SimConfig(params=P1, drift=None, x0=(0.0, 0.0), T=1.0, dt=0.1, N=10, seed=1)
    with pytest.raises(DomainError):
        SimConfig(params=P1, drift=None, x0=(0.0,), T=1.0, dt=0.1, N=10, seed=1,
                  record_times=(0.55,))
    with pytest.raises(DomainError):
        SimConfig(params=P1, drift=None, x0=(0.0,), T=1.0, dt=0.1, N=10, seed=1,
                  jump_threshold=-1.0)
    cfg = SimConfig(params=P1, drift=None, x0=(0.0,), T=1.0, dt=0.25, N=10, seed=1)
    assert cfg.steps == 4
    assert cfg.rho == pytest.approx(3.0 * 0.5)


def test_subordinator_laplace_transform():
    # E exp(-S_dt) = exp(-dt) at dt = 1, checked to 3 standard errors
    rng = np.random.default_rng(101)
    for beta in (0.25, 0.5, 0.75):
        s = sample_subordinator_increment(beta, 1.0, rng, size=10**6)
        assert np.all(s > 0)
        v = np.exp(-s)
        se = v.std() / 1000.0
        assert abs(v.mean() - math.exp(-1.0)) <= 3.0 * se


def test_subordinator_self_similarity():
    # S_{2 dt} and 2^{2/alpha} S_dt share a law (two-sample KS above the
    # 1 percent level)
    rng = np.random.default_rng(7)
    beta = 0.6
    s1 = sample_subordinator_increment(beta, 0.5, rng, size=10**5)
    s2 = sample_subordinator_increment(beta, 1.0, rng, size=10**5)
    res = ks_2samp(s2, 2.0 ** (1.0 / beta) * s1)
    assert res.pvalue > 0.01


def test_subordinator_validation():
    rng = np.random.default_rng(0)
    for bad in (0.0, 1.0, -0.2, 1.7):
        with pytest.raises(DomainError):
            sample_subordinator_increment(bad, 1.0, rng)
    with pytest.raises(DomainError):
        sample_subordinator_increment(0.5, 0.0, rng)
    one = sample_subordinator_increment(0.5, 0.3, rng)
    assert isinstance(one, float) and one > 0


def test_levy_increment_cf_at_unit_frequency():
    # mean cos(xi . dZ) = exp(-dt (1 + a^alpha)) at |xi| = 1, a = 1
    params = StableParams(d=1, alpha=1.3, a=1.0, M=1.0)
    rng = np.random.default_rng(21)
    dt = 0.2
    z = sample_levy_increment(params, dt, rng, size=10**6)
    c = np.cos(z[:, 0])
    se = c.std() / 1000.0
    assert abs(c.mean() - math.exp(-dt * 2.0)) <= 3.0 * se


def test_levy_increment_cf_five_frequencies():
    # simultaneous CF check, Bonferroni-adjusted critical value
    params = StableParams(d=2, alpha=1.3, a=1.0, M=1.0)
    rng = np.random.default_rng(22)
    dt = 0.2
    z = sample_levy_increment(params, dt, rng, size=4 * 10**5)
    z_crit = 3.09  # two-sided 1% split five ways
    for k, rho in enumerate((0.25, 0.5, 1.0, 2.0, 4.0)):
        ang = 0.7 * k
        xi = rho * np.array([math.cos(ang), math.sin(ang)])
        c = np.cos(z @ xi)
        theory = math.exp(-dt * (rho**2 + rho**1.3))
        se = c.std() / math.sqrt(z.shape[0])
        assert abs(c.mean() - theory) <= z_crit * se


def test_levy_increment_small_a_limits():
    params = StableParams(d=2, alpha=1.0, a=1e-9, M=1.0)
    rng = np.random.default_rng(5)
    dt = 0.4
    z = sample_levy_increment(params, dt, rng, size=2 * 10**5)
    n = z.shape[0]
    for ax in range(2):
        v = z[:, ax] ** 2
        se = v.std() / math.sqrt(n)
        assert abs(v.mean() - 2.0 * dt) <= 3.0 * se
    prod = z[:, 0] * z[:, 1]
    assert abs(prod.mean()) <= 3.0 * prod.std() / math.sqrt(n)
    one = sample_levy_increment(params, dt, rng)
    assert one.shape == (2,)


def test_simulate_brownian_variance():
    # b = 0, a -> 0: terminal variance per axis 2T
    params = StableParams(d=1, alpha=1.0, a=1e-9, M=1.0)
    cfg = SimConfig(params=params, drift=None, x0=(0.0,), T=0.25, dt=1.0 / 128,
                    N=50_000, seed=9)
    ens = simulate_paths(cfg)
    x = ens.kept(0.25)[:, 0]
    v = x**2
    se = v.std() / math.sqrt(v.size)
    assert abs(v.mean() - 0.5) <= 3.0 * se
    assert ens.aborted_fraction < 1e-3


def test_simulate_constant_drift_mean():
    cfg = SimConfig(params=P1, drift=constant_drift(1, 0.7), x0=(0.3,), T=0.5,
                    dt=1.0 / 256, N=40_000, seed=3)
    ens = simulate_paths(cfg)
    x = ens.kept(0.5)[:, 0]
    se = x.std() / math.sqrt(x.size)
    assert abs(x.mean() - (0.3 + 0.7 * 0.5)) <= 3.5 * se


def test_simulate_records_marginals_at_requested_times():
    cfg = SimConfig(params=P1, drift=None, x0=(0.0,), T=0.5, dt=1.0 / 64,
                    N=500, seed=2, record_times=(0.25, 0.5))
    ens = simulate_paths(cfg)
    assert ens.times == (0.25, 0.5)
    assert ens.marginal(0.25).shape == (500, 1)
    with pytest.raises(DomainError):
        ens.marginal(0.125)
    # spreads out in time
    assert ens.marginal(0.5)[:, 0].std() > ens.marginal(0.25)[:, 0].std()


def test_reproducibility_bit_exact():
    drift = bump_drift(1, amplitude=2.0, center=(0.0,), width=1.0)
    mk = lambda seed: SimConfig(params=P1, drift=drift, x0=(0.0,), T=0.25,
                                dt=1.0 / 64, N=3000, seed=seed,
                                jump_threshold=0.5)
    a = simulate_paths(mk(77))
    b = simulate_paths(mk(77))
    c = simulate_paths(mk(78))
    assert np.array_equal(a.marginal(0.25), b.marginal(0.25))
    assert np.array_equal(a.jump_time, b.jump_time)
    assert np.array_equal(a.jump_vec, b.jump_vec)
    assert np.array_equal(a.aborted, b.aborted)
    assert not np.array_equal(a.marginal(0.25), c.marginal(0.25))
    assert a.lineage == b.lineage


def test_jump_records_consistent():
    cfg = SimConfig(params=P1, drift=None, x0=(0.0,), T=0.5, dt=1.0 / 64,
                    N=4000, seed=13, jump_threshold=0.25)
    ens = simulate_paths(cfg)
    assert ens.jump_path.size > 0
    sizes = np.sqrt(np.sum(ens.jump_vec**2, axis=-1))
    assert np.all(sizes > 0.25)
    assert np.all(ens.jump_time <= 0.5 + 1e-12)
    assert np.all((ens.jump_path >= 0) & (ens.jump_path < 4000))
    # a huge threshold records nothing
    quiet = simulate_paths(
        SimConfig(params=P1, drift=None, x0=(0.0,), T=0.25, dt=1.0 / 64,
                  N=500, seed=13, jump_threshold=1e6))
    assert quiet.jump_path.size == 0


def _synthetic_ensemble(samples: np.ndarray, t: float) -> PathEnsemble:
    n, d = samples.shape
    params = StableParams(d=d, alpha=1.0, a=1.0, M=1.0)
    cfg = SimConfig(params=params, drift=None, x0=(0.0,) * d, T=t, dt=t,
                    N=n, seed=0)
    return PathEnsemble(
        config=cfg, times=(t,), samples={t: samples},
        aborted=np.zeros(n, dtype=bool),
        jump_time=np.empty(0), jump_path=np.empty(0, dtype=np.int64),
        jump_pre=np.empty((0, d)), jump_vec=np.empty((0, d)))


def test_empirical_density_uniform_flat_and_normalized():
    grid = SpaceTimeGrid(1, 4.0, 64, (1.0,))
    rng = np.random.default_rng(31)
    pts = rng.uniform(-4.0, 4.0, (200_000, 1))
    est = empirical_density(_synthetic_ensemble(pts, 1.0), 1.0, grid)
    assert abs(grid.h * math.fsum(est) - 1.0) < 1e-12
    target = 1.0 / 8.0
    per_bin = 200_000 / 64
    se = target * math.sqrt((1.0 - 1.0 / 64) / per_bin)
    assert np.max(np.abs(est - target)) <= 4.0 * se


def test_empirical_density_undersampling_warning():
    grid = SpaceTimeGrid(1, 4.0, 64, (1.0,))
    rng = np.random.default_rng(32)
    pts = rng.uniform(-4.0, 4.0, (400, 1))
    with pytest.warns(AccuracyWarning):
        empirical_density(_synthetic_ensemble(pts, 1.0), 1.0, grid)


def test_empirical_density_bandwidth_halving_stable():
    # on a smooth target, halving the kernel width moves the estimate by
    # less than the Monte Carlo spread between independent runs
    grid = SpaceTimeGrid(1, 8.0, 128, (0.5,))
    mk = lambda seed: simulate_paths(
        SimConfig(params=P1, drift=None, x0=(0.0,), T=0.5, dt=1.0 / 64,
                  N=25_000, seed=seed, jump_threshold=1.0))
    e1, e2 = mk(61), mk(62)
    raw1 = empirical_density(e1, 0.5, grid)
    raw2 = empirical_density(e2, 0.5, grid)
    floor = grid.h * np.sum(np.abs(raw1 - raw2))
    kde_h = empirical_density(e1, 0.5, grid, bandwidth=grid.h)
    kde_half = empirical_density(e1, 0.5, grid, bandwidth=0.5 * grid.h)
    moved = grid.h * np.sum(np.abs(kde_h - kde_half))
    assert moved < floor
    assert abs(grid.h * math.fsum(kde_h) - 1.0) < 1e-12


def test_weak_error_trend_under_dt_halving():
    # L1 gap to the series table does not grow as dt halves (three levels,
    # judged against the seed-to-seed noise floor)
    drift = bump_drift(1, amplitude=2.0, center=(0.0,), width=1.0)
    T = 0.03125
    grid = SpaceTimeGrid(1, 8.0, 128, (T,))
    table, _ = sum_series(P1, grid, drift, sources=((0.0,),))
    slc = table.slice_values(0, table.time_index(T))

    def l1_at(divisor, seed):
        cfg = SimConfig(params=P1, drift=drift, x0=(0.0,), T=T, dt=T / divisor,
                        N=40_000, seed=seed, jump_threshold=1.0)
        est = empirical_density(simulate_paths(cfg), T, grid)
        return grid.h * float(np.sum(np.abs(est - slc)))

    gaps = [l1_at(dv, 900 + dv) for dv in (64, 128, 256)]
    floor = abs(l1_at(256, 1900) - gaps[-1])
    assert gaps[1] <= gaps[0] + 2.0 * floor + 1e-3
    assert gaps[2] <= gaps[1] + 2.0 * floor + 1e-3


def test_jump_rate_check_free_case_matches_quadrature():
    # A = ball(0, 1/2), B = ball(3, 1/2), d = 1, a = alpha = 1: recorded
    # transitions, the occupation-integral prediction, and a direct
    # space-time quadrature all agree
    params = StableParams(d=1, alpha=1.0, a=1.0, M=1.0)
    t_h = 0.5
    cfg = SimConfig(params=params, drift=None, x0=(0.0,), T=t_h, dt=t_h / 512,
                    N=40_000, seed=19, jump_threshold=1.0)
    ens = simulate_paths(cfg)
    rep = jump_rate_check(ens, params, ((0.0,), 0.5), ((3.0,), 0.5))
    assert rep["z_score"] <= 3.0
    assert rep["within_3se"]

    from numpy.polynomial.legendre import leggauss

    xg, wg = leggauss(24)
    zs = 0.5 * xg
    wz = 0.5 * wg
    rate_b = np.array([ball_jump_intensity(params, (z,), (3.0,), 0.5)
                       for z in zs])
    ss = 0.5 * t_h * (xg + 1.0)
    ws = 0.5 * t_h * wg
    inner = [float(np.sum(wz * np.array([eval_density(params, s, abs(z))
                                         for z in zs]) * rate_b)) for s in ss]
    oracle = float(np.sum(ws * np.asarray(inner)))
    assert abs(rep["empirical_mean"] - oracle) <= 3.0 * rep["empirical_se"]

    tot = rep["threshold_sensitivity"]
    gap = abs(tot["rho"]["empirical_rate"] - tot["rho"]["predicted_rate"])
    assert gap <= 3.0 * tot["rho"]["se"]
    assert tot["2rho"]["empirical_rate"] < tot["rho"]["empirical_rate"]


def test_jump_rate_check_far_target_statistically_zero():
    params = StableParams(d=1, alpha=1.0, a=1.0, M=1.0)
    cfg = SimConfig(params=params, drift=None, x0=(0.0,), T=0.25, dt=1.0 / 128,
                    N=2000, seed=23, jump_threshold=1.0)
    ens = simulate_paths(cfg)
    with pytest.warns(AccuracyWarning):
        rep = jump_rate_check(ens, params, ((0.0,), 0.5), ((40.0,), 0.5))
    assert rep["empirical_mean"] <= 1e-3
    assert rep["predicted_mean"] <= 1e-3


def test_jump_rate_check_requires_disjoint_balls():
    cfg = SimConfig(params=P1, drift=None, x0=(0.0,), T=0.25, dt=1.0 / 64,
                    N=100, seed=1)
    ens = simulate_paths(cfg)
    with pytest.raises(DomainError):
        jump_rate_check(ens, P1, ((0.0,), 1.0), ((1.5,), 1.0))


def test_total_jump_rate_closed_form():
    # d = a = alpha = rho = t = 1: expected 2/pi jumps per path
    params = StableParams(d=1, alpha=1.0, a=1.0, M=1.0)
    cfg = SimConfig(params=params, drift=None, x0=(0.0,), T=1.0, dt=1.0 / 512,
                    N=50_000, seed=11, jump_threshold=1.0)
    ens = simulate_paths(cfg)
    keep = ~ens.aborted
    counts = np.bincount(ens.jump_path, minlength=cfg.N)[keep]
    rate = math.fsum(counts) / keep.sum()
    se = counts.std() / math.sqrt(keep.sum())
    assert abs(rate - 2.0 / math.pi) <= 3.0 * se


def test_exit_probability_brownian_oracle():
    # a -> 0, r = 1, kappa = 0.05 against the reflection series for the
    # variance-2t Brownian motion
    params = StableParams(d=1, alpha=1.0, a=1e-9, M=1.0)
    kappa, r = 0.05, 1.0
    dt = kappa * r * r / 1024
    cfg = SimConfig(params=params, drift=None, x0=(0.0,), T=dt, dt=dt,
                    N=40_000, seed=5)
    rep = exit_time_stats(cfg, r, [kappa])
    tot = sum((-1) ** k / (2 * k + 1)
              * math.exp(-(2 * k + 1) ** 2 * math.pi**2 * kappa / 4.0)
              for k in range(60))
    oracle = 1.0 - 4.0 / math.pi * tot
    se = math.sqrt(oracle * (1.0 - oracle) / cfg.N)
    assert abs(rep["exit_probabilities"][0] - oracle) <= 3.5 * se


def test_exit_probabilities_shrink_with_kappa():
    cfg = SimConfig(params=P1, drift=None, x0=(0.0,), T=4e-5, dt=4e-5,
                    N=8000, seed=6)
    rep = exit_time_stats(cfg, 0.5, [0.4, 0.2, 0.1, 0.05, 0.0125])
    probs = rep["exit_probabilities"]
    assert all(p1 >= p2 for p1, p2 in zip(probs, probs[1:]))
    assert probs[-1] < probs[0]
    assert rep["kappa_star"] is not None
    idx = rep["kappas"].index(rep["kappa_star"])
    assert probs[idx] <= 0.5


def test_exit_step_resolution_warning():
    cfg = SimConfig(params=P1, drift=None, x0=(0.0,), T=0.01, dt=0.01,
                    N=50, seed=6)
    with pytest.warns(AccuracyWarning):
        exit_time_stats(cfg, 0.5, [0.5])


def test_exit_kappa_nonincreasing_in_drift():
    kappas = [0.4, 0.2, 0.1, 0.05, 0.025, 0.0125]
    r = 0.5

    def star(c):
        dt = min(kappas) * r * r / 256.0
        cfg = SimConfig(params=P1, drift=constant_drift(1, c), x0=(0.0,),
                        T=dt, dt=dt, N=6000, seed=40)
        return exit_time_stats(cfg, r, kappas)["kappa_star"]

    s3, s6 = star(3.0), star(6.0)
    assert s3 is not None and s6 is not None
    assert s6 <= s3


def test_exit_kappa_uniform_over_a_and_r():
    cfg = SimConfig(params=P1, drift=None, x0=(0.0,), T=1.0, dt=1.0, N=2000,
                    seed=8)
    rep = exit_kappa_uniformity(cfg, 0.5, [0.5, 0.25, 0.125])
    assert rep["all_cells_bounded"]
    assert len(rep["cells"]) == 9
    assert rep["uniform_kappa_star"] == min(
        c["kappa_star"] for c in rep["cells"])


def test_drift_cap_defaults():
    sing = invpow_drift(1, p=0.5)
    cfg = SimConfig(params=P1, drift=sing, x0=(0.1,), T=0.25, dt=1.0 / 64,
                    N=200, seed=3)
    assert cfg.drift_cap_value() == pytest.approx((1.0 / 64) ** -0.25)
    smooth = SimConfig(params=P1, drift=constant_drift(1, 1.0), x0=(0.0,),
                       T=0.25, dt=1.0 / 64, N=200, seed=3)
    assert math.isinf(smooth.drift_cap_value())
    override = SimConfig(params=P1, drift=sing, x0=(0.0,), T=0.25,
                         dt=1.0 / 64, N=200, seed=3, drift_cap=2.5)
    assert override.drift_cap_value() == 2.5
    ens = simulate_paths(cfg)
    assert np.all(np.isfinite(ens.marginal(0.25)))


def test_abort_guard_counts_and_freezes():
    cfg = SimConfig(params=P1, drift=None, x0=(0.0,), T=1.0, dt=1.0 / 32,
                    N=3000, seed=15, safety_radius=0.8)
    ens = simulate_paths(cfg)
    assert ens.aborted_fraction > 0.1
    final = ens.marginal(1.0)
    assert np.all(np.isfinite(final))
    kept = ens.kept(1.0)
    assert kept.shape[0] == 3000 - int(ens.aborted_fraction * 3000)
    assert np.all(np.abs(kept[:, 0]) <= 0.8 + 1e-12)


def test_csv_and_json_exports(tmp_path):
    cfg = SimConfig(params=P1, drift=None, x0=(0.25,), T=0.25, dt=1.0 / 32,
                    N=50, seed=44)
    ens = simulate_paths(cfg)
    out = tmp_path / "terminal.csv"
    ensemble_to_csv(ens, out)
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["path", "x0", "aborted"]
    vals = np.array([float(r[1]) for r in rows[1:]])
    assert np.array_equal(vals, ens.marginal(0.25)[:, 0])
    raw = out.read_bytes()
    assert b"\r" not in raw

    rep = {"b": 1.5, "a": np.float64(2.0), "arr": np.arange(3)}
    jpath = tmp_path / "report.json"
    save_report(rep, jpath)
    loaded = json.loads(jpath.read_text())
    assert loaded == {"a": 2.0, "arr": [0, 1, 2], "b": 1.5}
    assert jpath.read_text().endswith("\n")
    assert list(loaded) == sorted(loaded)
