"""Command-line runner: each experiment is a config-driven, reproducible run.

Every invocation resolves a RunConfig from documented defaults, an optional
TOML file and command-line flags (flags win), echoes the effective config
into the output directory as JSON, executes the pipeline for the chosen
subcommand, and writes CSV data, a JSON report, a human-readable summary and
a manifest with the sha256 of every artifact.  The exit status is 0 exactly
when the invariants asserted for that command hold; otherwise the first
failure is named on stderr.  Identical config and seed give byte-identical
CSV output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

import numpy as np

from . import duhamel, envelopes, kato, sde
from .stable_kernel import (
    DomainError,
    StableParams,
    build_slice,
    density_mass,
    eval_density,
    find_contraction_lambda0,
    grad_density,
    resolvent_apply,
)

COMMANDS = ("kernel", "grad", "bounds", "kato", "series", "extend", "sde",
            "compare", "resolvent", "generator")

_TOP_KEYS = {"command", "params", "grid", "drift", "run", "out"}
_BLOCK_KEYS = {
    "params": {"d", "alpha", "a", "M"},
    "grid": {"L", "n", "times"},
    "drift": {"preset"},
    "run": {"seed", "N", "dt", "T", "t", "tolerance", "lam",
            "jump_threshold", "threads"},
}

_DEFAULTS = {
    "params": {"d": 1, "alpha": 1.0, "a": 1.0, "M": 2.0},
    "grid": {"L": 8.0, "n": 128, "times": [0.125]},
    "drift": {"preset": "zero"},
    "run": {"seed": 1234, "N": 100_000, "dt": None, "T": 0.125, "t": None,
            "tolerance": None, "lam": 1.0, "jump_threshold": None,
            "threads": None},
}


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configuration."""


@dataclass
class RunConfig:
    command: str
    params: StableParams
    grid: dict
    drift: kato.DriftSpec | None
    run: dict
    out: Path
    echo: dict


def _reject_unknown(block: str, table: dict) -> None:
    allowed = _BLOCK_KEYS[block]
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key {block}.{key}")


def _load_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(p, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from exc
    for key in data:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown key {key}")
    for block in _BLOCK_KEYS:
        if block in data:
            if not isinstance(data[block], dict):
                raise ConfigError(f"{block} must be a section")
            _reject_unknown(block, data[block])
    return data


def _coerce(merged: dict) -> dict:
    p, g, r = merged["params"], merged["grid"], merged["run"]
    try:
        p["d"] = int(p["d"])
        for k in ("alpha", "a", "M"):
            p[k] = float(p[k])
        g["L"] = float(g["L"])
        g["n"] = int(g["n"])
        times = g["times"]
        if isinstance(times, str):
            times = [tok for tok in times.split(",") if tok.strip()]
        g["times"] = [float(t) for t in np.atleast_1d(times)]
        r["seed"] = int(r["seed"])
        r["N"] = int(r["N"])
        for k in ("dt", "T", "t", "tolerance", "lam", "jump_threshold"):
            if r[k] is not None:
                r[k] = float(r[k])
        if r["threads"] is not None:
            r["threads"] = int(r["threads"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in config: {exc}") from exc
    return merged


def _validate(merged: dict, command: str) -> dict:
    p = merged["params"]
    if not 0.0 < p["alpha"] < 2.0:
        raise ConfigError("alpha must lie in (0,2)")
    if p["d"] not in (1, 2):
        raise ConfigError("params.d must be 1 or 2")
    if not 0.0 < p["a"] <= p["M"]:
        raise ConfigError("params.a must lie in (0, M]")
    g = merged["grid"]
    if g["L"] <= 0 or g["n"] < 8:
        raise ConfigError("grid needs L > 0 and n >= 8")
    if not g["times"] or any(t <= 0 for t in g["times"]):
        raise ConfigError("grid.times must be positive")
    if sorted(g["times"]) != g["times"]:
        raise ConfigError("grid.times must be ascending")
    r = merged["run"]
    if r["N"] < 1:
        raise ConfigError("run.N must be at least 1")
    if r["lam"] is not None and r["lam"] <= 0:
        raise ConfigError("run.lam must be positive")
    if command == "generator" and p["d"] != 1:
        raise ConfigError("the generator pipeline is one-dimensional")
    return merged


def _is_zero_drift(spec: kato.DriftSpec | None) -> bool:
    return spec is None or (spec.kind == "constant"
                            and (spec.bound_hint or 0.0) == 0.0)


def parse_config(argv) -> RunConfig:
    """Resolve defaults, config file and flags into a validated RunConfig."""
    parser = argparse.ArgumentParser(
        prog="heatlab",
        description="kernel tables, drift series, path sampling and their checks")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--d", type=int)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--a", type=float)
        sp.add_argument("--M", type=float)
        sp.add_argument("--L", type=float)
        sp.add_argument("--n", type=int)
        sp.add_argument("--times")
        sp.add_argument("--drift")
        sp.add_argument("--N", type=int)
        sp.add_argument("--dt", type=float)
        sp.add_argument("--T", type=float)
        sp.add_argument("--t", type=float)
        sp.add_argument("--tolerance", type=float)
        sp.add_argument("--lam", type=float)
        sp.add_argument("--jump-threshold", dest="jump_threshold", type=float)
    args = parser.parse_args(argv)
    command = args.command

    merged = {blk: dict(vals) for blk, vals in _DEFAULTS.items()}
    if command == "kato":
        merged["drift"]["preset"] = "bump:amplitude=2,width=1"
    out_value = None

    if args.config:
        data = _load_file(args.config)
        if "command" in data and data["command"] != command:
            raise ConfigError(
                f"config file names command {data['command']!r}, got {command!r}")
        for blk in _BLOCK_KEYS:
            merged[blk].update(data.get(blk, {}))
        out_value = data.get("out", out_value)

    flag_map = {
        "params": ("d", "alpha", "a", "M"),
        "grid": ("L", "n", "times"),
        "run": ("seed", "N", "dt", "T", "t", "tolerance", "lam",
                "jump_threshold", "threads"),
    }
    for blk, keys in flag_map.items():
        for key in keys:
            val = getattr(args, key)
            if val is not None:
                merged[blk][key] = val
    if args.drift is not None:
        merged["drift"]["preset"] = args.drift
    if args.out is not None:
        out_value = args.out

    merged = _validate(_coerce(merged), command)
    params = StableParams(d=merged["params"]["d"], alpha=merged["params"]["alpha"],
                          a=merged["params"]["a"], M=merged["params"]["M"])
    preset = str(merged["drift"]["preset"])
    try:
        drift = kato.parse_drift(preset, params.d)
    except DomainError as exc:
        raise ConfigError(f"drift.preset: {exc}") from exc
    if _is_zero_drift(drift):
        drift = None

    if out_value is None:
        root = os.environ.get("HEATLAB_OUT", "runs")
        out_value = str(Path(root) / command)
    echo = {"command": command, **merged, "out": str(out_value)}
    return RunConfig(command=command, params=params, grid=merged["grid"],
                     drift=drift, run=merged["run"], out=Path(out_value),
                     echo=echo)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(
                v if isinstance(v, str) else f"{v:.17g}" for v in row) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    sde.save_report(payload, path)


def _default_times(cfg: RunConfig):
    if cfg.run["t"] is not None:
        return [cfg.run["t"]]
    return list(cfg.grid["times"])


def _series_grid(cfg: RunConfig, times) -> duhamel.SpaceTimeGrid:
    return duhamel.SpaceTimeGrid(cfg.params.d, cfg.grid["L"], cfg.grid["n"],
                                 tuple(times))


def _tolerance(cfg: RunConfig, fallback: float) -> float:
    tol = cfg.run["tolerance"]
    return fallback if tol is None else tol


def _table_drift(cfg: RunConfig) -> kato.DriftSpec:
    if cfg.drift is not None:
        return cfg.drift
    return kato.constant_drift(cfg.params.d, 0.0)


# ---------------------------------------------------------------------------
# command pipelines: each returns (failures, report, summary lines)
# ---------------------------------------------------------------------------


def _cmd_kernel(cfg: RunConfig, out: Path):
    tol = _tolerance(cfg, 1e-6 if cfg.params.d == 1 else 1e-4)
    failures, rows, per_time = [], [], []
    for j, t in enumerate(_default_times(cfg)):
        mass, rep = density_mass(cfg.params, t)
        defect = abs(mass - 1.0)
        sl = build_slice(cfg.params, t)
        radii = np.linspace(0.0, sl.r_max, 512)
        _write_csv(out / f"kernel_t{j}.csv", ["r", "density"],
                   zip(radii, sl.eval(radii)))
        per_time.append({"t": t, "mass": mass, "defect": defect, **rep})
        rows.append(f"t={t:g}: mass defect {defect:.3e} (tol {tol:g})")
        if defect > tol:
            failures.append(f"mass defect {defect:.3e} > {tol:g} at t={t:g}")
    return failures, {"tolerance": tol, "slices": per_time}, rows


def _cmd_grad(cfg: RunConfig, out: Path):
    tol = _tolerance(cfg, 1e-5)
    rng = np.random.default_rng(cfg.run["seed"])
    d = cfg.params.d
    worst, rows = 0.0, []
    for _ in range(50):
        t = float(rng.uniform(0.1, 1.0))
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        x = float(rng.uniform(0.2, 3.0)) * direction
        g = np.atleast_1d(grad_density(cfg.params, t, x))
        step = 1e-3
        fd = np.empty(d)
        for ax in range(d):
            e = np.zeros(d)
            e[ax] = step
            v = [eval_density(cfg.params, t, x + k * e, exact=True)
                 for k in (-2, -1, 1, 2)]
            fd[ax] = (v[0] - 8.0 * v[1] + 8.0 * v[2] - v[3]) / (12.0 * step)
        scale = max(float(np.max(np.abs(g))), 1e-300)
        rel = float(np.max(np.abs(g - fd))) / scale
        worst = max(worst, rel)
        rows.append((t, *x, *g, rel))
    _write_csv(out / "gradient_check.csv",
               ["t"] + [f"x{i}" for i in range(d)]
               + [f"grad{i}" for i in range(d)] + ["rel_err"], rows)
    failures = []
    if worst > tol:
        failures.append(f"gradient identity error {worst:.3e} > {tol:g}")
    return failures, {"tolerance": tol, "max_rel_err": worst}, [
        f"worst gradient-vs-FD relative error {worst:.3e} (tol {tol:g})"]


def _fit_free_sandwich(cfg: RunConfig, times):
    slabs = []
    for t in times:
        nodes = np.asarray(duhamel.SpaceTimeGrid(
            cfg.params.d, cfg.grid["L"], cfg.grid["n"], (t,)).nodes())
        radii = np.linalg.norm(nodes, axis=1)
        vals = build_slice(cfg.params, t).eval(radii)
        slabs.append((t, nodes, vals))
    return envelopes.fit_sandwich(slabs, cfg.params)


def _cmd_bounds(cfg: RunConfig, out: Path):
    times = _default_times(cfg)
    fit = _fit_free_sandwich(cfg, times)
    t0 = times[0]
    nodes = np.asarray(duhamel.SpaceTimeGrid(
        cfg.params.d, cfg.grid["L"], cfg.grid["n"], (t0,)).nodes())
    radii = np.linalg.norm(nodes, axis=1)
    vals = build_slice(cfg.params, t0).eval(radii)
    low = fit.lower.C * envelopes.q_envelope(cfg.params, fit.lower.beta, t0, nodes)
    upp = fit.upper.C * envelopes.q_envelope(cfg.params, fit.upper.beta, t0, nodes)
    order = np.argsort(radii)
    _write_csv(out / "sandwich_t0.csv", ["r", "density", "lower", "upper"],
               zip(radii[order], vals[order], low[order], upp[order]))
    report = {
        "lower": {"beta": fit.lower.beta, "C": fit.lower.C},
        "upper": {"beta": fit.upper.beta, "C": fit.upper.C},
        "lattice": fit.lattice,
        "max_violation": fit.max_violation,
    }
    failures = []
    finite = all(math.isfinite(v) and v > 0 for v in
                 (fit.lower.C, fit.upper.C, fit.lower.beta, fit.upper.beta))
    if not finite:
        failures.append("sandwich constants are not finite and positive")
    if fit.max_violation > 0:
        failures.append(f"sandwich violation {fit.max_violation:.3e}")
    return failures, report, [
        f"lower C={fit.lower.C:.4g} (beta={fit.lower.beta:g}), "
        f"upper C={fit.upper.C:.4g} (beta={fit.upper.beta:g})"]


def _cmd_kato(cfg: RunConfig, out: Path):
    drift = cfg.drift if cfg.drift is not None else kato.constant_drift(
        cfg.params.d, 0.0)
    rep = kato.kato_report(drift, alpha=cfg.params.alpha)
    _write_csv(out / "kato_modulus.csv", ["r", "modulus"],
               zip(rep.radii, rep.moduli))
    report = {
        "drift": drift.label,
        "mode": rep.mode,
        "gamma": rep.gamma,
        "verdict": bool(rep.verdict),
        "radii": rep.radii,
        "moduli": rep.moduli,
    }
    failures = []
    if not rep.verdict:
        failures.append(f"drift {drift.label} fails the class check ({rep.mode})")
    return failures, report, [
        f"{drift.label}: mode={rep.mode}, verdict={'pass' if rep.verdict else 'fail'}"]


def _series_invariants(table, tol_mass, failures):
    defect = float(np.max(table.mass_defect))
    raw_min = float(np.min(table.raw_min))
    if defect > tol_mass:
        failures.append(f"mass defect {defect:.3e} > {tol_mass:g}")
    if raw_min < -1e-6:
        failures.append(f"raw positivity minimum {raw_min:.3e} < -1e-6")
    return defect, raw_min


def _cmd_series(cfg: RunConfig, out: Path):
    grid = _series_grid(cfg, cfg.grid["times"])
    failures = []
    try:
        table, diag = duhamel.sum_series(cfg.params, grid, _table_drift(cfg),
                                         sources=((0.0,) * cfg.params.d,))
    except duhamel.ContractionAbort as exc:
        failures.append(f"contraction abort: {exc}")
        return failures, {"contraction_abort": str(exc)}, [f"ABORT {exc}"]
    duhamel.save_table(table, out / "table", diagnostics=diag)
    tol_mass = _tolerance(cfg, 1e-3)
    defect, raw_min = _series_invariants(table, tol_mass, failures)
    ratios = diag.ratio_curve if diag is not None else []
    bad_ratio = [r for r in np.ravel(ratios) if r > 0.25]
    if bad_ratio:
        failures.append(f"layer ratio {max(bad_ratio):.3f} > 0.25")
    report = {
        "mass_defect": defect,
        "raw_min": raw_min,
        "truncation_k": table.diagnostics.truncation_k
        if table.diagnostics else None,
        "ratio_curve": np.asarray(ratios),
        "leak": float(np.max(table.leak)),
    }
    return failures, report, [
        f"mass defect {defect:.2e}, raw min {raw_min:.2e}, "
        f"layers {report['truncation_k']}"]


def _cmd_extend(cfg: RunConfig, out: Path):
    base_times = cfg.grid["times"]
    target = cfg.run["t"] if cfg.run["t"] is not None else 2.0 * base_times[-1]
    grid = _series_grid(cfg, base_times)
    failures = []
    try:
        table, diag = duhamel.sum_series(cfg.params, grid, _table_drift(cfg),
                                         sources=((0.0,) * cfg.params.d,))
    except duhamel.ContractionAbort as exc:
        failures.append(f"contraction abort: {exc}")
        return failures, {"contraction_abort": str(exc)}, [f"ABORT {exc}"]
    ext = duhamel.extend_chapman_kolmogorov(table, (target,))
    tol = _tolerance(cfg, 3e-2)
    resid = ext.composition_residual or {}
    worst = max(resid.values()) if resid else math.inf
    slc = ext.slice_values(0, ext.time_index(target))
    axis = grid.axis
    if cfg.params.d == 1:
        _write_csv(out / "extended_slice.csv", ["x", "value"],
                   zip(axis, slc))
    else:
        _write_csv(out / "extended_slice.csv", ["x0", "x1", "value"],
                   ((axis[i], axis[j], slc[i, j])
                    for i in range(grid.n) for j in range(grid.n)))
    if worst > tol:
        failures.append(f"composition residual {worst:.3e} > {tol:g}")
    report = {"target_time": target, "residuals": resid, "tolerance": tol}
    return failures, report, [
        f"extended to t={target:g}, worst residual {worst:.3e} (tol {tol:g})"]


def _sim_config(cfg: RunConfig) -> sde.SimConfig:
    T = cfg.run["T"]
    dt = cfg.run["dt"] if cfg.run["dt"] is not None else T / 512.0
    return sde.SimConfig(
        params=cfg.params, drift=cfg.drift, x0=(0.0,) * cfg.params.d,
        T=T, dt=dt, N=cfg.run["N"], seed=cfg.run["seed"],
        jump_threshold=cfg.run["jump_threshold"])


def _cmd_sde(cfg: RunConfig, out: Path):
    sim = _sim_config(cfg)
    ens = sde.simulate_paths(sim)
    sde.ensemble_to_csv(ens, out / "terminal.csv")
    grid = _series_grid(cfg, (sim.T,))
    est = sde.empirical_density(ens, sim.T, grid)
    if cfg.params.d == 1:
        _write_csv(out / "density.csv", ["x", "density"], zip(grid.axis, est))
    else:
        _write_csv(out / "density.csv", ["x0", "x1", "density"],
                   ((grid.axis[i], grid.axis[j], est[i, j])
                    for i in range(grid.n) for j in range(grid.n)))
    failures = []
    if ens.aborted_fraction > 1e-3:
        failures.append(
            f"aborted fraction {ens.aborted_fraction:.2e} > 1e-3")
    report = {
        "T": sim.T, "dt": sim.dt, "N": sim.N, "rho": sim.rho,
        "aborted_fraction": ens.aborted_fraction,
        "jump_count": int(ens.jump_path.size),
    }
    return failures, report, [
        f"{sim.N} paths to T={sim.T:g}; {ens.jump_path.size} recorded jumps; "
        f"aborted fraction {ens.aborted_fraction:.2e}"]


def _cmd_compare(cfg: RunConfig, out: Path):
    sim = _sim_config(cfg)
    grid = _series_grid(cfg, (sim.T,))
    failures = []
    if cfg.drift is None:
        table = duhamel.build_table_p0(cfg.params, grid,
                                       sources=((0.0,) * cfg.params.d,))
    else:
        try:
            table, _ = duhamel.sum_series(cfg.params, grid, cfg.drift,
                                          sources=((0.0,) * cfg.params.d,))
        except duhamel.ContractionAbort as exc:
            failures.append(f"contraction abort: {exc}")
            return failures, {"contraction_abort": str(exc)}, [f"ABORT {exc}"]
    slc = table.slice_values(0, table.time_index(sim.T))
    ens = sde.simulate_paths(sim)
    est = sde.empirical_density(ens, sim.T, grid)
    l1 = grid.h ** cfg.params.d * float(np.sum(np.abs(est - slc)))
    tol = _tolerance(cfg, 0.03 if cfg.drift is None else 0.05)
    if cfg.params.d == 1:
        _write_csv(out / "compare.csv", ["x", "table", "mc"],
                   zip(grid.axis, slc, est))
    if l1 > tol:
        failures.append(f"table-vs-MC L1 distance {l1:.4f} > {tol:g}")
    if ens.aborted_fraction > 1e-3:
        failures.append(f"aborted fraction {ens.aborted_fraction:.2e} > 1e-3")
    report = {"T": sim.T, "dt": sim.dt, "N": sim.N, "l1_distance": l1,
              "tolerance": tol, "aborted_fraction": ens.aborted_fraction}
    return failures, report, [f"L1(table, MC) = {l1:.4f} (tol {tol:g})"]


def _cmd_resolvent(cfg: RunConfig, out: Path):
    lam = cfg.run["lam"]
    tol = _tolerance(cfg, 1e-6)
    ones = lambda pts: np.ones(len(np.atleast_2d(pts)))
    pts = np.zeros((1, cfg.params.d))
    u1 = float(resolvent_apply(cfg.params, lam, ones, pts)[0])
    defect = abs(u1 - 1.0 / lam)
    failures = []
    if defect > tol:
        failures.append(f"resolvent identity defect {defect:.3e} > {tol:g}")
    report = {"lam": lam, "u_lambda_1": u1, "identity_defect": defect,
              "tolerance": tol}
    lines = [f"U_lambda 1 = {u1:.9g} vs 1/lambda = {1.0 / lam:.9g} "
             f"(defect {defect:.2e})"]
    if cfg.drift is not None:
        centers = kato.candidate_centers(cfg.drift, per_axis=5)
        try:
            lam0, history = find_contraction_lambda0(
                cfg.params, cfg.drift, ones, centers, lam_start=lam)
            report["lambda0"] = lam0
            report["history"] = [list(h) for h in history]
            lines.append(f"contraction threshold lambda0 = {lam0:g}")
        except RuntimeError as exc:
            failures.append(f"no contraction level: {exc}")
    return failures, report, lines


def _cmd_generator(cfg: RunConfig, out: Path):
    times = cfg.grid["times"]
    grid = _series_grid(cfg, times)
    failures = []
    try:
        table, _ = duhamel.sum_series(cfg.params, grid, _table_drift(cfg),
                                      sources=((0.0,) * cfg.params.d,))
    except duhamel.ContractionAbort as exc:
        failures.append(f"contraction abort: {exc}")
        return failures, {"contraction_abort": str(exc)}, [f"ABORT {exc}"]
    f = duhamel.GaussianBump(1, center=(0.5,), width=1.0)
    g = duhamel.GaussianBump(1, center=(-0.5,), width=1.25)
    dyadic = [2.0 ** -k for k in range(4, 8)]
    rep = duhamel.generator_residual(table, f, g, dyadic)
    _write_csv(out / "generator.csv", ["t", "D", "target", "abs_err"],
               zip(rep["times"], rep["D"], [rep["target"]] * len(rep["times"]),
                   rep["errors"]))
    if not rep["halving_ok"]:
        failures.append(
            f"error halving off target: ratios {rep['ratios'][-3:]}")
    report = {k: rep[k] for k in
              ("times", "D", "target", "errors", "ratios", "halving_ok",
               "pv_correction_ratio")}
    return failures, report, [
        f"D(t) -> {rep['target']:.6g}, last ratios "
        + ", ".join(f"{r:.3f}" for r in rep["ratios"][-3:])]


_PIPELINES = {
    "kernel": _cmd_kernel,
    "grad": _cmd_grad,
    "bounds": _cmd_bounds,
    "kato": _cmd_kato,
    "series": _cmd_series,
    "extend": _cmd_extend,
    "sde": _cmd_sde,
    "compare": _cmd_compare,
    "resolvent": _cmd_resolvent,
    "generator": _cmd_generator,
}


def _manifest(out: Path) -> None:
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            files[str(p.relative_to(out))] = {
                "sha256": digest, "bytes": p.stat().st_size}
    _write_json(out / "manifest.json", {"files": files})


def run(cfg: RunConfig) -> int:
    """Execute the pipeline for cfg; 0 iff every asserted invariant holds."""
    if cfg.run["threads"] is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(cfg.run["threads"])
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.echo)
    failures, report, lines = _PIPELINES[cfg.command](cfg, out)
    ok = not failures
    _write_json(out / "report.json",
                {"command": cfg.command, "ok": ok, "failures": failures,
                 **report})
    with open(out / "summary.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"heatlab {cfg.command}\n")
        for line in lines:
            fh.write(line + "\n")
        fh.write("status: " + ("ok" if ok else "FAIL " + failures[0]) + "\n")
    _manifest(out)
    if not ok:
        print(f"FAIL {failures[0]}", file=sys.stderr)
        return 1
    print(f"ok: {out / 'report.json'}")
    return 0


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return run(cfg)
    except DomainError as exc:
        print(f"FAIL {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
