"""Envelope algebra for two-sided kernel bounds.

The comparison functions are the Gaussian g_{d,beta}(t,x) = t^{-d/2}
exp(-beta |x|^2/t) and the mixed envelope

    q^a_{d,beta}(t,x) = g_{d,beta}(t,x) + min(t^{-d/2}, a^alpha t |x|^{-(d+alpha)}),

which sandwiches both the free and the drift-perturbed kernels.  Existence
claims for comparison constants are operationalized the same way throughout:
fit the best constant on a lattice, refit on a refined lattice, and require
the constant to move by less than a few percent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kato import gamma_exponent, h_kernel
from .stable_kernel import DomainError, StableParams

__all__ = [
    "EnvelopeParams",
    "SandwichFit",
    "ThreePointReport",
    "gaussian_g",
    "q_envelope",
    "default_beta_grid",
    "fit_sandwich",
    "three_p_check",
    "poly_cap_constant",
    "fit_poly_cap",
    "split_envelope_constant",
]


@dataclass(frozen=True)
class EnvelopeParams:
    """One side of a sandwich: the envelope C * q_{beta}."""

    beta: float
    C: float

    def __post_init__(self):
        if self.beta <= 0 or self.C <= 0:
            raise DomainError("envelope needs beta > 0 and C > 0")


@dataclass
class SandwichFit:
    """Fitted two-sided envelope for a positive field on a (t, x) lattice.

    lower.C * q_{lower.beta} <= field <= upper.C * q_{upper.beta} holds on
    the lattice by construction; max_violation records the worst relative
    defect (zero up to float noise).
    """

    lower: EnvelopeParams
    upper: EnvelopeParams
    lattice: dict
    max_violation: float

    @property
    def tightness(self) -> float:
        """upper.C / lower.C, the baseline looseness of the sandwich."""
        return self.upper.C / self.lower.C

    def to_dict(self) -> dict:
        return {
            "lower": {"beta": self.lower.beta, "C": self.lower.C},
            "upper": {"beta": self.upper.beta, "C": self.upper.C},
            "lattice": self.lattice,
            "max_violation": self.max_violation,
            "tightness": self.tightness,
        }


def _radius(d: int, x) -> np.ndarray:
    """Euclidean norm along the last axis when x carries d components there;
    otherwise x is already a radius (or an array of radii)."""
    x = np.asarray(x, dtype=float)
    if x.ndim >= 1 and x.shape[-1] == d and (d > 1 or x.ndim >= 2):
        return np.sqrt(np.sum(x * x, axis=-1))
    return np.abs(x)


def gaussian_g(d: int, beta: float, t: float, x):
    """g_{d,beta}(t, x) = t^{-d/2} exp(-beta |x|^2 / t)."""
    if t <= 0:
        raise DomainError("t must be positive")
    if beta <= 0:
        raise DomainError("beta must be positive")
    r = _radius(d, x)
    out = t ** (-d / 2.0) * np.exp(-beta * r * r / t)
    return out if np.ndim(out) else float(out)


def q_envelope(params: StableParams, beta: float, t: float, x):
    """q^a_{d,beta}(t,x) = g_{d,beta}(t,x) + min(t^{-d/2}, a^alpha t |x|^{-(d+alpha)})."""
    if t <= 0:
        raise DomainError("t must be positive")
    if beta <= 0:
        raise DomainError("beta must be positive")
    d = params.d
    r = _radius(d, x)
    g = t ** (-d / 2.0) * np.exp(-beta * r * r / t)
    jump = np.full_like(np.asarray(r, dtype=float), t ** (-d / 2.0))
    pos = r > 0
    with np.errstate(over="ignore"):
        # r ** -(d+alpha) may overflow to inf for subnormal radii; the
        # minimum immediately discards it in favor of the flat cap
        jump_pos = params.a**params.alpha * t * np.asarray(r)[pos] ** (-(d + params.alpha))
    jump[pos] = np.minimum(jump[pos], jump_pos)
    out = g + jump
    return out if np.ndim(out) else float(out)


def default_beta_grid() -> np.ndarray:
    """Geometric candidate grid with ratio sqrt(2) on [1/16, 4]."""
    n = int(round(math.log2(4.0 / (1.0 / 16.0)) * 2)) + 1
    return (1.0 / 16.0) * np.sqrt(2.0) ** np.arange(n)


def fit_sandwich(slabs, params: StableParams, beta_grid=None) -> SandwichFit:
    """Fit the tightest q-envelope sandwich to a positive field.

    slabs is an iterable of (t, points, values) with points of shape (m, d):
    the field sampled on constant-time slices.  For each candidate beta the
    least admissible upper constant is the max of value/q and the greatest
    admissible lower constant is the min; the upper fit takes the beta
    minimizing its constant, the lower fit the beta maximizing its.
    """
    if beta_grid is None:
        beta_grid = default_beta_grid()
    beta_grid = np.asarray(beta_grid, dtype=float)
    n_pts = 0
    t_seen = []
    up = np.full(beta_grid.shape, -np.inf)
    lo = np.full(beta_grid.shape, np.inf)
    for t, pts, vals in slabs:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        vals = np.asarray(vals, dtype=float).ravel()
        if np.any(vals <= 0):
            raise DomainError("sandwich fitting needs a strictly positive field")
        n_pts += vals.size
        t_seen.append(float(t))
        for i, b in enumerate(beta_grid):
            q = q_envelope(params, float(b), float(t), pts)
            ratio = vals / q
            up[i] = max(up[i], float(np.max(ratio)))
            lo[i] = min(lo[i], float(np.min(ratio)))
    if n_pts == 0:
        raise DomainError("empty lattice")
    iu = int(np.argmin(up))
    il = int(np.argmax(lo))
    fit = SandwichFit(
        lower=EnvelopeParams(float(beta_grid[il]), float(lo[il])),
        upper=EnvelopeParams(float(beta_grid[iu]), float(up[iu])),
        lattice={"points": n_pts, "times": sorted(set(t_seen))},
        max_violation=0.0,
    )
    return fit


@dataclass
class ThreePointReport:
    """Ratios of the time-convolution of two envelopes against the
    single-envelope majorant; finiteness and stability of the sup realize
    the three-point inequality at desk scale."""

    ratios: np.ndarray
    sup_ratio: float
    gamma: float
    samples: list

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.ratios)))


_GL16 = np.polynomial.legendre.leggauss(16)


def _time_convolution(params, beta1, beta2, t, x, y, z):
    """integral_0^t q_{d,b1}(t-s, x-z) q_{d+1,b2}(s, z-y) ds, with the
    substitution s = t u^2 applied from both endpoints."""
    lifted = StableParams(params.d + 1, params.alpha, params.a, params.M)
    xz = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(z, dtype=float))
    zy = np.linalg.norm(np.asarray(z, dtype=float) - np.asarray(y, dtype=float))
    nodes, wts = _GL16

    def half(from_zero: bool) -> float:
        # s = t u^2 on u in (0, 1/sqrt(2)]: covers s in (0, t/2]
        u_hi = 1.0 / math.sqrt(2.0)
        u = 0.5 * u_hi * (nodes + 1.0)
        w = 0.5 * u_hi * wts * 2.0 * t * u
        s = t * u * u
        total = 0.0
        for si, wi in zip(s, w):
            if from_zero:
                val = (q_envelope(params, beta1, t - si, xz)
                       * q_envelope(lifted, beta2, si, zy))
            else:
                val = (q_envelope(params, beta1, si, xz)
                       * q_envelope(lifted, beta2, t - si, zy))
            total += wi * val
        return total

    return half(True) + half(False)


def three_p_check(params: StableParams, beta1: float, beta2: float,
                  samples, T: float | None = None) -> ThreePointReport:
    """For each sample (t, x, y, z), compare

        LHS = integral_0^t q_{d,b1}(t-s, x-z) q_{d+1,b2}(s, z-y) ds

    against (H^gamma(t, x-z) + H^gamma(t, z-y)) * q_{d,b1}(t, x-y) and
    report the ratio.  gamma = (1 + alpha smallest-of 1)/2; the sup ratio
    being finite and stable under sample doubling is the checked claim.
    """
    if not (0.0 < beta1 < beta2):
        raise DomainError("need 0 < beta1 < beta2")
    gam = gamma_exponent(params.alpha)
    ratios = []
    kept = []
    for (t, x, y, z) in samples:
        if T is not None and t > T:
            raise DomainError("sample time exceeds the declared horizon")
        x = np.asarray(x, dtype=float).reshape(params.d)
        y = np.asarray(y, dtype=float).reshape(params.d)
        z = np.asarray(z, dtype=float).reshape(params.d)
        if np.allclose(z, x) or np.allclose(z, y):
            raise DomainError("the intermediate point must differ from both endpoints")
        lhs = _time_convolution(params, beta1, beta2, float(t), x, y, z)
        core = (h_kernel(gam, float(t), x - z) + h_kernel(gam, float(t), z - y))
        rhs = core * q_envelope(params, beta1, float(t), np.linalg.norm(x - y))
        ratios.append(lhs / rhs)
        kept.append((float(t), tuple(x), tuple(y), tuple(z)))
    ratios = np.asarray(ratios)
    return ThreePointReport(ratios, float(np.max(ratios)), gam, kept)


def poly_cap_constant(d: int, beta: float, theta: float) -> float:
    """Smallest c with g_{d,beta}(t,x) <= c t^theta |x|^{-(d+2 theta)}:
    by scaling the ratio depends on u = |x|^2/t alone and is maximized at
    u = (d+2 theta)/(2 beta), giving ((d+2 theta)/(2 beta e))^{(d+2 theta)/2}."""
    if theta <= 0 or beta <= 0:
        raise DomainError("need positive theta and beta")
    s = d + 2.0 * theta
    return (s / (2.0 * beta * math.e)) ** (s / 2.0)


def fit_poly_cap(d: int, beta: float, theta: float, lattice) -> float:
    """Lattice fit of the same constant: sup over (t, x) samples of
    g * |x|^{d+2 theta} / t^theta.  Always at most poly_cap_constant."""
    best = 0.0
    for t, x in lattice:
        x = np.asarray(x, dtype=float)
        r = float(np.linalg.norm(np.atleast_1d(x)))
        if r == 0.0:
            continue
        g = gaussian_g(d, beta, float(t), r)
        best = max(best, g * r ** (d + 2.0 * theta) / float(t) ** theta)
    return best


def split_envelope_constant(params: StableParams, beta: float, T: float) -> float:
    """A priori two-sided constant between q^a_{d,beta} and the split form
    g_{d,beta} + a^alpha t |z|^{-(d+alpha)} 1_{|z|^2 >= t} on (0, T]:
    max(e^beta + 1, M^alpha T^{1-alpha/2}, 1)."""
    return max(math.exp(beta) + 1.0,
               params.M**params.alpha * T ** (1.0 - params.alpha / 2.0), 1.0)


def split_envelope_fit(params: StableParams, beta: float, T: float,
                       n_t: int = 8, n_r: int = 40) -> float:
    """Lattice fit of the two-sided constant between q^a_{d,beta} and its
    split form; must come out below split_envelope_constant."""
    d = params.d
    worst = 1.0
    for t in np.geomspace(T / 64.0, T, n_t):
        radii = np.geomspace(1e-3 * math.sqrt(t), 30.0 * math.sqrt(t), n_r)
        q = np.asarray(q_envelope(params, beta, float(t), radii))
        g = np.asarray(gaussian_g(d, beta, float(t), radii))
        split = g.copy()
        far = radii * radii >= t
        split[far] += params.a**params.alpha * t * radii[far] ** (-(d + params.alpha))
        worst = max(worst, float(np.max(q / split)), float(np.max(split / q)))
    return worst
