"""heatlab: transition densities, perturbation series, and diagnostics for
the operator Delta + a^alpha Delta^{alpha/2} + b . grad on R^d."""

from . import duhamel, envelopes, kato, sde
from .stable_kernel import (
    AccuracyWarning,
    DomainError,
    RadialSlice,
    SingularityError,
    StableParams,
    build_slice,
    char_exponent,
    density_mass,
    eval_density,
    eval_density_radial,
    find_contraction_lambda0,
    fractional_laplacian,
    gaussian_density,
    grad_density,
    grad_resolvent_apply,
    levy_constant,
    levy_density,
    resolvent_apply,
    resolvent_density,
    resolvent_grad_kernel,
    tail_mass_beyond,
    tail_value,
    threshold_jump_rate,
)

__version__ = "0.1.0"

__all__ = [
    "duhamel",
    "envelopes",
    "kato",
    "sde",
    "AccuracyWarning",
    "DomainError",
    "RadialSlice",
    "SingularityError",
    "StableParams",
    "build_slice",
    "char_exponent",
    "density_mass",
    "eval_density",
    "eval_density_radial",
    "find_contraction_lambda0",
    "fractional_laplacian",
    "gaussian_density",
    "grad_density",
    "grad_resolvent_apply",
    "levy_constant",
    "levy_density",
    "resolvent_apply",
    "resolvent_density",
    "resolvent_grad_kernel",
    "tail_mass_beyond",
    "tail_value",
    "threshold_jump_rate",
    "__version__",
]
