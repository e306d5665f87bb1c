"""Dual-alignment prompt adaptation on synthetic domains (C++ core)."""

from ._core import (
    DivergenceError,
    Model,
    ModelConfig,
    PreconditionError,
    SyntheticSpec,
    TrainConfig,
    cmm_enhance,
    conditional_discrepancy,
    cosine_lr,
    cross_entropy,
    discrepancy_report,
    fit,
    gen_gaussian_domains,
    gen_two_moons_shift,
    grl_gradient,
    pca_project,
    proxy_a_distance,
    pseudo_label,
    total_loss,
)

__all__ = [
    "DivergenceError",
    "Model",
    "ModelConfig",
    "PreconditionError",
    "SyntheticSpec",
    "TrainConfig",
    "cmm_enhance",
    "conditional_discrepancy",
    "configure",
    "cosine_lr",
    "cross_entropy",
    "discrepancy_report",
    "fit",
    "gen_gaussian_domains",
    "gen_two_moons_shift",
    "grl_gradient",
    "pca_project",
    "proxy_a_distance",
    "pseudo_label",
    "total_loss",
]


def configure(cls, **fields):
    """Build a config object with the given fields set, e.g. configure(TrainConfig, epochs=5)."""
    obj = cls()
    for name, value in fields.items():
        if not hasattr(obj, name):
            raise AttributeError(f"{cls.__name__} has no field {name!r}")
        setattr(obj, name, value)
    return obj
