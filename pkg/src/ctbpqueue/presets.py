"""Built-in model instances used by the validation workflow and the docs."""

from __future__ import annotations

import numpy as np

from .arrival import ModelSpec, PiecewisePdf

__all__ = ["reference_pdf", "reference_spec", "REFERENCE_T_GRID"]


def reference_pdf() -> PiecewisePdf:
    """The benchmark arrival profile: 30 ten-minute slots over a 300-minute
    horizon with a single smooth peak, interval n weighted by n^2 e^{-n/4}."""
    n = np.arange(1, 31, dtype=float)
    raw = n * n * np.exp(-0.25 * n)
    widths = 10.0
    levels = raw / (raw.sum() * widths)
    return PiecewisePdf(tuple(np.linspace(0.0, 300.0, 31)), tuple(levels))


def reference_spec(
    K: int = 1000,
    c: int = 2,
    mu: float = 2.5,
    alpha: float = 1000.0,
    epsilon: float = 1e-14,
    t_max: float | None = None,
) -> ModelSpec:
    """Benchmark configuration: the reference profile with two servers at
    rate 2.5 and a tight 1e-14 accuracy budget.  ``K`` and ``alpha`` are
    exposed so sensitivity sweeps can move them independently."""
    return ModelSpec(
        pdf=reference_pdf(),
        K=K,
        c=c,
        mu=mu,
        alpha=alpha,
        epsilon=epsilon,
        t_max=t_max,
    )


REFERENCE_T_GRID: tuple[float, ...] = tuple(float(t) for t in range(5, 305, 5))
