"""Ready-made operator families used by the experiments and tests."""

from __future__ import annotations

import math

import numpy as np

from .family import (
    AnisotropicGaussianFilter,
    GaussianFilter,
    HatFilter,
    OperatorFamily,
    SamplingGrid,
    SincFilter,
    fine_grid_for,
    monomial_modulators,
    orthogonalize_filters,
    smooth_gp_modulator,
)

__all__ = [
    "interpolated_scales",
    "unit_interval_grid",
    "gaussian_family",
    "hat_family",
    "sinc_family",
    "benchmark_family",
    "product_convolution_family",
    "astigmatic_covariances",
    "astigmatic_family",
]

# (first scale, last scale) of the three benchmark families
BENCHMARK_SCALES = {
    "A1": ("gaussian", 0.03, 0.01),
    "A2": ("gaussian", 0.03, 0.09),
    "A3": ("hat", 0.2, 0.02),
}


def interpolated_scales(first: float, last: float, count: int) -> np.ndarray:
    """``count`` scales moving linearly from ``first`` to ``last``."""
    if count == 1:
        return np.array([first])
    t = np.arange(count) / (count - 1)
    return last * t + first * (1.0 - t)


def unit_interval_grid(M: int, length: float = 1.0) -> SamplingGrid:
    """Points ``z_m = length * m / M`` for ``m = 1..M``."""
    h = length / M
    return SamplingGrid.regular([h], [h], [M])


def _orthonormal(filters, grid, fine_factor=10):
    return tuple(orthogonalize_filters(filters, fine_grid_for(filters, grid, fine_factor)))


def gaussian_family(scales, grid: SamplingGrid, orthogonalize: bool = True) -> OperatorFamily:
    filters = [GaussianFilter(float(s), grid.dim) for s in scales]
    if orthogonalize:
        filters = _orthonormal(filters, grid)
    return OperatorFamily("convolution", tuple(filters), grid, orthogonalized=orthogonalize)


def hat_family(scales, grid: SamplingGrid, orthogonalize: bool = True) -> OperatorFamily:
    filters = [HatFilter(float(s), 1.0, grid.dim) for s in scales]
    if orthogonalize:
        filters = _orthonormal(filters, grid)
    return OperatorFamily("convolution", tuple(filters), grid, orthogonalized=orthogonalize)


def sinc_family(scale: float, grid: SamplingGrid) -> OperatorFamily:
    """Single band-limited filter; already of unit norm."""
    return OperatorFamily("convolution", (SincFilter(scale, grid.dim),), grid, orthogonalized=True)


def benchmark_family(name: str, M: int = 100, I: int = 3, orthogonalize: bool = True) -> OperatorFamily:
    """Families ``A1`` (narrowing Gaussians), ``A2`` (widening Gaussians) and ``A3`` (hats).

    Sampled at ``z_m = m / M`` on the unit interval.
    """
    try:
        kind, first, last = BENCHMARK_SCALES[name]
    except KeyError:
        raise ValueError(f"unknown benchmark family {name!r}") from None
    grid = unit_interval_grid(M)
    scales = interpolated_scales(first, last, I)
    if kind == "gaussian":
        return gaussian_family(scales, grid, orthogonalize)
    return hat_family(scales, grid, orthogonalize)


def product_convolution_family(
    filters, grid: SamplingGrid, K: int, seed: int, corr_len: float = 10.0
) -> OperatorFamily:
    """Product-convolution family with ``K`` smooth random modulators."""
    mods = tuple(
        smooth_gp_modulator(grid, corr_len, int(s))
        for s in np.random.SeedSequence(seed).generate_state(K)
    )
    return OperatorFamily("product_convolution", tuple(filters), grid, mods, orthogonalized=True)


def astigmatic_covariances(J: int = 8, base_std: float = 1.0, spread: float = 0.35, pixel: float = 1.0):
    """Covariances of elongated Gaussians mimicking an astigmatic defocus sweep.

    The spot is stretched along one axis, goes through a round waist, then
    stretches along the other axis while slightly rotating.
    """
    covs = []
    for t in np.linspace(-1.0, 1.0, J):
        sx = base_std * (1.0 + spread * t) * pixel
        sy = base_std * (1.0 - spread * t) * pixel
        angle = 0.075 * math.pi * t
        R = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        covs.append(R @ np.diag([sx**2, sy**2]) @ R.T)
    return covs


def astigmatic_family(
    counts: tuple = (96, 96), J: int = 8, max_degree: int = 1, base_std: float = 1.0
) -> OperatorFamily:
    """2D product-convolution family on the unit square.

    ``J`` anisotropic Gaussian filters (std around ``base_std`` pixels) and
    monomial modulators up to ``max_degree``.
    """
    hx, hy = 1.0 / counts[0], 1.0 / counts[1]
    grid = SamplingGrid.regular([0.5 * hx, 0.5 * hy], [hx, hy], counts)
    filters = [AnisotropicGaussianFilter(c) for c in astigmatic_covariances(J, base_std, pixel=hx)]
    filters = _orthonormal(filters, grid, fine_factor=4)
    mods = tuple(monomial_modulators(max_degree, 2))
    return OperatorFamily("product_convolution", filters, grid, mods, orthogonalized=True)
