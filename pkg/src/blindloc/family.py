"""Operator subspaces, sampling model and synthetic measurements.

An :class:`OperatorFamily` spans a known finite-dimensional space of
operators. Its response matrix ``E(x)`` holds, column by column, the sampled
impulse responses of the basis operators for a Dirac mass at ``x``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import gaussian_filter

__all__ = [
    "Box",
    "SamplingGrid",
    "Filter",
    "GaussianFilter",
    "AnisotropicGaussianFilter",
    "HatFilter",
    "SincFilter",
    "TabulatedFilter",
    "CombinedFilter",
    "Modulator",
    "ConstantModulator",
    "MonomialModulator",
    "SampledModulator",
    "OperatorFamily",
    "SpikeTrain",
    "NoiseSpec",
    "Measurement",
    "RankDeficientFamilyError",
    "fine_grid_for",
    "orthogonalize_filters",
    "assemble_response",
    "synthesize_measurement",
    "apply_operator",
    "operator_gram",
    "operator_relative_error",
    "monomial_modulators",
    "smooth_gp_modulator",
    "family_from_config",
    "load_family",
    "write_measurement",
    "read_measurement",
]


class RankDeficientFamilyError(ValueError):
    """Raised when a filter family does not span a space of full dimension."""

    def __init__(self, effective_rank: int, size: int):
        super().__init__(
            f"filter family is rank deficient: effective rank {effective_rank} of {size}"
        )
        self.effective_rank = effective_rank
        self.size = size


def _as_points(x, dim: int) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(-1, dim) if dim > 1 else pts.reshape(-1, 1)
    if pts.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {pts.shape}")
    return pts


def _as_position(x, dim: int) -> np.ndarray:
    pos = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    if pos.shape != (dim,):
        raise ValueError(f"expected a position in R^{dim}, got shape {pos.shape}")
    if not np.all(np.isfinite(pos)):
        raise ValueError("position must be finite")
    return pos


@dataclass(frozen=True)
class Box:
    """Axis-aligned compact domain ``[lo, hi]``."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise ValueError("lo and hi must have the same dimension")
        if any(h < l for l, h in zip(lo, hi)):
            raise ValueError(f"empty domain: lo={lo}, hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    def contains(self, points) -> np.ndarray:
        pts = _as_points(points, self.dim)
        return np.all((pts >= np.asarray(self.lo)) & (pts <= np.asarray(self.hi)), axis=1)

    def grid(self, step: float) -> np.ndarray:
        """Regular points covering the box with spacing ``step`` along every axis."""
        if step <= 0:
            raise ValueError("coarse step must be positive")
        if np.any(step > self.extent) and np.any(self.extent > 0):
            raise ValueError(f"step {step} exceeds the domain extent {self.extent}")
        axes = []
        for l, h in zip(self.lo, self.hi):
            n = int(math.floor((h - l) / step + 1e-9)) + 1
            ax = l + step * np.arange(n)
            if h - ax[-1] > 1e-9 * max(step, 1.0):
                ax = np.append(ax, h)
            axes.append(ax)
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True, eq=False)
class SamplingGrid:
    """Sampling locations ``z_1..z_M``.

    Each linear form is ``weight * delta_{z_m}``. For regular grids the weight
    defaults to the square root of the cell volume, which makes sampled inner
    products approximate L2 inner products.
    """

    points: np.ndarray
    weight: float = 1.0
    origin: tuple | None = None
    step: tuple | None = None
    counts: tuple | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("a sampling grid needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("sampling points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def regular(cls, origin, step, counts, weight: float | None = None) -> "SamplingGrid":
        origin = tuple(float(v) for v in np.atleast_1d(origin))
        step = tuple(float(v) for v in np.atleast_1d(step))
        counts = tuple(int(v) for v in np.atleast_1d(counts))
        if not (len(origin) == len(step) == len(counts)):
            raise ValueError("origin, step and counts must have the same length")
        if any(s <= 0 for s in step) or any(c < 1 for c in counts):
            raise ValueError("steps must be positive and counts at least 1")
        axes = [o + s * np.arange(c) for o, s, c in zip(origin, step, counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        if weight is None:
            weight = math.sqrt(math.prod(step))
        return cls(pts, float(weight), origin, step, counts)

    @classmethod
    def from_points(cls, points, weight: float = 1.0) -> "SamplingGrid":
        return cls(np.asarray(points, dtype=float), float(weight))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def is_regular(self) -> bool:
        return self.step is not None

    @property
    def pixel(self) -> float:
        """Grid step (smallest one for anisotropic grids)."""
        if self.step is not None:
            return min(self.step)
        if self.size == 1:
            return 1.0
        d = np.diff(np.sort(self.points[:, 0]))
        d = d[d > 0]
        return float(d.min()) if d.size else 1.0

    @property
    def axes(self) -> list[np.ndarray]:
        if not self.is_regular:
            raise ValueError("axes are only defined for regular grids")
        return [o + s * np.arange(c) for o, s, c in zip(self.origin, self.step, self.counts)]

    def bounds(self) -> Box:
        return Box(tuple(self.points.min(axis=0)), tuple(self.points.max(axis=0)))

    def to_dict(self) -> dict:
        if not self.is_regular:
            return {"dim": self.dim, "points": self.points.tolist(), "weight": self.weight}
        return {
            "dim": self.dim,
            "origin": list(self.origin),
            "step": list(self.step),
            "counts": list(self.counts),
        }


# ---------------------------------------------------------------------------
# Filters


class Filter:
    """A convolution kernel evaluated at offsets ``z - x``.

    Subclasses implement ``__call__`` on an array of shape ``(P, D)``.
    """

    dim: int = 1

    def __call__(self, offsets: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def scale(self) -> float:
        """Narrowest length scale, used to check fine-grid resolution."""
        raise NotImplementedError

    @property
    def radius(self) -> float:
        """Half-width of a window holding all but a negligible part of the filter."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class GaussianFilter(Filter):
    """Isotropic unnormalized Gaussian ``exp(-|x|^2 / (2 std^2))``."""

    std: float
    dim: int = 1

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("std must be strictly positive")

    def __call__(self, offsets):
        r2 = np.sum(np.asarray(offsets, dtype=float) ** 2, axis=-1)
        return np.exp(-r2 / (2.0 * self.std**2))

    @property
    def scale(self):
        return self.std

    @property
    def radius(self):
        return 9.0 * self.std

    def to_dict(self):
        return {"kind": "gaussian", "std": self.std, "dim": self.dim}


@dataclass(frozen=True, eq=False)
class AnisotropicGaussianFilter(Filter):
    """Gaussian ``exp(-x^T C^{-1} x / 2)`` with a symmetric positive definite covariance."""

    covariance: np.ndarray

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
            raise ValueError("covariance must be a symmetric matrix")
        eig = np.linalg.eigvalsh(cov)
        if eig.min() <= 0:
            raise ValueError("covariance must be positive definite")
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_precision", np.linalg.inv(cov))
        object.__setattr__(self, "_eig", eig)

    @property
    def dim(self):
        return self.covariance.shape[0]

    def __call__(self, offsets):
        x = np.asarray(offsets, dtype=float)
        q = np.sum((x @ self._precision) * x, axis=-1)
        return np.exp(-0.5 * q)

    @property
    def scale(self):
        return float(np.sqrt(self._eig.min()))

    @property
    def radius(self):
        return 9.0 * float(np.sqrt(self._eig.max()))

    def to_dict(self):
        return {"kind": "anisotropic_gaussian", "covariance": self.covariance.tolist()}


@dataclass(frozen=True, eq=False)
class HatFilter(Filter):
    """Separable hat ``prod_d (1 - |x_d / scale - center|)_+``.

    With ``center=1`` the hat is supported on ``[0, 2*scale]`` and peaks at
    ``scale``, which is the profile used for the hat family.
    """

    scale_: float
    center: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if not self.scale_ > 0:
            raise ValueError("hat scale must be strictly positive")

    def __call__(self, offsets):
        u = np.asarray(offsets, dtype=float) / self.scale_ - self.center
        return np.prod(np.clip(1.0 - np.abs(u), 0.0, None), axis=-1)

    @property
    def scale(self):
        return self.scale_

    @property
    def radius(self):
        return self.scale_ * (abs(self.center) + 1.0)

    def to_dict(self):
        return {"kind": "hat", "scale": self.scale_, "center": self.center, "dim": self.dim}


@dataclass(frozen=True, eq=False)
class SincFilter(Filter):
    """Band-limited kernel ``prod_d a^{-1/2} sinc(x_d / a)`` with unit L2 norm."""

    scale_: float
    dim: int = 1

    def __post_init__(self):
        if not self.scale_ > 0:
            raise ValueError("sinc scale must be strictly positive")

    def __call__(self, offsets):
        x = np.asarray(offsets, dtype=float) / self.scale_
        return np.prod(np.sinc(x), axis=-1) / self.scale_ ** (0.5 * self.dim)

    @property
    def scale(self):
        return self.scale_

    @property
    def radius(self):
        return math.inf

    def to_dict(self):
        return {"kind": "sinc", "scale": self.scale_, "dim": self.dim}


@dataclass(frozen=True, eq=False)
class TabulatedFilter(Filter):
    """Filter known through samples on a regular grid.

    Evaluated by (multi)linear interpolation, zero outside the table.
    """

    samples: np.ndarray
    origin: tuple
    step: tuple

    def __post_init__(self):
        vals = np.asarray(self.samples, dtype=float)
        origin = tuple(float(v) for v in np.atleast_1d(self.origin))
        step = tuple(float(v) for v in np.atleast_1d(self.step))
        if vals.ndim != len(origin) or len(step) != len(origin):
            raise ValueError("samples, origin and step dimensions disagree")
        if any(s <= 0 for s in step):
            raise ValueError("table steps must be positive")
        object.__setattr__(self, "samples", vals)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "step", step)
        axes = [o + s * np.arange(n) for o, s, n in zip(origin, step, vals.shape)]
        object.__setattr__(self, "_axes", axes)
        if vals.ndim > 1:
            interp = RegularGridInterpolator(
                axes, vals, method="linear", bounds_error=False, fill_value=0.0
            )
            object.__setattr__(self, "_interp", interp)

    @property
    def dim(self):
        return self.samples.ndim

    def __call__(self, offsets):
        x = np.asarray(offsets, dtype=float)
        if self.dim == 1:
            return np.interp(x[..., 0], self._axes[0], self.samples, left=0.0, right=0.0)
        shape = x.shape[:-1]
        return self._interp(x.reshape(-1, self.dim)).reshape(shape)

    @property
    def scale(self):
        # the table itself carries no scale; its resolution is the best we can claim
        return 20.0 * min(self.step)

    @property
    def radius(self):
        ends = [max(abs(a[0]), abs(a[-1])) for a in self._axes]
        return float(max(ends))

    def to_dict(self):
        return {
            "kind": "tabulated",
            "samples": self.samples.tolist(),
            "origin": list(self.origin),
            "step": list(self.step),
        }


@dataclass(frozen=True, eq=False)
class CombinedFilter(Filter):
    """Linear combination ``sum_k coefficients[k] * components[k]``.

    Produced by :func:`orthogonalize_filters`; ``table`` keeps the samples of
    the combination on the fine grid used to build it.
    """

    components: tuple
    coefficients: np.ndarray
    table: TabulatedFilter | None = None

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float).ravel()
        if coef.size != len(self.components):
            raise ValueError("one coefficient per component is required")
        object.__setattr__(self, "coefficients", coef)

    @property
    def dim(self):
        return self.components[0].dim

    def __call__(self, offsets):
        vals = np.stack([c(offsets) for c in self.components], axis=-1)
        return vals @ self.coefficients

    @property
    def scale(self):
        return min(c.scale for c in self.components)

    @property
    def radius(self):
        return max(c.radius for c in self.components)

    def to_dict(self):
        return {
            "kind": "combination",
            "components": [c.to_dict() for c in self.components],
            "coefficients": self.coefficients.tolist(),
        }


def fine_grid_for(filters: Sequence[Filter], measurement: SamplingGrid, factor: int = 10) -> SamplingGrid:
    """Default orthogonalization grid.

    Centered on the origin, ``factor`` times denser than the measurement grid
    and never coarser than 1/20 of the narrowest filter scale.
    """
    dim = filters[0].dim
    radius = max(f.radius for f in filters)
    if not math.isfinite(radius):
        raise ValueError("cannot build a finite fine grid for filters with unbounded support")
    step = min(measurement.pixel / factor, min(f.scale for f in filters) / 20.0)
    n = int(math.ceil(radius / step))
    return SamplingGrid.regular([-n * step] * dim, [step] * dim, [2 * n + 1] * dim)


def orthogonalize_filters(
    filters: Sequence[Filter], fine_grid: SamplingGrid, rank_tol: float = 1e-10
) -> list[CombinedFilter]:
    """Orthonormalize a filter family in L2 using an SVD on a fine grid.

    The polar factor ``U V^T`` of the sampled family is used, so a family that
    is already orthonormal comes back unchanged. Inner products are the grid
    sums scaled by the cell volume.
    """
    if not filters:
        raise ValueError("at least one filter is required")
    if not fine_grid.is_regular:
        raise ValueError("orthogonalization needs a regular fine grid")
    finest = max(fine_grid.step)
    narrowest = min(f.scale for f in filters)
    if narrowest / finest < 20.0 - 1e-9:
        raise ValueError(
            f"fine grid step {finest:g} resolves the narrowest filter scale {narrowest:g} "
            "with fewer than 20 samples"
        )
    cell = math.prod(fine_grid.step)
    F = np.stack([f(fine_grid.points) for f in filters], axis=1) * math.sqrt(cell)
    U, s, Vt = np.linalg.svd(F, full_matrices=False)
    rank = int(np.sum(s > rank_tol * s[0])) if s[0] > 0 else 0
    if rank < len(filters):
        raise RankDeficientFamilyError(rank, len(filters))
    coeffs = (Vt.T / s) @ Vt
    table = (F @ coeffs) / math.sqrt(cell)
    shape = fine_grid.counts
    comps = tuple(filters)
    out = []
    for i in range(len(filters)):
        tab = TabulatedFilter(table[:, i].reshape(shape), fine_grid.origin, fine_grid.step)
        out.append(CombinedFilter(comps, coeffs[:, i], tab))
    return out


# ---------------------------------------------------------------------------
# Modulators (space variation of product-convolution operators)


class Modulator:
    """Scalar function ``f_k`` evaluated at source positions ``(P, D) -> (P,)``."""

    def __call__(self, x: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantModulator(Modulator):
    value: float = 1.0

    def __call__(self, x):
        return np.full(np.asarray(x).shape[0], self.value)


@dataclass(frozen=True)
class MonomialModulator(Modulator):
    exponents: tuple

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.prod(x ** np.asarray(self.exponents, dtype=float), axis=-1)


@dataclass(frozen=True, eq=False)
class SampledModulator(Modulator):
    """Modulator tabulated on a regular grid, linearly interpolated (nearest value outside)."""

    values: np.ndarray
    grid: SamplingGrid
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.grid.is_regular:
            raise ValueError("sampled modulators need a regular grid")
        vals = np.asarray(self.values, dtype=float).reshape(self.grid.counts)
        object.__setattr__(self, "values", vals)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        axes = self.grid.axes
        if len(axes) == 1:
            return np.interp(x[:, 0], axes[0], self.values)
        clipped = np.clip(x, [a[0] for a in axes], [a[-1] for a in axes])
        interp = RegularGridInterpolator(axes, self.values, method="linear")
        return interp(clipped)


def monomial_modulators(max_degree: int, dim: int) -> list[MonomialModulator]:
    """Monomials of total degree <= max_degree, by degree then lexicographic (1, x, y, ...)."""
    mods = []
    for deg in range(max_degree + 1):
        exps = [e for e in itertools.product(range(deg + 1), repeat=dim) if sum(e) == deg]
        for e in sorted(exps, reverse=True):
            mods.append(MonomialModulator(tuple(e)))
    return mods


def smooth_gp_modulator(grid: SamplingGrid, corr_len: float, seed: int) -> SampledModulator:
    """White noise on the grid smoothed by a Gaussian of std ``corr_len`` grid steps.

    Rescaled to unit root-mean-square.
    """
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(grid.counts)
    smooth = gaussian_filter(noise, sigma=corr_len, mode="reflect")
    smooth /= np.sqrt(np.mean(smooth**2))
    return SampledModulator(smooth, grid, {"kind": "smooth_gp", "corr_len": corr_len, "seed": seed})


# ---------------------------------------------------------------------------
# Operator family


@dataclass(frozen=True, eq=False)
class OperatorFamily:
    """Known subspace of operators ``A(gamma) = sum_i gamma_i A_i``.

    For ``product_convolution`` the basis element ``i = k * J + j`` acts as
    ``mu -> e_j * (f_k . mu)``, so its impulse response at ``x`` is
    ``f_k(x) e_j(. - x)``. Columns are ordered with ``k`` outer and ``j`` inner.
    """

    kind: str
    filters: tuple
    grid: SamplingGrid
    modulators: tuple = (ConstantModulator(),)
    orthogonalized: bool = False

    def __post_init__(self):
        if self.kind not in ("convolution", "product_convolution"):
            raise ValueError(f"unknown family kind {self.kind!r}")
        filters = tuple(self.filters)
        mods = tuple(self.modulators)
        if not filters:
            raise ValueError("a family needs at least one filter")
        if any(f.dim != self.grid.dim for f in filters):
            raise ValueError("filter and grid dimensions disagree")
        if self.kind == "convolution" and (len(mods) != 1 or not isinstance(mods[0], ConstantModulator)):
            raise ValueError("convolution families carry no modulators")
        if not mods:
            raise ValueError("product-convolution families need at least one modulator")
        object.__setattr__(self, "filters", filters)
        object.__setattr__(self, "modulators", mods)
        # filters that share components are evaluated once per call
        if all(isinstance(f, CombinedFilter) for f in filters) and all(
            f.components is filters[0].components for f in filters
        ):
            comps = filters[0].components
            coeffs = np.stack([f.coefficients for f in filters], axis=1)
        else:
            comps = filters
            coeffs = None
        object.__setattr__(self, "_components", comps)
        object.__setattr__(self, "_coeffs", coeffs)

    @property
    def J(self) -> int:
        return len(self.filters)

    @property
    def K(self) -> int:
        return len(self.modulators)

    @property
    def I(self) -> int:
        return self.J * self.K

    @property
    def M(self) -> int:
        return self.grid.size

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def support_radius(self) -> float:
        return max(c.radius for c in self._components)

    def support_rows(self, x, margin: float = 0.0) -> np.ndarray | None:
        """Indices of grid points within the filter support window around ``x``.

        ``None`` means every row (unbounded support). The window is a box of
        half-width ``support_radius + margin``.
        """
        R = self.support_radius + margin
        if not math.isfinite(R):
            return None
        pos = _as_position(x, self.dim)
        if self.grid.is_regular:
            ranges = []
            for d, (o, s, n) in enumerate(zip(self.grid.origin, self.grid.step, self.grid.counts)):
                lo = max(int(math.ceil((pos[d] - R - o) / s)), 0)
                hi = min(int(math.floor((pos[d] + R - o) / s)), n - 1)
                if hi < lo:
                    return np.zeros(0, dtype=int)
                ranges.append(np.arange(lo, hi + 1))
            mesh = np.meshgrid(*ranges, indexing="ij")
            return np.ravel_multi_index(tuple(m.ravel() for m in mesh), self.grid.counts)
        inside = np.all(np.abs(self.grid.points - pos) <= R, axis=1)
        return np.nonzero(inside)[0]

    def filter_block(self, x, rows=None) -> np.ndarray:
        """``M x J`` matrix of weighted filter samples ``e_j(z_m - x)``.

        With ``rows`` only those grid points are evaluated.
        """
        pos = _as_position(x, self.dim)
        pts = self.grid.points if rows is None else self.grid.points[rows]
        offsets = pts - pos
        vals = np.stack([c(offsets) for c in self._components], axis=1)
        if self._coeffs is not None:
            vals = vals @ self._coeffs
        return self.grid.weight * vals

    def modulator_values(self, x) -> np.ndarray:
        pos = _as_position(x, self.dim)[None, :]
        return np.array([float(f(pos)[0]) for f in self.modulators])

    def response(self, x, rows=None) -> np.ndarray:
        """Response matrix ``E(x)`` of shape ``(M, I)`` (or its ``rows``)."""
        block = self.filter_block(x, rows)
        if self.kind == "convolution":
            return block
        fk = self.modulator_values(x)
        return np.concatenate([f * block for f in fk], axis=1)

    def span_matrix(self, x, rows=None) -> np.ndarray:
        """A matrix with the same range as ``E(x)`` but at most J columns.

        Product-convolution columns are colinear across ``k``, so the filter
        block spans the range whenever some ``f_k(x)`` is nonzero.
        """
        block = self.filter_block(x, rows)
        if self.kind == "convolution":
            return block
        return np.linalg.norm(self.modulator_values(x)) * block

    def gamma_matrix(self, gamma) -> np.ndarray:
        """Reshape a parameter vector to ``(K, J)`` following the column order."""
        return np.asarray(gamma, dtype=float).reshape(self.K, self.J)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "grid": self.grid.to_dict(),
            "filters": [f.to_dict() for f in self.filters],
            "orthogonalized": self.orthogonalized,
        }


def assemble_response(family: OperatorFamily, x) -> np.ndarray:
    """Response matrix ``E(x)``; see :meth:`OperatorFamily.response`."""
    return family.response(x)


# ---------------------------------------------------------------------------
# Sources, noise and measurements


@dataclass(frozen=True, eq=False)
class SpikeTrain:
    """Discrete measure ``sum_n w_n delta_{x_n}``."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None] if pos.size == w.size else pos[None, :]
        if pos.shape[0] != w.size:
            raise ValueError("one weight per position is required")
        if np.any(w == 0):
            raise ValueError("spike weights must be nonzero")
        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(w)):
            raise ValueError("spike positions and weights must be finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)

    @classmethod
    def single(cls, x, w: float = 1.0) -> "SpikeTrain":
        return cls(np.atleast_1d(np.asarray(x, dtype=float))[None, :], [w])

    @property
    def N(self) -> int:
        return self.weights.size

    def check_inside(self, domain: Box) -> None:
        if not np.all(domain.contains(self.positions)):
            raise ValueError("spike positions must lie inside the domain")


@dataclass(frozen=True)
class NoiseSpec:
    """Additive noise model.

    ``white_gaussian`` draws ``N(0, sigma^2 Id)``; ``bounded_relative`` draws a
    random direction and scales it to ``||b|| = theta * ||y0||`` exactly.
    """

    model: str = "white_gaussian"
    sigma: float = 0.0
    theta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.model not in ("white_gaussian", "bounded_relative"):
            raise ValueError(f"unknown noise model {self.model!r}")
        if self.sigma < 0 or self.theta < 0:
            raise ValueError("noise levels must be nonnegative")
        if self.model == "white_gaussian" and self.theta > 0:
            raise ValueError("white_gaussian noise takes sigma; use relative_white for a relative level")
        if self.model == "bounded_relative" and self.sigma > 0:
            raise ValueError("bounded_relative noise takes theta, not sigma")

    @classmethod
    def relative_white(cls, theta: float, y0: np.ndarray, seed: int) -> "NoiseSpec":
        """White noise with ``sigma = theta * ||y0|| / sqrt(M)``."""
        sigma = theta * float(np.linalg.norm(y0)) / math.sqrt(y0.size)
        return cls("white_gaussian", sigma=sigma, seed=seed)

    def draw(self, y0: np.ndarray) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        if self.model == "white_gaussian":
            if self.sigma == 0:
                return np.zeros_like(y0)
            return self.sigma * rng.standard_normal(y0.shape)
        norm0 = float(np.linalg.norm(y0))
        if norm0 == 0:
            raise ValueError("bounded_relative noise needs nonzero noiseless measurements")
        d = rng.standard_normal(y0.shape)
        return (self.theta * norm0 / np.linalg.norm(d)) * d


@dataclass(frozen=True, eq=False)
class Measurement:
    y: np.ndarray
    y0: np.ndarray
    noise: np.ndarray


def apply_operator(family: OperatorFamily, gamma, spikes: SpikeTrain) -> np.ndarray:
    """Noiseless samples ``sum_n w_n E(x_n) gamma`` of ``A(gamma) mu``."""
    gamma = np.asarray(gamma, dtype=float).ravel()
    if gamma.size != family.I:
        raise ValueError(f"gamma must have {family.I} entries")
    if not np.all(np.isfinite(gamma)):
        raise ValueError("gamma must be finite")
    y = np.zeros(family.M)
    for x, w in zip(spikes.positions, spikes.weights):
        y += w * (family.response(x) @ gamma)
    return y


def synthesize_measurement(
    family: OperatorFamily, gamma, spikes: SpikeTrain, noise: NoiseSpec | None = None
) -> Measurement:
    y0 = apply_operator(family, gamma, spikes)
    b = np.zeros_like(y0) if noise is None else noise.draw(y0)
    return Measurement(y0 + b, y0, b)


def operator_gram(family: OperatorFamily) -> np.ndarray:
    """Gram matrix ``<A_i, A_i'>_HS`` of the basis operators as dense grid matrices.

    Column ``m'`` of the dense matrix of ``A_i`` is column ``i`` of ``E(z_m')``,
    so the Gram matrix is ``sum_m' E(z_m')^T E(z_m')``.
    """
    G = np.zeros((family.I, family.I))
    for z in family.grid.points:
        E = family.response(z, family.support_rows(z))
        G += E.T @ E
    return G


def operator_relative_error(gram: np.ndarray, gamma_hat, gamma_true) -> float:
    """Relative Hilbert-Schmidt distance between ``A(gamma_hat)`` and ``A(gamma_true)``."""
    d = np.asarray(gamma_hat, dtype=float) - np.asarray(gamma_true, dtype=float)
    g = np.asarray(gamma_true, dtype=float)
    den = float(g @ gram @ g)
    return math.sqrt(max(float(d @ gram @ d), 0.0) / den)


# ---------------------------------------------------------------------------
# Configuration and file formats


def _filter_from_config(spec: dict, dim: int) -> Filter:
    kind = spec.get("kind")
    if kind == "gaussian":
        return GaussianFilter(float(spec["std"]), dim)
    if kind == "anisotropic_gaussian":
        return AnisotropicGaussianFilter(np.asarray(spec["covariance"], dtype=float))
    if kind == "hat":
        return HatFilter(float(spec["scale"]), float(spec.get("center", 1.0)), dim)
    if kind == "sinc":
        return SincFilter(float(spec["scale"]), dim)
    if kind == "tabulated":
        return TabulatedFilter(np.asarray(spec["samples"], dtype=float), spec["origin"], spec["step"])
    raise ValueError(f"unknown filter kind {kind!r}")


def _grid_from_config(spec: dict) -> SamplingGrid:
    if "points" in spec:
        return SamplingGrid.from_points(spec["points"], spec.get("weight", 1.0))
    dim = int(spec.get("dim", len(np.atleast_1d(spec["origin"]))))
    origin = np.broadcast_to(np.asarray(spec["origin"], dtype=float), (dim,))
    step = np.broadcast_to(np.asarray(spec["step"], dtype=float), (dim,))
    counts = np.broadcast_to(np.asarray(spec["counts"], dtype=int), (dim,))
    return SamplingGrid.regular(origin, step, counts, spec.get("weight"))


def family_from_config(cfg: dict, modulator_seed: int | None = None) -> OperatorFamily:
    """Build a family from its JSON description.

    ``orthogonalize`` (default true) and ``fine_factor`` (default 10) control
    filter orthogonalization. ``modulator_seed`` overrides the seeds of
    ``smooth_gp`` modulators (offset by their index).
    """
    try:
        kind = cfg["kind"]
        grid = _grid_from_config(cfg["grid"])
        filters = [_filter_from_config(f, grid.dim) for f in cfg["filters"]]
    except KeyError as exc:
        raise ValueError(f"missing family field {exc}") from None
    ortho = bool(cfg.get("orthogonalize", True)) and not any(isinstance(f, SincFilter) for f in filters)
    if ortho:
        fine = fine_grid_for(filters, grid, int(cfg.get("fine_factor", 10)))
        filters = orthogonalize_filters(filters, fine)
    mods: list[Modulator] = []
    for k, m in enumerate(cfg.get("modulators", [])):
        mk = m.get("kind")
        if mk == "smooth_gp":
            seed = int(m["seed"]) if modulator_seed is None else modulator_seed + k
            mods.append(smooth_gp_modulator(grid, float(m["corr_len"]), seed))
        elif mk == "monomials":
            mods.extend(monomial_modulators(int(m["max_degree"]), grid.dim))
        elif mk == "constant":
            mods.append(ConstantModulator(float(m.get("value", 1.0))))
        else:
            raise ValueError(f"unknown modulator kind {mk!r}")
    if kind == "convolution":
        if mods:
            raise ValueError("convolution families take no modulators")
        mods = [ConstantModulator()]
    return OperatorFamily(kind, tuple(filters), grid, tuple(mods), orthogonalized=ortho)


def load_family(path) -> OperatorFamily:
    with open(path) as fh:
        return family_from_config(json.load(fh))


def write_measurement(path, grid: SamplingGrid, y) -> None:
    """CSV with header ``m,z_1..z_D,y``; floats written with 17 significant digits."""
    y = np.asarray(y, dtype=float)
    header = ["m"] + [f"z_{d + 1}" for d in range(grid.dim)] + ["y"]
    lines = [",".join(header)]
    for m, (z, v) in enumerate(zip(grid.points, y), start=1):
        lines.append(",".join([str(m)] + [format(c, ".17g") for c in z] + [format(v, ".17g")]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_measurement(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a measurement CSV; returns ``(points, y)``."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "m" or header[-1] != "y" or not all(
            h == f"z_{d + 1}" for d, h in enumerate(header[1:-1])
        ):
            raise ValueError(f"unexpected measurement header {header}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return data[:, 1:-1], data[:, -1]
