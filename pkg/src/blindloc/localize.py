"""Source localization by maximizing the projected measurement energy.

For a single source the best position maximizes
``H(x) = ||Pi(x) y||^2 / 2`` where ``Pi(x)`` projects onto the range of the
response matrix ``E(x)``. Equivalently it minimizes the least-squares residual
``||y - Pi(x) y||``; refinement uses the residual form because it keeps full
relative precision near the optimum.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .family import Box, OperatorFamily, _as_position
from .geometry import PhiModel, PhiProfile, quantile_inverse, range_basis

logger = logging.getLogger(__name__)

__all__ = [
    "SpikeEstimate",
    "CorrelationField",
    "ProjectorCache",
    "correlation_objective",
    "correlation_field",
    "estimate_alpha",
    "localize_single",
    "detect_peaks",
    "classify_detections",
    "default_coarse_step",
    "default_exclusion_radius",
]

ISOLATED = "isolated"
CLUSTERED = "clustered"
WEAK = "weak"

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True, eq=False)
class SpikeEstimate:
    """Estimated source position with its range coefficients.

    ``alpha`` holds the coordinates of ``Pi(x) y`` in an orthonormal range
    basis, ``alpha_ambient`` the minimum-norm coefficients in ``R^I``.
    """

    position: np.ndarray
    H: float
    alpha: np.ndarray
    alpha_ambient: np.ndarray
    residual: float
    status: str = ISOLATED

    def with_status(self, status: str) -> "SpikeEstimate":
        return SpikeEstimate(self.position, self.H, self.alpha, self.alpha_ambient, self.residual, status)

    def to_dict(self) -> dict:
        return {
            "x": [float(v) for v in self.position],
            "H": float(self.H),
            "status": self.status,
            "alpha_norm": float(np.linalg.norm(self.alpha)),
        }


@dataclass(frozen=True, eq=False)
class CorrelationField:
    """``H`` evaluated on the coarse points of a domain."""

    points: np.ndarray
    values: np.ndarray

    def argmax(self) -> int:
        return int(np.argmax(self.values))


class ProjectorCache:
    """Range bases on a fixed set of coarse points, reused across measurements."""

    def __init__(self, family: OperatorFamily, points, rank_tol: float = 1e-10):
        self.family = family
        self.points = np.asarray(points, dtype=float).reshape(-1, family.dim)
        self.rank_tol = rank_tol
        self.rows = []
        self.bases = []
        for x in self.points:
            rows = family.support_rows(x)
            self.rows.append(rows)
            self.bases.append(range_basis(family.span_matrix(x, rows), rank_tol))

    def matches(self, family: OperatorFamily, points, rank_tol: float) -> bool:
        return (
            family is self.family
            and rank_tol == self.rank_tol
            and points.shape == self.points.shape
            and np.array_equal(points, self.points)
        )

    def field(self, y: np.ndarray) -> np.ndarray:
        out = np.empty(len(self.bases))
        for i, (rows, U) in enumerate(zip(self.rows, self.bases)):
            c = U.T @ (y if rows is None else y[rows])
            out[i] = 0.5 * float(c @ c)
        return out


def _check_measurement(family: OperatorFamily, y) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.size != family.M:
        raise ValueError(f"measurement must have {family.M} samples, got {y.size}")
    if not np.all(np.isfinite(y)):
        raise ValueError("measurement must be finite")
    return y


def correlation_objective(family: OperatorFamily, y, x, rank_tol: float = 1e-10) -> float:
    """``H(x) = ||Pi(x) y||^2 / 2``."""
    y = _check_measurement(family, y)
    rows = family.support_rows(x)
    U = range_basis(family.span_matrix(x, rows), rank_tol)
    c = U.T @ (y if rows is None else y[rows])
    return 0.5 * float(c @ c)


def correlation_field(
    family: OperatorFamily, y, points, rank_tol: float = 1e-10, cache: ProjectorCache | None = None
) -> CorrelationField:
    y = _check_measurement(family, y)
    pts = np.asarray(points, dtype=float).reshape(-1, family.dim)
    if cache is not None and cache.matches(family, pts, rank_tol):
        return CorrelationField(pts, cache.field(y))
    vals = np.array([correlation_objective(family, y, x, rank_tol) for x in pts])
    return CorrelationField(pts, vals)


def estimate_alpha(family: OperatorFamily, x, y, rank_tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """Minimum-norm least-squares coefficients ``E(x)^+ y`` and the residual norm."""
    y = _check_measurement(family, y)
    E = family.response(x)
    U, s, Vt = np.linalg.svd(E, full_matrices=False)
    r = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
    coef = U[:, :r].T @ y
    alpha = Vt[:r].T @ (coef / s[:r])
    residual = float(np.linalg.norm(y - U[:, :r] @ coef))
    return alpha, residual


class _LocalObjective:
    """Residual ``||y_R - Pi(x) y_R||`` over a fixed set of rows ``R``."""

    def __init__(self, family, y, rows, rank_tol):
        self.family = family
        self.rows = rows
        self.y = y if rows is None else y[rows]
        self.rank_tol = rank_tol
        self.scale = float(np.linalg.norm(self.y))

    def basis(self, x):
        return range_basis(self.family.span_matrix(x, self.rows), self.rank_tol)

    def __call__(self, x) -> float:
        U = self.basis(x)
        r = self.y - U @ (U.T @ self.y)
        return float(np.linalg.norm(r))


def _golden_section(f, a: float, b: float, tol: float, max_iter: int = 200) -> float:
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _refine(objective: _LocalObjective, start: np.ndarray, step: float, domain: Box, tol: float) -> np.ndarray:
    lo = np.maximum(start - step, domain.lo)
    hi = np.minimum(start + step, domain.hi)
    if start.size == 1:
        x = _golden_section(lambda t: objective(np.array([t])), float(lo[0]), float(hi[0]), tol)
        cand = np.array([x])
    else:
        ceiling = objective.scale

        def penalized(x):
            if np.any(x < lo) or np.any(x > hi):
                return ceiling + float(np.max(np.maximum(lo - x, x - hi)))
            return objective(x)

        simplex = [start]
        for d in range(start.size):
            v = start.copy()
            v[d] += 0.5 * step if start[d] + 0.5 * step <= hi[d] else -0.5 * step
            simplex.append(v)
        res = minimize(
            penalized,
            start,
            method="Nelder-Mead",
            options={
                "initial_simplex": np.array(simplex),
                "xatol": tol,
                "fatol": 1e-15 * max(ceiling, 1e-300),
                "maxiter": 1000 * start.size,
            },
        )
        cand = np.clip(res.x, lo, hi)
    # never return something worse than the coarse node
    if objective(cand) > objective(start):
        return start
    return cand


def _estimate_at(family, y, x, rank_tol, status=ISOLATED) -> SpikeEstimate:
    rows = family.support_rows(x)
    U = range_basis(family.span_matrix(x, rows), rank_tol)
    yr = y if rows is None else y[rows]
    coords = U.T @ yr
    alpha_amb, residual = estimate_alpha(family, x, y, rank_tol)
    return SpikeEstimate(np.asarray(x, dtype=float), 0.5 * float(coords @ coords), coords, alpha_amb, residual, status)


def default_coarse_step(profile: PhiProfile, level: float = 0.25) -> float:
    """Offset at which the identifiability profile reaches ``level``."""
    s = quantile_inverse(profile, level)
    if not math.isfinite(s) or s <= 0:
        raise ValueError(f"profile never reaches {level}")
    return s


def default_exclusion_radius(coarse_step: float, model: PhiModel | None = None, c: float = 1.0, N: int = 2, tau: float = 5.0) -> float:
    if model is not None:
        from .geometry import isolation_radius

        return 0.5 * isolation_radius(model, c, N, tau).delta_min
    return 3.0 * coarse_step


def _coarse_points(domain: Box, coarse_step: float) -> np.ndarray:
    if coarse_step <= 0:
        raise ValueError("coarse step must be positive")
    if np.all(domain.extent == 0):
        return np.asarray(domain.lo, dtype=float)[None, :]
    if coarse_step > float(domain.extent.max()):
        raise ValueError("coarse step is larger than the domain extent")
    return domain.grid(coarse_step)


def localize_single(
    family: OperatorFamily,
    y,
    domain: Box,
    coarse_step: float,
    refine_tol: float | None = None,
    rank_tol: float = 1e-10,
    cache: ProjectorCache | None = None,
) -> SpikeEstimate:
    """Coarse search of ``H`` on a grid, then local refinement.

    Refinement is a golden-section search in 1D and Nelder-Mead otherwise,
    both confined to one coarse step around the best node.
    """
    y = _check_measurement(family, y)
    if domain.dim != family.dim:
        raise ValueError("domain and family dimensions disagree")
    if refine_tol is None:
        refine_tol = 1e-8 * max(float(domain.extent.max()), 1e-300)
    pts = _coarse_points(domain, coarse_step)
    field = correlation_field(family, y, pts, rank_tol, cache)
    start = pts[field.argmax()]
    rows = family.support_rows(start, margin=coarse_step)
    objective = _LocalObjective(family, y, rows, rank_tol)
    if objective(start) <= 1e-14 * max(objective.scale, 1e-300):
        x_hat = start
    else:
        x_hat = _refine(objective, start, coarse_step, domain, refine_tol)
    return _estimate_at(family, y, x_hat, rank_tol)


def classify_detections(positions, H, exclusion_radius: float, floor: float) -> list[str]:
    """Status of each detection.

    Pairs closer than twice the exclusion radius are clustered; remaining
    detections whose ``H`` is less than twice the stopping level are weak.
    """
    pos = np.asarray(positions, dtype=float)
    n = pos.shape[0]
    status = [ISOLATED] * n
    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(pos[i] - pos[j]) < 2.0 * exclusion_radius:
                status[i] = status[j] = CLUSTERED
    for i in range(n):
        if status[i] == ISOLATED and H[i] < 2.0 * floor:
            status[i] = WEAK
    return status


def detect_peaks(
    family: OperatorFamily,
    y,
    domain: Box,
    coarse_step: float,
    weak_threshold: float = 0.1,
    exclusion_radius: float | None = None,
    refine_tol: float | None = None,
    rank_tol: float = 1e-10,
    max_peaks: int | None = None,
    cache: ProjectorCache | None = None,
) -> list[SpikeEstimate]:
    """Greedy detection of several sources on the correlation field.

    The highest remaining coarse node is refined if it is a local maximum of
    the field, then every node within ``exclusion_radius`` of it is suppressed. The loop stops once the best
    remaining ``H`` drops below ``weak_threshold * ||y||^2 / 2``.
    """
    y = _check_measurement(family, y)
    if exclusion_radius is None:
        exclusion_radius = default_exclusion_radius(coarse_step)
    if not exclusion_radius > 0:
        raise ValueError("exclusion radius must be positive")
    if refine_tol is None:
        refine_tol = 1e-8 * max(float(domain.extent.max()), 1e-300)
    pts = _coarse_points(domain, coarse_step)
    field = correlation_field(family, y, pts, rank_tol, cache)
    floor = weak_threshold * 0.5 * float(y @ y)
    neighbor_radius = 1.01 * coarse_step * math.sqrt(family.dim)
    active = np.ones(pts.shape[0], dtype=bool)
    found: list[SpikeEstimate] = []
    while active.any():
        if max_peaks is not None and len(found) >= max_peaks:
            break
        idx = int(np.argmax(np.where(active, field.values, -np.inf)))
        if field.values[idx] < floor or field.values[idx] <= 0:
            break
        start = pts[idx]
        # flanks of stronger peaks cut by the exclusion zone are not sources
        near = np.linalg.norm(pts - start, axis=1) <= neighbor_radius
        if field.values[idx] < field.values[near].max():
            active[idx] = False
            continue
        rows = family.support_rows(start, margin=coarse_step)
        objective = _LocalObjective(family, y, rows, rank_tol)
        x_hat = _refine(objective, start, coarse_step, domain, refine_tol)
        active &= np.linalg.norm(pts - x_hat, axis=1) > exclusion_radius
        active[idx] = False
        if any(np.linalg.norm(e.position - x_hat) <= exclusion_radius for e in found):
            continue
        found.append(_estimate_at(family, y, x_hat, rank_tol))
    if not found:
        return []
    status = classify_detections([e.position for e in found], [e.H for e in found], exclusion_radius, floor)
    return [e.with_status(s) for e, s in zip(found, status)]
