"""Geometry of the range map ``x -> ran E(x)``.

Distances between ranges are measured with principal angles. The
identifiability profile ``phi`` turns those distances into location error
bounds.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .family import Box, OperatorFamily, _as_position

logger = logging.getLogger(__name__)

__all__ = [
    "Projector",
    "PhiProfile",
    "PhiModel",
    "IsolationRadius",
    "SpectralBounds",
    "AmplitudeStats",
    "NO_GUARANTEE_THETA",
    "range_basis",
    "range_projector",
    "principal_angle_norm",
    "projector_distance",
    "sample_phi_profile",
    "monotone_majorant",
    "quantile_inverse",
    "location_error_bound",
    "isolation_radius",
    "fit_phi_model",
    "spectral_bounds",
    "mc_amplitude",
]

# relative noise level at which the deterministic location bound becomes void
NO_GUARANTEE_THETA = math.sqrt(6.0) / 2.0 - 1.0


@dataclass(frozen=True, eq=False)
class Projector:
    """Orthogonal projector onto ``ran E(x)`` stored through an orthonormal basis."""

    basis: np.ndarray
    x: np.ndarray | None = None

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def ambient(self) -> int:
        return self.basis.shape[0]

    def matrix(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def apply(self, y) -> np.ndarray:
        return self.basis @ (self.basis.T @ y)

    def coords(self, y) -> np.ndarray:
        """Coordinates of the projection of ``y`` in the basis."""
        return self.basis.T @ y


def range_basis(E: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the numerical range of ``E``.

    Singular values below ``rank_tol`` times the largest one are discarded.
    """
    E = np.asarray(E, dtype=float)
    if not np.all(np.isfinite(E)):
        raise ValueError("response matrix must be finite")
    U, s, _ = np.linalg.svd(E, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return U[:, :0]
    r = int(np.sum(s > rank_tol * s[0]))
    return U[:, :r]


def range_projector(family: OperatorFamily, x, rank_tol: float = 1e-10) -> Projector:
    pos = _as_position(x, family.dim)
    return Projector(range_basis(family.span_matrix(pos), rank_tol), pos)


def _ensure_same_space(P: Projector, Q: Projector):
    if P.ambient != Q.ambient:
        raise ValueError("projectors act on spaces of different dimension")


def principal_angle_norm(P: Projector, Q: Projector) -> float:
    """``||Pi_P Pi_Q||``, the cosine of the smallest principal angle."""
    _ensure_same_space(P, Q)
    if P.rank == 0 or Q.rank == 0:
        return 0.0
    s = np.linalg.svd(P.basis.T @ Q.basis, compute_uv=False)
    return float(min(max(s[0], 0.0), 1.0))


def projector_distance(P: Projector, Q: Projector) -> float:
    """Spectral norm ``||Pi_P - Pi_Q||`` of the projector difference."""
    _ensure_same_space(P, Q)
    if P.rank != Q.rank:
        return 1.0
    if P.rank == 0:
        return 0.0
    s = np.linalg.svd(P.basis.T @ Q.basis, compute_uv=False)
    smin = min(float(s[-1]), 1.0)
    return math.sqrt(max(1.0 - smin * smin, 0.0))


# ---------------------------------------------------------------------------
# Identifiability profile


@dataclass(frozen=True, eq=False)
class PhiProfile:
    """Samples ``phi(k * step)``, ``k = 0..n-1``, of an identifiability profile.

    ``values`` is the monotone envelope used in bounds and ``raw`` the samples
    it was built from. ``kind`` is ``"majorant"`` or ``"minorant"``. Only the
    minorant stays below the raw samples, which is what a guaranteed lower
    bound on range separation requires; the majorant is the closest
    nondecreasing profile above them.
    """

    values: np.ndarray
    step: float = 1.0
    raw: np.ndarray | None = None
    kind: str = "majorant"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 1:
            raise ValueError("a profile needs at least one sample")
        if not self.step > 0:
            raise ValueError("profile step must be positive")
        object.__setattr__(self, "values", vals)

    @property
    def distances(self) -> np.ndarray:
        return self.step * np.arange(self.values.size)

    def __call__(self, t) -> np.ndarray:
        """Piecewise-linear evaluation, constant beyond the last sample."""
        return np.interp(t, self.distances, self.values)


def sample_phi_profile(
    family: OperatorFamily,
    domain: Box,
    step: float,
    count: int | None = None,
    reference=None,
    rank_tol: float = 1e-10,
) -> np.ndarray:
    """Raw samples ``1 - ||Pi(ref) Pi(ref + k step u)||`` for ``k = 0..count-1``.

    Offsets run along each coordinate axis in both directions and the smallest
    value over the directions is kept. The reference defaults to the domain
    center and ``count`` to the number of steps reaching half the smallest
    extent.
    """
    if not step > 0:
        raise ValueError("profile step must be positive")
    ref = domain.center if reference is None else _as_position(reference, family.dim)
    if count is None:
        count = int(math.floor(0.5 * float(domain.extent.min()) / step)) + 1
    if count < 1:
        raise ValueError("profile needs at least one sample")
    P0 = range_projector(family, ref, rank_tol)
    raw = np.full(count, np.inf)
    raw[0] = 0.0
    for d in range(family.dim):
        for sign in (1.0, -1.0):
            u = np.zeros(family.dim)
            u[d] = sign
            for k in range(1, count):
                Pk = range_projector(family, ref + k * step * u, rank_tol)
                raw[k] = min(raw[k], 1.0 - principal_angle_norm(P0, Pk))
    return raw


def monotone_majorant(raw, step: float = 1.0, minorant: bool = False) -> PhiProfile:
    """Monotone envelope of raw profile samples.

    The majorant is the running maximum, i.e. the smallest nondecreasing
    sequence above the samples and the least-squares isotonic fit under that
    constraint. The minorant is the largest nondecreasing sequence below them.
    The first sample is pinned to zero in both cases.
    """
    raw = np.asarray(raw, dtype=float).ravel()
    if raw.size < 1:
        raise ValueError("empty profile")
    if not np.all(np.isfinite(raw)):
        raise ValueError("profile samples must be finite")
    vals = raw.copy()
    vals[0] = 0.0
    if minorant:
        env = np.minimum.accumulate(vals[::-1])[::-1]
        kind = "minorant"
    else:
        env = np.maximum.accumulate(vals)
        kind = "majorant"
    return PhiProfile(env, step, raw, kind)


def quantile_inverse(profile: PhiProfile, t: float) -> float:
    """``inf {s : phi(s) >= t}`` on the piecewise-linear profile.

    Returns ``math.inf`` when the level ``t`` is never reached.
    """
    vals = profile.values
    if t <= vals[0]:
        return 0.0
    hit = np.nonzero(vals >= t)[0]
    if hit.size == 0:
        return math.inf
    k = int(hit[0])
    lo, hi = vals[k - 1], vals[k]
    return float(profile.step * (k - 1 + (t - lo) / (hi - lo)))


def location_error_bound(theta: float, profile: PhiProfile) -> float:
    """Worst-case location error for relative noise ``||b|| <= theta ||y0||``.

    ``math.inf`` means no guarantee: either ``theta`` is too large for the
    bound to apply or the profile never reaches the required level.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    if theta >= NO_GUARANTEE_THETA:
        return math.inf
    return quantile_inverse(profile, 2.0 * theta**2 + 4.0 * theta)


@dataclass(frozen=True)
class PhiModel:
    """Parametric fit ``phi(t) = u / (1 + u)`` with ``u = (t / a)^b``.

    ``alpha`` and ``beta`` describe the far-field decay
    ``||Pi Pi'|| ~ (beta / t)^alpha``; they are NaN when not fitted.
    """

    a: float
    b: float
    alpha: float = math.nan
    beta: float = math.nan
    residual: float = math.nan

    def __call__(self, t):
        u = (np.asarray(t, dtype=float) / self.a) ** self.b
        return u / (1.0 + u)

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "alpha": self.alpha, "beta": self.beta, "residual": self.residual}


@dataclass(frozen=True)
class IsolationRadius:
    delta_min: float
    r_bound: float
    r_sharp: float


def isolation_radius(model: PhiModel, c: float, N: int, tau: float) -> IsolationRadius:
    """Separation that makes the correlation peaks of ``N`` sources isolated.

    ``c`` bounds the ratio of the largest to the smallest source energy and
    ``tau >= 5`` is the separation margin. ``r_bound`` is the uniform radius
    bound and ``r_sharp`` the radius for the given ``N`` and ``c``.
    """
    if tau < 5:
        raise ValueError("separation margin tau must be at least 5")
    if N < 1 or c <= 0:
        raise ValueError("N must be >= 1 and c > 0")
    a, b = model.a, model.b
    Z = (N - 1) * c
    delta_min = 2.0 * a * (tau * Z) ** (1.0 / b) if Z > 0 else 0.0
    r_bound = 18.4 * a * 2.0 ** (1.0 / b) / tau
    # error radius of the maximizer once the separation is set to delta_min
    num = Z * (2.0 + (1.0 + 2.0 * tau) * Z)
    den = 1.0 + (2.0 * tau - 4.0) * Z + (tau**2 - 4.0 * tau - 2.0) * Z**2
    r_sharp = a * 2.0 ** (1.0 / b) * (num / den) ** (1.0 / b)
    return IsolationRadius(delta_min, r_bound, r_sharp)


def fit_phi_model(profile: PhiProfile, fit_decay: bool = True, lo: float = 0.05, hi: float = 0.95) -> PhiModel:
    """Least-squares fit of :class:`PhiModel` in logit/log coordinates.

    Samples with ``lo <= phi <= hi`` are used for ``(a, b)``. The decay pair
    comes from the raw samples with ``phi >= 1/2`` when enough are available.
    """
    t = profile.distances
    vals = profile.values
    mask = (t > 0) & (vals >= lo) & (vals <= hi)
    if np.count_nonzero(mask) < 3:
        raise ValueError("not enough profile samples in the fitting window")
    lt = np.log(t[mask])
    logit = np.log(vals[mask] / (1.0 - vals[mask]))
    coef, res, *_ = np.polyfit(lt, logit, 1, full=True)
    b = float(coef[0])
    if not b > 0:
        raise ValueError("profile is not increasing in the fitting window")
    a = float(math.exp(-coef[1] / b))
    residual = float(np.sqrt(np.mean((np.polyval(coef, lt) - logit) ** 2)))
    alpha = beta = math.nan
    raw = profile.raw if profile.raw is not None else vals
    if fit_decay:
        cos = 1.0 - np.asarray(raw, dtype=float)
        dmask = (t > 0) & (raw >= 0.5) & (cos > 1e-12)
        if np.count_nonzero(dmask) >= 3:
            dc = np.polyfit(np.log(t[dmask]), np.log(cos[dmask]), 1)
            alpha = float(-dc[0])
            if alpha > 0:
                beta = float(math.exp(-dc[1] / alpha))
            if not alpha > 0.5:
                warnings.warn(f"fitted decay exponent {alpha:.3g} is not above 1/2", RuntimeWarning)
    return PhiModel(a, b, alpha, beta, residual)


# ---------------------------------------------------------------------------
# Spectral bounds


@dataclass(frozen=True)
class SpectralBounds:
    sigma_minus: float
    sigma_plus: float
    kappa: float
    lipschitz: float
    probe_step: float

    def to_dict(self) -> dict:
        return {
            "sigma_minus": self.sigma_minus,
            "sigma_plus": self.sigma_plus,
            "kappa": self.kappa,
            "lipschitz": self.lipschitz,
        }


def spectral_bounds(family: OperatorFamily, probes, rank_tol: float = 1e-10) -> SpectralBounds:
    """Extreme eigenvalues of ``E(x)^T E(x)`` and the range Lipschitz constant over probes.

    The Lipschitz estimate is a finite-difference lower bound over consecutive
    probes; it is only meaningful relative to ``probe_step``.
    """
    pts = np.asarray(probes, dtype=float).reshape(-1, family.dim)
    if pts.shape[0] < 1:
        raise ValueError("at least one probe is required")
    lo, hi = math.inf, 0.0
    projs = []
    for x in pts:
        E = family.response(x)
        ev = np.linalg.eigvalsh(E.T @ E)
        top = float(ev[-1])
        bottom = float(ev[0]) if ev[0] > rank_tol * max(top, 0.0) else 0.0
        lo, hi = min(lo, bottom), max(hi, top)
        projs.append(range_projector(family, x, rank_tol))
    kappa = hi / lo if lo > 0 else math.inf
    lip = 0.0
    steps = []
    for i in range(1, len(projs)):
        d = float(np.linalg.norm(pts[i] - pts[i - 1]))
        if d > 0:
            steps.append(d)
            lip = max(lip, projector_distance(projs[i - 1], projs[i]) / d)
    return SpectralBounds(lo, hi, kappa, lip, min(steps) if steps else math.nan)


# ---------------------------------------------------------------------------
# Monte-Carlo amplitude of the noise terms


@dataclass(frozen=True, eq=False)
class AmplitudeStats:
    """Per-trial peak-to-peak amplitudes of the linear and quadratic noise terms."""

    z1: np.ndarray
    z2: np.ndarray
    sigma: float
    y0_norm: float
    bound: float | None = None

    @property
    def mean_z1(self) -> float:
        return float(np.mean(self.z1))

    @property
    def mean_z2(self) -> float:
        return float(np.mean(self.z2))

    @property
    def std_z1(self) -> float:
        return float(np.std(self.z1))

    @property
    def std_z2(self) -> float:
        return float(np.std(self.z2))

    def bound_level(self) -> float:
        """Profile level whose quantile bounds the location error."""
        margin = 2.0 * (self.std_z1 + self.std_z2)
        return 2.0 * (self.mean_z1 + self.mean_z2 + margin) / self.y0_norm**2

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "trials": int(self.z1.size),
            "mean_z1": self.mean_z1,
            "std_z1": self.std_z1,
            "mean_z2": self.mean_z2,
            "std_z2": self.std_z2,
            "level": self.bound_level(),
            "bound": self.bound,
        }


def mc_amplitude(
    family: OperatorFamily,
    x_true,
    gamma,
    sigma: float,
    trials: int,
    eval_points,
    seed: int,
    profile: PhiProfile | None = None,
    rank_tol: float = 1e-10,
) -> AmplitudeStats:
    """Sample white noise and record the amplitudes of its projected terms.

    For each trial ``Z1 = sup - inf`` of ``<Pi(x) y0, Pi(x) b>`` and
    ``Z2 = sup - inf`` of ``||Pi(x) b||^2 / 2`` over the evaluation points.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    pts = np.asarray(eval_points, dtype=float).reshape(-1, family.dim)
    y0 = family.response(x_true) @ np.asarray(gamma, dtype=float)
    y0_norm = float(np.linalg.norm(y0))
    if y0_norm == 0:
        raise ValueError("noiseless measurement vanishes")
    rng = np.random.default_rng(seed)
    B = sigma * rng.standard_normal((family.M, trials))
    lin = np.empty((pts.shape[0], trials))
    quad = np.empty((pts.shape[0], trials))
    for i, x in enumerate(pts):
        U = range_projector(family, x, rank_tol).basis
        cb = U.T @ B
        lin[i] = (U.T @ y0) @ cb
        quad[i] = 0.5 * np.sum(cb * cb, axis=0)
    z1 = lin.max(axis=0) - lin.min(axis=0)
    z2 = quad.max(axis=0) - quad.min(axis=0)
    stats = AmplitudeStats(z1, z2, float(sigma), y0_norm)
    if profile is not None:
        bound = quantile_inverse(profile, stats.bound_level())
        stats = AmplitudeStats(z1, z2, float(sigma), y0_norm, bound)
    return stats
