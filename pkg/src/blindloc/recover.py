"""Operator identification from localized sources.

With known weights the operator coefficients solve a linear system. With
unknown weights the problem is bilinear in ``(w, gamma)``; it is reduced to a
small problem on the range coordinates and solved by alternating least
squares, projected gradient on rank-one matrices, or a nuclear-norm penalized
convex relaxation.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize_scalar

from .family import OperatorFamily

logger = logging.getLogger(__name__)

__all__ = [
    "GammaEstimate",
    "ConditionReport",
    "BilinearProblem",
    "SolverReport",
    "AlignedErrors",
    "InjectivityReport",
    "FrozenFactorWarning",
    "RankDeficiencyWarning",
    "solve_known_weights",
    "reduce_bilinear",
    "spectral_init",
    "alternating_min",
    "projected_gradient",
    "nuclear_norm_solve",
    "power_iteration",
    "align_scale",
    "injectivity_count",
    "rank_one_projection",
    "svt",
]

SUCCESS_TOL = 1e-4


class FrozenFactorWarning(RuntimeWarning):
    """A factor was kept fixed because its least-squares design vanished."""


class RankDeficiencyWarning(RuntimeWarning):
    """A linear system was singular and solved in the minimum-norm sense."""


def _sign_fix(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 0)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


# ---------------------------------------------------------------------------
# Known weights


@dataclass(frozen=True, eq=False)
class ConditionReport:
    """``C = sum_n w_n^2 E_n^T E_n`` with its extreme eigenvalues and condition number."""

    C: np.ndarray
    sigma_minus: float
    sigma_plus: float
    kappa: float

    def to_dict(self) -> dict:
        return {"sigma_minus": self.sigma_minus, "sigma_plus": self.sigma_plus, "kappa": self.kappa}


@dataclass(frozen=True, eq=False)
class GammaEstimate:
    gamma: np.ndarray
    residual: float
    rel_error: float | None = None


def solve_known_weights(
    family: OperatorFamily,
    positions,
    weights,
    measurements,
    truth=None,
    tol: float = 1e-12,
) -> tuple[GammaEstimate, ConditionReport]:
    """Least-squares fit of ``gamma`` to ``y_n ~ w_n E(x_n) gamma``.

    Uses a Cholesky solve of the normal equations when the smallest eigenvalue
    exceeds ``tol`` times the largest; otherwise the minimum-norm solution with
    a :class:`RankDeficiencyWarning`. ``measurements`` is one vector per
    observation (the same vector may be repeated).
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, family.dim)
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    ys = [np.asarray(v, dtype=float).ravel() for v in measurements]
    if pos.shape[0] < 1:
        raise ValueError("at least one observation is required")
    if not (pos.shape[0] == w.size == len(ys)):
        raise ValueError("positions, weights and measurements must have the same length")
    if np.any(w == 0):
        raise ValueError("weights must be nonzero")
    C = np.zeros((family.I, family.I))
    rhs = np.zeros(family.I)
    blocks = []
    for x, wn, yn in zip(pos, w, ys):
        E = family.response(x)
        blocks.append(wn * E)
        C += wn**2 * (E.T @ E)
        rhs += wn * (E.T @ yn)
    C = 0.5 * (C + C.T)
    ev = np.linalg.eigvalsh(C)
    top = float(ev[-1])
    bottom = float(ev[0]) if ev[0] > tol * top else 0.0
    kappa = top / bottom if bottom > 0 else math.inf
    report = ConditionReport(C, bottom, top, kappa)
    if bottom > 0:
        gamma = cho_solve(cho_factor(C), rhs)
    else:
        if not np.any(rhs):
            warnings.warn("singular system with vanishing data; returning zero", RankDeficiencyWarning)
            gamma = np.zeros(family.I)
        else:
            warnings.warn(f"rank-deficient normal equations (kappa = inf)", RankDeficiencyWarning)
            A = np.vstack(blocks)
            gamma = np.linalg.lstsq(A, np.concatenate(ys), rcond=None)[0]
    residual = math.sqrt(sum(float(np.sum((B @ gamma - yn) ** 2)) for B, yn in zip(blocks, ys)))
    rel = None
    if truth is not None:
        g = np.asarray(truth, dtype=float)
        rel = float(np.linalg.norm(gamma - g) / np.linalg.norm(g))
    return GammaEstimate(gamma, residual, rel), report


# ---------------------------------------------------------------------------
# Bilinear reduction


@dataclass(frozen=True, eq=False)
class BilinearProblem:
    """Reduced data ``c_n = U_n^T y_n`` and factors ``V_n`` of ``E(x_n) = U_n V_n^T``.

    The lift acts on ``N x I`` matrices row by row:
    ``(Lambda T)_n = V_n^T T[n]``.
    """

    V: tuple
    c: tuple
    I: int

    @property
    def N(self) -> int:
        return len(self.V)

    @property
    def sizes(self) -> list[int]:
        return [v.shape[1] for v in self.V]

    @property
    def reduced_size(self) -> int:
        return int(sum(self.sizes))

    @property
    def data(self) -> np.ndarray:
        return np.concatenate(self.c) if self.c else np.zeros(0)

    def forward(self, T: np.ndarray) -> np.ndarray:
        T = np.asarray(T, dtype=float).reshape(self.N, self.I)
        return np.concatenate([Vn.T @ T[n] for n, Vn in enumerate(self.V)])

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros((self.N, self.I))
        start = 0
        for n, Vn in enumerate(self.V):
            r = Vn.shape[1]
            out[n] = Vn @ v[start : start + r]
            start += r
        return out

    def bilinear(self, w, gamma) -> np.ndarray:
        return self.forward(np.outer(w, gamma))

    def objective(self, T) -> float:
        r = self.forward(T) - self.data
        return 0.5 * float(r @ r)

    def dense(self) -> np.ndarray:
        """Matrix of the lift acting on ``T.ravel()``."""
        cols = []
        for k in range(self.N * self.I):
            e = np.zeros(self.N * self.I)
            e[k] = 1.0
            cols.append(self.forward(e))
        return np.stack(cols, axis=1)

    def scaled(self, t: float) -> "BilinearProblem":
        return BilinearProblem(tuple(t * v for v in self.V), self.c, self.I)


def reduce_bilinear(family: OperatorFamily, positions, measurements, rank_tol: float = 1e-10) -> BilinearProblem:
    """Thin SVD of each response matrix at its numerical rank."""
    pos = np.asarray(positions, dtype=float).reshape(-1, family.dim)
    ys = [np.asarray(v, dtype=float).ravel() for v in measurements]
    if pos.shape[0] < 1:
        raise ValueError("at least one observation is required")
    if pos.shape[0] != len(ys):
        raise ValueError("one measurement per position is required")
    V, c = [], []
    for x, yn in zip(pos, ys):
        U, s, Vt = np.linalg.svd(family.response(x), full_matrices=False)
        r = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
        V.append(Vt[:r].T * s[:r])
        c.append(U[:, :r].T @ yn)
    return BilinearProblem(tuple(V), tuple(c), family.I)


# ---------------------------------------------------------------------------
# Solver utilities


def power_iteration(problem: BilinearProblem, iters: int = 1000, seed: int = 0, tol: float = 1e-12) -> float:
    """Operator norm of the lift by the power method on ``Lambda^* Lambda``."""
    if iters < 1:
        raise ValueError("iters must be at least 1")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((problem.N, problem.I))
    X /= np.linalg.norm(X)
    lam = 0.0
    for _ in range(iters):
        Y = problem.adjoint(problem.forward(X))
        new = float(np.linalg.norm(Y))
        if new == 0:
            return 0.0
        X = Y / new
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return math.sqrt(lam)


def rank_one_projection(T: np.ndarray) -> np.ndarray:
    """Best rank-one approximation (truncated SVD)."""
    U, s, Vt = np.linalg.svd(T, full_matrices=False)
    return s[0] * np.outer(U[:, 0], Vt[0])


def svt(T: np.ndarray, lam: float) -> np.ndarray:
    """Singular value soft-thresholding, the proximal map of ``lam * ||.||_*``."""
    U, s, Vt = np.linalg.svd(T, full_matrices=False)
    return (U * np.maximum(s - lam, 0.0)) @ Vt


def _factor(T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    U, s, Vt = np.linalg.svd(T, full_matrices=False)
    u, v = U[:, 0], Vt[0]
    fu = _sign_fix(u)
    v = v if fu is u else -v
    root = math.sqrt(s[0])
    return root * fu, root * v


@dataclass(frozen=True)
class AlignedErrors:
    scale: float
    w_error: float
    gamma_error: float
    matrix_error: float


def align_scale(w_hat, gamma_hat, w_true, gamma_true) -> AlignedErrors:
    """Errors after resolving the ``(t w, gamma / t)`` ambiguity.

    ``t`` minimizes ``||t w_hat - w||^2 + ||gamma_hat / t - gamma||^2``; the
    factor errors are relative to the truth, as is the matrix error
    ``||w_hat gamma_hat^T - w gamma^T||_F``.
    """
    wh, gh = np.asarray(w_hat, float), np.asarray(gamma_hat, float)
    wt, gt = np.asarray(w_true, float), np.asarray(gamma_true, float)
    nw, ng = np.linalg.norm(wt), np.linalg.norm(gt)
    if nw == 0 or ng == 0:
        raise ValueError("truth must be nonzero")
    Tt = np.outer(wt, gt)
    if not np.any(wh) or not np.any(gh):
        return AlignedErrors(math.nan, 1.0, 1.0, 1.0)
    matrix_error = float(np.linalg.norm(np.outer(wh, gh) - Tt) / np.linalg.norm(Tt))
    sign = 1.0 if float(wh @ wt) + float(gh @ gt) >= 0 else -1.0

    def cost(s):
        t = sign * math.exp(s)
        return float(np.sum((t * wh - wt) ** 2) + np.sum((gh / t - gt) ** 2))

    # start from the scale matching the norms, then polish in log t
    s0 = math.log(math.sqrt(nw * np.linalg.norm(gh) / (ng * np.linalg.norm(wh))))
    res = minimize_scalar(cost, bracket=(s0 - 1.0, s0 + 1.0), method="brent", tol=1e-12)
    s = res.x if res.fun <= cost(s0) else s0
    t = sign * math.exp(s)
    return AlignedErrors(
        t,
        float(np.linalg.norm(t * wh - wt) / nw),
        float(np.linalg.norm(gh / t - gt) / ng),
        matrix_error,
    )


@dataclass(frozen=True)
class InjectivityReport:
    necessary_holds: bool
    required_N: float | None = None
    specialization_holds: bool | None = None
    specialization: str = "not requested"


def injectivity_count(N: int, I: int, I_hat: int, J: int | None = None, K: int | None = None) -> InjectivityReport:
    """Counting condition ``I_hat >= 2 (N + I) - 4`` for injectivity of the lift on rank-one matrices.

    When ``J`` and ``K`` are given (product-convolution, ``I_hat = N J``) the
    condition becomes ``N >= (2 J K - 4) / (J - 2)``, undefined for ``J <= 2``.
    """
    if min(N, I, I_hat) < 1:
        raise ValueError("counts must be positive integers")
    holds = I_hat >= 2 * (N + I) - 4
    if J is None or K is None:
        return InjectivityReport(holds)
    if J <= 2:
        return InjectivityReport(holds, None, None, "specialization undefined")
    req = (2 * J * K - 4) / (J - 2)
    return InjectivityReport(holds, req, N >= req, "evaluated")


@dataclass(frozen=True, eq=False)
class SolverReport:
    solver: str
    w: np.ndarray
    gamma: np.ndarray
    T: np.ndarray
    objectives: np.ndarray
    iterations: int
    rel_errors: np.ndarray | None = None
    success: bool | None = None
    rank: int | None = None

    def trace_rows(self):
        errs = self.rel_errors if self.rel_errors is not None else [math.nan] * len(self.objectives)
        return [(k, float(o), float(e)) for k, (o, e) in enumerate(zip(self.objectives, errs))]


def _finish(solver, problem, w, gamma, T, objs, errs, truth, success_tol, rank=None) -> SolverReport:
    success = None
    if truth is not None:
        final = align_scale(w, gamma, *truth).matrix_error
        success = bool(final < success_tol)
    return SolverReport(
        solver,
        w,
        gamma,
        T,
        np.asarray(objs),
        len(objs) - 1,
        None if errs is None else np.asarray(errs),
        success,
        rank,
    )


def _converged(prev: float, obj: float, scale: float, tol: float) -> bool:
    """Relative decrease below ``tol`` or an objective at round-off level."""
    return abs(prev - obj) <= tol * prev or obj <= 1e-28 * scale


def _matrix_error(T, truth):
    if truth is None:
        return math.nan
    Tt = np.outer(*truth)
    return float(np.linalg.norm(T - Tt) / np.linalg.norm(Tt))


def spectral_init(problem: BilinearProblem) -> tuple[np.ndarray, np.ndarray]:
    """Leading singular pair of ``Lambda^*(c)``, scaled so ``||Lambda(w gamma^T)|| = ||c||``."""
    c = problem.data
    cn = float(np.linalg.norm(c))
    if cn == 0:
        raise ValueError("spectral initialization needs nonzero data")
    G = problem.adjoint(c)
    U, s, Vt = np.linalg.svd(G, full_matrices=False)
    w0 = _sign_fix(U[:, 0])
    g0 = Vt[0] if w0 is U[:, 0] else -Vt[0]
    pred = float(np.linalg.norm(problem.bilinear(w0, g0)))
    if pred == 0:
        return w0, g0
    t = math.sqrt(cn / pred)
    return t * w0, t * g0


def alternating_min(
    problem: BilinearProblem,
    init,
    max_iters: int = 2000,
    stop_tol: float = 1e-12,
    truth=None,
    success_tol: float = SUCCESS_TOL,
) -> SolverReport:
    """Alternate exact least-squares updates of ``gamma`` then ``w``."""
    w = np.asarray(init[0], dtype=float).copy()
    gamma = np.asarray(init[1], dtype=float).copy()
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(gamma))):
        raise ValueError("initialization must be finite")
    c = problem.data
    scale = 0.5 * float(c @ c)
    objs = [problem.objective(np.outer(w, gamma))]
    errs = [_matrix_error(np.outer(w, gamma), truth)] if truth is not None else None
    for _ in range(max_iters):
        if np.any(w):
            A = np.vstack([wn * Vn.T for wn, Vn in zip(w, problem.V)])
            gamma = np.linalg.lstsq(A, c, rcond=None)[0]
        else:
            warnings.warn("weights vanished; gamma kept fixed", FrozenFactorWarning)
        if np.any(gamma):
            for n, (Vn, cn) in enumerate(zip(problem.V, problem.c)):
                a = Vn.T @ gamma
                aa = float(a @ a)
                w[n] = float(a @ cn) / aa if aa > 0 else 0.0
        else:
            warnings.warn("gamma vanished; weights kept fixed", FrozenFactorWarning)
        T = np.outer(w, gamma)
        obj = problem.objective(T)
        if obj > objs[-1] + 1e-10 * max(scale, 1e-300):
            raise AssertionError("alternating minimization increased the objective")
        objs.append(obj)
        if errs is not None:
            errs.append(_matrix_error(T, truth))
        if _converged(objs[-2], obj, scale, stop_tol):
            break
    return _finish("alternating", problem, w, gamma, np.outer(w, gamma), objs, errs, truth, success_tol)


def projected_gradient(
    problem: BilinearProblem,
    T0,
    max_iters: int = 2000,
    stop_tol: float = 1e-12,
    step: float | None = None,
    truth=None,
    success_tol: float = SUCCESS_TOL,
    seed: int = 0,
) -> SolverReport:
    """Gradient steps on ``||Lambda T - c||^2 / 2`` projected onto rank-one matrices."""
    T = np.asarray(T0, dtype=float).reshape(problem.N, problem.I).copy()
    if not np.all(np.isfinite(T)):
        raise ValueError("initialization must be finite")
    if step is None:
        L = power_iteration(problem, seed=seed)
        step = 0.99 / (L * L)
    c = problem.data
    scale = 0.5 * float(c @ c)
    objs = [problem.objective(T)]
    errs = [_matrix_error(T, truth)] if truth is not None else None
    for _ in range(max_iters):
        grad = problem.adjoint(problem.forward(T) - c)
        T = rank_one_projection(T - step * grad)
        obj = problem.objective(T)
        objs.append(obj)
        if errs is not None:
            errs.append(_matrix_error(T, truth))
        if _converged(objs[-2], obj, scale, stop_tol):
            break
    w, gamma = _factor(T)
    return _finish("projected_gradient", problem, w, gamma, T, objs, errs, truth, success_tol)


def nuclear_norm_solve(
    problem: BilinearProblem,
    lam: float | None = None,
    max_iters: int = 2000,
    stop_tol: float = 1e-12,
    truth=None,
    success_tol: float = SUCCESS_TOL,
    seed: int = 0,
    rank_tol: float = 1e-8,
) -> SolverReport:
    """Accelerated proximal gradient on ``||Lambda T - c||^2 / 2 + lam ||T||_*``.

    A monotone safeguard keeps the better of the extrapolated and plain prox
    steps, so the composite objective never increases. ``lam`` defaults to
    ``1e-3 ||Lambda^*(c)||_2``.
    """
    c = problem.data
    G = problem.adjoint(c)
    if lam is None:
        lam = 1e-3 * float(np.linalg.norm(G, 2))
    if not lam > 0:
        raise ValueError("lam must be positive")
    L = power_iteration(problem, seed=seed)
    step = 1.0 / (L * L)

    def composite(T):
        return problem.objective(T) + lam * float(np.sum(np.linalg.svd(T, compute_uv=False)))

    scale = max(0.5 * float(c @ c), 1e-300)
    X = np.zeros((problem.N, problem.I))
    Yx = X.copy()
    t = 1.0
    fx = composite(X)
    objs = [fx]
    errs = [_matrix_error(X, truth)] if truth is not None else None
    for _ in range(max_iters):
        Z = svt(Yx - step * problem.adjoint(problem.forward(Yx) - c), step * lam)
        fz = composite(Z)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        if fz <= fx:
            X_new, f_new = Z, fz
        else:
            X_new, f_new = X, fx
        Yx = X_new + (t / t_next) * (Z - X_new) + ((t - 1.0) / t_next) * (X_new - X)
        decrease = fx - f_new
        X, fx, t = X_new, f_new, t_next
        objs.append(fx)
        if errs is not None:
            errs.append(_matrix_error(X, truth))
        if 0 <= decrease <= stop_tol * scale and np.allclose(Z, X, rtol=0, atol=1e-14 * max(1.0, np.abs(X).max())):
            break
    s = np.linalg.svd(X, compute_uv=False)
    rank = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
    if rank == 0:
        w, gamma = np.zeros(problem.N), np.zeros(problem.I)
    else:
        w, gamma = _factor(X)
    return _finish("nuclear_norm", problem, w, gamma, X, objs, errs, truth, success_tol, rank)
