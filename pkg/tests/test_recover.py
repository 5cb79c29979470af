import math
import warnings

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from blindloc import presets
from blindloc.experiments import phase_transition_instance, phase_transition_template, solve_instance
from blindloc.family import OperatorFamily, SpikeTrain, apply_operator, smooth_gp_modulator
from blindloc.recover import (
    BilinearProblem,
    FrozenFactorWarning,
    RankDeficiencyWarning,
    align_scale,
    alternating_min,
    injectivity_count,
    nuclear_norm_solve,
    power_iteration,
    projected_gradient,
    rank_one_projection,
    reduce_bilinear,
    solve_known_weights,
    spectral_init,
    svt,
)


def _random_problem(seed, N=4, I=3, r=3, consistent=True):
    g = np.random.default_rng(seed)
    V = tuple(g.standard_normal((I, r)) for _ in range(N))
    w, gamma = g.standard_normal(N), g.standard_normal(I)
    if consistent:
        c = tuple(Vn.T @ (wn * gamma) for Vn, wn in zip(V, w))
    else:
        c = tuple(g.standard_normal(r) for _ in range(N))
    return BilinearProblem(V, c, I), w, gamma


def _pc_family(K, seeds=(1, 2, 3)):
    tpl = phase_transition_template()
    mods = tuple(smooth_gp_modulator(tpl.grid, 10.0, s) for s in seeds[:K])
    return OperatorFamily("product_convolution", tpl.filters, tpl.grid, mods, True)


# ---------------------------------------------------------------------------
# known weights


def test_known_weights_single_orthogonal_observation(a1_fine):
    g = np.array([0.7, -1.2, 0.4])
    y = apply_operator(a1_fine, g, SpikeTrain.single([0.45]))
    est, cond = solve_known_weights(a1_fine, [[0.45]], [1.0], [y], truth=g)
    assert est.rel_error < 1e-12
    assert cond.sigma_minus == pytest.approx(1.0, abs=1e-6) and cond.kappa >= 1.0
    assert np.allclose(cond.C, cond.C.T)


def test_known_weights_product_convolution_single_observation_is_singular():
    fam = _pc_family(2)
    g = np.random.default_rng(0).standard_normal(fam.I)
    y = apply_operator(fam, g, SpikeTrain.single([4.2]))
    with pytest.warns(RankDeficiencyWarning):
        est, cond = solve_known_weights(fam, [[4.2]], [1.0], [y])
    assert cond.kappa == math.inf and cond.sigma_minus == 0.0
    assert est.residual < 1e-10


def test_known_weights_spread_observations_recover_gamma():
    fam = _pc_family(2)
    g = np.random.default_rng(1).standard_normal(fam.I)
    xs, w = [2.5, 7.5], [1.0, -0.8]
    ys = [wn * (fam.response([x]) @ g) for x, wn in zip(xs, w)]
    est, cond = solve_known_weights(fam, np.array(xs)[:, None], w, ys, truth=g)
    assert cond.kappa < 1e6
    assert est.rel_error < 1e-8


def test_known_weights_zero_data_on_singular_system():
    fam = _pc_family(2)
    with pytest.warns(RankDeficiencyWarning):
        est, _ = solve_known_weights(fam, [[3.0]], [1.0], [np.zeros(fam.M)])
    assert np.all(est.gamma == 0)


def test_known_weights_input_checks(a1):
    with pytest.raises(ValueError):
        solve_known_weights(a1, [[0.5]], [0.0], [np.zeros(a1.M)])
    with pytest.raises(ValueError):
        solve_known_weights(a1, [[0.5], [0.6]], [1.0], [np.zeros(a1.M)])


# ---------------------------------------------------------------------------
# reduction


def test_reduction_of_orthonormal_responses(a1_fine, rng):
    y = rng.standard_normal(a1_fine.M)
    P = reduce_bilinear(a1_fine, [[0.5]], [y])
    E = a1_fine.response([0.5])
    V = P.V[0]
    assert np.allclose(V.T @ V, np.eye(3), atol=1e-6)
    # c equals E^T y up to the rotation carried by V
    assert np.allclose(V @ P.c[0], E.T @ y, atol=1e-12)


def test_reduction_reproduces_noiseless_data():
    fam = _pc_family(2)
    g = np.random.default_rng(2).standard_normal(fam.I)
    xs = np.array([1.0, 3.3, 6.1])
    w = np.array([0.5, -1.0, 2.0])
    ys = [wn * (fam.response([x]) @ g) for x, wn in zip(xs, w)]
    P = reduce_bilinear(fam, xs[:, None], ys)
    assert P.sizes == [3, 3, 3] and P.reduced_size == 9
    assert np.linalg.norm(P.bilinear(w, g) - P.data) <= 1e-10


def test_reduction_of_zero_data(a1):
    P = reduce_bilinear(a1, [[0.3], [0.6]], [np.zeros(a1.M)] * 2)
    assert not np.any(P.data)


@given(seed=st.integers(0, 500))
def test_adjoint_is_transpose_of_lift(seed):
    P, _, _ = _random_problem(seed, r=2)
    g = np.random.default_rng(seed + 1)
    T = g.standard_normal((P.N, P.I))
    v = g.standard_normal(P.reduced_size)
    assert P.forward(T) @ v == pytest.approx(np.sum(T * P.adjoint(v)), rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------------------
# power iteration, projections


def test_power_iteration_orthonormal_single_block(rng):
    Q = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    P = BilinearProblem((Q,), (np.zeros(3),), 3)
    assert power_iteration(P) == pytest.approx(1.0, abs=1e-10)
    assert power_iteration(P.scaled(3.0)) == pytest.approx(3.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_power_iteration_matches_dense_svd(seed):
    P, _, _ = _random_problem(seed, N=3, I=3, r=2)
    dense = np.linalg.norm(P.dense(), 2)
    assert power_iteration(P, iters=20000, tol=1e-15) == pytest.approx(dense, rel=1e-8)


def test_rank_one_projection_examples(rng):
    T = np.outer(rng.standard_normal(4), rng.standard_normal(3))
    assert np.allclose(rank_one_projection(T), T, atol=1e-14)
    assert np.allclose(rank_one_projection(np.diag([3.0, 1.0])), np.diag([3.0, 0.0]))


def test_svt_example():
    assert np.allclose(svt(np.diag([3.0, 1.0]), 1.0), np.diag([2.0, 0.0]))


# ---------------------------------------------------------------------------
# alignment and injectivity


def test_align_scale_ambiguities(rng):
    w, g = rng.standard_normal(5), rng.standard_normal(3)
    for wh, gh in ((2 * w, g / 2), (-w, -g)):
        e = align_scale(wh, gh, w, g)
        assert max(e.w_error, e.gamma_error, e.matrix_error) < 1e-10


def test_align_scale_zero_estimate(rng):
    e = align_scale(np.zeros(4), rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal(3))
    assert e.matrix_error == 1.0 and e.w_error == 1.0


def test_align_scale_first_order_perturbation(rng):
    w, g = rng.standard_normal(6), rng.standard_normal(4)
    u, v = rng.standard_normal(6), rng.standard_normal(4)
    errs = []
    for eps in (1e-3, 1e-4):
        wh = w + eps * np.linalg.norm(w) * u / np.linalg.norm(u)
        gh = g + eps * np.linalg.norm(g) * v / np.linalg.norm(v)
        errs.append(align_scale(wh, gh, w, g).matrix_error)
    assert errs[0] / errs[1] == pytest.approx(10.0, rel=1e-2)
    assert errs[1] <= 2.0001e-4
    only_w = align_scale(w + 1e-5 * np.linalg.norm(w) * u / np.linalg.norm(u), g, w, g)
    assert only_w.matrix_error == pytest.approx(1e-5, rel=1e-8)


def test_injectivity_examples():
    assert injectivity_count(14, 9, 42, J=3, K=3).required_N == 14
    assert injectivity_count(14, 9, 42, J=3, K=3).specialization_holds
    assert not injectivity_count(13, 9, 39, J=3, K=3).specialization_holds
    assert injectivity_count(1, 1, 1).necessary_holds
    assert injectivity_count(5, 6, 10, J=2, K=3).specialization == "specialization undefined"


# ---------------------------------------------------------------------------
# spectral initialization


def test_spectral_init_needs_data():
    P = BilinearProblem((np.eye(3),), (np.zeros(3),), 3)
    with pytest.raises(ValueError):
        spectral_init(P)


def test_spectral_init_single_block(rng):
    V = rng.standard_normal((3, 3))
    c = rng.standard_normal(3)
    w0, g0 = spectral_init(BilinearProblem((V,), (c,), 3))
    assert w0.shape == (1,)
    cosine = abs(g0 @ (V @ c)) / (np.linalg.norm(g0) * np.linalg.norm(V @ c))
    assert cosine == pytest.approx(1.0, abs=1e-12)


def test_spectral_init_single_nonzero_block(rng):
    V = tuple(rng.standard_normal((3, 3)) for _ in range(4))
    c = (np.zeros(3), rng.standard_normal(3), np.zeros(3), np.zeros(3))
    w0, _ = spectral_init(BilinearProblem(V, c, 3))
    assert np.count_nonzero(np.abs(w0) > 1e-14) == 1 and abs(w0[1]) > 0


@pytest.mark.parametrize("seed", range(5))
def test_spectral_init_inside_cap(seed):
    g = np.random.default_rng(seed)
    N, I = 8, 3
    V = tuple(np.eye(I) + 0.1 * g.standard_normal((I, I)) for _ in range(N))
    w, gamma = g.standard_normal(N), g.standard_normal(I)
    P = BilinearProblem(V, tuple(Vn.T @ (wn * gamma) for Vn, wn in zip(V, w)), I)
    w0, g0 = spectral_init(P)
    assert align_scale(w0, g0, w, gamma).matrix_error < 1


# ---------------------------------------------------------------------------
# nonconvex solvers


def _separated_instance(seed=3):
    fam = _pc_family(2, seeds=(11, 12))
    g = np.random.default_rng(seed)
    xs = np.linspace(0.6, 9.4, 10)
    w = g.uniform(0.5, 1.5, 10) * g.choice([-1, 1], 10)
    gamma = g.standard_normal(fam.I)
    ys = [wn * (fam.response([x]) @ gamma) for x, wn in zip(xs, w)]
    return reduce_bilinear(fam, xs[:, None], ys), w, gamma


def test_alternating_fixed_point_at_truth():
    P, w, g = _random_problem(0)
    rep = alternating_min(P, (w, g), truth=(w, g))
    assert rep.iterations <= 1 and rep.objectives[-1] < 1e-25 and rep.success


def test_alternating_recovers_separated_instance():
    P, w, g = _separated_instance()
    rep = alternating_min(P, spectral_init(P), truth=(w, g))
    assert align_scale(rep.w, rep.gamma, w, g).matrix_error < 1e-6
    assert np.all(np.diff(rep.objectives) <= 1e-12 * rep.objectives[0])


def test_alternating_warns_on_zero_weights():
    P, w, g = _random_problem(1)
    with pytest.warns(FrozenFactorWarning):
        alternating_min(P, (np.zeros_like(w), g), max_iters=3)


@given(seed=st.integers(0, 200), t=st.floats(0.1, 10.0))
def test_alternating_is_scale_invariant(seed, t):
    P, _, _ = _random_problem(seed, N=5, consistent=False)
    w0, g0 = np.random.default_rng(seed + 7).standard_normal((2, 5))[0], np.ones(3)
    a = alternating_min(P, (w0, g0), max_iters=15)
    b = alternating_min(P, (t * w0, g0 / t), max_iters=15)
    scale = np.abs(a.T).max()
    assert np.abs(a.T - b.T).max() <= 1e-10 * max(scale, 1.0)
    assert np.all(np.diff(a.objectives) <= 1e-10 * max(a.objectives[0], 1e-300))


def test_projected_gradient_fixed_point_at_truth():
    P, w, g = _random_problem(2)
    rep = projected_gradient(P, np.outer(w, g), truth=(w, g))
    assert rep.objectives[-1] < 1e-20 and rep.success


@given(seed=st.integers(0, 200), t=st.floats(0.1, 10.0))
def test_projected_gradient_is_scale_invariant(seed, t):
    P, _, _ = _random_problem(seed, consistent=False)
    g = np.random.default_rng(seed)
    w0, g0 = g.standard_normal(P.N), g.standard_normal(P.I)
    a = projected_gradient(P, np.outer(w0, g0), max_iters=20)
    b = projected_gradient(P, np.outer(t * w0, g0 / t), max_iters=20)
    assert np.abs(a.T - b.T).max() <= 1e-10 * max(np.abs(a.T).max(), 1.0)


def test_fewer_observations_than_modulators_never_succeed():
    tpl = phase_transition_template()
    for trial in range(3):
        fam, xs, w, g, ys = phase_transition_instance(tpl, 2, 1, (5, trial), 10.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            reps = solve_instance(fam, xs, ys, w, g, max_iters=300)
        assert not any(r.success for r in reps.values())


# ---------------------------------------------------------------------------
# nuclear norm


def test_nuclear_norm_large_penalty_gives_zero():
    P, _, _ = _random_problem(4)
    lam = np.linalg.norm(P.adjoint(P.data), 2) * 1.0001
    rep = nuclear_norm_solve(P, lam)
    assert np.all(rep.T == 0) and rep.rank == 0


def test_nuclear_norm_objective_never_increases():
    P, w, g = _random_problem(5, N=5)
    rep = nuclear_norm_solve(P, None, max_iters=500, truth=(w, g))
    assert np.all(np.diff(rep.objectives) <= 0)


@pytest.mark.parametrize("seed", range(3))
def test_nuclear_norm_matches_convex_oracle(seed):
    P, _, _ = _random_problem(seed, N=2, I=2, r=2, consistent=False)
    lam = 0.1 * np.linalg.norm(P.adjoint(P.data), 2)
    rep = nuclear_norm_solve(P, lam, max_iters=20000, stop_tol=1e-15)
    T = cp.Variable((2, 2))
    fit = cp.hstack([P.V[n].T @ T[n, :] for n in range(2)]) - P.data
    prob = cp.Problem(cp.Minimize(0.5 * cp.sum_squares(fit) + lam * cp.normNuc(T)))
    prob.solve(solver=cp.CLARABEL)
    ours = P.objective(rep.T) + lam * np.sum(np.linalg.svd(rep.T, compute_uv=False))
    assert ours == pytest.approx(prob.value, abs=1e-6)


def test_known_weights_error_vanishes_with_position_error(a1):
    g = np.array([0.8, -1.1, 0.6])
    y = apply_operator(a1, g, SpikeTrain.single([0.5123]))
    errs = [solve_known_weights(a1, [[0.5123 + d]], [1.0], [y], truth=g)[0].rel_error for d in (1e-3, 1e-4, 1e-5, 0.0)]
    assert errs[0] > errs[1] > errs[2] and errs[3] < 1e-12
    # even filters cancel the first-order term, so the decay is faster than linear
    assert errs[0] / errs[1] > 10
