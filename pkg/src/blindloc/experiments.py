"""Experiment drivers: configuration, seeded trials and CSV/JSON outputs.

Every driver is a pure function of its configuration and seed. Floats are
written with 17 significant digits so reruns produce identical bytes.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import presets
from .family import (
    Box,
    NoiseSpec,
    OperatorFamily,
    RankDeficientFamilyError,
    SpikeTrain,
    apply_operator,
    family_from_config,
    operator_gram,
    operator_relative_error,
    read_measurement,
    smooth_gp_modulator,
)
from .geometry import (
    PhiProfile,
    fit_phi_model,
    mc_amplitude,
    monotone_majorant,
    quantile_inverse,
    sample_phi_profile,
    spectral_bounds,
)
from .localize import ProjectorCache, correlation_field, default_coarse_step, detect_peaks, localize_single
from .recover import (
    align_scale,
    alternating_min,
    nuclear_norm_solve,
    projected_gradient,
    reduce_bilinear,
    solve_known_weights,
    spectral_init,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "KINDS",
    "PHI_PROFILE_HEADER",
    "SWEEP_HEADER",
    "TRIALS_HEADER",
    "GAMMA_HEADER",
    "PHASE_HEADER",
    "TRACE_HEADER",
    "FIELD_HEADER",
    "AMPLITUDE_HEADER",
    "build_family",
    "run_phi_profile",
    "run_noise_sweep",
    "run_gamma_error",
    "run_phase_transition",
    "run_demo2d",
    "run_mc_amplitude",
    "run_localize",
    "run_experiment",
]

KINDS = ("phi_profile", "noise_sweep", "gamma_error", "phase_transition", "demo2d", "mc_amplitude", "localize")

PHI_PROFILE_HEADER = ("k", "dist", "phi_raw", "phi_monotone")
SWEEP_HEADER = ("theta", "mean_error_px", "q25_px", "median_px", "q75_px", "trials")
TRIALS_HEADER = ("theta", "trial", "x_true", "x_hat", "error_px", "gamma_rel_error")
GAMMA_HEADER = ("theta", "mean", "q25", "median", "q75", "trials")
PHASE_HEADER = ("K", "N", "solver", "success_rate", "trials")
TRACE_HEADER = ("iter", "objective", "rel_error_if_truth")
AMPLITUDE_HEADER = ("sigma", "trial", "z1", "z2")

DESK_TRIALS = 20
PAPER_TRIALS = 100


def FIELD_HEADER(dim: int) -> tuple:
    return tuple(f"x_{d + 1}" for d in range(dim)) + ("H",)


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class ExperimentConfig:
    """Parsed experiment configuration.

    ``family`` is a family description (inline or loaded from a path relative
    to the configuration file); ``params`` keeps the kind-specific options.
    """

    kind: str
    family: dict | None = None
    trials: int = DESK_TRIALS
    thetas: list = field(default_factory=list)
    seed: int = 0
    params: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError("trials must be an integer >= 1")
        if not isinstance(self.seed, int) or self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        try:
            self.thetas = [float(t) for t in self.thetas]
        except (TypeError, ValueError):
            raise ConfigError("thetas must be a list of numbers") from None
        if self.kind in ("noise_sweep", "gamma_error") and any(t < 0 or t > 2 for t in self.thetas):
            raise ConfigError("noise levels theta must lie in [0, 2]")
        if any(t < 0 for t in self.thetas):
            raise ConfigError("noise levels must be nonnegative")

    @classmethod
    def from_dict(cls, data: dict, kind: str | None = None, seed: int | None = None,
                  paper_scale: bool = False, base_dir=None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        data = dict(data)
        kind = kind or data.pop("kind", None)
        data.pop("kind", None)
        if kind is None:
            raise ConfigError("experiment kind is missing")
        base = Path(base_dir) if base_dir is not None else Path.cwd()
        fam = data.pop("family", None)
        if isinstance(fam, str):
            fam = _load_json(base / fam)
        if fam is not None and not isinstance(fam, dict):
            raise ConfigError("family must be an object or a path")
        trials = data.pop("trials", None)
        paper_trials = data.pop("paper_trials", PAPER_TRIALS)
        if trials is None:
            trials = paper_trials if paper_scale else DESK_TRIALS
        elif paper_scale:
            trials = max(int(trials), int(paper_trials))
        thetas = data.pop("thetas", [])
        cfg_seed = data.pop("seed", 0)
        return cls(
            kind=kind,
            family=fam,
            trials=trials,
            thetas=thetas,
            seed=int(seed) if seed is not None else cfg_seed,
            params=data,
            base_dir=base,
        )

    @classmethod
    def from_file(cls, path, kind: str | None = None, seed: int | None = None,
                  paper_scale: bool = False) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(_load_json(path), kind, seed, paper_scale, path.parent)

    def get(self, key, default=None):
        return self.params.get(key, default)


def _load_json(path: Path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def build_family(spec: dict | None, default_preset: str = "A1") -> OperatorFamily:
    """Family from a JSON description or a ``{"preset": name, "M": ...}`` shortcut."""
    spec = spec or {"preset": default_preset}
    try:
        if "preset" in spec:
            return presets.benchmark_family(
                spec["preset"], int(spec.get("M", 100)), int(spec.get("I", 3)),
                bool(spec.get("orthogonalize", True)),
            )
        return family_from_config(spec)
    except RankDeficientFamilyError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid family description: {exc}") from None


def _rng(*keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=2) + "\n")


def _out(out_dir) -> Path:
    p = Path(out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _quartiles(values) -> tuple[float, float, float, float]:
    v = np.asarray(values, dtype=float)
    q = np.quantile(v, [0.25, 0.5, 0.75])
    return float(np.mean(v)), float(q[0]), float(q[1]), float(q[2])


def _profile(family: OperatorFamily, step: float | None = None, minorant: bool = False) -> PhiProfile:
    domain = family.grid.bounds()
    step = step or family.grid.pixel / 4.0
    raw = sample_phi_profile(family, domain, step)
    return monotone_majorant(raw, step, minorant=minorant)


# ---------------------------------------------------------------------------
# Drivers


def run_phi_profile(cfg: ExperimentConfig, out_dir) -> dict:
    """Export the identifiability profile and spectral bounds of a family."""
    out = _out(out_dir)
    family = build_family(cfg.family)
    step = float(cfg.get("step", family.grid.pixel / 4.0))
    if step <= 0:
        raise ConfigError("profile step must be positive")
    domain = family.grid.bounds()
    raw = sample_phi_profile(family, domain, step, cfg.get("count"))
    prof = monotone_majorant(raw, step, minorant=bool(cfg.get("minorant", False)))
    rows = [(k, k * step, r, v) for k, (r, v) in enumerate(zip(raw, prof.values))]
    write_csv(out / "phi_profile.csv", PHI_PROFILE_HEADER, rows)
    # probes stay away from the borders, where filters are cut by the grid
    margin = float(cfg.get("probe_margin", 0.1)) * domain.extent
    inner = Box(tuple(domain.lo + margin), tuple(domain.hi - margin))
    if family.dim == 1:
        probes = np.linspace(inner.lo[0], inner.hi[0], int(cfg.get("probes", 50)))[:, None]
    else:
        probes = inner.grid(float(cfg.get("probe_step", 4 * family.grid.pixel)))
    bounds = spectral_bounds(family, probes)
    report = bounds.to_dict()
    try:
        report["phi_model"] = fit_phi_model(prof).to_dict()
    except ValueError as exc:
        logger.warning("phi model fit failed: %s", exc)
        report["phi_model"] = None
    write_json(out / "bounds.json", report)
    return {"profile": prof, "bounds": report}


def _single_source_trials(cfg: ExperimentConfig, with_gamma: bool):
    family = build_family(cfg.family)
    if family.dim != 1:
        raise ConfigError("single-source sweeps need a 1D family")
    thetas = cfg.thetas or [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0]
    domain = family.grid.bounds()
    margin = float(cfg.get("margin", 0.2))
    lo = domain.lo[0] + margin * domain.extent[0]
    hi = domain.hi[0] - margin * domain.extent[0]
    gamma = cfg.get("gamma")
    if gamma is None:
        gamma = _rng(cfg.seed, 0).standard_normal(family.I)
    gamma = np.asarray(gamma, dtype=float)
    if gamma.size != family.I:
        raise ConfigError(f"gamma must have {family.I} entries")
    coarse = cfg.get("coarse_step")
    if coarse is None:
        coarse = min(default_coarse_step(_profile(family)), family.grid.pixel)
    coarse = float(coarse)
    pts = domain.grid(coarse)
    cache = ProjectorCache(family, pts)
    refine_tol = cfg.get("refine_tol")
    pixel = family.grid.pixel
    rows = []
    for it, theta in enumerate(thetas):
        for trial in range(cfg.trials):
            rng = _rng(cfg.seed, 1, it, trial)
            x = rng.uniform(lo, hi)
            y0 = apply_operator(family, gamma, SpikeTrain.single([x]))
            noise = NoiseSpec.relative_white(theta, y0, int(rng.integers(2**63)))
            y = y0 + noise.draw(y0)
            est = localize_single(family, y, domain, coarse, refine_tol, cache=cache)
            err = abs(float(est.position[0]) - x) / pixel
            g_err = math.nan
            if with_gamma:
                g_est, _ = solve_known_weights(family, [est.position], [1.0], [y], truth=gamma)
                g_err = g_est.rel_error
            rows.append((theta, trial, x, float(est.position[0]), err, g_err))
    return thetas, rows


def run_noise_sweep(cfg: ExperimentConfig, out_dir) -> list:
    """Mean localization error (pixels) versus relative noise level."""
    out = _out(out_dir)
    thetas, rows = _single_source_trials(cfg, with_gamma=False)
    summary = []
    for theta in thetas:
        errs = [r[4] for r in rows if r[0] == theta]
        summary.append((theta, *_quartiles(errs), len(errs)))
    write_csv(out / "noise_sweep.csv", SWEEP_HEADER, summary)
    write_csv(out / "noise_sweep_trials.csv", TRIALS_HEADER, rows)
    return summary


def run_gamma_error(cfg: ExperimentConfig, out_dir) -> list:
    """Relative operator-coefficient error after localization, per noise level."""
    out = _out(out_dir)
    thetas, rows = _single_source_trials(cfg, with_gamma=True)
    summary = []
    for theta in thetas:
        errs = [r[5] for r in rows if r[0] == theta]
        summary.append((theta, *_quartiles(errs), len(errs)))
    write_csv(out / "gamma_error.csv", GAMMA_HEADER, summary)
    write_csv(out / "gamma_error_trials.csv", TRIALS_HEADER, rows)
    return summary


SOLVERS = ("alternating", "projected_gradient", "nuclear_norm")


def phase_transition_instance(template, K: int, N: int, seed_keys, corr_len: float, noise: float = 0.0):
    """Random product-convolution instance: modulators, positions, weights and gamma."""
    rng = _rng(*seed_keys)
    grid = template.grid
    mods = tuple(smooth_gp_modulator(grid, corr_len, int(s)) for s in rng.integers(2**63, size=K))
    family = OperatorFamily("product_convolution", template.filters, grid, mods, orthogonalized=True)
    lo, hi = grid.points[0, 0], grid.points[-1, 0]
    xs = rng.uniform(lo, hi, N)
    w = rng.standard_normal(N)
    gamma = rng.standard_normal(family.I)
    ys = []
    for x, wn in zip(xs, w):
        yn = wn * (family.response([x]) @ gamma)
        if noise > 0:
            yn = yn + noise * rng.standard_normal(yn.shape)
        ys.append(yn)
    return family, xs, w, gamma, ys


def solve_instance(family, xs, ys, w, gamma, max_iters=2000, stop_tol=1e-12, solvers=SOLVERS):
    problem = reduce_bilinear(family, xs, ys)
    w0, g0 = spectral_init(problem)
    truth = (w, gamma)
    reports = {}
    if "alternating" in solvers:
        reports["alternating"] = alternating_min(problem, (w0, g0), max_iters, stop_tol, truth=truth)
    if "projected_gradient" in solvers:
        reports["projected_gradient"] = projected_gradient(problem, np.outer(w0, g0), max_iters, stop_tol, truth=truth)
    if "nuclear_norm" in solvers:
        reports["nuclear_norm"] = nuclear_norm_solve(problem, None, max_iters, stop_tol, truth=truth)
    return reports


def phase_transition_template(M: int = 1000, length: float = 10.0, J: int = 3) -> OperatorFamily:
    grid = presets.unit_interval_grid(M, length)
    scales = presets.interpolated_scales(0.03, 0.01, J)
    return presets.gaussian_family(scales, grid)


def run_phase_transition(cfg: ExperimentConfig, out_dir) -> dict:
    """Success rates of the three bilinear solvers over a grid of ``(K, N)``."""
    out = _out(out_dir)
    Ks = [int(k) for k in cfg.get("K", [1, 2, 3])]
    Ns = [int(n) for n in cfg.get("N", [1, 2, 4, 6, 8, 10, 12])]
    if not Ks or not Ns or min(Ks) < 1 or min(Ns) < 1:
        raise ConfigError("K and N grids must hold positive integers")
    solvers = tuple(cfg.get("solvers", SOLVERS))
    if any(s not in SOLVERS for s in solvers):
        raise ConfigError(f"solvers must be among {SOLVERS}")
    template = phase_transition_template(int(cfg.get("M", 1000)), float(cfg.get("length", 10.0)), int(cfg.get("J", 3)))
    corr_len = float(cfg.get("corr_len", 10.0))
    max_iters = int(cfg.get("max_iters", 2000))
    stop_tol = float(cfg.get("stop_tol", 1e-12))
    noise = float(cfg.get("noise_sigma", 0.0))
    traces = bool(cfg.get("traces", True))
    if traces:
        (out / "traces").mkdir(exist_ok=True)
    rates = {s: [] for s in solvers}
    for K in Ks:
        for N in Ns:
            wins = {s: 0 for s in solvers}
            for trial in range(cfg.trials):
                fam, xs, w, g, ys = phase_transition_instance(template, K, N, (cfg.seed, K, N, trial), corr_len, noise)
                reports = solve_instance(fam, xs, ys, w, g, max_iters, stop_tol, solvers)
                for s, rep in reports.items():
                    wins[s] += int(bool(rep.success))
                    if traces and trial == 0:
                        write_csv(out / "traces" / f"trace_K{K}_N{N}_{s}.csv", TRACE_HEADER, rep.trace_rows())
            for s in solvers:
                rates[s].append((K, N, s, wins[s] / cfg.trials, cfg.trials))
    for s in solvers:
        write_csv(out / f"phase_transition_{s}.csv", PHASE_HEADER, rates[s])
    return rates


# ---------------------------------------------------------------------------
# 2D astigmatic demo


def _bump(center: float, J: int, width: float = 1.0) -> np.ndarray:
    j = np.arange(J)
    return np.exp(-0.5 * ((j - center) / width) ** 2)


def demo_gamma(family: OperatorFamily) -> np.ndarray:
    """Coefficients of a plausible astigmatic operator.

    The impulse response at ``(x, y)`` mixes the raw Gaussian filters with
    weights ``(1 - x) b_lo + x b_hi + y b_tilt / 2``, which stay nonnegative on
    the unit square; they are mapped to the orthonormalized basis.
    """
    J = family.J
    coeffs = family._coeffs
    if coeffs is None:
        raise ConfigError("the demo expects an orthogonalized filter family")
    raw = [_bump(0.25 * (J - 1), J), _bump(0.7 * (J - 1), J) - _bump(0.25 * (J - 1), J), 0.5 * _bump(0.9 * (J - 1), J)]
    inv = np.linalg.inv(coeffs)
    return np.concatenate([inv @ r for r in raw[: family.K]])


def demo_scene(counts, spacing_px: float, jitter_px: float, pair_px: float, n_pairs: int, rng):
    """Jittered lattice of beads; ``n_pairs`` lattice slots hold close pairs instead."""
    hx = 1.0 / counts[0]
    start = spacing_px / 2.0
    axis = np.arange(start, counts[0] - 1, spacing_px)
    slots = np.array([(a, b) for a in axis for b in axis])
    order = rng.permutation(len(slots))
    pair_slots = set(order[:n_pairs].tolist())
    isolated, clustered = [], []
    for i, s in enumerate(slots):
        c = s + rng.uniform(-jitter_px, jitter_px, 2)
        if i in pair_slots:
            ang = rng.uniform(0, math.pi)
            d = 0.5 * pair_px * np.array([math.cos(ang), math.sin(ang)])
            clustered += [c - d, c + d]
        else:
            isolated.append(c)
    # pixel coordinates -> unit square (pixel centers at (i + 1/2) h)
    to_unit = lambda p: (np.asarray(p) + 0.5) * hx
    return to_unit(isolated), to_unit(clustered)


def run_demo2d(cfg: ExperimentConfig, out_dir) -> dict:
    """Detect beads in a synthetic astigmatic image, then recover the operator."""
    out = _out(out_dir)
    n = int(cfg.get("pixels", 96))
    counts = (n, n)
    family = presets.astigmatic_family(counts, int(cfg.get("J", 8)), int(cfg.get("max_degree", 1)),
                                       float(cfg.get("base_std_px", 1.0)))
    pixel = family.grid.pixel
    rng = _rng(cfg.seed, 7)
    iso, clu = demo_scene(counts, float(cfg.get("spacing_px", 16.0)), float(cfg.get("jitter_px", 1.0)),
                          float(cfg.get("pair_px", 6.0)), int(cfg.get("pairs", 2)), rng)
    truth = np.vstack([iso, clu]) if len(clu) else np.asarray(iso)
    gamma = np.asarray(cfg.get("gamma", demo_gamma(family)), dtype=float)
    spikes = SpikeTrain(truth, np.ones(truth.shape[0]))
    y0 = apply_operator(family, gamma, spikes)
    theta = float(cfg.get("theta", cfg.thetas[0] if cfg.thetas else 0.5))
    y = y0 + NoiseSpec.relative_white(theta, y0, int(rng.integers(2**63))).draw(y0)
    domain = family.grid.bounds()
    coarse = float(cfg.get("coarse_step_px", 1.0)) * pixel
    r_ex = float(cfg.get("exclusion_px", 3.5)) * pixel
    dets = detect_peaks(family, y, domain, coarse, float(cfg.get("weak_threshold", 0.005)), r_ex,
                        refine_tol=float(cfg.get("refine_tol_px", 1e-9)) * pixel)
    iso_dets = [d for d in dets if d.status == "isolated"]
    # match isolated detections to the nearest true bead
    errs = []
    for d in iso_dets:
        dist = np.linalg.norm(truth - d.position, axis=1)
        errs.append(float(dist.min()) / pixel)
    clustered_truth_flagged = all(
        any(np.linalg.norm(d.position - c) < 2 * r_ex and d.status == "clustered" for d in dets) for c in clu
    ) if len(clu) else True
    report = {
        "theta": theta,
        "n_true": int(truth.shape[0]),
        "n_true_clustered": int(len(clu)),
        "n_detected": len(dets),
        "n_isolated": len(iso_dets),
        "n_clustered": sum(d.status == "clustered" for d in dets),
        "n_weak": sum(d.status == "weak" for d in dets),
        "clustered_flagged": bool(clustered_truth_flagged),
        "loc_error_px": float(np.mean(errs)) if errs else None,
        "loc_error_max_px": float(np.max(errs)) if errs else None,
    }
    if iso_dets:
        est, cond = solve_known_weights(family, [d.position for d in iso_dets], np.ones(len(iso_dets)),
                                        [y] * len(iso_dets))
        gram = operator_gram(family)
        report["op_rel_error"] = operator_relative_error(gram, est.gamma, gamma)
        report["kappa"] = cond.kappa
    else:
        report["op_rel_error"] = None
        report["kappa"] = None
    write_json(out / "detections.json", [d.to_dict() for d in dets])
    write_json(out / "demo2d_report.json", report)
    if bool(cfg.get("write_field", True)):
        pts = domain.grid(coarse)
        fld = correlation_field(family, y, pts)
        write_csv(out / "correlation_field.csv", FIELD_HEADER(2), [(*p, h) for p, h in zip(fld.points, fld.values)])
    return report


# ---------------------------------------------------------------------------
# Monte-Carlo amplitudes and standalone localization


def run_mc_amplitude(cfg: ExperimentConfig, out_dir) -> list:
    """Amplitude statistics of the noise terms for several noise levels."""
    out = _out(out_dir)
    family = build_family(cfg.family)
    domain = family.grid.bounds()
    x_true = np.atleast_1d(np.asarray(cfg.get("x", domain.center), dtype=float))
    gamma = cfg.get("gamma")
    if gamma is None:
        gamma = _rng(cfg.seed, 0).standard_normal(family.I)
    gamma = np.asarray(gamma, dtype=float)
    y0 = family.response(x_true) @ gamma
    if "sigmas" in cfg.params:
        sigmas = [float(s) for s in cfg.get("sigmas")]
    else:
        thetas = cfg.thetas or [0.05, 0.1, 0.2]
        sigmas = [t * float(np.linalg.norm(y0)) / math.sqrt(family.M) for t in thetas]
    radius = float(cfg.get("eval_radius_px", 10.0)) * family.grid.pixel
    eval_step = float(cfg.get("eval_step_px", 0.5)) * family.grid.pixel
    lo = np.maximum(x_true - radius, domain.lo)
    hi = np.minimum(x_true + radius, domain.hi)
    pts = Box(tuple(lo), tuple(hi)).grid(eval_step)
    profile = _profile(family)
    stats, rows = [], []
    for i, s in enumerate(sigmas):
        st = mc_amplitude(family, x_true, gamma, s, cfg.trials, pts, int(_rng(cfg.seed, 2, i).integers(2**63)), profile)
        d = st.to_dict()
        d["bound_px"] = st.bound / family.grid.pixel if st.bound is not None and math.isfinite(st.bound) else None
        stats.append(d)
        rows += [(s, t, a, b) for t, (a, b) in enumerate(zip(st.z1, st.z2))]
    write_csv(out / "mc_amplitude.csv", AMPLITUDE_HEADER, rows)
    write_json(out / "mc_amplitude.json", stats)
    return stats


def run_localize(cfg: ExperimentConfig, out_dir) -> list:
    """Detect sources in a measurement CSV."""
    out = _out(out_dir)
    family = build_family(cfg.family)
    path = cfg.get("measurement")
    if path is None:
        raise ConfigError("localize needs a 'measurement' CSV path")
    try:
        pts, y = read_measurement(cfg.base_dir / path)
    except OSError as exc:
        raise ConfigError(f"cannot read measurement: {exc}") from None
    if y.size != family.M or not np.allclose(pts, family.grid.points, rtol=0, atol=1e-12 * (1 + np.abs(pts).max())):
        raise ConfigError("measurement grid does not match the family grid")
    domain = family.grid.bounds()
    if "domain" in cfg.params:
        domain = Box(tuple(cfg.get("domain")["lo"]), tuple(cfg.get("domain")["hi"]))
    coarse = float(cfg.get("coarse_step", family.grid.pixel))
    r_ex = cfg.get("exclusion_radius")
    if r_ex is None:
        # half-correlation distance: side lobes of a strong source stay inside it
        r_ex = quantile_inverse(_profile(family), 0.5)
        if not math.isfinite(r_ex) or r_ex <= 0:
            r_ex = 3.0 * coarse
    dets = detect_peaks(family, y, domain, coarse, float(cfg.get("weak_threshold", 0.1)),
                        float(r_ex), cfg.get("refine_tol"))
    fld = correlation_field(family, y, domain.grid(coarse))
    write_json(out / "detections.json", [d.to_dict() for d in dets])
    write_csv(out / "correlation_field.csv", FIELD_HEADER(family.dim), [(*p, h) for p, h in zip(fld.points, fld.values)])
    return dets


RUNNERS = {
    "phi_profile": run_phi_profile,
    "noise_sweep": run_noise_sweep,
    "gamma_error": run_gamma_error,
    "phase_transition": run_phase_transition,
    "demo2d": run_demo2d,
    "mc_amplitude": run_mc_amplitude,
    "localize": run_localize,
}


def run_experiment(cfg: ExperimentConfig, out_dir):
    return RUNNERS[cfg.kind](cfg, out_dir)
