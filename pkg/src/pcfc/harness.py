"""Experiments on top of the pipeline: convergence, validation passes, reports."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import classifier
from .classifier import PointCloudDB, QueryParams
from .config import PipelineConfig
from .errors import EmptyTestSet, PCFCError
from .fea import DEFAULT_MATERIALS, effective_modulus
from .mesh import pixelate
from .microgen import DEFAULT_RADIUS_PX, MicrostructureSpec, generate
from .surface import FailureSurface, LoadGrid, build_surface, export_csv

E22_EXPERIMENT = 1.07e6

# one independent stream per purpose; microstructure placement uses the RVE seed
_STREAMS = {"split": 1, "perturb": 2}


def rng_for(seed: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_STREAMS[purpose],)))


# ----------------------------------------------------------------------------
# data handling
# ----------------------------------------------------------------------------


def split(points, train_fraction: float = 0.8, seed: int = 0):
    """Random train/test partition; returns sorted index arrays (train, test).

    The train size is ``train_fraction * N`` rounded half up.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(points)
    n_train = int(math.floor(train_fraction * n + 0.5))
    order = rng_for(seed, "split").permutation(n)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


@dataclass(frozen=True)
class BinHistogram:
    counts: tuple[int, ...]
    min: int
    max: int
    avg: float
    zero_bin_count: int

    def as_row(self):
        return (self.min, self.max, round(self.avg, 1), self.zero_bin_count)


def bin_index(points) -> np.ndarray:
    """Orthant index: bit j set when component j is >= 0."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    return ((P >= 0) * (1 << np.arange(P.shape[1]))).sum(axis=1)


def bin_distribution(points) -> BinHistogram:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    counts = np.bincount(bin_index(P), minlength=2 ** P.shape[1])
    return BinHistogram(
        tuple(int(c) for c in counts),
        int(counts.min()),
        int(counts.max()),
        float(counts.mean()),
        int(np.sum(counts == 0)),
    )


# ----------------------------------------------------------------------------
# validation
# ----------------------------------------------------------------------------


def validate_onsurface(db: PointCloudDB, test_points, params: QueryParams) -> float:
    """Percent of genuine failure points classified as outside."""
    Q = np.asarray(test_points, dtype=float)
    if Q.size == 0:
        raise EmptyTestSet("no test points")
    verdict = classifier.classify_batch(db, Q, params)
    return 100.0 * float(np.mean(verdict.outside))


@dataclass(frozen=True)
class PerturbationSpec:
    intact_fraction: float = 1.0 / 3.0
    scale_range: tuple[float, float] = (0.5, 1.2)
    rng_seed: int = 0

    def __post_init__(self):
        lo, hi = self.scale_range
        if not 0.0 <= self.intact_fraction <= 1.0:
            raise ValueError("intact_fraction must lie in [0, 1]")
        if not 0.0 < lo < hi:
            raise ValueError("scale_range must be an increasing positive pair")


@dataclass(frozen=True, eq=False)
class LabeledSet:
    points: np.ndarray
    outside: np.ndarray  # ground truth
    factors: np.ndarray  # 1.0 for intact points

    def __len__(self) -> int:
        return len(self.points)


def label_scaled(points, factors) -> LabeledSet:
    P = np.asarray(points, dtype=float)
    f = np.asarray(factors, dtype=float)
    return LabeledSet(P * f[:, None], f >= 1.0, f)


def perturb(points, spec: PerturbationSpec = PerturbationSpec()) -> LabeledSet:
    """Keep a fraction of the points, scale the rest by f ~ U[lo, hi].

    A point scaled by f < 1 moves inside the envelope; f >= 1 (including the
    intact points) counts as outside.
    """
    P = np.asarray(points, dtype=float)
    n = len(P)
    rng = rng_for(spec.rng_seed, "perturb")
    n_intact = int(math.floor(spec.intact_fraction * n + 0.5))
    order = rng.permutation(n)
    factors = np.ones(n)
    factors[order[n_intact:]] = rng.uniform(*spec.scale_range, size=n - n_intact)
    return label_scaled(P, factors)


@dataclass(frozen=True)
class ReportB:
    n: int
    correct: int
    correct_pct: float
    false_positives: int
    false_negatives: int
    fp_error_min: float | None
    fp_error_max: float | None
    fn_error_min: float | None
    fn_error_max: float | None


def distance_error(l2_test, l2_avg, sigma_range):
    """Signed percent distance of a test norm from the neighbor average."""
    return (np.asarray(l2_test) - np.asarray(l2_avg)) / sigma_range * 100.0


def evaluate(db: PointCloudDB, labeled: LabeledSet, params: QueryParams) -> ReportB:
    if len(labeled) == 0:
        raise EmptyTestSet("no labeled points")
    v = classifier.classify_batch(db, labeled.points, params)
    fp = v.outside & ~labeled.outside
    fn = ~v.outside & labeled.outside
    err = distance_error(v.l2_query, v.l2_avg_neighbors, db.sigma_range)

    def bracket(mask):
        if not mask.any():
            return None, None
        return float(err[mask].min()), float(err[mask].max())

    n = len(labeled)
    correct = int(n - fp.sum() - fn.sum())
    return ReportB(
        n, correct, 100.0 * correct / n, int(fp.sum()), int(fn.sum()), *bracket(fp), *bracket(fn)
    )


# ----------------------------------------------------------------------------
# convergence
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceTrial:
    window_px: int
    seed: int
    divisions: int
    nodes: int
    elements: int
    E22: float
    nu23: float
    error_pct: float


def percent_error(E22, reference=E22_EXPERIMENT):
    return (reference - E22) / reference * 100.0


def convergence_study(
    seeds: Sequence[int],
    window_sizes: Sequence[int],
    divisions_list: Sequence[int],
    *,
    vf: float = 0.6,
    radius_px: float = DEFAULT_RADIUS_PX,
    materials=None,
    reference: float = E22_EXPERIMENT,
    vf_tol: float = 0.02,
):
    """Effective modulus over windows, seeds and mesh densities.

    Returns ``(rows, trials)``: one best-model row per window (smallest
    ``|error|`` against ``reference``) and every individual trial.
    """
    materials = materials or DEFAULT_MATERIALS
    trials = []
    for W in window_sizes:
        for seed in seeds:
            ms = generate(MicrostructureSpec(W, vf, radius_px, rng_seed=seed, vf_tol=vf_tol))
            for d in divisions_list:
                mesh = pixelate(ms, d)
                em = effective_modulus(mesh, materials)
                trials.append(
                    ConvergenceTrial(W, seed, d, mesh.n_nodes, mesh.n_elements, em.E22, em.nu23,
                                     percent_error(em.E22, reference))
                )
    rows = []
    for W in window_sizes:
        group = [t for t in trials if t.window_px == W]
        best = min(group, key=lambda t: abs(t.error_pct))
        rows.append({"window_px": W, "n_models": len({t.seed for t in group}), **asdict(best)})
    return rows, trials


# ----------------------------------------------------------------------------
# pipeline
# ----------------------------------------------------------------------------


class StageError(PCFCError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


class _Stage:
    def __init__(self, name, timings):
        self.name, self.timings = name, timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = self.timings.get(self.name, 0.0) + time.perf_counter() - self.t0
        if exc is not None and isinstance(exc, (PCFCError, ValueError)) and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


@dataclass
class PipelineResult:
    config: PipelineConfig
    surface: FailureSurface
    db: PointCloudDB
    report: dict
    timings: dict = field(default_factory=dict)
    holdout: FailureSurface | None = None


def _param_grid(cfg: PipelineConfig):
    return [QueryParams(k=k, epsilon=cfg.epsilon, alpha=a) for k in sorted(cfg.k, reverse=True)
            for a in cfg.alpha]


def run_pipeline(cfg: PipelineConfig, out_dir=None, workers: int | None = 1) -> PipelineResult:
    """microgen -> mesh -> FEA batch -> surface -> DB -> validation passes.

    Writes ``surface.csv``, ``report.json``, ``report.txt`` and
    ``timing.json`` (plus ``holdout.csv`` and ``db.pcfc``) when ``out_dir`` is
    given.  Everything but the timing file is a deterministic function of the
    configuration.
    """
    timings = {}
    grid = LoadGrid(cfg.grid_m, cfg.amplitude_psi)

    def rves(seeds):
        return [
            (generate(MicrostructureSpec(cfg.window_px, cfg.vf, cfg.radius_px, rng_seed=s)), cfg.divisions)
            for s in seeds
        ]

    with _Stage("microgen", timings):
        train_rves = rves(cfg.seeds)
        holdout_rves = rves(cfg.holdout_seeds)
    with _Stage("surface", timings):
        surface = build_surface(train_rves, grid, workers=workers)
    with _Stage("database", timings):
        P = surface.array()
        train_idx, test_idx = split(P, cfg.split, cfg.seed)
        db_train = classifier.build(P[train_idx])
        db_full = classifier.build(P)
    bins = bin_distribution(P)

    report = {
        "config": asdict(cfg),
        "surface": {
            "points": len(surface),
            "rves": [p["rve_id"] for p in surface.provenance["rves"]],
            "bins": {"min": bins.min, "max": bins.max, "avg": bins.avg, "zero": bins.zero_bin_count,
                     "counts": list(bins.counts)},
            "sigma_range": db_full.sigma_range,
        },
    }
    with _Stage("query", timings):
        report["validation_1"] = [
            {"data_space": len(P), "alpha": p.alpha, "epsilon": p.epsilon, "k": p.k,
             "tests": len(test_idx), "accuracy_pct": validate_onsurface(db_train, P[test_idx], p)}
            for p in _param_grid(cfg)
        ]

    holdout = None
    if holdout_rves:
        with _Stage("surface", timings):
            holdout = build_surface(holdout_rves, grid, workers=workers)
        H = holdout.array()
        labeled = perturb(H, PerturbationSpec(rng_seed=cfg.seed))
        with _Stage("query", timings):
            report["validation_2a"] = [
                {"data_space": len(P), "alpha": p.alpha, "epsilon": p.epsilon, "k": p.k,
                 "tests": len(H), "accuracy_pct": validate_onsurface(db_full, H, p)}
                for p in _param_grid(cfg)
            ]
            report["validation_2b"] = [
                {"data_space": len(P), "alpha": p.alpha, "epsilon": p.epsilon, "k": p.k,
                 **asdict(evaluate(db_full, labeled, p))}
                for p in _param_grid(cfg)
            ]

    timings["total"] = sum(timings.values())
    result = PipelineResult(cfg, surface, db_full, report, timings, holdout)
    if out_dir is not None:
        write_artifacts(result, out_dir)
    return result


def render_text(report: dict) -> str:
    out = []
    s = report["surface"]
    b = s["bins"]
    out.append(f"Failure surface: {s['points']} points from RVEs {', '.join(s['rves'])}")
    out.append(f"  bin distribution (min, max, avg, zero) = ({b['min']}, {b['max']}, {b['avg']:.1f}, {b['zero']})")
    out.append(f"  sigma_range = {s['sigma_range']:.1f} psi")
    out.append("")
    out.append("Validation 1 (held-out points of the same RVEs)")
    out.append(f"  {'2n':>6} {'(alpha, eps, k)':>20} {'tests':>6} {'accuracy %':>11}")
    for r in report["validation_1"]:
        out.append(f"  {r['data_space']:>6} {str((r['alpha'], r['epsilon'], r['k'])):>20} "
                   f"{r['tests']:>6} {r['accuracy_pct']:>11.1f}")
    if "validation_2a" in report:
        out.append("")
        out.append("Validation 2A (failure points of an unseen RVE)")
        for r in report["validation_2a"]:
            out.append(f"  {r['data_space']:>6} {str((r['alpha'], r['epsilon'], r['k'])):>20} "
                       f"{r['tests']:>6} {r['accuracy_pct']:>11.1f}")
        out.append("")
        out.append("Validation 2B (perturbed points of an unseen RVE)")
        out.append(f"  {'(alpha, eps, k)':>20} {'correct':>13} {'FP':>5} {'FP err %':>16} {'FN':>5} {'FN err %':>16}")

        def br(lo, hi):
            return "[NA, NA]" if lo is None else f"[{lo:.1f}, {hi:.1f}]"

        for r in report["validation_2b"]:
            out.append(
                f"  {str((r['alpha'], r['epsilon'], r['k'])):>20} {r['correct']:>6} ({r['correct_pct']:4.0f}) "
                f"{r['false_positives']:>5} {br(r['fp_error_min'], r['fp_error_max']):>16} "
                f"{r['false_negatives']:>5} {br(r['fn_error_min'], r['fn_error_max']):>16}"
            )
    return "\n".join(out) + "\n"


def write_artifacts(result: PipelineResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    export_csv(result.surface, out / "surface.csv")
    if result.holdout is not None:
        export_csv(result.holdout, out / "holdout.csv")
    classifier.save_db(result.db, out / "db.pcfc")
    (out / "report.json").write_text(json.dumps(result.report, indent=2, sort_keys=True) + "\n")
    (out / "report.txt").write_text(render_text(result.report))
    t = dict(result.timings)
    if "surface" in t and t.get("total"):
        t["surface_share"] = t["surface"] / t["total"]
    (out / "timing.json").write_text(json.dumps(t, indent=2, sort_keys=True) + "\n")
    return out
