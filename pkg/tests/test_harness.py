import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pcfc import classifier
from pcfc.classifier import QueryParams
from pcfc.config import PipelineConfig, dump_config, parse_config
from pcfc.errors import ConfigError, EmptyTestSet
from pcfc.fea import MATRIX_F3900
from pcfc.harness import (
    PerturbationSpec,
    StageError,
    bin_distribution,
    bin_index,
    convergence_study,
    distance_error,
    evaluate,
    label_scaled,
    percent_error,
    perturb,
    run_pipeline,
    split,
    validate_onsurface,
)


@pytest.mark.parametrize("n, sizes", [(10, (8, 2)), (2660, (2128, 532)), (1, (1, 0))])
def test_split_sizes(n, sizes):
    train, test = split(np.zeros((n, 4)), 0.8, seed=3)
    assert (len(train), len(test)) == sizes


@given(n=st.integers(1, 500), frac=st.floats(0.05, 0.95), seed=st.integers(0, 2**32))
def test_split_partitions(n, frac, seed):
    train, test = split(range(n), frac, seed)
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(n))
    again = split(range(n), frac, seed)
    assert np.array_equal(train, again[0]) and np.array_equal(test, again[1])


def test_bins():
    h = bin_distribution([[1.0, 2.0, 3.0, 4.0]])
    assert sum(h.counts) == 1 and len(h.counts) == 16 and h.zero_bin_count == 15
    corners = np.array([[(-1) ** ((i >> j) & 1) for j in range(4)] for i in range(16)], dtype=float)
    assert bin_distribution(corners).as_row() == (1, 1, 1.0, 0)
    assert bin_index([[0.0, -0.0, -1.0, 1.0]]).tolist() == [0b1011]


def test_m5_surface_leaves_an_orthant_empty(surface_m5):
    h = bin_distribution(surface_m5.array())
    assert sum(h.counts) == 248
    assert h.zero_bin_count >= 1


def test_onsurface_accuracy(surface_m5):
    P = surface_m5.array()
    train, test = split(P, 0.8, 0)
    db = classifier.build(P[train])
    acc = [validate_onsurface(db, P[test], QueryParams(k=4, alpha=a)) for a in (0.001, 0.01, 0.05, 0.1)]
    assert acc == sorted(acc)
    assert acc[0] < 90
    with pytest.raises(EmptyTestSet):
        validate_onsurface(db, np.zeros((0, 4)), QueryParams())


def test_label_examples():
    p = np.array([[100.0, -50.0, 20.0, 10.0]] * 3)
    ls = label_scaled(p, [0.5, 1.2, 1.0])
    assert np.array_equal(ls.points[0], 0.5 * p[0])
    assert ls.outside.tolist() == [False, True, True]


@given(n=st.integers(1, 300), seed=st.integers(0, 2**32))
def test_perturbation_properties(n, seed):
    P = np.random.default_rng(seed).normal(size=(n, 4))
    ls = perturb(P, PerturbationSpec(rng_seed=seed))
    assert np.sum(ls.factors == 1.0) >= int(n / 3 + 0.5)
    scaled = ls.factors != 1.0
    assert np.all((ls.factors[scaled] >= 0.5) & (ls.factors[scaled] <= 1.2))
    assert np.array_equal(ls.outside, ls.factors >= 1.0)
    assert np.array_equal(perturb(P, PerturbationSpec(rng_seed=seed)).points, ls.points)


def test_evaluate_partitions_counts(surface_m5):
    db = classifier.build(surface_m5)
    ls = perturb(surface_m5.array(), PerturbationSpec(rng_seed=1))
    rows = [evaluate(db, ls, QueryParams(k=4, alpha=a)) for a in (0.001, 0.01, 0.05, 0.1)]
    for r in rows:
        assert r.correct + r.false_positives + r.false_negatives == r.n == 248
        for lo, hi in ((r.fp_error_min, r.fp_error_max), (r.fn_error_min, r.fn_error_max)):
            assert (lo is None) == (hi is None)
            if lo is not None:
                assert lo <= hi and abs(lo) <= 100 * 1.5 and abs(hi) <= 100 * 1.5
    fn = [r.false_negatives for r in rows]
    fp = [r.false_positives for r in rows]
    assert fn == sorted(fn, reverse=True) and fp == sorted(fp)


def test_evaluate_perfect_set():
    P = np.array([[1000.0, 0, 0, 0], [0, 1000.0, 0, 0], [0, 0, 1000.0, 0], [0, 0, 0, 1000.0]])
    db = classifier.build(P)
    r = evaluate(db, label_scaled(P, np.ones(4)), QueryParams(k=1, alpha=0.1))
    assert (r.false_positives, r.false_negatives, r.correct_pct) == (0, 0, 100.0)
    assert r.fp_error_min is None and r.fn_error_max is None
    assert distance_error(500.0, 500.0, 1000.0) == 0.0


def test_percent_error_sign():
    assert percent_error(1.078e6) == pytest.approx(-0.7476, abs=1e-3)


def test_convergence_homogeneous_control():
    rows, trials = convergence_study([1], [100], [10, 20], vf=0.0)
    target = MATRIX_F3900.E / (1 - MATRIX_F3900.nu**2)
    assert all(t.E22 == pytest.approx(target, rel=5e-3) for t in trials)
    assert len(rows) == 1 and rows[0]["window_px"] == 100


def test_convergence_row_per_window():
    rows, trials = convergence_study([139, 176], [200], [20, 40])
    assert len(trials) == 4
    assert rows[0]["n_models"] == 2
    assert abs(rows[0]["error_pct"]) == min(abs(t.error_pct) for t in trials)


# config -------------------------------------------------------------------


def test_config_parsing():
    cfg = parse_config("# run\nwindow_px = 100\nalpha = 0.01, 0.1\nseeds=1,2,3\nvf = 0.5  # dense\n")
    assert (cfg.window_px, cfg.alpha, cfg.seeds, cfg.vf) == (100, (0.01, 0.1), (1, 2, 3), 0.5)
    assert parse_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize(
    "text, needle",
    [("colour = red", "'colour'"), ("grid_m = 4", "grid_m"), ("alpha = 0.1, x", "alpha"),
     ("window_px", "key = value"), ("seeds = 1\nholdout_seeds = 1", "distinct")],
)
def test_config_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)


# pipeline -----------------------------------------------------------------


SMALL = PipelineConfig(divisions=30, grid_m=3, holdout_seeds=(160,))


def test_pipeline_artifacts(tmp_path):
    res = run_pipeline(SMALL, tmp_path)
    for name in ("surface.csv", "holdout.csv", "db.pcfc", "report.json", "report.txt", "timing.json"):
        assert (tmp_path / name).exists()
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["surface"]["points"] == 52
    assert len(report["validation_1"]) == len(SMALL.k) * len(SMALL.alpha)
    assert {"surface", "query", "total"} <= set(res.timings)
    assert "Validation 2B" in (tmp_path / "report.txt").read_text()


def test_pipeline_stage_errors_are_tagged():
    with pytest.raises(StageError, match=r"\[microgen\]"):
        run_pipeline(PipelineConfig(window_px=20, grid_m=3))
