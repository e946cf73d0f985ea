"""Command line entry point (``pcfc`` or ``python -m pcfc``).

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
4 validation threshold not met.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import classifier, harness, mesh as meshmod, microgen, surface as surfmod
from .config import PipelineConfig, load_config
from .errors import ConfigError, ParseError, PCFCError
from .fea import BoundaryConditions, RVEModel, homogenize, phase_groups, write_stress_csv
from .microgen import Phase

log = logging.getLogger("pcfc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_THRESHOLD = 0, 2, 3, 4


class ThresholdFailure(Exception):
    pass


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    return cfg.with_overrides(seed=args.seed)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


def _load_db(args) -> classifier.PointCloudDB:
    if args.db:
        return classifier.load_db(args.db)
    if args.surface:
        return classifier.build(surfmod.import_csv(args.surface))
    raise ConfigError("give --db or --surface")


def _param_grid(args, cfg):
    ks = [args.k] if args.k else sorted(cfg.k, reverse=True)
    alphas = [args.alpha] if args.alpha else list(cfg.alpha)
    eps = cfg.epsilon if args.epsilon is None else args.epsilon
    return [classifier.QueryParams(k=k, epsilon=eps, alpha=a) for k in ks for a in alphas]


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------


def cmd_microgen(args):
    cfg, out = _config(args), _out(args)
    written = []
    for seed in cfg.seeds + cfg.holdout_seeds:
        ms = microgen.generate(microgen.MicrostructureSpec(cfg.window_px, cfg.vf, cfg.radius_px, rng_seed=seed))
        path = out / f"rve_{seed}.txt"
        microgen.write_text(ms, path)
        written.append({"seed": seed, "file": str(path), "inclusions": len(ms), "achieved_vf": ms.achieved_vf})
    _emit(written)


def cmd_mesh(args):
    cfg, out = _config(args), _out(args)
    ms = microgen.read_text(args.micro)
    m = meshmod.pixelate(ms, args.divisions or cfg.divisions)
    meshmod.write_csv(m, out)
    _emit({"nodes": m.n_nodes, "elements": m.n_elements, "mesh_vf": meshmod.mesh_volume_fraction(m),
           "achieved_vf": ms.achieved_vf})


def cmd_solve(args):
    cfg, out = _config(args), _out(args)
    ms = microgen.read_text(args.micro)
    m = meshmod.pixelate(ms, args.divisions or cfg.divisions)
    if args.strain is not None:
        bc = BoundaryConditions.displacement(args.strain)
    else:
        bc = BoundaryConditions.traction(args.sx, args.sy, args.txy)
    res = RVEModel(m).solve(bc)
    write_stress_csv(res, m, out / "stress.csv")
    summary = {"residual": res.residual,
               "rve": homogenize(res.stress, res.volumes, phase_groups(m.phase)).tolist()}
    for ph in (Phase.FIBER, Phase.MATRIX):
        if np.any(m.phase == ph):
            summary[ph.name.lower()] = homogenize(res.stress[m.phase == ph], res.volumes[m.phase == ph]).tolist()
    if not bc.is_displacement and any((bc.sx, bc.sy, bc.txy)):
        per_phase = {ph: tuple(summary[ph.name.lower()]) for ph in Phase if ph.name.lower() in summary}
        s_f, mode = surfmod.scale_to_failure(per_phase)
        summary.update(s_f=s_f, mode=mode.value)
    _emit(summary)


def cmd_surface(args):
    cfg, out = _config(args), _out(args)
    grid = surfmod.LoadGrid(cfg.grid_m, cfg.amplitude_psi)
    result = {}
    for name, seeds in (("surface", cfg.seeds), ("holdout", cfg.holdout_seeds)):
        if not seeds:
            continue
        rves = [(microgen.generate(microgen.MicrostructureSpec(cfg.window_px, cfg.vf, cfg.radius_px, rng_seed=s)),
                 cfg.divisions) for s in seeds]
        surf = surfmod.build_surface(rves, grid, workers=args.threads)
        surfmod.export_csv(surf, out / f"{name}.csv")
        result[name] = {"file": str(out / f"{name}.csv"), "points": len(surf)}
    _emit(result)


def cmd_build_db(args):
    out = _out(args)
    db = classifier.build(surfmod.import_csv(args.surface))
    path = out / "db.pcfc"
    classifier.save_db(db, path)
    _emit({"file": str(path), "points": db.n, "sigma_min": db.sigma_min, "sigma_max": db.sigma_max,
           "sigma_range": db.sigma_range})


def _read_queries(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        return np.array([[float(r[c]) for c in ("sx", "sy", "sz", "txy")] for r in rows])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: need numeric sx, sy, sz, txy columns ({exc})") from None


def cmd_query(args):
    cfg = _config(args)
    db = _load_db(args)
    Q = np.array(args.point, dtype=float) if args.point else _read_queries(args.queries)
    params = classifier.QueryParams(
        k=args.k or max(cfg.k),
        alpha=args.alpha or max(cfg.alpha),
        epsilon=cfg.epsilon if args.epsilon is None else args.epsilon,
    )
    for q in Q:
        v = classifier.classify(db, q, params)
        print(json.dumps({"query": q.tolist(), "decision": v.decision.value, "l2_query": v.l2_query,
                          "l2_avg": v.l2_avg_neighbors, "margin": v.margin,
                          "neighbors": list(v.neighbor_ids)}))


def cmd_validate_a(args):
    cfg = _config(args)
    db = _load_db(args)
    test = surfmod.import_csv(args.test).array()
    rows = [{"alpha": p.alpha, "epsilon": p.epsilon, "k": p.k, "tests": len(test),
             "accuracy_pct": harness.validate_onsurface(db, test, p)} for p in _param_grid(args, cfg)]
    _emit(rows)
    if args.min_accuracy is not None:
        top = max(p["alpha"] for p in rows)
        if any(r["accuracy_pct"] < args.min_accuracy for r in rows if r["alpha"] == top):
            raise ThresholdFailure(f"accuracy below {args.min_accuracy}% at alpha={top}")


def cmd_validate_b(args):
    cfg = _config(args)
    db = _load_db(args)
    labeled = harness.perturb(surfmod.import_csv(args.test).array(), harness.PerturbationSpec(rng_seed=cfg.seed))
    rows = [{"alpha": p.alpha, "epsilon": p.epsilon, "k": p.k, **asdict(harness.evaluate(db, labeled, p))}
            for p in _param_grid(args, cfg)]
    _emit(rows)
    if args.max_fn is not None:
        top = max(r["alpha"] for r in rows)
        if any(r["false_negatives"] > args.max_fn for r in rows if r["alpha"] == top):
            raise ThresholdFailure(f"more than {args.max_fn} false negatives at alpha={top}")


def cmd_converge(args):
    cfg, out = _config(args), _out(args)
    windows = [int(v) for v in args.windows.split(",")]
    divisions = [int(v) for v in args.divisions_list.split(",")]
    rows, trials = harness.convergence_study(cfg.seeds, windows, divisions, vf=cfg.vf, radius_px=cfg.radius_px)
    report = {"best": rows, "trials": [asdict(t) for t in trials]}
    (out / "convergence.json").write_text(json.dumps(report, indent=2) + "\n")
    _emit(rows)


def cmd_pipeline(args):
    cfg, out = _config(args), _out(args)
    result = harness.run_pipeline(cfg, out, workers=args.threads)
    sys.stdout.write(harness.render_text(result.report))
    t = result.timings
    print(f"surface generation {t.get('surface', 0):.1f} s, queries {t.get('query', 0):.3f} s, "
          f"total {t.get('total', 0):.1f} s; artifacts in {out}")


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value run configuration")
    common.add_argument("--seed", type=int, help="seed for the split and perturbation streams")
    common.add_argument("--threads", type=int, default=None, help="worker threads for FEA batches")
    common.add_argument("--out", default="pcfc_out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pcfc", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    def db_source(p):
        p.add_argument("--db", help="database snapshot from build-db")
        p.add_argument("--surface", help="failure-surface CSV to index on the fly")

    def query_params(p):
        p.add_argument("--k", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--epsilon", type=float)

    add("microgen", cmd_microgen, "generate microstructure text files for the configured seeds")
    p = add("mesh", cmd_mesh, "mesh a microstructure and dump node/element CSVs")
    p.add_argument("--micro", required=True)
    p.add_argument("--divisions", type=int)
    p = add("solve", cmd_solve, "run one RVE analysis")
    p.add_argument("--micro", required=True)
    p.add_argument("--divisions", type=int)
    p.add_argument("--sx", type=float, default=0.0)
    p.add_argument("--sy", type=float, default=0.0)
    p.add_argument("--txy", type=float, default=0.0)
    p.add_argument("--strain", type=float, help="imposed normal strain on BC instead of tractions")
    add("surface", cmd_surface, "generate the failure-surface point cloud")
    p = add("build-db", cmd_build_db, "index a failure-surface CSV into a snapshot")
    p.add_argument("--surface", required=True)
    p = add("query", cmd_query, "classify stress states against the envelope")
    db_source(p)
    query_params(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--point", nargs=4, type=float, action="append", metavar=("SX", "SY", "SZ", "TXY"))
    g.add_argument("--queries", help="CSV with sx,sy,sz,txy columns")
    p = add("validate-a", cmd_validate_a, "accuracy on genuine failure points")
    db_source(p)
    query_params(p)
    p.add_argument("--test", required=True, help="failure-surface CSV of test points")
    p.add_argument("--min-accuracy", type=float)
    p = add("validate-b", cmd_validate_b, "false positives/negatives on perturbed points")
    db_source(p)
    query_params(p)
    p.add_argument("--test", required=True, help="failure-surface CSV to perturb")
    p.add_argument("--max-fn", type=int)
    p = add("converge", cmd_converge, "effective-modulus convergence study")
    p.add_argument("--windows", default="100,200,325")
    p.add_argument("--divisions-list", default="25,50,100")
    add("pipeline", cmd_pipeline, "run every stage and write reports")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ThresholdFailure as exc:
        log.error("validation threshold failed: %s", exc)
        return EXIT_THRESHOLD
    except (ConfigError, ParseError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except harness.StageError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG if isinstance(exc.cause, (ConfigError, ParseError)) else EXIT_NUMERIC
    except (PCFCError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
