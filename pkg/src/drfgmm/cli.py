"""Command-line entry points: synth | fit | eval | heatmap | density.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 seeding
failure, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from .affinity import compute_affinity, affinity_heatmap, load_affinity, save_affinity, save_pgm
from .core import (ConfigError, DataError, Dataset, NumericalError,
                   PipelineConfig, RandomStream, load_csv, save_csv, standardize)
from .dual import SeedingFailure, mutual_exclusion, save_constraints, seed_constraints, threshold_filter
from .forest import forest_density, load_forest, save_forest, train_forest
from .gmm import GaussianMixture, fit_em, mixture_density
from .metrics import accuracy, nmi
from .spectral import spectral_cluster

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_SEEDING = 4
EXIT_NUMERICAL = 5

_KMEANS_STREAM = 1 << 32

METHODS = ("binary", "uniform", "adaptive", "drfgmm", "spectral-only")

DEFAULT_COUNTS = "175,250,375"
DEFAULT_MEANS = "0,0;4,0;2,3.5"
DEFAULT_COVS = "1,0,0,1;1.5,0,0,1.5;2,0.5,0.5,1"


def _parse_grid(text: str, name: str) -> list:
    groups = []
    for chunk in text.split(";"):
        try:
            groups.append([float(v) for v in chunk.split(",") if v.strip() != ""])
        except ValueError:
            raise ConfigError(f"cannot parse --{name} entry {chunk!r}") from None
    if not groups:
        raise ConfigError(f"--{name} is empty")
    return groups


def cmd_synth(args) -> int:
    try:
        counts = [int(v) for v in args.counts.split(",")]
    except ValueError:
        raise ConfigError(f"cannot parse --counts {args.counts!r}") from None
    means = _parse_grid(args.means, "means")
    covs = _parse_grid(args.covs, "covs")
    if not (len(counts) == len(means) == len(covs)):
        raise ConfigError("counts, means and covs must list the same number of clusters")
    if any(c < 1 for c in counts):
        raise ConfigError("cluster counts must be positive")
    d = len(means[0])
    if any(len(m) != d for m in means):
        raise ConfigError("all means must share one dimension")
    gen = RandomStream(args.seed, 0).gen
    blocks = []
    labels = []
    for cid, (count, mean, flat) in enumerate(zip(counts, means, covs)):
        if len(flat) != d * d:
            raise ConfigError(f"covariance {cid} needs {d * d} entries, got {len(flat)}")
        cov = np.array(flat, dtype=np.float64).reshape(d, d)
        if not np.array_equal(cov, cov.T):
            raise ConfigError(f"covariance {cid} is not symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ConfigError(f"covariance {cid} is not positive definite") from None
        z = gen.standard_normal((count, d))
        blocks.append(z @ chol.T + np.asarray(mean))
        labels.extend([cid] * count)
    ds = Dataset(np.vstack(blocks), np.array(labels))
    save_csv(ds, args.out)
    print(f"wrote {ds.n} samples x {ds.d} features to {args.out}")
    return EXIT_OK


def _file_digest(path) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_json_file(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _read_labels(path) -> np.ndarray:
    ds = load_csv(path)
    column = ds.features[:, -1]
    if np.any(column != np.round(column)):
        raise DataError(f"{path}: final column holds non-integer labels")
    return column.astype(np.int64)


def cmd_fit(args) -> int:
    if args.method not in METHODS:
        raise ConfigError(f"unknown method {args.method!r}")
    cfg = _resolve_config(args)
    ds = load_csv(args.data, has_labels=args.has_labels, skip_header=args.header)
    work = ds if args.no_scale else standardize(ds)

    digest = _file_digest(args.data)
    if args.affinity:
        digest += ":" + _file_digest(args.affinity)
    key = json.dumps({"method": args.method, "config": cfg.to_dict(),
                      "data": digest, "seed": cfg.seed}, sort_keys=True)
    run_dir = Path(args.out) / hashlib.sha256(key.encode()).hexdigest()[:16]
    run_dir.mkdir(parents=True, exist_ok=True)

    stages: dict = {}
    artifacts: dict = {}
    em_summary = None
    constraint_summary = None

    def clocked(name, fn):
        start = time.perf_counter()
        result = fn()
        stages[name] = time.perf_counter() - start
        return result

    if args.method == "spectral-only":
        if not args.affinity:
            raise ConfigError("spectral-only requires --affinity")
        aff = clocked("load_affinity", lambda: load_affinity(args.affinity))
        if aff.n != work.n:
            raise DataError(f"affinity is {aff.n}x{aff.n} but the data has {work.n} rows")
    else:
        forest = clocked("forest", lambda: train_forest(work, cfg))
        mode = args.method if args.method in ("binary", "uniform", "adaptive") else cfg.affinity_mode
        aff = clocked("affinity", lambda: compute_affinity(forest, work, mode))
        save_forest(forest, run_dir / "forest.json")
        artifacts["forest"] = "forest.json"

    save_affinity(aff, run_dir / "affinity.bin")
    artifacts["affinity"] = "affinity.bin"

    if args.method == "drfgmm":
        strong = clocked("threshold", lambda: threshold_filter(aff, cfg.threshold))
        seeds = clocked("seeding", lambda: seed_constraints(
            strong, cfg.num_clusters, cfg.resolve_min_component(work.n)))
        seeds = clocked("exclusion", lambda: mutual_exclusion(strong, seeds))
        result = clocked("em", lambda: fit_em(work, seeds, cfg))
        labels = result.labels
        em_summary = {"iterations": result.iterations,
                      "final_logL": result.log_likelihoods[-1],
                      "underflow_rows": result.underflow_rows,
                      "collapse_events": result.collapse_events}
        constraint_summary = {"fixed": int((seeds.assignments >= 0).sum()),
                              "component_sizes": seeds.component_sizes().tolist()}
        with open(run_dir / "mixture.json", "w", encoding="utf-8") as fh:
            json.dump(result.mixture.to_dict(), fh)
        save_constraints(seeds, run_dir / "constraints.json")
        with open(run_dir / "trace.csv", "w", encoding="utf-8") as fh:
            fh.write("iteration,logL\n")
            for it, value in enumerate(result.log_likelihoods):
                fh.write(f"{it},{value!r}\n")
        artifacts.update(mixture="mixture.json", constraints="constraints.json",
                         trace="trace.csv")
    else:
        rng = RandomStream(cfg.seed, _KMEANS_STREAM)
        labels = clocked("spectral", lambda: spectral_cluster(aff, cfg.num_clusters, rng))

    with open(run_dir / "labels.csv", "w", encoding="utf-8") as fh:
        for value in labels:
            fh.write(f"{int(value)}\n")
    artifacts["labels"] = "labels.csv"

    metrics_summary = None
    if ds.labels is not None:
        metrics_summary = {"acc": accuracy(labels, ds.labels),
                           "nmi": nmi(labels, ds.labels)}

    report = {
        "method": args.method,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "n": work.n,
        "d": work.d,
        "data_digest": digest,
        "scaled": not args.no_scale,
        "metrics": metrics_summary,
        "constraints": constraint_summary,
        "em": em_summary,
        "stage_seconds": stages,
        "artifacts": artifacts,
    }
    with open(run_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)

    line = f"run {run_dir}"
    if metrics_summary is not None:
        line += f"  acc={metrics_summary['acc']:.2f}  nmi={metrics_summary['nmi']:.4f}"
    print(line)
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = _read_labels(args.pred)
    truth = _read_labels(args.truth)
    if pred.shape[0] != truth.shape[0]:
        raise DataError("label files have different lengths")
    print(json.dumps({"acc": accuracy(pred, truth), "nmi": nmi(pred, truth)}))
    return EXIT_OK


def cmd_heatmap(args) -> int:
    aff = load_affinity(args.affinity)
    order = None
    if args.order:
        labels = _read_labels(args.order)
        if labels.shape[0] != aff.n:
            raise DataError("ordering labels do not match the affinity size")
        order = np.argsort(labels, kind="stable")
    save_pgm(affinity_heatmap(aff, order), args.out)
    print(f"wrote {aff.n}x{aff.n} heatmap to {args.out}")
    return EXIT_OK


def cmd_density(args) -> int:
    try:
        with open(args.model, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {args.model}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.model} is not valid JSON: {exc}") from exc
    queries = load_csv(args.query, skip_header=args.header)

    kind = raw.get("format")
    if kind == "drfgmm-forest":
        from .forest import forest_from_dict
        forest = forest_from_dict(raw)
        if forest.d != queries.d:
            raise DataError(f"model expects {forest.d} features, query has {queries.d}")
        values = [forest_density(forest, row) for row in queries.features]
    elif kind == "drfgmm-mixture":
        gm = GaussianMixture.from_dict(raw)
        if gm.dim != queries.d:
            raise DataError(f"model expects {gm.dim} features, query has {queries.d}")
        values = mixture_density(gm, queries.features)
    else:
        raise DataError(f"{args.model}: unknown model format {kind!r}")

    lines = "".join(f"{float(v)!r}\n" for v in values)
    if args.out:
        Path(args.out).write_text(lines, encoding="utf-8")
    else:
        sys.stdout.write(lines)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drfgmm",
        description="Forest-affinity clustering and density estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="draw a labeled Gaussian-mixture sample")
    p.add_argument("--out", default="synthetic.csv")
    p.add_argument("--counts", default=DEFAULT_COUNTS)
    p.add_argument("--means", default=DEFAULT_MEANS)
    p.add_argument("--covs", default=DEFAULT_COVS)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="cluster a CSV dataset")
    p.add_argument("data")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--config", help="JSON file mirroring PipelineConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs")
    p.add_argument("--header", action="store_true", help="skip the first line")
    p.add_argument("--no-scale", action="store_true",
                   help="skip min-max scaling to [0, 1]")
    p.add_argument("--has-labels", action="store_true",
                   help="treat the final column as ground-truth labels")
    p.add_argument("--affinity", help="precomputed affinity for spectral-only")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="score predicted labels against truth")
    p.add_argument("pred")
    p.add_argument("truth")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="render an affinity matrix as PGM")
    p.add_argument("affinity")
    p.add_argument("--order", help="labels CSV; rows are grouped by label")
    p.add_argument("--out", default="affinity.pgm")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("density", help="evaluate a saved model on query points")
    p.add_argument("model", help="forest.json or mixture.json")
    p.add_argument("query", help="CSV of query rows (features only)")
    p.add_argument("--header", action="store_true", help="skip the first line")
    p.add_argument("--out", help="write densities here instead of stdout")
    p.set_defaults(func=cmd_density)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SeedingFailure as exc:
        print(f"seeding failure: {exc}\n"
              "hint: lower the affinity threshold or reduce min_component",
              file=sys.stderr)
        return EXIT_SEEDING
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
