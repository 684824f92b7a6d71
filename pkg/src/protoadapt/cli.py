"""Command-line harness: ``gen``, ``run``, ``solve-check`` and ``bench``.

Exit codes are 0 on success, 2 on usage errors and 1 on runtime errors.
Verbosity comes from the ``UA_LOG`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .adapter import Adapter, AdapterConfig
from .baselines import ConfidenceCache, ZeroShot
from .errors import AdapterError, InvalidConfig
from .proto_cache import ClassEmbeddings, InsertPolicy
from .spectral import build_affinity, cg_solve, direct_solve_oracle, normalized_laplacian
from .streams import (
    UNKNOWN,
    Stream,
    SynthSpec,
    gen_class_embeddings,
    gen_prototype_graph,
    gen_stream,
    read_any,
    read_classes,
    read_jsonl,
    write_classes,
    write_embeddings,
)

REPORT_VERSION = 1
METHODS = {
    "uni-adapter": Adapter,
    "confidence-cache": ConfidenceCache,
    "zero-shot": ZeroShot,
}
TIMING_FIELDS = ("throughput_samples_per_sec", "timings")
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("protoadapt")


class UsageError(Exception):
    pass


def _configure_logging() -> None:
    level = LOG_LEVELS.get(os.environ.get("UA_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _reassign_every(text: str) -> int | None:
    if text.lower() in ("never", "none", "inf"):
        return None
    return int(text)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    d = AdapterConfig()
    g = p.add_argument_group("adapter configuration")
    g.add_argument("--beta", type=float, default=d.beta)
    g.add_argument("--gamma", type=float, default=d.gamma)
    g.add_argument("--lambda-reg", type=float, default=d.lambda_reg)
    g.add_argument("--capacity", type=int, default=d.capacity_N, help="prototypes per class (N)")
    g.add_argument("--tau", type=float, default=d.tau)
    g.add_argument("--cg-tol", type=float, default=d.cg_tol)
    g.add_argument("--cg-max-iter", type=int, default=d.cg_max_iter)
    g.add_argument(
        "--reassign-every", type=_reassign_every, default=d.reassign_every,
        help="smoothing cadence in samples; 'never' disables the cache",
    )
    g.add_argument("--insert-policy", choices=[x.value for x in InsertPolicy], default=d.insert_policy)
    g.add_argument("--merge-similarity", type=float, default=d.merge_similarity)
    g.add_argument("--persist-reassignment", action="store_true")


def _config_from(args) -> AdapterConfig:
    cfg = AdapterConfig(
        beta=args.beta,
        gamma=args.gamma,
        lambda_reg=args.lambda_reg,
        capacity_N=args.capacity,
        tau=args.tau,
        cg_tol=args.cg_tol,
        cg_max_iter=args.cg_max_iter,
        reassign_every=args.reassign_every,
        insert_policy=args.insert_policy,
        merge_similarity=args.merge_similarity,
        persist_reassignment=args.persist_reassignment,
    )
    try:
        cfg.validate()
    except InvalidConfig as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc
    return cfg


def _add_spec_flags(p: argparse.ArgumentParser, n_default: int, k_default: int, d_default: int) -> None:
    g = p.add_argument_group("synthetic stream")
    g.add_argument("--k", type=int, default=k_default, help="number of classes")
    g.add_argument("--d", type=int, default=d_default, help="embedding dimension")
    g.add_argument("--modes", type=int, default=3, help="modes per class")
    g.add_argument("--spread", type=float, default=1.0, help="mode spread (radians)")
    g.add_argument("--noise", type=float, default=0.5, help="within-mode noise (radians)")
    g.add_argument("--n", type=int, default=n_default, help="number of samples")
    g.add_argument("--skew", type=float, default=0.0, help="confidence skew")
    g.add_argument("--neighbour-fraction", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)


def _spec_from(args) -> SynthSpec:
    spec = SynthSpec(
        K=args.k, d=args.d, modes_per_class=args.modes, mode_spread=args.spread,
        sample_noise=args.noise, n_samples=args.n, confidence_skew=args.skew,
        seed=args.seed, neighbour_fraction=args.neighbour_fraction,
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return spec


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    spec = _spec_from(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    W = gen_class_embeddings(spec.K, spec.d, spec.seed)
    stream = gen_stream(W, spec)
    classes_path, stream_path = out / "classes.uacl", out / "stream.uaeb"
    write_classes(classes_path, W)
    write_embeddings(stream_path, stream)
    print(f"wrote {spec.K} classes to {classes_path} and {len(stream)} samples to {stream_path}")
    return 0


def _read_stream(path: str, dim: int) -> Stream:
    if path == "-":
        return read_jsonl(sys.stdin, expected_dim=dim)
    return read_any(path, expected_dim=dim)


def evaluate(method: str, W: ClassEmbeddings, stream: Stream, cfg: AdapterConfig, seed: int) -> tuple[dict, np.ndarray]:
    """Run ``method`` over ``stream`` in order and build the report dict."""
    model = METHODS[method](W, cfg)
    preds = np.empty(len(stream), dtype=np.int64)
    t0 = time.perf_counter()
    for i, f in enumerate(stream.features):
        preds[i] = model.process(f).final_class
    elapsed = time.perf_counter() - t0

    K = W.num_classes
    labeled = stream.labels != UNKNOWN
    per_class: list[float | None] = [None] * K
    top1 = None
    if labeled.any():
        y, p = stream.labels[labeled], preds[labeled]
        top1 = float(np.mean(p == y))
        for k in range(K):
            sel = y == k
            if sel.any():
                per_class[k] = float(np.mean(p[sel] == k))

    if isinstance(model, Adapter):
        sizes = model.cache.sizes
        stages = dict(model.stage_seconds)
    elif isinstance(model, ConfidenceCache):
        sizes, stages = model.sizes, {}
    else:
        sizes, stages = np.zeros(K, dtype=np.int64), {}

    report = {
        "report_version": REPORT_VERSION,
        "method": method,
        "top1_accuracy": top1,
        "per_class_accuracy": per_class,
        "n_samples": len(stream),
        "n_labeled": int(labeled.sum()),
        "throughput_samples_per_sec": len(stream) / elapsed if elapsed > 0 else None,
        "config": cfg.to_dict(),
        "cache_stats": {
            "class_sizes": [int(s) for s in sizes],
            "total_flips": int(model.total_flips),
        },
        "seed": seed,
        "timings": {"total_seconds": elapsed, "stages": stages},
    }
    return report, preds


def _write_predictions(path: Path, preds: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, p in enumerate(preds):
            fh.write(json.dumps({"index": i, "prediction": int(p)}) + "\n")


def cmd_run(args) -> int:
    if args.method not in METHODS:
        raise UsageError(f"unknown method {args.method!r}; choose from {', '.join(METHODS)}")
    cfg = _config_from(args)
    W = read_classes(args.classes)
    stream = _read_stream(args.embeddings, W.dim)
    report, preds = evaluate(args.method, W, stream, cfg, args.seed)

    if report["top1_accuracy"] is None or args.predictions:
        pred_path = Path(args.predictions) if args.predictions else (
            Path(args.out).with_suffix(".predictions.jsonl") if args.out else Path("predictions.jsonl")
        )
        _write_predictions(pred_path, preds)
        report["predictions_file"] = str(pred_path)

    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(args.out)
    else:
        print(text)
    if report["top1_accuracy"] is not None:
        print(f"{args.method}: top-1 accuracy {100 * report['top1_accuracy']:.2f}%", file=sys.stderr)
    return 0


def cmd_solve_check(args) -> int:
    if args.m > 2000:
        raise UsageError("--m must be <= 2000 for the dense reference solve")
    U, Z0 = gen_prototype_graph(args.m, args.k, seed=args.seed)
    L = normalized_laplacian(build_affinity(U, args.gamma))

    t0 = time.perf_counter()
    Z_cg, rep = cg_solve(L, args.lam, Z0, tol=args.tol, max_iter=args.max_iter)
    t_cg = time.perf_counter() - t0
    t0 = time.perf_counter()
    Z_direct = direct_solve_oracle(L, args.lam, Z0)
    t_direct = time.perf_counter() - t0

    mae = float(np.mean(np.abs(Z_cg - Z_direct)))
    its = rep.iterations_per_column
    print(f"M={args.m} K={args.k} lambda={args.lam} gamma={args.gamma} nnz={L.nnz}")
    print(f"MAE {mae:.3e}")
    print(f"CG time {t_cg * 1e3:.3f} ms, direct time {t_direct * 1e3:.3f} ms")
    print(f"CG iterations per column: min {its.min()} max {its.max()} mean {its.mean():.2f}")
    print(f"all columns converged: {bool(rep.converged.all())}")
    return 0


def cmd_bench(args) -> int:
    cfg = _config_from(args)
    spec = _spec_from(args)
    W = gen_class_embeddings(spec.K, spec.d, spec.seed)
    stream = gen_stream(W, spec)
    report, _ = evaluate("uni-adapter", W, stream, cfg, spec.seed)
    stages = report["timings"]["stages"]
    total = sum(stages.values()) or 1.0
    print(f"{report['throughput_samples_per_sec']:.1f} samples/sec over {len(stream)} samples")
    for name, sec in stages.items():
        print(f"  {name:<12} {sec:8.3f} s  {100 * sec / total:5.1f}%")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protoadapt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic class file and stream")
    _add_spec_flags(p, n_default=5000, k_default=40, d_default=512)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="stream embeddings through a method and report accuracy")
    p.add_argument("--classes", required=True)
    p.add_argument("--embeddings", required=True, help="UAEB or JSON-lines file, '-' for stdin")
    p.add_argument("--method", "--baseline", dest="method", default="uni-adapter", choices=list(METHODS))
    p.add_argument("--out", help="report path (stdout if omitted)")
    p.add_argument("--predictions", help="also write per-sample predictions here")
    p.add_argument("--seed", type=int, default=0)
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("solve-check", help="compare CG against the dense solve")
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--k", type=int, default=40)
    p.add_argument("--lambda", dest="lam", type=float, default=0.3)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_solve_check)

    p = sub.add_parser("bench", help="throughput and per-stage timing of the adapter")
    _add_spec_flags(p, n_default=1000, k_default=40, d_default=512)
    _add_config_flags(p)
    p.add_argument("--out", help="optional JSON report path")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (AdapterError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
