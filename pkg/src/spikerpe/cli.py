"""spikerpe command line.

Exit codes: 0 success, 1 verification failure, 2 config error,
3 training divergence. Summaries go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import verify
from .attention import gray_term, log_pe_bias, gray_pe_map, log_pe_map, ssa_dot_map, xnor_map
from .bitcodec import gray_codes, min_bits
from .config import OUT_ENV, ExperimentConfig, load_config
from .errors import ConfigError, LUTBuildError, TrainingDivergence
from .lut import build_log2_lut, check_lut, search_exact_lut, write_lut
from .model import PE_VARIANTS, SpikingTransformer, save_weights
from .tasks import MetricReport
from .train import train

log = logging.getLogger("spikerpe")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def table(rows: list[dict], columns: list[str]) -> str:
    """Aligned plain-text table."""
    cells = [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip()]
    for row in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _out_root(args) -> Path:
    return Path(getattr(args, "out", None) or os.environ.get(OUT_ENV, "runs"))


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(args) -> int:
    kw = {"lut": {"search": args.search_lut}} if args.scope in ("all", "lut") else {}
    report = verify.run(args.scope, **kw)
    path = Path(args.report) if args.report else _out_root(args) / "verify.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True, default=str) + "\n")
    rows = [
        {"suite": name, "passed": res["passed"], "failure": json.dumps(res.get("failure")) if "failure" in res else ""}
        for name, res in report.items()
        if isinstance(res, dict)
    ]
    print(table(rows, ["suite", "passed", "failure"]))
    log.info("report written to %s", path)
    return EXIT_OK if report["passed"] else EXIT_VERIFY


# ---------------------------------------------------------------------------
# dump-pe
# ---------------------------------------------------------------------------


def _write_matrix(m, out):
    w = csv.writer(out, lineterminator="\n")
    for row in np.asarray(m):
        w.writerow([int(v) for v in row])


def cmd_dump_pe(args) -> int:
    out = sys.stdout
    if args.kind == "gray":
        b = args.bits if args.bits is not None else min_bits(args.length)
        codes = gray_codes(args.length, b)
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["index", "gray_bits"])
        for i, c in enumerate(codes):
            w.writerow([i, format(int(c), f"0{b}b")])
    elif args.kind == "gray-term":
        _write_matrix(gray_term(args.length, args.bits), out)
    else:
        _write_matrix(log_pe_bias(args.length), out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# lut
# ---------------------------------------------------------------------------


def cmd_lut(args) -> int:
    if args.lut_cmd == "build":
        lut = build_log2_lut(args.n, args.k, args.p)
        write_lut(lut, args.out)
        summary = {
            "N": lut.n_bits,
            "K": lut.k_segments,
            "P": lut.p_bits,
            "max_error": lut.max_error(),
            "storage_bits": lut.storage_bits,
            "storage_bytes": lut.storage_bytes,
            "path": str(args.out),
        }
        print(json.dumps(summary, sort_keys=True))
        return EXIT_OK
    if args.search:
        lut, res = search_exact_lut(args.length_max)
        if lut is None:
            print(json.dumps({"passed": False, "reason": "no exact table with K <= 64, P <= 16"}))
            return EXIT_VERIFY
    else:
        n = args.n if args.n is not None else max(2, (args.length_max - 1).bit_length())
        lut = build_log2_lut(n, args.k, args.p)
        res = check_lut(lut, args.length_max)
    d = res.to_dict()
    print(table([d], ["N", "K", "P", "storage_bits", "max_error", "mismatches", "passed"]))
    print(json.dumps(d, sort_keys=True))
    return EXIT_OK if res.passed else EXIT_VERIFY


# ---------------------------------------------------------------------------
# train / compare
# ---------------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, out_dir: Path) -> MetricReport:
    """Train one (config, seed); writes metrics.jsonl, weights.spkr, report.json."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg.canonical(), indent=2, sort_keys=True) + "\n")
    model = SpikingTransformer(cfg.model, seed=cfg.seed)
    data = cfg.task.load(out_dir.parent / "datasets")
    metrics_path = out_dir / "metrics.jsonl"
    with open(metrics_path, "w") as f:

        def on_epoch(row):
            f.write(json.dumps(row, sort_keys=True) + "\n")
            f.flush()
            log.info("epoch %d %s", row["epoch"], {k: v for k, v in row.items() if k != "epoch"})

        history = train(model, cfg.task, cfg.train, data=data, on_epoch=on_epoch)
    save_weights(model, out_dir / "weights.spkr")
    last = history[-1]
    report = MetricReport(
        loss=last["val_loss"], r2=last.get("r2"), rse=last.get("rse"), accuracy=last.get("accuracy")
    )
    (out_dir / "report.json").write_text(report.to_json() + "\n")
    return report


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out_dir = Path(args.out) / cfg.out_dir().name if args.out else cfg.out_dir()
    log.info("training %s into %s", cfg.name, out_dir)
    try:
        report = run_experiment(cfg, out_dir)
    except TrainingDivergence as e:
        print(json.dumps({"diverged": True, "epoch": e.epoch, "message": str(e)}))
        return EXIT_DIVERGED
    rows = [{"metric": k, "value": getattr(report, k)} for k in ("accuracy", "r2", "rse", "loss") if getattr(report, k) is not None]
    print(table(rows, ["metric", "value"]))
    print(report.to_json())
    return EXIT_OK


def _compare_one(job):
    cfg, out_dir = job
    try:
        rep = run_experiment(cfg, out_dir)
        return {"r2": rep.r2, "rse": rep.rse, "accuracy": rep.accuracy, "diverged": False}
    except TrainingDivergence as e:
        return {"r2": None, "rse": None, "accuracy": None, "diverged": True, "epoch": e.epoch}


def compare(cfg: ExperimentConfig, variants, root: Path, jobs: int = 1) -> list[dict]:
    """One row per (variant, seed) followed by one mean row per variant."""
    plan = []
    for v in variants:
        vcfg = cfg.with_variant(v)
        for s in cfg.seeds:
            scfg = vcfg.with_seed(s)
            plan.append((v, s, scfg, root / f"{v}-seed{s}-{scfg.digest()}"))
    jobs_in = [(c, d) for _, _, c, d in plan]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_compare_one, jobs_in))
    else:
        results = [_compare_one(j) for j in jobs_in]
    rows = []
    for (v, s, _, _), res in zip(plan, results):
        if res["diverged"]:
            log.warning("variant %s seed %d diverged at epoch %s", v, s, res.get("epoch"))
        rows.append({"variant": v, "seed": s, **res})
    for v in variants:
        ok = [r for r in rows if r["variant"] == v and not r["diverged"]]
        mean = {"variant": v, "seed": "mean", "diverged": len(ok) == 0}
        for m in ("r2", "rse", "accuracy"):
            vals = [r[m] for r in ok if r[m] is not None]
            mean[m] = float(np.mean(vals)) if vals else None
        rows.append(mean)
    return rows


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    variants = args.variants
    if len(variants) < 2:
        raise ConfigError("compare needs at least two variants")
    for v in variants:
        if v not in PE_VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; choose from {PE_VARIANTS}")
    root = (Path(args.out) if args.out else _out_root(args)) / f"compare-{cfg.name}-{cfg.digest()}"
    rows = compare(cfg, variants, root, jobs=args.jobs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "seed", "r2", "rse", "accuracy"])
    for r in rows:
        cells = [r["variant"], r["seed"]] + ["diverged" if r["diverged"] else _fmt(r[m]) for m in ("r2", "rse", "accuracy")]
        w.writerow(cells)
    root.mkdir(parents=True, exist_ok=True)
    (root / "compare.csv").write_text(buf.getvalue())
    (root / "compare.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(buf.getvalue())
    print(table(rows, ["variant", "seed", "r2", "rse", "accuracy", "diverged"]), file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def bench_maps(sizes, dim: int = 32, repeats: int = 5, seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    rows = []
    for length in sizes:
        q = rng.integers(0, 2, (length, dim), dtype=np.int8)
        k = rng.integers(0, 2, (length, dim), dtype=np.int8)
        bias = log_pe_bias(length) if length >= 2 else None
        fns = {
            "dot": lambda: ssa_dot_map(q, k),
            "xnor": lambda: xnor_map(q, k),
            "gray": lambda: gray_pe_map(q, k),
            "log": (lambda: log_pe_map(q, k, bias)) if bias is not None else None,
        }
        for name, fn in fns.items():
            if fn is None:
                continue
            fn()  # warm-up (jit, caches)
            best = float("inf")
            for _ in range(repeats):
                t0 = time.perf_counter()
                fn()
                best = min(best, time.perf_counter() - t0)
            rows.append({"variant": name, "L": length, "D": dim, "seconds": best})
    return rows


def cmd_bench(args) -> int:
    rows = bench_maps(args.sizes, args.dim, args.repeats)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["variant", "L", "D", "seconds"])
    for r in rows:
        w.writerow([r["variant"], r["L"], r["D"], f"{r['seconds']:.3e}"])
    print(table(rows, ["variant", "L", "D", "seconds"]), file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spikerpe", description="Relative positional encodings for spiking Transformers.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run property suites and write a JSON report")
    v.add_argument("scope", nargs="?", default="all", choices=("all",) + verify.SUITES)
    v.add_argument("--report", help=f"report path (default ${OUT_ENV}/verify.json)")
    v.add_argument("--search-lut", action="store_true", help="search for the cheapest exact LUT instead of re-checking the recorded one")
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("dump-pe", help="print positional-encoding tables as CSV")
    d.add_argument("kind", choices=("gray", "gray-term", "log"))
    d.add_argument("--length", type=int, required=True)
    d.add_argument("--bits", type=int)
    d.set_defaults(func=cmd_dump_pe)

    lp = sub.add_parser("lut", help="fixed-point log2 lookup tables")
    lsub = lp.add_subparsers(dest="lut_cmd", required=True)
    b = lsub.add_parser("build")
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--k", type=int, required=True)
    b.add_argument("--p", type=int, required=True)
    b.add_argument("--out", required=True)
    c = lsub.add_parser("check")
    c.add_argument("--length-max", type=int, default=512)
    c.add_argument("--n", type=int)
    c.add_argument("--k", type=int, default=verify.RECORDED_LUT["K"])
    c.add_argument("--p", type=int, default=verify.RECORDED_LUT["P"])
    c.add_argument("--search", action="store_true", help="find the cheapest exact (K, P)")
    lp.set_defaults(func=cmd_lut)

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("config")
    t.add_argument("--seed", type=int, help="override the config seed")
    t.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")
    t.set_defaults(func=cmd_train)

    cp = sub.add_parser("compare", help="train several PE variants over the config's seeds")
    cp.add_argument("config")
    cp.add_argument("--variants", nargs="+", required=True)
    cp.add_argument("--out")
    cp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    cp.set_defaults(func=cmd_compare)

    bp = sub.add_parser("bench", help="time attention-map construction")
    bp.add_argument("--sizes", type=int, nargs="+", default=[16, 64, 256])
    bp.add_argument("--dim", type=int, default=32)
    bp.add_argument("--repeats", type=int, default=5)
    bp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, LUTBuildError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergence as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
