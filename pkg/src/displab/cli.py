"""Command-line surface: train, analyze, compare, verify-theory, gradcheck,
print-config.

Exit codes are a stable contract: 0 success, 1 usage error, 2 data
error, 3 verification failure. All outputs are byte-stable for identical
inputs and seeds, and every file write is whole-file atomic.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import jsonio
from .config import (
    ConfigError,
    RunConfig,
    load_run_config,
    run_config_from_dict,
    run_config_to_dict,
)
from .corpus import CorpusError, load_corpus
from .geometry import EmbeddingTrace
from .model import forward_with_trace
from .reports import (
    ReportSchemaError,
    build_analysis_report,
    compare_reports,
    format_theory_report,
    read_report,
    write_histogram_csv,
    write_report,
)
from .theory import verification_suite
from .traceio import TraceFormatError, read_trace, write_trace
from .training import CorpusTooSmallError, TrainingDivergedError, run_training, save_checkpoint

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFICATION = 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.corpus is not None:
        cfg.corpus = args.corpus
    if args.out is not None:
        cfg.out_dir = args.out
    simple = {
        "n_sequences": ("n_sequences", cfg),
        "trace_len": ("trace_len", cfg),
        "snapshot_every": ("snapshot_every", cfg),
        "bins": ("bins", cfg),
        "seed": ("seed", cfg.train),
        "steps": ("steps", cfg.train),
        "batch_size": ("batch_size", cfg.train),
        "lr": ("lr", cfg.train),
        "schedule": ("schedule", cfg.train),
        "warmup_steps": ("warmup_steps", cfg.train),
        "loss_kind": ("kind", cfg.train.loss),
        "lambda_disp": ("lambda_disp", cfg.train.loss),
        "tau": ("tau", cfg.train.loss),
        "lambda_norm": ("lambda_norm", cfg.train.loss),
        "n_layers": ("n_layers", cfg.model),
        "d_model": ("d_model", cfg.model),
        "n_heads": ("n_heads", cfg.model),
        "d_ff": ("d_ff", cfg.model),
        "context_len": ("context_len", cfg.model),
    }
    for arg_name, (attr, target) in simple.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            setattr(target, attr, value)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def _load_config(args) -> RunConfig:
    try:
        cfg = load_run_config(args.config) if args.config else RunConfig()
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    return _apply_overrides(cfg, args)


def _held_out_windows(tokens: np.ndarray, n_sequences: int, trace_len: int):
    """The first n_sequences non-overlapping windows of the corpus tail,
    fixed irrespective of the training seed."""
    reserved = n_sequences * trace_len
    if tokens.size < reserved + trace_len:
        raise DataError(
            f"corpus too small to reserve {n_sequences} held-out windows of {trace_len} tokens")
    tail = tokens[tokens.size - reserved:]
    windows = [tail[i * trace_len:(i + 1) * trace_len] for i in range(n_sequences)]
    return tokens[:tokens.size - reserved], windows


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if not cfg.corpus:
        raise UsageError("train requires a corpus (--corpus or config)")
    if not os.path.exists(cfg.corpus):
        raise UsageError(f"corpus file not found: {cfg.corpus}")
    tokens = load_corpus(cfg.corpus)
    train_tokens, windows = _held_out_windows(tokens, cfg.n_sequences, cfg.trace_len)
    out_dir = cfg.resolved_out_dir()
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "traces"), exist_ok=True)

    ckpt = run_training(cfg.model, cfg.train, train_tokens,
                        trace_sequences=windows,
                        snapshot_every=cfg.snapshot_every or None)
    traces = []
    for i, w in enumerate(windows):
        _, trace = forward_with_trace(ckpt.params, w, sequence_id=f"trace{i:04d}")
        traces.append(trace)
        write_trace(trace, os.path.join(out_dir, "traces", f"trace{i:04d}.emtr"))

    report = build_analysis_report(traces, cfg.bins, extra={
        "kind": "training",
        "config": run_config_to_dict(cfg),
        "final_step": ckpt.step,
        "snapshots": ckpt.snapshots,
        "loss_curve": ckpt.metric_log,
    })
    write_report(report, os.path.join(out_dir, "report.json"))
    write_histogram_csv(report, os.path.join(out_dir, "histograms.csv"))
    save_checkpoint(ckpt, os.path.join(out_dir, "checkpoint.ckpt"))
    final = ckpt.snapshots[-1] if ckpt.snapshots else None
    if final is not None:
        rho = final["spearman_rho"]
        rho_text = "n/a" if rho is None else f"{rho:+.4f}"
        print(f"trained {ckpt.step} steps; final mu(L)={final['mu'][-1]:.6f} "
              f"rho={rho_text}; outputs in {out_dir}")
    else:
        print(f"trained {ckpt.step} steps; outputs in {out_dir}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    if not args.traces:
        raise UsageError("analyze requires at least one trace file")
    traces = []
    for path in args.traces:
        if not os.path.exists(path):
            raise UsageError(f"trace file not found: {path}")
        traces.append(read_trace(path))
    try:
        report = build_analysis_report(traces, args.bins)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out_dir = args.out or "."
    root = os.environ.get("DISPLAB_OUT_ROOT", "")
    if root and not os.path.isabs(out_dir):
        out_dir = os.path.join(root, out_dir)
    os.makedirs(out_dir, exist_ok=True)
    write_report(report, os.path.join(out_dir, "report.json"))
    write_histogram_csv(report, os.path.join(out_dir, "histograms.csv"))
    rho = report["spearman_rho"]
    tau = report["kendall_tau"]
    rho_text = "n/a" if rho is None else f"{rho:+.4f}"
    tau_text = "n/a" if tau is None else f"{tau:+.4f}"
    print(f"analyzed {len(traces)} trace(s): mu(L)={report['mu'][-1]:.6f} "
          f"rho={rho_text} tau={tau_text}; outputs in {out_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    for path in (args.report_a, args.report_b):
        if not os.path.exists(path):
            raise UsageError(f"report not found: {path}")
    delta = compare_reports(read_report(args.report_a), read_report(args.report_b))
    if args.out:
        jsonio.atomic_write_text(args.out, jsonio.dumps(delta))
    else:
        sys.stdout.write(jsonio.dumps(delta))
    print(f"verdict: {delta['verdict']} "
          f"(final mu a={delta['final_mu_a']:.6f}, b={delta['final_mu_b']:.6f})")
    return EXIT_OK


def cmd_verify_theory(args) -> int:
    rs = tuple(float(x) for x in args.r_grid.split(","))
    ms = tuple(int(x) for x in args.m_grid.split(","))
    checks = verification_suite(trials=args.trials, seed=args.seed, rs=rs, ms=ms,
                                repeat_pairs=args.repeat_pairs)
    width = max(len(c.name) for c in checks)
    for c in checks:
        bounds = ""
        if c.lower is not None and c.upper is not None and c.lower != c.upper:
            bounds = f" in ({c.lower:.8g}, {c.upper:.8g})"
        print(f"{c.status.upper():12s} {c.name:<{width}s} estimate={c.estimate:.8g} "
              f"stderr={c.stderr:.3g}{bounds}")
    report = format_theory_report(checks, args.trials, args.seed)
    if args.out:
        jsonio.atomic_write_text(args.out, jsonio.dumps(report))
    counts = report["counts"]
    print(f"{counts['pass']} pass, {counts['fail']} fail, "
          f"{counts['inconclusive']} inconclusive")
    return EXIT_VERIFICATION if counts["fail"] else EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_gradient_suite
    results = run_gradient_suite(seed=args.seed)
    failed = 0
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        failed += 0 if r.ok else 1
        print(f"{status} {r.name}: max relative error {r.error:.3e} (tolerance {r.tolerance:g})")
    print(f"{len(results) - failed}/{len(results)} gradient checks passed")
    return EXIT_VERIFICATION if failed else EXIT_OK


def cmd_print_config(args) -> int:
    cfg = _load_config(args)
    sys.stdout.write(jsonio.dumps(run_config_to_dict(cfg)))
    return EXIT_OK


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config file")
    p.add_argument("--corpus", help="corpus file (bytes are token ids)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--n-sequences", dest="n_sequences", type=int)
    p.add_argument("--trace-len", dest="trace_len", type=int)
    p.add_argument("--snapshot-every", dest="snapshot_every", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--schedule", choices=["cosine", "linear", "constant"])
    p.add_argument("--warmup-steps", dest="warmup_steps", type=int)
    p.add_argument("--loss-kind", dest="loss_kind",
                   choices=["dispersion", "decorrelation", "l2_repel", "orthogonalization"])
    p.add_argument("--lambda-disp", dest="lambda_disp", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--lambda-norm", dest="lambda_norm", type=float)
    p.add_argument("--n-layers", dest="n_layers", type=int)
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--n-heads", dest="n_heads", type=int)
    p.add_argument("--d-ff", dest="d_ff", type=int)
    p.add_argument("--context-len", dest="context_len", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="displab",
        description="Embedding-geometry laboratory: condensation metrics, "
                    "dispersion losses, desk-scale training, theory checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and emit traces + report")
    _add_config_flags(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_an = sub.add_parser("analyze", help="condensation report from trace files")
    p_an.add_argument("traces", nargs="*", help="trace (.emtr) files")
    p_an.add_argument("--bins", type=int, default=101)
    p_an.add_argument("--out", help="output directory (default: cwd)")
    p_an.set_defaults(fn=cmd_analyze)

    p_cmp = sub.add_parser("compare", help="delta two analysis reports")
    p_cmp.add_argument("report_a")
    p_cmp.add_argument("report_b")
    p_cmp.add_argument("--out", help="write the delta report here (default: stdout)")
    p_cmp.set_defaults(fn=cmd_compare)

    p_vt = sub.add_parser("verify-theory", help="Monte-Carlo checks of the padding identities")
    p_vt.add_argument("--trials", type=int, default=100_000)
    p_vt.add_argument("--seed", type=int, default=0)
    p_vt.add_argument("--r-grid", default="0.5,1,2,8")
    p_vt.add_argument("--m-grid", default="1,4,16,832")
    p_vt.add_argument("--repeat-pairs", type=int, default=100)
    p_vt.add_argument("--out", help="write the verification report here")
    p_vt.set_defaults(fn=cmd_verify_theory)

    p_gc = sub.add_parser("gradcheck", help="autodiff vs finite differences, all losses + model probe")
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.set_defaults(fn=cmd_gradcheck)

    p_pc = sub.add_parser("print-config", help="dump the merged config with defaults")
    _add_config_flags(p_pc)
    p_pc.set_defaults(fn=cmd_print_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; remap to the exit-code contract
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CorpusError, TraceFormatError, ReportSchemaError,
            CorpusTooSmallError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
