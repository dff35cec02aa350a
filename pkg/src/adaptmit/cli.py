"""Command-line front end: ``adaptmit {collect,train,compare,oracle}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import orchestrator as orc
from .config import ConfigError, ExperimentConfig, load_config
from .telemetry import TelemetryFormatError, read_records, write_records

log = logging.getLogger("adaptmit")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

SUMMARY_COLUMNS = ("class", "benchmark", "unmitigated", "adaptive", "gain_pct")
TRACE_COLUMNS = ("cycle", "p_eff", "F_unmitigated", "F_adaptive", "action_level")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _load(args, fallback: ExperimentConfig | None = None) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = fallback or ExperimentConfig()
    # flags win over file values
    if getattr(args, "lam", None) is not None:
        cfg = cfg.with_overrides("policy", lam=args.lam)
    if getattr(args, "deterministic", False):
        cfg = cfg.with_overrides("policy", deterministic=True)
    return cfg


def _seed_list(base: int, n: int | None, default: int) -> list[int]:
    n = default if n is None else n
    if n < 1:
        raise UsageError("--seeds must be >= 1")
    return [base + k for k in range(n)]


def _fmt(x: float) -> str:
    return repr(float(x))


# ----------------------------------------------------------------------------- commands


def cmd_collect(args) -> int:
    cfg = _load(args)
    out = Path(args.out or cfg.output.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = _seed_list(cfg.run.train_base_seed, args.seeds, cfg.run.train_seeds)
    for seed in seeds:
        records = [r for run in orc.collect_traces(cfg, [seed]) for r in run]
        path = out / f"traces_seed{seed}.jsonl"
        write_records(records, path)
        log.info("wrote %d records to %s", len(records), path)
    print(f"collected {len(seeds)} trace files in {out}")
    return EXIT_OK


def _trace_paths(spec: list[str]) -> list[Path]:
    paths: list[Path] = []
    for item in spec:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("traces_seed*.jsonl")))
        elif p.is_file():
            paths.append(p)
        else:
            raise UsageError(f"trace path not found: {p}")
    if not paths:
        raise UsageError(f"no trace files found in {', '.join(spec)}")
    return paths


def cmd_train(args) -> int:
    cfg = _load(args)
    runs = []
    for path in _trace_paths(args.traces):
        with open(path, encoding="utf-8") as fh:
            try:
                runs.extend(orc.split_runs(list(read_records(fh))))
            except TelemetryFormatError as exc:
                raise TelemetryFormatError(f"{path}: {exc}") from None
    stack = orc.train_offline(runs, cfg, delta=args.delta)
    out = Path(args.out or Path(cfg.output.out_dir) / "stack.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(stack.to_json(created=_now()), encoding="utf-8")
    print(f"trained stack with {stack.tree.n_contexts} contexts -> {out}")
    return EXIT_OK


def summary_csv(report: orc.ComparisonReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in report.rows:
        w.writerow([row["class"], row["benchmark"], _fmt(row["unmitigated"]), _fmt(row["adaptive"]), _fmt(row["gain_pct"])])
    return buf.getvalue()


def trace_csv(unmitigated: orc.RunLog, adaptive: orc.RunLog) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for ru, ra in zip(unmitigated.records, adaptive.records):
        w.writerow([ra.cycle, _fmt(ra.p_eff), _fmt(ru.fidelity), _fmt(ra.fidelity), ra.action_level])
    return buf.getvalue()


def cmd_compare(args) -> int:
    stack_path = Path(args.stack)
    if not stack_path.is_file():
        raise UsageError(f"stack file not found: {stack_path}")
    stack = orc.TrainedStack.from_json(stack_path.read_text(encoding="utf-8"))
    cfg = _load(args, fallback=stack.config)
    seeds = _seed_list(cfg.run.eval_base_seed, args.seeds, cfg.run.eval_seeds)
    report = orc.paired_comparison(stack, cfg, seeds)

    out = Path(args.out or cfg.output.out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(summary_csv(report), encoding="utf-8")
    for u, _, a in report.runs:
        (out / "traces" / f"trace_{a.workload}_seed{a.seed}.csv").write_text(trace_csv(u, a), encoding="utf-8")
    payload = {
        "metadata": {"created": _now(), "stack_sha256": stack.meta.get("content_sha256")},
        "seeds": seeds,
        "lambda": cfg.policy.lam,
        "deterministic": cfg.policy.deterministic,
        **report.to_dict(),
    }
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")

    for row in report.rows:
        print(f"{row['class']}, {row['benchmark']}, {row['unmitigated']:.3f}, {row['adaptive']:.3f}, {row['gain_pct']:+.1f}")
    print(f"cost reduction vs static severe: {100 * report.cost_reduction:.1f}%  NONE fraction: {100 * report.none_fraction:.1f}%")
    return EXIT_OK


def oracle_checks() -> list[tuple[str, bool, str]]:
    """Analytic self-checks of the plant and bandit against closed forms."""
    from .plant import (
        DriftParams,
        analytic_logical_error,
        drift_base_rate,
        lambda_factor,
        sample_memory_cycle,
        stream_rng,
    )
    from .policy import ActionModel, posterior

    rows = []
    e3, e5 = analytic_logical_error(3, 0.1), analytic_logical_error(5, 0.1)
    rows.append(("eps(3, 0.1) = 0.028", abs(e3 - 0.028) < 1e-12, f"{e3:.6g}"))
    rows.append(("eps(5, 0.1) = 0.00856", abs(e5 - 0.00856) < 1e-12, f"{e5:.6g}"))
    lam = lambda_factor(e3, e5)
    rows.append(("Lambda(3->5) at p=0.1 = 3.271", abs(lam - 3.271) < 5e-4, f"{lam:.4f}"))

    shots = 200_000
    c = sample_memory_cycle(5, 0.1, shots, 0, stream_rng(0, 3, 0))
    mc = c.decode_errors / shots
    se = np.sqrt(e5 * (1 - e5) / shots)
    rows.append(("MC eps(5, 0.1) within 4 s.e.", abs(mc - e5) <= 4 * se, f"{mc:.5f} vs {e5:.5f}"))

    params = DriftParams(p_phys0=0.01, alpha=0.5, T_run=200, mode="deterministic", schedule="sinusoid")
    got = [drift_base_rate(t, params) for t in (0, 50, 150)]
    ok = np.allclose(got, [0.01, 0.015, 0.005], rtol=0, atol=1e-15)
    rows.append(("drift 0.01/0.015/0.005 at t=0/50/150", bool(ok), "/".join(f"{g:.4g}" for g in got)))

    m = ActionModel(2)
    m.update([1.0, 0.0], 0.5)
    theta, _ = posterior(m, 1.0)
    ok = np.allclose(m.A, [[2, 0], [0, 1]]) and np.allclose(theta, [0.25, 0.0])
    rows.append(("single bandit update theta = (0.25, 0)", bool(ok), f"({theta[0]:.3g}, {theta[1]:.3g})"))
    return rows


def cmd_oracle(args) -> int:
    rows = oracle_checks()
    width = max(len(name) for name, _, _ in rows)
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    return EXIT_OK if all(ok for _, ok, _ in rows) else EXIT_RUNTIME


# ----------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI experiment config")
    common.add_argument("--out", metavar="DIR", help="output directory (train: stack file path)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="adaptmit", description="Adaptive noise-mitigation controller experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("collect", parents=[common], help="record behaviour-policy traces")
    c.add_argument("--seeds", type=int, metavar="N")
    c.set_defaults(func=cmd_collect)

    t = sub.add_parser("train", parents=[common], help="fit contexts, forecaster and bandit priors")
    t.add_argument("traces", nargs="+", help="trace files or directories holding traces_seed*.jsonl")
    t.add_argument("--delta", type=int, default=None, help="forecast horizon in cycles")
    t.set_defaults(func=cmd_train)

    k = sub.add_parser("compare", parents=[common], help="paired comparison of the three strategies")
    k.add_argument("--stack", required=True, metavar="PATH")
    k.add_argument("--seeds", type=int, metavar="N")
    k.add_argument("--lambda", dest="lam", type=float, metavar="X")
    k.add_argument("--deterministic", action="store_true")
    k.set_defaults(func=cmd_compare)

    o = sub.add_parser("oracle", parents=[common], help="analytic self-checks")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"adaptmit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to one exit code
        log.debug("runtime failure", exc_info=True)
        print(f"adaptmit: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
