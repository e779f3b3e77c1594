"""Command-line entry point: ``run``, ``compare`` and ``export-dataset``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

from trustfed.config import STRATEGIES, ConfigError, parse_adversaries, parse_config
from trustfed.dataset import to_csv_text
from trustfed.federation import (
    CLIENT_LOG_COLUMNS,
    ROUND_LOG_COLUMNS,
    ExperimentResult,
    prepare_data,
    run_experiment,
)

SUMMARY_COLUMNS = (
    "strategy",
    "final_accuracy",
    "final_macro_f1",
    "mean_trust",
    "total_omissions",
    "total_readmissions",
    "mean_active",
)


def atomic_write(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def round_log_csv(result: ExperimentResult) -> str:
    return _csv_text(ROUND_LOG_COLUMNS, (e.row() for e in result.logs))


def client_log_csv(result: ExperimentResult) -> str:
    rows = (
        (e.round, c.client_id, c.raw_trust, c.smoothed_trust, c.status, c.behavior)
        for e in result.logs
        for c in e.clients
    )
    return _csv_text(CLIENT_LOG_COLUMNS, rows)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def report_json(report: dict) -> str:
    return json.dumps(_json_safe(report), indent=2, sort_keys=True) + "\n"


def write_result(out: Path, result: ExperimentResult, prefix: str = "") -> list[Path]:
    paths = [out / f"{prefix}rounds.csv", out / f"{prefix}clients.csv", out / f"{prefix}report.json"]
    for path, text in zip(paths, (round_log_csv(result), client_log_csv(result), report_json(result.report))):
        atomic_write(path, text)
    return paths


def summary_csv(results: list[ExperimentResult]) -> str:
    ordered = sorted(results, key=lambda r: (-r.report["summary"]["final_macro_f1"], r.strategy))
    rows = []
    for r in ordered:
        s = r.report["summary"]
        rows.append([r.strategy] + [float("nan") if s[k] is None else s[k] for k in SUMMARY_COLUMNS[1:]])
    return _csv_text(SUMMARY_COLUMNS, rows)


def _omitted_counts(logs) -> list[int]:
    total, out = 0, []
    for e in logs:
        total += len(e.omitted_now) - len(e.readmitted_now)
        out.append(total)
    return out


def write_plots(out: Path, results: list[ExperimentResult]) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed ids and no timestamp keep the SVG bytes reproducible
    plt.rcParams["svg.hashsalt"] = "trustfed"
    plt.rcParams["svg.fonttype"] = "none"

    def variance(ax):
        for r in results:
            # raw score variance for the baseline, smoothed variance for filtering strategies
            smoothed = not all(math.isnan(e.trust_variance) for e in r.logs)
            values = [e.trust_variance if smoothed else e.sigma2 for e in r.logs]
            ax.plot([e.round for e in r.logs], values, label=f"{r.strategy} ({'smoothed' if smoothed else 'raw'})")
        ax.set_ylabel("trust score variance")

    def trust_and_omissions(ax):
        twin = ax.twinx()
        for r in results:
            rounds = [e.round for e in r.logs]
            (line,) = ax.plot(rounds, [e.mean_trust for e in r.logs], label=r.strategy)
            twin.plot(rounds, _omitted_counts(r.logs), linestyle="--", color=line.get_color())
        ax.set_ylabel("mean smoothed trust (solid)")
        twin.set_ylabel("omitted clients (dashed)")

    def accuracy(ax):
        for r in results:
            ax.plot([e.round for e in r.logs], [e.test.accuracy for e in r.logs], label=r.strategy)
        ax.set_ylabel("test accuracy")

    specs = [
        ("trust_variance.svg", "Variance of client trust scores per round", variance),
        ("trust_and_omissions.svg", "Average trust and omitted clients per round", trust_and_omissions),
        ("test_accuracy.svg", "Global test accuracy per round", accuracy),
    ]
    paths = []
    for name, title, draw in specs:
        fig, ax = plt.subplots(figsize=(7, 4))
        draw(ax)
        ax.set_title(title)
        ax.set_xlabel("round")
        ax.legend(fontsize="small")
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
        path = out / name
        atomic_write(path, buf.getvalue())
        paths.append(path)
    return paths


def _overrides(args) -> dict:
    out = {}
    if args.paper_scale:
        out["paper_scale"] = "true"
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    flag_keys = {"seed": "seed", "rounds": "rounds", "clients": "clients", "out": "output.dir"}
    for flag, key in flag_keys.items():
        value = getattr(args, flag)
        if value is not None:
            out[key] = str(value)
    if getattr(args, "strategy", None):
        out["strategy"] = args.strategy
    if args.adversaries:
        out.update(parse_adversaries(args.adversaries))
    return out


def cmd_run(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    result = run_experiment(cfg)
    for path in write_result(Path(cfg.out), result):
        print(path)
    return 0


def cmd_compare(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    kinds = [k.strip() for k in args.strategies.split(",") if k.strip()]
    if len(kinds) < 2:
        raise ConfigError("compare needs at least two strategies")
    for k in kinds:
        if k not in STRATEGIES:
            raise ConfigError(f"strategy: unknown strategy {k!r}")
    out = Path(cfg.out)
    data = prepare_data(cfg)
    results = [run_experiment(cfg, kind, data) for kind in kinds]
    paths = []
    for r in results:
        paths += write_result(out, r, prefix=f"{r.strategy}_")
    summary = out / "summary.csv"
    atomic_write(summary, summary_csv(results))
    paths.append(summary)
    paths += write_plots(out, results)
    for path in paths:
        print(path)
    return 0


def cmd_export(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    data = prepare_data(cfg)
    path = Path(cfg.out) / "dataset.csv"
    atomic_write(path, to_csv_text(data.raw))
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trustfed", description="Trust-filtered federated learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--rounds", type=int)
        p.add_argument("--clients", type=int)
        p.add_argument("--adversaries", help="COUNT[:BEHAVIOR[:PARAM]], e.g. 2:label_flip:1.0")
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        p.add_argument("--paper-scale", action="store_true", help="100 clients, 500 rounds")

    run = sub.add_parser("run", help="run one strategy")
    common(run)
    run.add_argument("--strategy", choices=STRATEGIES)
    run.set_defaults(func=cmd_run)

    compare = sub.add_parser("compare", help="run several strategies on the same data")
    common(compare)
    compare.add_argument("--strategies", default=",".join(STRATEGIES))
    compare.set_defaults(func=cmd_compare)

    export = sub.add_parser("export-dataset", help="write the generated spectral dataset as CSV")
    common(export)
    export.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, KeyError, FloatingPointError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"trustfed: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
