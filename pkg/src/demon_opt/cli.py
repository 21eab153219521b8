"""``demon-opt`` command line: train, grid, verify, schedule, plot.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from . import harness, verify
from .plotting import SchemaError, lines_svg, svg_from_csv
from .schedules import Kind, ScheduleSpec, Target, schedule_eval

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
SEED_ENV = "DEMON_OPT_SEED"
FAULT_ENV = "DEMON_OPT_INJECT_FAULT"


class UsageError(Exception):
    pass


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _floats(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad number list {text!r}: {exc}") from exc
    if not values:
        raise UsageError(f"empty value list {text!r}")
    return values


def apply_overrides(record: dict[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    """Apply ``key=value`` overrides with dotted paths; later ones win.

    ``lr`` and ``momentum`` are shorthands for the learning-rate schedule's
    initial value and for whichever field supplies the momentum.
    """
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        value = _parse_value(raw)
        if key == "lr":
            key = "lr_schedule.init_value"
        elif key == "momentum":
            opt_name = record.get("optimizer", "")
            key = "beta_init" if str(opt_name).startswith("demon") else "momentum_schedule.init_value"
        node = record
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise UsageError(f"override path {key!r}: {p!r} is not a record")
            node = node[p]
        node[parts[-1]] = value
    return record


def load_config(path: str | None, overrides: Sequence[str] = ()) -> harness.RunConfig:
    if not path:
        raise UsageError("--config is required")
    try:
        record = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(record, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    record = apply_overrides(record, overrides)
    if os.environ.get(SEED_ENV):
        record["seed"] = int(os.environ[SEED_ENV])
    try:
        return harness.RunConfig.from_dict(record)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid config {path}: {exc}") from exc


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set)
    trace = harness.run_training(config)
    out = _out_dir(args.out)
    harness.emit_results(trace, out / "trace.csv")
    summary = {
        "config": config.to_dict(),
        "lr": config.lr_schedule.init_value,
        "momentum": config.momentum,
        "T": config.total_iterations,
        "rows": len(trace),
        "diverged": trace.diverged,
        "final_loss": harness._json_float(trace.loss[-1]),
        "final_val": harness._json_float(harness.final_val(trace)),
        "best_val": harness._json_float(harness.best_val(trace)),
    }
    _write(out / "summary.jsonl", json.dumps(summary, sort_keys=True) + "\n")
    _write(out / "state.json", trace.meta["final_state"].dumps() + "\n")
    status = "diverged" if trace.diverged else "completed"
    print(f"{status}: {len(trace)} rows, final loss {trace.loss[-1]!r} -> {out / 'trace.csv'}")
    return EXIT_OK


def cmd_grid(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set)
    lrs = _floats(args.lr_grid) if args.lr_grid else harness.lr_grid(config.lr_schedule.init_value)
    moms = _floats(args.momentum_grid) if args.momentum_grid else list(harness.DEFAULT_MOMENTUM_GRID)
    seeds = [int(s) for s in _floats(args.seeds)] if args.seeds else [config.seed]
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    result = harness.grid_search(config, lrs, moms, seeds, workers=args.workers)
    out = _out_dir(args.out)
    harness.emit_results(result, out / "grid.csv")
    harness.emit_results(result, out / "grid.jsonl", format="jsonl")
    if args.heatmap:
        _render_plot(out / "grid.csv", "heatmap", out / "heatmap.svg")
    try:
        lr, m = harness.best_cell(result)
        print(f"best cell lr={lr!r} momentum={m!r}; cells within 110%: {harness.cells_within(result)}")
    except ValueError:
        print("every cell diverged")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    fault = float(os.environ.get(FAULT_ENV, "0") or 0)
    try:
        reports = verify.run_suite(args.suite, fault=fault)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _out_dir(args.out)
    _write(out / "checks.jsonl", "".join(r.to_json() + "\n" for r in reports))
    width = max(len(r.check_name) for r in reports)
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.check_name:<{width}}  rel={r.max_rel_error:.3e}  {r.witness}")
    failed = sum(not r.passed for r in reports)
    print(f"{len(reports) - failed}/{len(reports)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


SPEC_FIELDS = {"kind", "init_value", "target", "min_value", "milestones", "factor", "k", "patience"}


def parse_spec(text: str) -> ScheduleSpec:
    """``kind=demon,init_value=0.9,target=momentum``; milestones separated by ``;``."""
    record: dict[str, Any] = {}
    for item in text.split(","):
        if "=" not in item:
            raise UsageError(f"schedule field {item!r} is not key=value")
        key, raw = (s.strip() for s in item.split("=", 1))
        if key not in SPEC_FIELDS:
            raise UsageError(f"unknown schedule field {key!r}")
        if key == "milestones":
            record[key] = [float(x) for x in raw.split(";") if x]
        elif key in ("kind", "target"):
            record[key] = raw
        elif key == "patience":
            record[key] = int(raw)
        else:
            record[key] = float(raw)
    if record.get("kind") in (Kind.DEMON.value, Kind.DEMON_THEORY.value):
        record.setdefault("target", Target.MOMENTUM.value)
    try:
        spec = ScheduleSpec.from_dict(record)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid schedule {text!r}: {exc}") from exc
    if spec.kind is Kind.PLATEAU:
        raise UsageError("plateau schedules depend on validation metrics and cannot be sampled")
    return spec


def cmd_schedule(args: argparse.Namespace) -> int:
    if not args.spec:
        raise UsageError("at least one --spec is required")
    specs = [parse_spec(s) for s in args.spec]
    if args.samples < 2 or args.T < 1:
        raise UsageError("--samples must be >= 2 and --T >= 1")
    ts = [i * args.T / (args.samples - 1) for i in range(args.samples)]
    labels = []
    for s in specs:
        base = f"{s.kind.value}_{s.target.value}"
        label, n = base, 2
        while label in labels:
            label, n = f"{base}_{n}", n + 1
        labels.append(label)
    columns = ["value"] if len(specs) == 1 else labels
    series: dict[str, list[tuple[float, float]]] = {lab: [] for lab in labels}
    rows = []
    for t in ts:
        t_eval = 1 if t == 0 else t
        vals = []
        for spec, lab in zip(specs, labels):
            v = schedule_eval(spec, t_eval if spec.kind is Kind.DEMON_THEORY else t, args.T)
            vals.append(v)
            series[lab].append((t, v))
        rows.append([repr(float(t))] + [repr(float(v)) for v in vals])
    out = _out_dir(args.out)
    with open(out / "schedule.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + columns)
        writer.writerows(rows)
    if args.svg:
        _write(out / "schedule.svg", lines_svg(series, title=f"schedules over T={args.T}"))
    print(f"wrote {len(rows)} samples to {out / 'schedule.csv'}")
    return EXIT_OK


def _render_plot(input_csv: Path, kind: str, output_svg: Path) -> None:
    try:
        with open(input_csv, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            rows = list(reader)
    except FileNotFoundError as exc:
        raise UsageError(f"input CSV not found: {input_csv}") from exc
    try:
        svg = svg_from_csv(header, rows, kind)
    except SchemaError as exc:
        raise UsageError(str(exc)) from exc
    _write(output_svg, svg)


def cmd_plot(args: argparse.Namespace) -> int:
    output = Path(args.out) if args.out else Path(args.input).with_suffix(".svg")
    if output.parent and not output.parent.exists():
        output.parent.mkdir(parents=True, exist_ok=True)
    _render_plot(Path(args.input), args.kind, output)
    print(f"wrote {output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="demon-opt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p: argparse.ArgumentParser, out_default: str) -> None:
        p.add_argument("--out", default=out_default, help="output directory")

    p = sub.add_parser("train", help="run one training configuration")
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    common(p, "out/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="lr x momentum grid sweep")
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--lr-grid")
    p.add_argument("--momentum-grid")
    p.add_argument("--seeds", help="comma-separated run seeds (default: config seed)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--heatmap", action=argparse.BooleanOptionalAction, default=True)
    common(p, "out/grid")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("verify", help="run verification checks")
    p.add_argument("--suite", default="all", choices=("all",) + verify.SUITES)
    common(p, "out/verify")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("schedule", help="sample schedules to CSV/SVG")
    p.add_argument("--spec", action="append", default=[], help="kind=...,init_value=...,target=...")
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--samples", type=int, default=101)
    p.add_argument("--svg", action="store_true", help="also write schedule.svg")
    common(p, "out/schedule")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("plot", help="render a trace, schedule or grid CSV as SVG")
    p.add_argument("input")
    p.add_argument("--kind", choices=("lines", "heatmap"), default="lines")
    p.add_argument("--out", help="output SVG path (default: input with .svg suffix)")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
