"""Command-line scenario runner.

    imse run <scenario.json> [--out DIR] [--bits] [--threads N]
    imse sweep <scenario.json> --param NAME --values v1,v2,... [--out DIR]
    imse builtins

Exit codes: 0 success, 2 invariant/sandwich violation, 1 error — so CI can
tell "the math failed" apart from "the tool failed".  `--threads` (or the
IMSE_THREADS environment variable) affects speed, never results.
"""

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import time

from . import __version__
from .errors import ImseError, SchemaError, UnknownParameter
from .parallel import resolve_threads
from .scenarios import (
    LN2,
    convert_rates,
    get_builtin,
    list_builtins,
    run_validated,
    scenario_hash,
    validate_scenario,
)


def _atomic_write(path, data):
    """Write bytes via a temp file + rename so readers never see partial files."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".imse-tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_bytes(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, float) else v
                         for v in row])
    return buf.getvalue().encode()


def load_scenario(path):
    if isinstance(path, dict):
        return validate_scenario(path)
    try:
        with open(path) as fh:
            scenario = json.load(fh)
    except FileNotFoundError:
        builtin_names = {b["name"] for b in list_builtins()}
        if str(path) in builtin_names:
            return validate_scenario(get_builtin(str(path)))
        raise
    except json.JSONDecodeError as exc:
        raise SchemaError("<file>", f"invalid JSON: {exc}") from exc
    return validate_scenario(scenario)


def run_scenario(path, out_dir=".", bits=False, threads=1):
    """Execute one scenario and write its outputs atomically.

    Returns the run record dict (the contents of report.json).  Re-running an
    identical scenario yields an identical record except ``wall_time_s``.
    """
    scenario = load_scenario(path)
    start = time.perf_counter()
    results, ledger_rows, sandwich_rows, violations = run_validated(
        scenario, threads=resolve_threads(threads)
    )
    wall = time.perf_counter() - start

    units = "bits/step" if bits else "nats/step"
    if bits:
        results = convert_rates(results, 1.0 / LN2)
        if sandwich_rows:
            sandwich_rows = [
                tuple(v / LN2 if isinstance(v, float) else v for v in row)
                for row in sandwich_rows
            ]
    record = {
        "schema_version": scenario["schema_version"],
        "scenario": scenario,
        "scenario_hash": scenario_hash(scenario),
        "tool_version": __version__,
        "units": units,
        "results": results,
        "violations": violations,
        "wall_time_s": wall,
    }

    outputs = scenario.get("outputs", ["report_json", "ledger_csv"])
    if "report_json" in outputs:
        blob = json.dumps(record, sort_keys=True, indent=2).encode() + b"\n"
        _atomic_write(os.path.join(out_dir, "report.json"), blob)
    if "ledger_csv" in outputs and ledger_rows is not None:
        _atomic_write(
            os.path.join(out_dir, "ledger.csv"),
            _csv_bytes(
                ("step", "cmmse", "pmmse", "stderr_cmmse", "stderr_pmmse"),
                ledger_rows,
            ),
        )
    if "sandwich_csv" in outputs and sandwich_rows is not None:
        _atomic_write(
            os.path.join(out_dir, "sandwich.csv"),
            _csv_bytes(("lower", "info", "upper", "verdict"), sandwich_rows),
        )
    return record


def _set_path(scenario, dotted, value):
    parts = dotted.split(".")
    node = scenario
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise UnknownParameter(f"no parameter {dotted!r} in scenario")
        node = node[p]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise UnknownParameter(f"no parameter {dotted!r} in scenario")
    node[parts[-1]] = value


def _coerce_value(raw, template):
    if isinstance(template, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(template, int) and not isinstance(template, bool):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    return raw


def sweep(path, parameter, values, out_dir=".", bits=False, threads=1):
    """Run the scenario once per parameter value; one aggregated CSV row each."""
    base = load_scenario(path)
    probe = base
    for p in parameter.split("."):
        if not isinstance(probe, dict) or p not in probe:
            raise UnknownParameter(f"no parameter {parameter!r} in scenario")
        probe = probe[p]

    rows = []
    columns = [parameter]
    for raw in values:
        scenario = json.loads(json.dumps(base))
        value = _coerce_value(raw, probe) if isinstance(raw, str) else raw
        _set_path(scenario, parameter, value)
        if parameter == "epsilon":
            # each sweep row reports its own epsilon's block structure
            scenario.pop("epsilon_sweep", None)
        validate_scenario(scenario)
        results, _, _, violations = run_validated(
            scenario, threads=resolve_threads(threads)
        )
        if bits:
            results = convert_rates(results, 1.0 / LN2)
        flat = {"violations": len(violations)}
        for k, v in results.items():
            if isinstance(v, (int, float, str, bool)) or v is None:
                flat[k] = v
        for k in flat:
            if k not in columns:
                columns.append(k)
        rows.append((value, flat))

    table = []
    for value, flat in rows:
        table.append([value] + [flat.get(k, "") for k in columns[1:]])
    blob = _csv_bytes(tuple(columns), table)
    _atomic_write(os.path.join(out_dir, "sweep.csv"), blob)
    return columns, table


def build_parser():
    parser = argparse.ArgumentParser(
        prog="imse",
        description="Total-information-rate trade-off computations "
                    "(Riccati rates, MMSE sandwich bounds, Gaussian oracles).",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (IMSE_THREADS fallback; "
                             "affects speed, never results)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario file (or builtin name)")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", default=".", help="output directory")
    p_run.add_argument("--bits", action="store_true",
                       help="emit bits/step instead of nats/step")

    p_sweep = sub.add_parser("sweep", help="run a scenario over parameter values")
    p_sweep.add_argument("scenario")
    p_sweep.add_argument("--param", required=True)
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values")
    p_sweep.add_argument("--out", default=".")
    p_sweep.add_argument("--bits", action="store_true")

    sub.add_parser("builtins", help="list bundled scenarios")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    threads = resolve_threads(args.threads)
    try:
        if args.command == "run":
            record = run_scenario(args.scenario, out_dir=args.out,
                                  bits=args.bits, threads=threads)
            for violation in record["violations"]:
                print(f"VIOLATION: {violation}", file=sys.stderr)
            return 2 if record["violations"] else 0
        if args.command == "sweep":
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            if not values:
                raise SchemaError("values", "no sweep values given")
            sweep(args.scenario, args.param, values, out_dir=args.out,
                  bits=args.bits, threads=threads)
            return 0
        if args.command == "builtins":
            for entry in list_builtins():
                print(f"{entry['name']}: {entry['description']}")
            return 0
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # report-construction ordering checks: math failed, not the tool
        print(f"VIOLATION: {exc}", file=sys.stderr)
        return 2
    except ImseError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
