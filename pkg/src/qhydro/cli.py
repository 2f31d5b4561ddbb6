"""Command-line front end: ``qhydro run | list | report``.

Exit codes: 0 all checks pass, 1 a tolerance failed (or a report input is
incomplete), 2 schema error, 3 numerical abort (norm drift, time step).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from collections import defaultdict
from pathlib import Path

from . import __version__
from .scenario import SchemaError, bundled_ids, execute, load, load_raw, write_bundle
from .verify import EquationId

EQUATIONS = {e.value for e in EquationId}

OUT_ENV = "QHYDRO_OUT"
EXIT_OK, EXIT_FAIL, EXIT_SCHEMA, EXIT_ABORT = 0, 1, 2, 3


def _emit_json(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _out_root(args, scenario_output: str | None) -> Path:
    if args.out:
        return Path(args.out)
    if scenario_output:
        return Path(scenario_output)
    return Path(os.environ.get(OUT_ENV, "runs"))


def cmd_run(args) -> int:
    try:
        sc = load(args.scenario, args.override)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except FileNotFoundError as exc:
        print(f"schema error: scenario: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        result = execute(sc, threads=max(1, args.threads))
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    out = write_bundle(result, _out_root(args, sc.output) / sc.id)
    if args.json:
        _emit_json({"scenario": sc.id, "exit_code": result.exit_code, "bundle": str(out),
                    "abort": result.abort, "checks": [c.summary() for c in result.checks]})
    else:
        print(f"scenario {sc.id}: bundle written to {out}")
        if result.abort:
            print(f"  NUMERICAL ABORT: {result.abort}")
        for c in result.checks:
            status = {True: "pass", False: "FAIL", None: "info"}[c.passed]
            print(f"  [{status}] {c.name}")
            for m in c.messages:
                print(f"         {m}")
    return result.exit_code


def cmd_list(args) -> int:
    rows = []
    for sid in bundled_ids():
        desc = str(load_raw(sid).get("description", ""))
        if args.pattern and args.pattern not in sid and args.pattern not in desc:
            continue
        rows.append({"id": sid, "description": desc})
    if args.json:
        _emit_json(rows)
    else:
        width = max([len(r["id"]) for r in rows] + [2])
        print(f"{'id':<{width}}  description")
        for r in rows:
            print(f"{r['id']:<{width}}  {r['description']}")
    return EXIT_OK


# ------------------------------------------------------------------ report

def _find_bundles(root: Path) -> list[Path]:
    if (root / "bundle.json").is_file():
        return [root]
    if not root.is_dir():
        return []
    return sorted(p.parent for p in root.glob("*/bundle.json"))


def _read_csv(path: Path) -> list[dict]:
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _fmt(v: float | None) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "-"
    return f"{v:.3e}" if abs(v) < 1e-2 or abs(v) >= 1e4 else f"{v:.4f}"


def _convergence(rows: list[dict]) -> dict[str, list[dict]]:
    """Residual rows per equation with observed orders from consecutive levels."""
    by_eq: dict[str, list[dict]] = defaultdict(list)
    for r in rows:
        by_eq[r["equation"]].append(r)
    out = {}
    for eq, rs in by_eq.items():
        rs = sorted(rs, key=lambda r: int(r["level"]))
        table = []
        for i, r in enumerate(rs):
            entry = {k: float(r[k]) for k in ("dx", "dt", "L1", "L2", "Linf")}
            entry.update(level=int(r["level"]), n=int(r["n"]), order_L2=None, order_Linf=None)
            if i > 0:
                prev = table[-1]
                ratio = math.log(prev["dx"] / entry["dx"])
                for k in ("L2", "Linf"):
                    a, b = prev[k], entry[k]
                    entry[f"order_{k}"] = math.log(a / b) / ratio if a > 0 and b > 0 else float("nan")
            table.append(entry)
        out[eq] = table
    return out


def _report_one(bundle_dir: Path, long_rows: list[dict], lines: list[str]) -> bool:
    bundle = json.loads((bundle_dir / "bundle.json").read_text(encoding="utf-8"))
    missing = [a for a in bundle.get("artifacts", []) if not (bundle_dir / a).is_file()]
    sid = bundle["scenario"].get("id", bundle_dir.name)
    if missing:
        lines.append(f"{sid}: incomplete bundle in {bundle_dir}; missing artifacts: {', '.join(missing)}")
        return False
    prov = bundle.get("provenance", {})
    lines.append(f"== {sid}  status={bundle['status']}  scheme={prov.get('scheme')}  "
                 f"pi_form={prov.get('pi_form')}  threads={prov.get('threads')}")
    if bundle.get("abort"):
        lines.append(f"   numerical abort: {bundle['abort']}")
    for eq, table in _convergence(_read_csv(bundle_dir / "residuals.csv")).items():
        lines.append(f"   {eq}")
        lines.append(f"     {'lvl':>3} {'n':>6} {'dx':>10} {'L2':>10} {'Linf':>10} {'ord L2':>7} {'ord Linf':>8}")
        for e in table:
            lines.append(f"     {e['level']:>3} {e['n']:>6} {_fmt(e['dx']):>10} {_fmt(e['L2']):>10} "
                         f"{_fmt(e['Linf']):>10} {_fmt(e['order_L2']):>7} {_fmt(e['order_Linf']):>8}")
            for k in ("L1", "L2", "Linf", "order_L2", "order_Linf"):
                if e[k] is not None:
                    long_rows.append({"scenario_id": sid, "source": "residuals", "check": eq,
                                      "level": e["level"], "metric": k, "value": e[k]})
    metrics: dict[str, dict[str, float]] = defaultdict(dict)
    for r in _read_csv(bundle_dir / "metrics.csv"):
        metrics[r["check"]][r["metric"]] = float(r["value"])
        long_rows.append({"scenario_id": sid, "source": "metrics", "check": r["check"], "level": "",
                          "metric": r["metric"], "value": float(r["value"])})
    for c in bundle.get("checks", []):
        status = {True: "pass", False: "FAIL", None: "info"}[c["passed"]]
        lines.append(f"   [{status}] {c['name']}")
        m = metrics.get(c["name"], {})
        if c["name"] == "literal_forms":
            for key, val in sorted(m.items()):
                if key.endswith("_literal"):
                    base = key[: -len("_literal")]
                    ref = m.get(base + "_standard", m.get(base + "_derived"))
                    flag = "  <-- literal form inconsistent" if ref is not None and val > 10 * ref else ""
                    lines.append(f"       {base}: consistent {_fmt(ref)}  literal {_fmt(val)}{flag}")
        elif c["name"] == "permutation":
            for key, val in sorted(m.items()):
                if key.endswith("swap_defect_max") or key.endswith("delta_Linf_max") or key.endswith("linearity_rel"):
                    lines.append(f"       {key} = {_fmt(val)}")
        elif c["name"] not in EQUATIONS:
            for key, val in sorted(m.items()):
                lines.append(f"       {key} = {_fmt(val)}")
        for msg in c.get("messages", []):
            lines.append(f"       note: {msg}")
    for art in bundle.get("artifacts", []):
        if art.startswith("deviation"):
            rows = _read_csv(bundle_dir / art)
            l1 = [float(r["L1"]) for r in rows]
            if l1:
                lines.append(f"   {art}: {len(rows)} samples, L1 first {_fmt(l1[0])}, last {_fmt(l1[-1])}, "
                             f"max {_fmt(max(l1))}")
    return True


def cmd_report(args) -> int:
    root = Path(args.bundle)
    bundles = _find_bundles(root)
    if not bundles:
        print(f"no bundle found in {root}", file=sys.stderr)
        return EXIT_FAIL
    long_rows: list[dict] = []
    lines: list[str] = []
    ok = True
    for b in bundles:
        ok &= _report_one(b, long_rows, lines)
    out_csv = Path(args.out) if args.out else (bundles[0] if len(bundles) == 1 else root) / "report.csv"
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with out_csv.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, fieldnames=["scenario_id", "source", "check", "level", "metric", "value"])
        wr.writeheader()
        for r in long_rows:
            wr.writerow({**r, "value": repr(r["value"])})
    if args.json:
        _emit_json({"bundles": [str(b) for b in bundles], "complete": ok, "csv": str(out_csv), "lines": lines})
    else:
        print("\n".join(lines))
        print(f"long-format CSV: {out_csv}")
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qhydro", description="Quantum hydrodynamics residual checks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run a scenario (file path or bundled id).")
    run.add_argument("scenario")
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                     help="dotted key into the scenario, e.g. evolution.dt_over_dx=0.05 (repeatable)")
    run.add_argument("--out", default=None, metavar="DIR",
                     help=f"output root (default: scenario 'output', ${OUT_ENV}, or ./runs)")
    run.add_argument("--threads", type=int, default=1, metavar="N", help="maximum concurrent checks")
    run.add_argument("--json", action="store_true")
    run.set_defaults(func=cmd_run)

    lst = sub.add_parser("list", help="List bundled scenarios.")
    lst.add_argument("pattern", nargs="?", default=None, help="substring filter on id/description")
    lst.add_argument("--json", action="store_true")
    lst.set_defaults(func=cmd_list)

    rep = sub.add_parser("report", help="Summarize a run bundle (or a directory of bundles).")
    rep.add_argument("bundle")
    rep.add_argument("--out", default=None, metavar="CSV", help="long-format CSV path (default: <bundle>/report.csv)")
    rep.add_argument("--json", action="store_true")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
