"""Command-line front end: ``pfopt {run,compare,sweep,list}``.

Exit codes: 0 on success, 2 on usage errors, 1 on runtime errors. Human
summaries go to stdout, diagnostics to stderr, data to ``--out`` files.
"""

from __future__ import annotations

import argparse
import ast
import csv
import dataclasses
import json
import sys
from typing import Optional, Sequence

import numpy as np

from . import harness
from .harness import QUANTILE_ROWS, McStudy, SweepStudy
from .objective import CATALOG_NAMES, catalog
from .pfo import PfoConfig
from .pso import PsoConfig

COMPARE_TARGET = 1e-8


class UsageError(Exception):
    pass


def _field_names(cls) -> list[str]:
    return [f.name for f in dataclasses.fields(cls)]


def _defaults_text() -> str:
    lines = ["config fields (--set key=value); library default, then per-objective table values:", ""]
    for cls, table in ((PfoConfig, harness.pfo_defaults), (PsoConfig, harness.pso_defaults)):
        lines.append(f"  {cls.__name__}:")
        for f in dataclasses.fields(cls):
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            per = []
            for name in CATALOG_NAMES:
                row = table(name)
                if f.name in row:
                    per.append(f"{name}={row[f.name]}")
            extra = f"  [{', '.join(per)}]" if per else ""
            lines.append(f"    {f.name} = {default!r}{extra}")
        lines.append("")
    return "\n".join(lines)


def parse_value(text: str):
    """Literal for ``--set`` values: numbers, lists, booleans, ``none``; otherwise the raw string."""
    low = text.strip().lower()
    if low in ("true", "on", "yes"):
        return True
    if low in ("false", "off", "no"):
        return False
    if low in ("none", "null"):
        return None
    try:
        return ast.literal_eval(text.strip())
    except (ValueError, SyntaxError):
        return text.strip()


def parse_assignments(items: Sequence[str], flag: str, allowed: Sequence[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"{flag}: expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in allowed:
            raise UsageError(f"{flag}: unknown key {key!r}; allowed: {', '.join(allowed)}")
        out[key] = parse_value(value)
    return out


def read_config_file(path: str) -> list[str]:
    """``key = value`` lines; blank lines and ``#`` comments are skipped."""
    items = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                key, sep, value = line.partition("=")
                if not sep:
                    raise UsageError(f"--config: malformed line {line!r}")
                items.append(f"{key.strip()}={value.strip()}")
    return items


def parse_threads(text: str) -> Optional[int]:
    if text == "max":
        return None
    try:
        n = int(text)
    except ValueError:
        raise UsageError(f"--threads: expected an integer or 'max', got {text!r}") from None
    if n < 1:
        raise UsageError("--threads: must be at least 1")
    return n


def parse_fes(text: str) -> list[int]:
    try:
        cps = [int(float(v)) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--fes: expected comma-separated integers, got {text!r}") from None
    if not cps or min(cps) <= 0:
        raise UsageError("--fes: checkpoints must be positive")
    return cps


def _check_objective(name: str) -> str:
    if name not in CATALOG_NAMES:
        raise UsageError(f"--objective: unknown objective {name!r}; choose from {', '.join(CATALOG_NAMES)}")
    return name


def _build_config(objective: str, optimizer: str, items: list[str], flag: str, **forced):
    cls = PfoConfig if optimizer == "pfo" else PsoConfig
    over = parse_assignments(items, flag, _field_names(cls))
    try:
        return harness.default_config(objective, optimizer, **{**forced, **over})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{flag}: {exc}") from None


def _fmt_config(cfg) -> str:
    d = cfg.as_dict()
    return " ".join(f"{k}={d[k]!r}" for k in d)


def _file_items(args) -> list[str]:
    return read_config_file(args.config) if args.config else []


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------


def cmd_list(args) -> int:
    for obj in catalog():
        lo, hi = obj.domain.lower, obj.domain.upper
        dom = " x ".join(f"[{a:g}, {b:g}]" for a, b in zip(lo, hi))
        if obj.known_optimum is None:
            opt = "x*=? y*=?"
        else:
            xs, ys = obj.known_optimum
            opt = "x*=(" + ", ".join(f"{v:.6g}" for v in xs) + f") y*={ys:.6g}"
        noise = obj.noise.kind if obj.noise.kind == "none" else f"{obj.noise.kind}(R={obj.noise.R:g})"
        print(f"{obj.name:13s} n={obj.dim} {obj.extremum} domain={dom} {opt} noise={noise}")
    return 0


def cmd_run(args) -> int:
    name = _check_objective(args.objective)
    items = _file_items(args) + (args.set or [])
    cfg = dataclasses.replace(_build_config(name, args.optimizer, items, "--set"), seed=args.seed)
    threads = parse_threads(args.threads)
    study = McStudy(name, args.optimizer, cfg, n_trials=args.trials, base_seed=args.seed)
    print(f"# run objective={name} optimizer={args.optimizer} trials={args.trials} seed={args.seed}")
    print(f"# config {_fmt_config(cfg)}")
    harness.run_mc(study, threads)
    errs_x = harness.final_position_errors(study)
    errs_y = harness.final_errors(study)
    print(f"iterations={len(study.rmse_x)} final_fes={int(study.fes[-1])}")
    print(f"final rmse_x={study.rmse_x[-1]:.6g} rmse_y={study.rmse_y[-1]:.6g}")
    print(f"median |x-x*|={np.median(errs_x):.6g} median |h(x)-y*|={np.median(errs_y):.6g}")
    if args.out:
        harness.export(study, args.format, args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_compare(args) -> int:
    name = _check_objective(args.objective)
    items = _file_items(args) + (args.set or [])
    pfo_cfg = _build_config(name, "pfo", items, "--set", estimate_mode="map",
                            target_error=COMPARE_TARGET, seed=args.seed)
    pso_cfg = _build_config(name, "pso", args.pso_set or [], "--pso-set",
                            target_error=COMPARE_TARGET, seed=args.seed)
    cps = parse_fes(args.fes)
    threads = parse_threads(args.threads)
    print(f"# compare objective={name} trials={args.trials} seed={args.seed} fes={','.join(map(str, cps))}")
    print(f"# pfo {_fmt_config(pfo_cfg)}")
    print(f"# pso {_fmt_config(pso_cfg)}")
    tables = {}
    for opt, cfg in (("pso", pso_cfg), ("pfo", pfo_cfg)):
        study = harness.run_mc(McStudy(name, opt, cfg, n_trials=args.trials, base_seed=args.seed), threads)
        tables[opt] = harness.quantile_table(study, cps)
    print(f"{'FES':>8s}  {'criterion':15s} {'PSO':>12s} {'PFO':>12s}")
    rows = []
    for j, cp in enumerate(cps):
        for i, label in enumerate(QUANTILE_ROWS):
            a, b = tables["pso"].values[j, i], tables["pfo"].values[j, i]
            print(f"{cp:>8d}  {label:15s} {a:12.4f} {b:12.4f}")
            rows.append((cp, label, a, b))
    if args.out:
        _write_compare(rows, args.format, args.out)
        print(f"wrote {args.out}")
    return 0


def _write_compare(rows, fmt: str, path: str) -> None:
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fes", "criterion", "pso", "pfo"])
            w.writerows([[cp, label, repr(float(a)), repr(float(b))] for cp, label, a, b in rows])
    else:
        recs = [{"fes": cp, "criterion": label, "pso": float(a), "pfo": float(b)} for cp, label, a, b in rows]
        with open(path, "w", newline="") as fh:
            json.dump({"kind": "compare", "rows": recs}, fh, indent=1)
            fh.write("\n")


def cmd_sweep(args) -> int:
    name = _check_objective(args.objective)
    items = _file_items(args)
    file_ranges = [i for i in items if i.startswith("range.")]
    plain = [i for i in items if not i.startswith("range.")]
    base = _build_config(name, "pfo", plain + (args.set or []), "--set")
    ranges = dict(harness.DEFAULT_RANGES)
    for item in [r[len("range."):] for r in file_ranges] + (args.range or []):
        key, sep, span = item.partition("=")
        lo, colon, hi = span.partition(":")
        if not sep or not colon:
            raise UsageError(f"--range: expected key=lo:hi, got {item!r}")
        if key not in harness.DEFAULT_RANGES and key not in ("sigma_x", "sigma_y"):
            raise UsageError(f"--range: unknown key {key!r}")
        try:
            ranges[key] = (float(lo), float(hi))
        except ValueError:
            raise UsageError(f"--range: non-numeric bounds in {item!r}") from None
    try:
        study = SweepStudy(name, ranges, n_samples=args.samples, base_seed=args.seed, base_config=base)
    except ValueError as exc:
        raise UsageError(f"--range: {exc}") from None
    print(f"# sweep objective={name} samples={args.samples} seed={args.seed}")
    print("# ranges " + " ".join(f"{k}={lo!r}:{hi!r}" for k, (lo, hi) in sorted(ranges.items())))
    harness.run_sweep(study, parse_threads(args.threads))
    if study.rows:
        e = np.array([r.e for r in study.rows])
        best = study.rows[int(np.argmin(e))]
        print(f"samples={len(study.rows)} median e={np.median(e):.6g} best e={best.e:.6g} (sample {best.sample})")
    else:
        print("samples=0")
    if args.out:
        harness.export(study, args.format, args.out)
        print(f"wrote {args.out}")
    return 0


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="pfopt", description="Particle filter-based optimization experiments.",
                     epilog=_defaults_text(), formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, trials: int):
        p.add_argument("--objective", required=True, help="catalog name (see `pfopt list`)")
        p.add_argument("--trials", type=int, default=trials, help="Monte-Carlo trials (default %(default)s)")
        p.add_argument("--seed", type=int, default=0, help="base seed; trial t uses seed+t")
        p.add_argument("--threads", default="max", help="worker threads, integer or 'max'")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
        p.add_argument("--config", help="file of 'key = value' lines; --set wins")
        p.add_argument("--out", help="output file")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("run", help="Monte-Carlo study of one optimizer", epilog=_defaults_text(),
                       formatter_class=fmt)
    common(p, 10)
    p.add_argument("--optimizer", choices=("pfo", "pso"), default="pfo")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="PFO (MAP) vs PSO quantile table at FES checkpoints",
                       epilog=_defaults_text(), formatter_class=fmt)
    common(p, 25)
    p.add_argument("--fes", default="1000,10000", help="comma-separated FES checkpoints")
    p.add_argument("--pso-set", action="append", metavar="KEY=VALUE", help="PSO config override")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="random PFO parameter sweep", epilog=_defaults_text(),
                       formatter_class=fmt)
    common(p, 1)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--range", action="append", metavar="KEY=LO:HI",
                   help=f"sampling range; keys {', '.join(harness.DEFAULT_RANGES)}, sigma_x, sigma_y")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("list", help="print the objective catalog")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command in ("run", "compare") and args.trials < 1:
            raise UsageError("--trials: must be at least 1")
        if getattr(args, "samples", 0) < 0:
            raise UsageError("--samples: must be nonnegative")
        return args.func(args)
    except UsageError as exc:
        print(f"pfopt: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        print(f"pfopt: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
