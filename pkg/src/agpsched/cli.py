"""Command-line front end: ``agpsched {metric,schedule,simulate,sweep}``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 capacity.
Every output file gets a ``<name>.meta.json`` sidecar holding the full
effective configuration and its hash.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import agp
from .dynamics import FIDELITY_MODES, evolve
from .errors import AgpSchedError, ValidationError
from .io_utils import atomic_write_text, config_hash, fmt, write_csv
from .models import interpolated_hamiltonian, lambda_derivative, load_model
from .scheduler import DEFAULT_GRID, MetricTable, Schedule, geodesic_schedule, linear_schedule, tabulate_metric

SUMMARY_FIELDS = ("schedule_kind", "d_A", "T", "dt", "relative_error", "final_fidelity", "norm_drift")


def _d_a(text: str):
    """``--d-a`` values: a positive integer, ``full`` or ``linear``."""
    if text in ("full", "linear"):
        return text
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, 'full' or 'linear', got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"d_A must be >= 1, got {value}")
    return value


def _dt(text: str):
    if text == "auto":
        return None
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive number or 'auto', got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"dt must be positive, got {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {value}")
    return value


def _write_meta(path: Path, config: dict) -> str:
    digest = config_hash(config)
    meta = {"config": config, "config_hash": digest}
    atomic_write_text(Path(str(path) + ".meta.json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return digest


def _d_value(d):
    return None if d == "full" else d


# -- subcommands ------------------------------------------------------------------


def cmd_metric(args) -> int:
    if args.d_a == "linear":
        raise ValidationError("metric needs a basis size: a positive integer or 'full'")
    model = load_model(args.model)
    d_A = _d_value(args.d_a)
    table = tabulate_metric(model, args.grid, d_A, workers=args.workers, refine=args.refine)
    out = Path(args.out)
    table.to_csv(out)
    config = {"command": "metric", "model": model.to_dict(), "d_A": args.d_a, "grid": args.grid, "refine": args.refine}
    digest = _write_meta(out, config)
    if d_A is None:
        interior = [(d, t) for lam, d, t in zip(table.lambdas, table.depths, table.terminations) if 0 < lam < 1]
        d_max, term = max(interior, key=lambda p: p[0])
        print(f"full basis: d_A = {d_max} odd operators (recurrence terminates at b_{term})")
    else:
        print(f"d_A = {d_A}")
    print(f"wrote {len(table.lambdas)} rows to {out} [config {digest}]")
    if args.dump_b:
        H = interpolated_hamiltonian(model, args.at)
        depth = None if d_A is None else 2 * d_A
        basis = agp.lanczos_expand(H, lambda_derivative(model), depth, lam=args.at)
        b = basis.effective_b()
        write_csv(args.dump_b, "i,b", ((i, v) for i, v in enumerate(b)))
        print(f"wrote {len(b)} Lanczos coefficients at lambda={args.at:g} to {args.dump_b}")
    return 0


def _build_schedule(model, d, T, grid, workers=1, metric_csv=None):
    if d == "linear":
        return linear_schedule(T)
    if metric_csv:
        table = MetricTable.from_csv(metric_csv, _d_value(d), model.tag)
    else:
        table = tabulate_metric(model, grid, _d_value(d), workers=workers)
    return geodesic_schedule(table, T)


def cmd_schedule(args) -> int:
    model = load_model(args.model)
    schedule = _build_schedule(model, args.d_a, args.t, args.grid, args.workers, args.metric)
    if schedule.kind == "linear":
        schedule = schedule.sampled(args.grid)
    out = Path(args.out)
    schedule.to_csv(out)
    config = {
        "command": "schedule",
        "model": model.to_dict(),
        "d_A": args.d_a,
        "T": args.t,
        "grid": args.grid,
        "metric": str(args.metric) if args.metric else None,
    }
    digest = _write_meta(out, config)
    print(f"wrote {len(schedule.knots_t)} knots to {out} [config {digest}]")
    return 0


def _summary_text(rec: dict) -> str:
    return json.dumps(rec, indent=2) + "\n"


def cmd_simulate(args) -> int:
    model = load_model(args.model)
    if args.schedule:
        schedule = Schedule.from_csv(args.schedule)
        source = str(args.schedule)
    else:
        if args.t is None:
            raise ValidationError("simulate needs --schedule or --t with --d-a")
        schedule = _build_schedule(model, args.d_a, args.t, args.grid, args.workers)
        source = f"d_A={args.d_a},T={args.t},grid={args.grid}"
    result = evolve(model, schedule, args.dt, record_fidelity=args.trace, fidelity_mode=args.fidelity_mode)
    prefix = Path(args.out)
    config = {
        "command": "simulate",
        "model": model.to_dict(),
        "schedule": source,
        "dt": "auto" if args.dt is None else args.dt,
        "fidelity_mode": args.fidelity_mode,
        "trace": args.trace,
    }
    rec = result.summary()
    if args.schedule:
        rec["schedule_kind"] = "external"
    elif args.d_a != "linear":
        rec["d_A"] = args.d_a
    rec["fidelity_mode"] = result.fidelity_mode
    rec["config_hash"] = config_hash(config)
    summary_path = prefix.with_name(prefix.name + "_summary.json")
    atomic_write_text(summary_path, _summary_text(rec))
    _write_meta(summary_path, config)
    if args.trace:
        trace_path = prefix.with_name(prefix.name + "_fidelity.csv")
        write_csv(trace_path, "t,fidelity", result.fidelity_trace)
        _write_meta(trace_path, config)
    print(
        f"relative_error={fmt(result.relative_error)} final_fidelity={fmt(result.final_fidelity)} "
        f"({result.fidelity_mode}) dt={fmt(result.dt)} norm_drift={result.norm_drift:.3g}"
    )
    return 0


# -- sweep ----------------------------------------------------------------------

_SWEEP_KEYS = {"model", "T", "d_A", "grid", "dt", "out", "fidelity_mode", "workers"}


def load_sweep(path) -> dict:
    """Read and validate a sweep TOML file; relative paths resolve against it."""
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    unknown = set(doc) - _SWEEP_KEYS
    if unknown:
        raise ValidationError(f"{path}: unknown key(s) {sorted(unknown)}")
    for key in ("model", "T", "d_A"):
        if key not in doc:
            raise ValidationError(f"{path}: missing required key {key!r}")
    Ts = doc["T"]
    if not isinstance(Ts, list) or not Ts:
        raise ValidationError(f"{path}: 'T' must be a nonempty list of annealing times")
    if any(isinstance(T, bool) or not isinstance(T, (int, float)) or T <= 0 for T in Ts):
        raise ValidationError(f"{path}: every T must be a positive number")
    ds = doc["d_A"]
    if not isinstance(ds, list) or not ds:
        raise ValidationError(f"{path}: 'd_A' must be a nonempty list")
    for d in ds:
        if not (d in ("full", "linear") or (isinstance(d, int) and not isinstance(d, bool) and d >= 1)):
            raise ValidationError(f"{path}: d_A entries must be positive integers, 'full' or 'linear', got {d!r}")
    dt = doc.get("dt", "auto")
    if dt != "auto" and (isinstance(dt, bool) or not isinstance(dt, (int, float)) or dt <= 0):
        raise ValidationError(f"{path}: dt must be 'auto' or a positive number")
    mode = doc.get("fidelity_mode", "subspace")
    if mode not in FIDELITY_MODES:
        raise ValidationError(f"{path}: fidelity_mode must be one of {FIDELITY_MODES}")
    base = path.parent
    return {
        "model": base / doc["model"],
        "T": [float(T) for T in Ts],
        "d_A": list(ds),
        "grid": int(doc.get("grid", DEFAULT_GRID)),
        "dt": dt if dt == "auto" else float(dt),
        "out": base / doc.get("out", "sweep_out"),
        "fidelity_mode": mode,
        "workers": int(doc.get("workers", 1)),
    }


def _run_row(job):
    model, schedule, dt, mode, config = job
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        result = evolve(model, schedule, None if dt == "auto" else dt, fidelity_mode=mode)
    rec = result.summary()
    rec["d_A"] = config["d_A"] if config["d_A"] != "linear" else None
    rec["config_hash"] = config_hash(config)
    return rec


def _tag(d) -> str:
    return d if d in ("full", "linear") else f"d{d}"


def _row_name(d, T) -> str:
    return f"{_tag(d)}_T{fmt(T)}"


def _cached_row(path: Path, digest: str):
    if not path.exists():
        return None
    try:
        rec = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return None
    return rec if rec.get("config_hash") == digest else None


def cmd_sweep(args) -> int:
    sweep = load_sweep(args.sweep_file)
    workers = args.workers or sweep["workers"]
    model = load_model(sweep["model"])
    out = Path(sweep["out"])
    (out / "rows").mkdir(parents=True, exist_ok=True)
    (out / "metric").mkdir(parents=True, exist_ok=True)

    tables = {}
    for d in sweep["d_A"]:
        if d == "linear" or d in tables:
            continue
        mconf = {"model": model.to_dict(), "d_A": d, "grid": sweep["grid"]}
        digest = config_hash(mconf)
        path = out / "metric" / f"{_tag(d)}.csv"
        meta = Path(str(path) + ".meta.json")
        if path.exists() and meta.exists() and json.loads(meta.read_text()).get("config_hash") == digest:
            tables[d] = MetricTable.from_csv(path, _d_value(d), model.tag)
            print(f"metric d_A={d}: cached")
        else:
            tables[d] = tabulate_metric(model, sweep["grid"], _d_value(d), workers=workers)
            tables[d].to_csv(path)
            _write_meta(path, mconf)
            print(f"metric d_A={d}: computed")

    rows, jobs = {}, []
    order = [(d, T) for d in sweep["d_A"] for T in sweep["T"]]
    for d, T in order:
        config = {
            "model": model.to_dict(),
            "d_A": d,
            "T": T,
            "grid": sweep["grid"],
            "dt": sweep["dt"],
            "fidelity_mode": sweep["fidelity_mode"],
        }
        path = out / "rows" / f"{_row_name(d, T)}.json"
        cached = _cached_row(path, config_hash(config))
        if cached is not None:
            rows[(d, T)] = cached
            continue
        schedule = linear_schedule(T) if d == "linear" else geodesic_schedule(tables[d], T)
        jobs.append(((d, T), path, (model, schedule, sweep["dt"], sweep["fidelity_mode"], config)))

    print(f"{len(order) - len(jobs)} rows cached, {len(jobs)} to run")
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_row, [j[2] for j in jobs]))
    else:
        results = [_run_row(j[2]) for j in jobs]
    for (key, path, _), rec in zip(jobs, results):
        atomic_write_text(path, json.dumps(rec, sort_keys=True) + "\n")
        rows[key] = rec

    header = ",".join(SUMMARY_FIELDS + ("config_hash",))
    lines = [header]
    for d, T in order:
        rec = rows[(d, T)]
        vals = []
        for f in SUMMARY_FIELDS:
            v = rec[f]
            vals.append(fmt(v) if isinstance(v, float) else ("" if v is None else str(v)))
        lines.append(",".join(vals + [rec["config_hash"]]))
    atomic_write_text(out / "summary.csv", "\n".join(lines) + "\n")
    print(f"wrote {len(order)} rows to {out / 'summary.csv'}")
    return 0


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agpsched", description="Geodesic annealing schedules from the Krylov AGP.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("metric", help="tabulate g*(lambda) to a lambda,g_star CSV")
    p.add_argument("--model", required=True, help="model TOML file")
    p.add_argument("--d-a", type=_d_a, default="full", help="basis size or 'full' (default)")
    p.add_argument("--grid", type=int, default=DEFAULT_GRID)
    p.add_argument("--refine", action="store_true", help="bisect where |dlog g| > 0.5")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-b", metavar="CSV", help="also write the Lanczos b_i at --at")
    p.add_argument("--at", type=float, default=0.5, help="lambda for --dump-b (default 0.5)")
    p.set_defaults(func=cmd_metric)

    p = sub.add_parser("schedule", help="synthesise a t,lambda schedule CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--d-a", type=_d_a, default="full", help="basis size, 'full' or 'linear'")
    p.add_argument("--t", type=_positive_float, required=True, help="annealing time T")
    p.add_argument("--grid", type=int, default=DEFAULT_GRID)
    p.add_argument("--metric", help="reuse a lambda,g_star CSV instead of recomputing")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("simulate", help="evolve |+...+> along a schedule")
    p.add_argument("--model", required=True)
    p.add_argument("--schedule", help="t,lambda CSV; otherwise built from --d-a and --t")
    p.add_argument("--d-a", type=_d_a, default="full")
    p.add_argument("--t", type=_positive_float)
    p.add_argument("--grid", type=int, default=DEFAULT_GRID)
    p.add_argument("--dt", type=_dt, default=None, help="step size or 'auto' (default)")
    p.add_argument("--fidelity-mode", choices=FIDELITY_MODES, default="subspace")
    p.add_argument("--trace", action="store_true", help="record the fidelity trace")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a resumable (schedule, T) sweep from a TOML file")
    p.add_argument("sweep_file")
    p.add_argument("--workers", type=int, default=None, help="override the file's worker count")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AgpSchedError as exc:
        print(f"agpsched: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"agpsched: error: {exc}", file=sys.stderr)
        return 2
    except MemoryError as exc:
        print(f"agpsched: error: out of memory: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
