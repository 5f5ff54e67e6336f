"""Command-line interface.

Subcommands: simulate, sweep, theory, universality, selfloop, spectrum.
Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 empty result,
5 solver divergence.

Outputs are deterministic: a CSV (12 significant digits, fixed column
order), a JSON mirror with identical field names, and a manifest JSON
recording the resolved configuration, master seed and output files.
Re-running with the same configuration reproduces the CSV/JSON bytes; only
the manifest timestamp differs.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CsbmLabError, EmptyResult, EstimatorNoisy, InvalidConfig, SolverDiverged
from .experiments import (
    METRICS,
    THEORY_FIELDS,
    SummaryRow,
    run_trials,
    selfloop_scan,
    spectral_analysis,
    sweep,
    theory_columns,
    universality_check,
)
from .model import CsbmConfig, make_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_EMPTY = 4
EXIT_SOLVER = 5

SUMMARY_COLUMNS = (
    ["tau", "lambda", "mu", "gamma", "r", "d", "n", "f", "ensemble", "filter", "c", "seed"]
    + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]
    + list(THEORY_FIELDS)
    + ["n_trials"]
)

THEORY_COLUMNS = (
    ["tau", "lambda", "mu", "gamma", "r"] + list(THEORY_FIELDS)
)

UNIVERSALITY_COLUMNS = (
    ["n", "d", "f", "n_trials"]
    + [f"{key}_{stat}_{tag}" for key in ("r_train", "r_test")
       for tag in ("bs", "bn", "gs", "gn") for stat in ("mean", "std")]
    + ["delta_train", "delta_train_se", "delta_test", "delta_test_se",
       "obs_gap_train", "obs_gap_train_se", "obs_gap_test", "obs_gap_test_se"]
)

SPECTRUM_COLUMNS = ["index", "eigenvalue", "projection", "response"]

# grids expand in this fixed order (outermost first) regardless of flag order
SWEEP_ORDER = ["tau", "lambda", "mu", "gamma", "r", "d", "c", "n", "f", "ensemble"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    return str(value)


def _jsonable(value):
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    return str(value)


def emit(rows: list[dict], columns: list[str], out: Path, fmt: str,
         command: str, config: dict, extras: dict | None = None) -> list[Path]:
    """Write the table as CSV and/or JSON plus a manifest next to the data."""
    if not rows:
        raise EmptyResult("no rows to emit")
    out = Path(out)
    written = []
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        if fmt in ("csv", "both"):
            path = out.with_suffix(".csv")
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(columns)
                for row in rows:
                    writer.writerow([_fmt(row.get(col)) for col in columns])
            written.append(path)
        if fmt in ("json", "both"):
            path = out.with_suffix(".json")
            payload = [{col: _jsonable(row.get(col)) for col in columns} for row in rows]
            with open(path, "w") as fh:
                json.dump(payload, fh, indent=1)
                fh.write("\n")
            written.append(path)
        manifest = {
            "artifact": "csbmlab",
            "version": __version__,
            "command": command,
            "config": {k: _jsonable(v) for k, v in sorted(config.items())},
            "outputs": [p.name for p in written],
            "columns": columns,
            "extras": {k: _jsonable(v) for k, v in (extras or {}).items()},
            "timestamp_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        }
        mpath = out.with_suffix(".manifest.json")
        with open(mpath, "w") as fh:
            json.dump(manifest, fh, indent=1)
            fh.write("\n")
        written.append(mpath)
    except OSError as exc:
        raise _IoFailure(str(exc)) from exc
    return written


class _IoFailure(CsbmLabError):
    pass


# ---------------------------------------------------------------------------
# Configuration resolution
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {
    "n": int, "f": int, "gamma": float, "lambda": float, "mu": float,
    "d": float, "tau": float, "r": float, "ensemble": str, "filter": str,
    "c": float, "seed": int, "trials": int, "format": str,
    "ridge_convention": str, "workers": int,
}

_DEFAULTS = {
    "n": 5000, "gamma": 5.0, "lambda": 1.0, "mu": 1.0, "d": 30.0,
    "tau": 0.8, "r": 0.0, "ensemble": "binary_symmetric", "seed": 0,
    "trials": 10, "format": "both", "ridge_convention": "eq12", "workers": 1,
}


def _read_config_file(path: str) -> dict:
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidConfig(f"config file {path!r}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"config file {path!r} line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONFIG_KEYS:
            raise InvalidConfig(f"config file {path!r} line {lineno}: unknown key {key!r}")
        values[key] = value
    return values


def _parse_scalar(key: str, text: str):
    caster = _CONFIG_KEYS[key]
    try:
        return caster(text)
    except ValueError as exc:
        raise InvalidConfig(f"{key}: cannot parse {text!r} as {caster.__name__}") from exc


def _parse_grid(key: str, text: str) -> list:
    return [_parse_scalar(key, part) for part in str(text).split(",") if part != ""]


def resolve_config(args: argparse.Namespace, grid_keys: tuple = ()) -> tuple[dict, dict]:
    """Merge defaults, config file and flags (flags win).

    Keys named in grid_keys may hold comma lists; they are returned
    separately as {key: [values]} with scalars treated as 1-point grids.
    """
    values = dict(_DEFAULTS)
    if getattr(args, "config", None):
        for key, raw in _read_config_file(args.config).items():
            if key in grid_keys:
                values[key] = _parse_grid(key, raw)
            else:
                values[key] = _parse_scalar(key, raw)
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            if key in grid_keys:
                values[key] = _parse_grid(key, str(flag))
            elif isinstance(flag, str) and key not in ("ensemble", "filter", "format", "ridge_convention"):
                values[key] = _parse_scalar(key, flag)
            else:
                values[key] = flag
    grids = {}
    for key in grid_keys:
        raw = values.get(key)
        if raw is None:
            continue
        grids[key] = raw if isinstance(raw, list) else [raw]
    return values, grids


def build_csbm_config(values: dict) -> CsbmConfig:
    n = int(values["n"])
    if values.get("f") is not None:
        f = int(values["f"])
    else:
        f = int(round(n / float(values["gamma"])))
    if values.get("filter") is not None:
        coeffs = tuple(float(part) for part in str(values["filter"]).split(","))
    elif values.get("c") is not None:
        coeffs = (float(values["c"]), 1.0)
    else:
        coeffs = (0.0, 1.0)
    cfg = CsbmConfig(
        n=n, f=f, lam=float(values["lambda"]), mu=float(values["mu"]),
        d=float(values["d"]), tau=float(values["tau"]), r=float(values["r"]),
        ensemble=str(values["ensemble"]), filter_coeffs=coeffs,
        seed=int(values["seed"]),
    )
    return cfg.validate()


def _summary_rows_to_dicts(rows: list[SummaryRow]) -> list[dict]:
    return [row.as_flat_dict() for row in rows]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    values, _ = resolve_config(args)
    cfg = build_csbm_config(values)
    row = run_trials(cfg, int(values["trials"]),
                     ridge_convention=values["ridge_convention"],
                     workers=int(values["workers"]))
    written = emit([row.as_flat_dict()], SUMMARY_COLUMNS, Path(args.out), values["format"],
                   "simulate", values)
    print(f"simulate: 1 row, r_test_mean={_fmt(row.means['r_test'])} -> "
          + ", ".join(p.name for p in written))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    grid_keys = tuple(SWEEP_ORDER)
    values, grids = resolve_config(args, grid_keys=grid_keys)
    base_values = dict(values)
    overrides = []
    for key in SWEEP_ORDER:
        grid = grids.get(key)
        if grid is not None and len(grid) > 1:
            overrides.append((key, grid))
        elif grid is not None and len(grid) == 1:
            base_values[key] = grid[0]
    for key in grid_keys:
        if isinstance(base_values.get(key), list):
            base_values[key] = base_values[key][0]
    base = build_csbm_config(base_values)
    rows = sweep(base, overrides, int(values["trials"]),
                 ridge_convention=values["ridge_convention"],
                 workers=int(values["workers"]))
    written = emit(_summary_rows_to_dicts(rows), SUMMARY_COLUMNS, Path(args.out),
                   values["format"], "sweep", values,
                   extras={"n_rows": len(rows)})
    print(f"sweep: {len(rows)} rows -> " + ", ".join(p.name for p in written))
    return EXIT_OK


def _cmd_theory(args) -> int:
    grid_keys = ("tau", "lambda", "mu", "gamma", "r", "c")
    values, grids = resolve_config(args, grid_keys=grid_keys)
    lists = {key: grids.get(key, [_DEFAULTS.get(key)]) for key in grid_keys}
    combos = [{}]
    for key in grid_keys:
        combos = [dict(cb, **{key: v}) for cb in combos for v in lists[key]]
    rows = []
    for combo in combos:
        # theory mode never samples; build a minimal config purely to reuse
        # the regime dispatch (n is a nominal size, f set via gamma)
        vals = dict(values, **combo)
        if combo.get("c") not in (None, 0.0):
            vals["filter"] = f"{combo['c']:g},1"
        vals["f"] = None
        cfg = build_csbm_config(vals)
        cols = theory_columns(cfg, values["ridge_convention"])
        row = {"tau": cfg.tau, "lambda": cfg.lam, "mu": cfg.mu,
               "gamma": cfg.gamma, "r": cfg.r}
        row.update(cols)
        rows.append(row)
    written = emit(rows, THEORY_COLUMNS, Path(args.out), values["format"],
                   "theory", values, extras={"n_rows": len(rows)})
    print(f"theory: {len(rows)} rows -> " + ", ".join(p.name for p in written))
    return EXIT_OK


def _cmd_universality(args) -> int:
    values, _ = resolve_config(args)
    try:
        n_list = [int(part) for part in str(args.n_list).split(",") if part]
    except ValueError as exc:
        raise InvalidConfig(f"n-list: {exc}") from exc
    base = build_csbm_config(values)
    report = universality_check(base, n_list, int(values["trials"]),
                                ridge_convention=values["ridge_convention"],
                                workers=int(values["workers"]))
    extras = {
        "slope_train": report.slope_train,
        "slope_test": report.slope_test,
        "n_points_train": report.n_points_train,
        "n_points_test": report.n_points_test,
        "obs_slope_train": report.obs_slope_train,
        "obs_slope_test": report.obs_slope_test,
        "min_delta_ratio": 10.0,
    }
    written = emit(report.rows, UNIVERSALITY_COLUMNS, Path(args.out),
                   values["format"], "universality", values, extras=extras)
    print(f"universality: slope_train={_fmt(report.slope_train)} "
          f"slope_test={_fmt(report.slope_test)} "
          f"obs_slope_train={_fmt(report.obs_slope_train)} "
          f"obs_slope_test={_fmt(report.obs_slope_test)} -> "
          + ", ".join(p.name for p in written))
    return EXIT_OK


def _cmd_selfloop(args) -> int:
    values, _ = resolve_config(args)
    try:
        c_grid = [float(part) for part in str(args.c_grid).split(",") if part != ""]
    except ValueError as exc:
        raise InvalidConfig(f"c-grid: {exc}") from exc
    base = build_csbm_config(values)
    rows, c_star = selfloop_scan(base, c_grid, int(values["trials"]),
                                 ridge_convention=values["ridge_convention"],
                                 attach_theory=not args.no_theory,
                                 workers=int(values["workers"]))
    written = emit(_summary_rows_to_dicts(rows), SUMMARY_COLUMNS, Path(args.out),
                   values["format"], "selfloop", values,
                   extras={"c_star": c_star})
    print(f"selfloop: c_star={_fmt(c_star)} -> " + ", ".join(p.name for p in written))
    return EXIT_OK


def _cmd_spectrum(args) -> int:
    values, _ = resolve_config(args)
    cfg = build_csbm_config(values)
    if cfg.ensemble not in ("binary_symmetric", "gaussian_symmetric"):
        raise InvalidConfig(f"spectrum needs a symmetric ensemble, got {cfg.ensemble}")
    ds = make_dataset(cfg, trial=0)
    band = None
    if args.band:
        parts = [int(p) for p in str(args.band).split(",")]
        if len(parts) != 2:
            raise InvalidConfig("band must be two comma-separated eigenvalue indices")
        band = (parts[0], parts[1])
    c = float(values["c"]) if values.get("c") is not None else 0.0
    report = spectral_analysis(ds.adjacency, ds.y, c=c, band=band)
    rows = [
        {"index": i, "eigenvalue": report.eigenvalues[i],
         "projection": report.projections[i], "response": report.response[i]}
        for i in range(len(report.eigenvalues))
    ]
    top_align = abs(report.projections[-1]) / np.sqrt(cfg.n)
    extras = {"distortion": report.distortion, "band": str(band),
              "top_eigenvector_label_alignment": float(top_align), "c": c}
    written = emit(rows, SPECTRUM_COLUMNS, Path(args.out), values["format"],
                   "spectrum", values, extras=extras)
    print(f"spectrum: n={cfg.n} distortion={_fmt(report.distortion)} -> "
          + ", ".join(p.name for p in written))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(sub: argparse.ArgumentParser, *, grids: bool = False):
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--out", default="csbmlab_out", help="output path stem")
    sub.add_argument("--format", choices=("csv", "json", "both"), default=None)
    sub.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    sub.add_argument("--trials", type=int, default=None, help="trials per point (default 10)")
    sub.add_argument("--workers", type=int, default=None, help="thread-pool width for trials")
    sub.add_argument("--ridge-convention", dest="ridge_convention",
                     choices=("eq12", "hamiltonian"), default=None,
                     help="meaning of --r: normal-equation coefficient (eq12) or "
                          "train-scaled penalty (hamiltonian)")
    typ = str if grids else float
    sub.add_argument("--n", type=str if grids else int, default=None)
    sub.add_argument("--f", type=str if grids else int, default=None)
    sub.add_argument("--gamma", type=typ, default=None)
    sub.add_argument("--lambda", dest="lambda", type=typ, default=None)
    sub.add_argument("--mu", type=typ, default=None)
    sub.add_argument("--d", type=typ, default=None)
    sub.add_argument("--tau", type=typ, default=None)
    sub.add_argument("--r", type=typ, default=None)
    sub.add_argument("--ensemble", type=str, default=None)
    sub.add_argument("--filter", type=str, default=None,
                     help="comma hop weights c_0,...,c_K (default 0,1)")
    sub.add_argument("--c", type=typ, default=None, help="self-loop shorthand for --filter c,1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csbmlab",
        description="Graph-convolution ridge regression laboratory on the "
                    "contextual stochastic block model.",
    )
    parser.add_argument("--version", action="version", version=f"csbmlab {__version__}")
    subs = parser.add_subparsers(dest="command", required=True, metavar="command")

    sim = subs.add_parser("simulate", help="average trials at a single parameter point")
    _add_common(sim)
    sim.set_defaults(func=_cmd_simulate)

    sw = subs.add_parser("sweep", help="Cartesian parameter sweep (comma lists become grids)")
    _add_common(sw, grids=True)
    sw.set_defaults(func=_cmd_sweep)

    th = subs.add_parser("theory", help="theory-only predictions over a grid (no RNG)")
    _add_common(th, grids=True)
    th.set_defaults(func=_cmd_theory)

    un = subs.add_parser("universality", help="binary vs Gaussian ensemble comparison over sizes")
    _add_common(un)
    un.add_argument("--n-list", dest="n_list", required=True,
                    help="comma list of node counts; d follows sqrt(N)/2")
    un.set_defaults(func=_cmd_universality)

    sl = subs.add_parser("selfloop", help="scan self-loop intensity c")
    _add_common(sl)
    sl.add_argument("--c-grid", dest="c_grid", required=True, help="comma list of c values")
    sl.add_argument("--no-theory", action="store_true", help="skip theory overlay columns")
    sl.set_defaults(func=_cmd_selfloop)

    sp = subs.add_parser("spectrum", help="eigen summary of a symmetric adjacency draw")
    _add_common(sp)
    sp.add_argument("--band", default=None, help="two eigenvalue indices a,b for the distortion ratio")
    sp.set_defaults(func=_cmd_spectrum)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverDiverged, EstimatorNoisy) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except EmptyResult as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except _IoFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
