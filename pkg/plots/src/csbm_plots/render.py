"""Render figures from csbmlab CSV outputs.

Every plotted number is read from the CSV; the only computation done here
is the log-log slope re-fit for the universality figure, performed on the
CSV points with the same unweighted least-squares rule the producer uses.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "csbm-plots"

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("risk_vs_tau", "risk_vs_alpha", "selfloop_scan",
         "universality_loglog", "acc_and_meanvar")

REQUIRED = {
    "risk_vs_tau": ("tau", "r_test_mean", "r_test_std", "r_train_mean", "r_train_std"),
    "risk_vs_alpha": ("gamma", "r_test_mean", "r_test_std"),
    "selfloop_scan": ("c", "r_test_mean", "r_test_std"),
    "universality_loglog": ("n", "obs_gap_train", "obs_gap_test"),
    "acc_and_meanvar": ("tau", "acc_mean", "acc_std", "mean_pos_mean", "var_pos_mean"),
}


class UnknownKind(ValueError):
    pass


class MissingColumns(ValueError):
    pass


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    in_csv: str
    out_img: str
    logx: bool = False
    title: str | None = None


@dataclass
class RenderResult:
    out_path: Path
    n_rows: int
    annotations: dict = field(default_factory=dict)


def read_table(path) -> dict[str, list]:
    """CSV -> column dict; numeric fields parsed, blanks become None."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        columns = {name: [] for name in reader.fieldnames or ()}
        for row in reader:
            for name, raw in row.items():
                if raw is None or raw == "":
                    columns[name].append(None)
                    continue
                try:
                    columns[name].append(float(raw))
                except ValueError:
                    columns[name].append(raw)
    return columns


def _require(table: dict, kind: str):
    missing = [col for col in REQUIRED[kind]
               if col not in table or all(v is None for v in table[col])]
    if missing:
        raise MissingColumns(f"{kind}: CSV lacks required columns {missing}")


def _pairs(xs, ys, *more):
    """Rows where every requested series is present."""
    out = []
    for vals in zip(xs, ys, *more):
        if all(v is not None for v in vals[:2]):
            out.append(vals)
    return out


def fit_loglog_slope(ns, gaps) -> float | None:
    """Unweighted least-squares slope of log|gap| vs log n (positive gaps)."""
    pts = [(n, g) for n, g in zip(ns, gaps) if n and g and g > 0]
    if len(pts) < 2:
        return None
    xs = np.log([p[0] for p in pts])
    ys = np.log([p[1] for p in pts])
    return float(np.polyfit(xs, ys, 1)[0])


def _errorbar_with_theory(ax, xs, means, stds, theory, label, color):
    pts = _pairs(xs, means, stds)
    if pts:
        x, m, s = (np.array(v, dtype=float) for v in zip(*pts))
        ax.errorbar(x, m, yerr=s, fmt="o", ms=4, capsize=2, color=color,
                    label=f"{label} (simulation)")
    th = _pairs(xs, theory) if theory is not None else []
    if th:
        x, t = (np.array(v, dtype=float) for v in zip(*th))
        order = np.argsort(x)
        ax.plot(x[order], t[order], "-", color=color, alpha=0.8,
                label=f"{label} (theory)")
    return len(pts), len(th)


def render(spec: FigureSpec) -> RenderResult:
    if spec.kind not in KINDS:
        raise UnknownKind(f"unknown figure kind {spec.kind!r}; choose from {KINDS}")
    table = read_table(spec.in_csv)
    _require(table, spec.kind)
    fig, ax = plt.subplots(figsize=(6.0, 4.2), dpi=150)
    annotations = {}

    if spec.kind in ("risk_vs_tau", "acc_and_meanvar"):
        xs = table["tau"]
        if spec.kind == "risk_vs_tau":
            _errorbar_with_theory(ax, xs, table["r_test_mean"], table["r_test_std"],
                                  table.get("theory_r_test"), "test risk", "tab:red")
            _errorbar_with_theory(ax, xs, table["r_train_mean"], table["r_train_std"],
                                  table.get("theory_r_train"), "train risk", "tab:blue")
            ax.set_ylabel("risk")
        else:
            _errorbar_with_theory(ax, xs, table["acc_mean"], table["acc_std"],
                                  table.get("theory_acc"), "accuracy", "black")
            _errorbar_with_theory(ax, xs, table["mean_pos_mean"],
                                  table.get("mean_pos_std"),
                                  table.get("theory_mean_pos"), "mean (class +1)", "tab:blue")
            _errorbar_with_theory(ax, xs, table["var_pos_mean"],
                                  table.get("var_pos_std"),
                                  table.get("theory_var_pos"), "variance (class +1)", "tab:green")
            ax.set_ylabel("accuracy / output statistics")
        ax.set_xlabel("training label ratio tau")
        if spec.logx:
            ax.set_xscale("log")

    elif spec.kind == "risk_vs_alpha":
        alphas = [1.0 / g if g else None for g in table["gamma"]]
        _errorbar_with_theory(ax, alphas, table["r_test_mean"], table["r_test_std"],
                              table.get("theory_r_test"), "test risk", "tab:red")
        ax.set_xlabel("relative model complexity alpha = F/N")
        ax.set_ylabel("test risk")
        if spec.logx:
            ax.set_xscale("log")

    elif spec.kind == "selfloop_scan":
        xs = table["c"]
        _errorbar_with_theory(ax, xs, table["r_test_mean"], table["r_test_std"],
                              table.get("theory_r_test"), "test risk", "tab:red")
        pts = _pairs(xs, table["r_test_mean"])
        c_star = min(pts, key=lambda p: (p[1], abs(p[0])))[0]
        ax.axvline(c_star, color="gray", ls="--", lw=1,
                   label=f"c* = {c_star:g}")
        annotations["c_star"] = c_star
        ax.set_xlabel("self-loop intensity c")
        ax.set_ylabel("test risk")

    elif spec.kind == "universality_loglog":
        ns = table["n"]
        for key, color, label in (("obs_gap_train", "tab:blue", "train gap"),
                                  ("obs_gap_test", "tab:red", "test gap")):
            gaps = table[key]
            se = table.get(f"{key}_se")
            pts = _pairs(ns, gaps, se if se else [None] * len(ns))
            if not pts:
                continue
            x, g, s = zip(*pts)
            yerr = None if any(v is None for v in s) else np.array(s, dtype=float)
            ax.errorbar(x, g, yerr=yerr, fmt="o", ms=4, capsize=2,
                        color=color, label=label)
            slope = fit_loglog_slope(x, g)
            if slope is not None:
                coef = np.polyfit(np.log(x), np.log(g), 1)
                xs_line = np.linspace(min(x), max(x), 50)
                ax.plot(xs_line, np.exp(coef[1]) * xs_line ** coef[0], "-",
                        color=color, alpha=0.6)
                annotations[f"slope_{key.removeprefix('obs_gap_')}"] = slope
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("nodes N")
        ax.set_ylabel("|risk gap| binary vs Gaussian")
        text = ", ".join(f"{k.replace('slope_', '')} slope {v:.3f}"
                         for k, v in sorted(annotations.items()))
        if text:
            ax.set_title(text, fontsize=10)

    if spec.title and spec.kind != "universality_loglog":
        ax.set_title(spec.title, fontsize=10)
    ax.grid(alpha=0.25)
    ax.legend(fontsize=8)
    out = Path(spec.out_img)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, metadata=_deterministic_metadata(out))
    plt.close(fig)
    n_rows = len(next(iter(table.values()))) if table else 0
    return RenderResult(out_path=out, n_rows=n_rows, annotations=annotations)


def _deterministic_metadata(path: Path) -> dict | None:
    # strip volatile timestamps so repeated renders are byte-stable
    suffix = path.suffix.lower()
    if suffix == ".png":
        return {"Software": "csbm-plots"}
    if suffix == ".svg":
        return {"Date": None}
    return None
