"""CSV and SVG output for experiment results."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Dict, List, Sequence

from .runner import MseAggregate, ResultRow

MSE_COLUMNS = ["method", "variant", "dim", "budget", "n", "mse", "log10_mse"]


def fmt(x: float) -> str:
    # repr round-trips doubles exactly
    return repr(float(x))


def results_header(max_dim: int) -> List[str]:
    return (
        ["method", "variant", "dim", "replicate", "budget"]
        + [f"estimate_{i}" for i in range(max_dim)]
        + ["squared_error", "warnings"]
    )


def write_results_csv(rows: Sequence[ResultRow], path) -> Path:
    path = Path(path)
    max_dim = max((r.dim for r in rows), default=0)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(results_header(max_dim))
            for r in rows:
                est = [fmt(v) for v in r.estimate] + [""] * (max_dim - len(r.estimate))
                w.writerow(
                    [r.method, r.variant, r.dim, r.replicate, r.budget]
                    + est
                    + [fmt(r.squared_error), ";".join(r.warnings)]
                )
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_results_csv(path) -> List[ResultRow]:
    rows = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            d = int(rec["dim"])
            est = tuple(float(rec[f"estimate_{i}"]) for i in range(d))
            warnings = [w for w in rec["warnings"].split(";") if w]
            rows.append(
                ResultRow(
                    rec["method"], rec["variant"], d, int(rec["replicate"]), int(rec["budget"]),
                    est, float(rec["squared_error"]), warnings,
                )
            )
    return rows


def write_mse_csv(aggs: Sequence[MseAggregate], path) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MSE_COLUMNS)
            for a in aggs:
                w.writerow([a.method, a.variant, a.dim, a.budget, a.n, fmt(a.mse), fmt(a.log10_mse)])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def series_by_dim(aggs: Sequence[MseAggregate]) -> Dict[int, Dict[str, List[tuple]]]:
    out: Dict[int, Dict[str, List[tuple]]] = {}
    for a in aggs:
        name = f"{a.method} [{a.variant}]" if a.variant else a.method
        out.setdefault(a.dim, {}).setdefault(name, []).append((a.budget, a.log10_mse))
    for series in out.values():
        for pts in series.values():
            pts.sort()
    return out


def plot_mse_svg(dim: int, series: Dict[str, List[tuple]], path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    with matplotlib.rc_context({"svg.hashsalt": "aisampling", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.5, 5))
        for name in sorted(series):
            xs, ys = zip(*series[name])
            ys = [y if math.isfinite(y) else float("nan") for y in ys]
            ax.plot(xs, ys, marker="o", markersize=2.5, linewidth=1.2, label=name)
        ax.set_xlabel("requests to the integrand")
        ax.set_ylabel("log10 MSE")
        ax.set_title(f"d = {dim}")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7)
        fig.tight_layout()
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        finally:
            plt.close(fig)
    return path


def emit_outputs(rows: Sequence[ResultRow], aggregates: Sequence[MseAggregate], output_dir) -> List[Path]:
    """Write results.csv, mse_curves.csv and one ``mse_d{d}.svg`` per dimension."""
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = [write_results_csv(rows, out / "results.csv"), write_mse_csv(aggregates, out / "mse_curves.csv")]
    for dim, series in sorted(series_by_dim(aggregates).items()):
        written.append(plot_mse_svg(dim, series, out / f"mse_d{dim}.svg"))
    return written
