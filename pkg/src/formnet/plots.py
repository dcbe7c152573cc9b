"""CSV tables and static SVG figures from an evaluation report.

Three figures are supported:

``errors``      true / predicted deviation and error per interior edge for one
                validation sample
``boxplot``     per-edge error samples with their mean and +-std band
``deviations``  per-node distances of the nominal and identified forms from
                the true form, drawn over the plan of the net
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

FIGURES = ("errors", "boxplot", "deviations")


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def edge_error_rows(report, kappa=0):
    true = report["delta_true"][kappa]
    hat = report["delta_hat"][kappa]
    err = report["errors"][kappa]
    return [(i, float(true[i]), float(hat[i]), float(err[i])) for i in range(len(err))]


def edge_stat_rows(report):
    mean, std = report["per_edge"]["mean"], report["per_edge"]["std"]
    return [(i, float(mean[i]), float(std[i])) for i in range(len(mean))]


def deviation_rows(report, interior_nodes):
    form = report["form_errors"]
    nodes = np.asarray(interior_nodes, dtype=float).reshape(-1, 3)
    return [
        (k, float(nodes[k, 0]), float(nodes[k, 1]), float(form["e_nom"][k]), float(form["e_ident"][k]))
        for k in range(len(nodes))
    ]


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "formnet"
    return plt


def _save(fig, plt, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit(fig_name, report, out_dir, interior_nodes=None, kappa=0):
    """Write ``fig_<name>.csv`` and ``fig_<name>.svg`` into ``out_dir``; return their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"fig_{fig_name}.csv"
    svg_path = out_dir / f"fig_{fig_name}.svg"
    plt = _figure()

    if fig_name == "errors":
        rows = edge_error_rows(report, kappa)
        _write_csv(csv_path, ["edge", "delta_l0_true", "delta_l0_hat", "error"], rows)
        a = np.array(rows)
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.plot(a[:, 0] + 1, a[:, 2], "o", ms=3, color="c", label="predicted")
        ax.plot(a[:, 0] + 1, a[:, 1], "o", ms=3, color="y", label="true")
        ax.plot(a[:, 0] + 1, a[:, 3], "o", ms=3, color="r", label="error")
        ax.set_xlabel("interior edge")
        ax.set_ylabel("unstressed length deviation [m]")
        ax.legend(loc="upper right", fontsize=7)
    elif fig_name == "boxplot":
        rows = edge_stat_rows(report)
        _write_csv(csv_path, ["edge", "mean_error", "std_error"], rows)
        a = np.array(rows)
        errs = np.asarray(report["errors"])
        fig, ax = plt.subplots(figsize=(7, 3.5))
        edges = np.arange(1, errs.shape[1] + 1)
        ax.plot(np.tile(edges, len(errs)), errs.ravel(), ".", ms=1.5, color="k")
        ax.plot(edges, a[:, 1], "-", color="c", label="mean")
        ax.plot(edges, a[:, 1] + a[:, 2], "-", color="royalblue", lw=0.8, label="+-std")
        ax.plot(edges, a[:, 1] - a[:, 2], "-", color="royalblue", lw=0.8)
        ax.set_xlabel("interior edge")
        ax.set_ylabel("prediction error [m]")
        ax.legend(loc="upper right", fontsize=7)
    elif fig_name == "deviations":
        if interior_nodes is None or "form_errors" not in report:
            raise ValueError("deviation plot needs form errors and node coordinates")
        rows = deviation_rows(report, interior_nodes)
        _write_csv(csv_path, ["node", "x", "y", "e_nom", "e_ident"], rows)
        a = np.array(rows)
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.5), sharey=True)
        for ax, col, title in zip(axes, (3, 4), ("nominal vs true", "identified vs true")):
            sc = ax.scatter(a[:, 1], a[:, 2], c=a[:, col], s=25, cmap="viridis")
            ax.set_title(title, fontsize=9)
            ax.set_xlabel("x [m]")
            ax.set_aspect("equal")
            fig.colorbar(sc, ax=ax, shrink=0.8, label="deviation [m]")
        axes[0].set_ylabel("y [m]")
    else:
        raise ValueError(f"unknown figure {fig_name!r}; choose from {FIGURES}")

    fig.tight_layout()
    _save(fig, plt, svg_path)
    return csv_path, svg_path
