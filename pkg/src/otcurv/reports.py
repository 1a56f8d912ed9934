"""Report emission: delimited output with a provenance header, and a rendered
figure next to every CSV."""

from __future__ import annotations

import os
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import __version__


def format_value(v) -> str:
    if isinstance(v, float):
        return repr(float(v))    # plain-float repr, stable across numpy scalars
    return str(v)


def write_csv(path: str, columns: Dict[str, Sequence], config: Dict) -> None:
    """CSV with a '#'-prefixed header block echoing version and config.

    Output is byte-stable for a fixed config: values are written with repr
    and no timestamps enter the header.
    """
    names = list(columns)
    rows = zip(*[columns[c] for c in names]) if names else []
    with open(path, "w") as fh:
        fh.write(f"# otcurv {__version__}\n")
        for key in sorted(config):
            fh.write(f"# {key} = {format_value(config[key])}\n")
        fh.write(",".join(names) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")


def figure_path(csv_path: str) -> str:
    base, _ = os.path.splitext(csv_path)
    return base + ".png"


def render_series(csv_path: str, x, series: Dict[str, Sequence], xlabel: str,
                  ylabel: str, title: str, hline: Optional[float] = None) -> str:
    """Line plot of one or more series against x, saved next to the CSV."""
    out = figure_path(csv_path)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name, y in series.items():
        ax.plot(x, y, marker="o", markersize=3, linewidth=1.2, label=name)
    if hline is not None:
        ax.axhline(hline, color="0.4", linewidth=0.8, linestyle="--")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=130)
    plt.close(fig)
    return out


def render_bars(csv_path: str, labels: List[str], values: Sequence[float],
                ylabel: str, title: str) -> str:
    out = figure_path(csv_path)
    fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * len(labels)), 4.0))
    ax.bar(range(len(labels)), values, color="#4878b0")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=7)
    ax.axhline(0.0, color="0.3", linewidth=0.8)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out, dpi=130)
    plt.close(fig)
    return out


def render_scatter(csv_path: str, x, y, xlabel: str, ylabel: str, title: str,
                   values=None) -> str:
    out = figure_path(csv_path)
    fig, ax = plt.subplots(figsize=(5.5, 5.0))
    sc = ax.scatter(x, y, s=9, c=values, cmap="viridis")
    if values is not None:
        fig.colorbar(sc, ax=ax, shrink=0.85)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    fig.savefig(out, dpi=130)
    plt.close(fig)
    return out
