#!/usr/bin/env python3
"""
Report Visualization Module
Renders experiment tables as standalone SVG line and scatter plots
"""

import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

logger = logging.getLogger(__name__)

plt.style.use('seaborn-v0_8')
sns.set_palette("husl")

# glyphs as paths, fixed id salt
SVG_RC = {"svg.fonttype": "path", "svg.hashsalt": "brownian-coupling"}


@dataclass(frozen=True)
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    kind: str = "line"
    yerr: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.kind not in ("line", "scatter"):
            raise ValueError(f"series kind must be 'line' or 'scatter', got '{self.kind}'")
        if len(self.x) != len(self.y):
            raise ValueError(f"series '{self.label}': {len(self.x)} x values but {len(self.y)} y values")
        if len(self.x) == 0:
            raise ValueError(f"series '{self.label}' is empty")


@dataclass(frozen=True)
class Axes:
    xlabel: str
    ylabel: str
    title: str = ""
    loglog: bool = False
    annotation: Optional[str] = None


def _check_positive(series: Sequence[Series]):
    for s in series:
        for axis, values in (("x", s.x), ("y", s.y)):
            for i, v in enumerate(values):
                if not v > 0:
                    raise ValueError(f"log-log plot needs positive values: series '{s.label}' {axis}[{i}] = {v}")


def emit_svg(series: Sequence[Series], axes: Axes, path: str) -> str:
    """
    Write a standalone SVG plot of one or more series

    Parameters:
    series: Series to draw, each tagged with its label as SVG group id
    axes: labels, title and log-log switch
    path: output file

    Returns:
    path of the written SVG
    """
    if not series:
        raise ValueError("emit_svg needs at least one series")
    if axes.loglog:
        _check_positive(series)

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(8, 6))
        for s in series:
            if s.kind == "line":
                ax.plot(s.x, s.y, marker='o', linewidth=2, label=s.label, gid=s.label)
            else:
                ax.scatter(s.x, s.y, label=s.label, gid=s.label)
            if s.yerr is not None:
                ax.errorbar(s.x, s.y, yerr=s.yerr, fmt='none', alpha=0.5, capsize=3)
        if axes.loglog:
            ax.set_xscale('log')
            ax.set_yscale('log')
        ax.set_title(axes.title, fontsize=14, fontweight='bold')
        ax.set_xlabel(axes.xlabel, fontsize=12)
        ax.set_ylabel(axes.ylabel, fontsize=12)
        if axes.annotation:
            ax.text(0.02, 0.02, axes.annotation, transform=ax.transAxes, fontsize=10,
                    bbox=dict(boxstyle='round', facecolor='lightgray', alpha=0.8))
        ax.legend(fontsize=10)
        ax.grid(True, alpha=0.3)
        plt.tight_layout()
        fig.savefig(path, format='svg', metadata={'Date': None})
        plt.close(fig)
    logger.info("wrote %s", path)
    return path


def _slope_note(fits: Dict, key: str, target_key: str) -> Optional[str]:
    value = fits.get(key)
    if isinstance(value, dict):
        parts = [f"{k:g}: {v:.3f}" for k, v in value.items()]
        text = f"fitted slope ({', '.join(parts)})"
    elif value is not None and not (isinstance(value, float) and math.isnan(value)):
        text = f"fitted slope {value:.3f}"
    else:
        return None
    if target_key in fits:
        text += f", target {fits[target_key]:.3f}"
    return text


def plot_report(command: str, table: pd.DataFrame, fits: Dict, path: str) -> str:
    """Render the standard plot of a command's report table."""
    if command == "verify-main":
        series = [Series(f"t = {t:g}", g["delta"].tolist(), g["lhs"].clip(lower=1e-300).tolist(),
                         yerr=g["lhs_se"].tolist()) for t, g in table.groupby("t", sort=False)]
        axes = Axes("delta", "E|exp(-S(X)) - exp(-S(Y))|", "Coupling estimate", loglog=True,
                    annotation=_slope_note(fits, "delta_exponent", "target_delta_exponent"))
    elif command == "verify-smoothing":
        series = [Series("seminorm", table["t"].tolist(), table["seminorm"].tolist())]
        axes = Axes("t", "empirical Holder seminorm", "Smoothing scaling", loglog=True,
                    annotation=_slope_note(fits, "t_slope", "target_t_slope"))
    elif command == "verify-nase":
        series = [Series("residual mean square", table["dt"].tolist(), table["residual_ms"].clip(lower=1e-300).tolist())]
        axes = Axes("dt", "mean-square residual", "Action decomposition residual", loglog=True,
                    annotation=_slope_note(fits, "decay_slope", "target_decay_slope"))
    elif command == "simulate-coupling":
        series = [Series("empirical", table["t"].tolist(), table["survival"].tolist(), kind="scatter",
                         yerr=table["survival_se"].tolist()),
                  Series("exact", table["t"].tolist(), table["exact"].tolist())]
        axes = Axes("t", "P(tau > t)", "Coupling time survival")
    elif command == "kato":
        series = [Series("kato functional", table["t"].tolist(), np.maximum(table["value"], 1e-300).tolist())]
        axes = Axes("t", "Kato functional", "Kato membership probe", loglog=True,
                    annotation=_slope_note(fits, "decay_exponent", "target_decay_exponent"))
    elif command == "semigroup":
        x = np.arange(len(table)).tolist()
        series = [Series("estimate", x, table["value_re"].tolist(), kind="scatter",
                         yerr=table["std_error"].tolist())]
        if "exact" in table:
            series.append(Series("exact", x, table["exact"].tolist()))
        axes = Axes("point", "Re exp(-tH) psi", "Semigroup values")
    else:
        x = np.arange(len(table)).tolist()
        numeric = [c for c in table.columns if pd.api.types.is_numeric_dtype(table[c]) and not c.startswith("x")]
        if not numeric:
            raise ValueError(f"{command}: report table has no numeric column to plot")
        column = "residual" if "residual" in table else numeric[0]
        series = [Series(column, x, table[column].tolist(), kind="scatter")]
        axes = Axes("point", column, command)
    return emit_svg(series, axes, path)
