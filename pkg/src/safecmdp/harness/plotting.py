"""SVG regret figures rendered from aggregated runs."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiment import Aggregate  # noqa: E402

# fixed salt and no date stamp keep SVG output byte-stable across reruns
STYLE = {
    "svg.hashsalt": "safecmdp",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (4.2, 3.0),
}

COLORS = {"opsrl": "#1f77b4", "optcmdp": "#d62728", "ucrl": "#2ca02c", "baseline": "#7f7f7f"}
LABELS = {"opsrl": "OPSRL", "optcmdp": "OptCMDP", "ucrl": "UCRL (unconstrained)", "baseline": "baseline"}


def _curve(ax, x, mean, lo, hi, color, label):
    ax.plot(x, mean, color=color, lw=1.2, label=label)
    ax.fill_between(x, lo, hi, color=color, alpha=0.2, lw=0)


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_regret_curves(aggregates: Mapping[str, Aggregate], out_dir, prefix: str = "",
                       title: str = "") -> list[Path]:
    """Optimality and constraint regret, mean line with min/max band per agent."""
    out_dir = Path(out_dir)
    paths = []
    with plt.rc_context(STYLE):
        for key, ylabel, fname in (("opt", "optimality regret", "optimality_regret.svg"),
                                   ("cons", "constraint regret", "constraint_regret.svg")):
            fig, ax = plt.subplots()
            for agent, agg in aggregates.items():
                _curve(ax, agg.episode, getattr(agg, f"{key}_mean"), getattr(agg, f"{key}_min"),
                       getattr(agg, f"{key}_max"), COLORS.get(agent, None), LABELS.get(agent, agent))
            ax.set_xlabel("episode")
            ax.set_ylabel(ylabel)
            if title:
                ax.set_title(title)
            ax.legend(frameon=False)
            paths.append(_save(fig, out_dir / f"{prefix}{fname}"))
    return paths


def plot_sweep(curves: Mapping[float, Aggregate], out_dir, title: str = "") -> Path:
    """Optimality regret of OPSRL for several baseline budget fractions."""
    out_dir = Path(out_dir)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        cmap = plt.get_cmap("viridis")
        n = max(len(curves) - 1, 1)
        for i, (frac, agg) in enumerate(sorted(curves.items())):
            _curve(ax, agg.episode, agg.opt_mean, agg.opt_min, agg.opt_max, cmap(i / n),
                   f"baseline budget {frac:g} x C")
        ax.set_xlabel("episode")
        ax.set_ylabel("optimality regret")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, out_dir / "sweep_optimality_regret.svg")
