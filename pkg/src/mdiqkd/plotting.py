"""Figures for the scan commands, written next to the CSV output.

Uses the non-interactive Agg backend; nothing is shown on screen.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["plot_distance_scan", "plot_compensation_scan"]

_STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (4.5, 3.2),
    "savefig.dpi": 150,
}


def plot_distance_scan(
    L_A: Sequence[float],
    L_B: Sequence[float],
    rates: Sequence[float],
    path: str | Path,
) -> Path:
    """Key rate per pulse pair against total distance, log scale.

    Points with zero rate cannot sit on a log axis and are drawn as open
    markers on the lower edge instead of being dropped.
    """
    path = Path(path)
    total = [a + b for a, b in zip(L_A, L_B)]
    order = sorted(range(len(total)), key=lambda i: total[i])
    pos = [i for i in order if rates[i] > 0]
    zero = [i for i in order if not rates[i] > 0]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        if pos:
            ax.semilogy([total[i] for i in pos], [rates[i] for i in pos], "o-", color="C0", ms=4)
            for i in pos:
                ax.annotate(f"({L_A[i]:g},{L_B[i]:g})", (total[i], rates[i]),
                            textcoords="offset points", xytext=(4, 3), fontsize=6)
        if zero:
            floor = min((rates[i] for i in pos), default=1e-12) / 10
            ax.semilogy([total[i] for i in zero], [floor] * len(zero), "o", mfc="none", color="C3",
                        ms=4, label="zero rate")
            ax.legend(frameon=False)
        ax.set_xlabel("total distance L_A + L_B (km)")
        ax.set_ylabel("key rate per pulse pair")
        ax.grid(True, which="both", lw=0.3, alpha=0.5)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_compensation_scan(
    delta_db: Sequence[float],
    eta_prime_db: Sequence[float],
    rates: Sequence[float],
    path: str | Path,
) -> Path:
    """Bar chart of the optimised rate per (delta, eta') cell; the baseline is hatched."""
    path = Path(path)
    labels = [f"{d:g} / {e:g}" for d, e in zip(delta_db, eta_prime_db)]
    baseline = [d == 0 and e == 0 for d, e in zip(delta_db, eta_prime_db)]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        bars = ax.bar(range(len(rates)), rates, color="C0")
        for bar, is_base in zip(bars, baseline):
            if is_base:
                bar.set_hatch("//")
                bar.set_facecolor("white")
                bar.set_edgecolor("C0")
                ax.axhline(bar.get_height(), color="C3", lw=0.8, ls="--")
        ax.set_xticks(range(len(rates)))
        ax.set_xticklabels(labels, rotation=45, ha="right")
        ax.set_xlabel("delta (dB) / extra loss (dB)")
        ax.set_ylabel("key rate per pulse pair")
        ax.ticklabel_format(axis="y", style="sci", scilimits=(0, 0))
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
