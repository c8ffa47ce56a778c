"""Figure rendering for the report paths.

Every report-emitting CLI subcommand drops a PNG next to its delimited
output. Figures are rendered with the Agg backend and without the default
PNG metadata so reruns with identical inputs produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_RC = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.35,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 10,
}


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)


def save_loss_curve(history, path) -> None:
    """Mean triplet loss per epoch, with learning-rate drops marked."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        epochs = [st.epoch for st in history]
        ax.plot(epochs, [st.mean_loss for st in history], color="black", lw=1.5)
        lrs = [st.lr for st in history]
        for prev, cur, epoch in zip(lrs[:-1], lrs[1:], epochs[1:]):
            if cur != prev:
                ax.axvline(epoch, color="gray", ls="--", lw=0.8)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean triplet loss")
        _save(fig, path)


def save_roc_curve(points, auc, path) -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        ax.plot([p[0] for p in points], [p[1] for p in points], color="black",
                lw=1.5, label=f"AUC = {auc:.3f}")
        ax.plot([0, 1], [0, 1], color="gray", ls=":", lw=1.0, label="no skill")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.legend(loc="lower right")
        _save(fig, path)


def save_threshold_sweep(sweep, t_star, path) -> None:
    """F1 over the threshold grid with the tuned threshold marked."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.plot([t for t, _ in sweep], [f for _, f in sweep], color="black", lw=1.5)
        ax.axvline(t_star, color="firebrick", ls="--", lw=1.0,
                   label=f"t* = {t_star:.2f}")
        ax.set_xlabel("distance threshold")
        ax.set_ylabel("F1")
        ax.set_xlim(0, 1)
        ax.legend(loc="lower right")
        _save(fig, path)


def save_trait_correlations(rows, path, metric: str = "subset") -> None:
    """Bar chart of per-trait correlation coefficients (undefined rows
    render as hatched zero-height bars)."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        labels = [row.trait for row in rows]
        values = [0.0 if row.r is None else row.r for row in rows]
        colors = ["lightgray" if row.r is None else "black" for row in rows]
        bars = ax.bar(range(len(rows)), values, color=colors, width=0.6)
        for bar, row in zip(bars, rows):
            if row.r is None:
                bar.set_hatch("//")
        ax.axhline(0.0, color="gray", lw=0.8)
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_ylabel(f"Pearson r vs {metric} MRR")
        ax.set_ylim(-1, 1)
        _save(fig, path)


def save_group_mrr(results, trait: str, path) -> None:
    """Grouped bars: subset and triplet MRR per trait group."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        n = len(results)
        xs = range(n)
        width = 0.38
        ax.bar([x - width / 2 for x in xs], [r.subset_mrr for r in results],
               width=width, color="black", label="Subset MRR")
        ax.bar([x + width / 2 for x in xs], [r.triplet_mrr for r in results],
               width=width, color="gray", label="Triplet MRR")
        ax.set_xticks(list(xs))
        ax.set_xticklabels([r.group for r in results], rotation=20, ha="right")
        ax.set_ylabel("MRR")
        ax.set_ylim(0, 1.0)
        ax.set_title(f"group study: {trait}")
        ax.legend(loc="lower right")
        _save(fig, path)
