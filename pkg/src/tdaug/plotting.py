"""Figures written next to the analysis reports."""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .analysis import CoverageReport  # noqa: E402

GENERATED = "#4c9a5f"
MISSING = "#3b6ea5"

# PNG metadata otherwise embeds the matplotlib version
_SAVE = dict(dpi=120, metadata={"Software": None})


def coverage_figure(reports: Mapping[str, CoverageReport], path) -> None:
    """Horizontal bars per system: rare reference words generated vs missed.

    The hatched overlay marks words that augmentation pushed over the rare
    threshold.
    """
    names = list(reports)
    fig, ax = plt.subplots(figsize=(6.5, 1.2 + 0.6 * len(names)))
    ys = range(len(names))
    for y, name in zip(ys, names):
        r = reports[name]
        ax.barh(y, r.generated, color=GENERATED, height=0.6, label="generated" if y == 0 else None)
        ax.barh(y, r.not_generated, left=r.generated, color=MISSING, height=0.6,
                label="not generated" if y == 0 else None)
        if r.affected_by_augmentation:
            ax.barh(y, r.affected_generated, color="none", hatch="///", edgecolor="black", height=0.6,
                    label="affected by augmentation" if y == 0 else None)
            ax.barh(y, r.affected_not_generated, left=r.generated, color="none", hatch="///",
                    edgecolor="black", height=0.6)
    ax.set_yticks(list(ys))
    ax.set_yticklabels(names)
    ax.set_xlabel("unique rare words in reference vocabulary")
    ax.legend(loc="upper center", bbox_to_anchor=(0.5, -0.35), ncol=3, frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def augmentation_histogram(per_word: Mapping[str, int], path, cap: int | None = None) -> None:
    """Distribution of accepted substitutions per rare word."""
    counts: Sequence[int] = list(per_word.values())
    fig, ax = plt.subplots(figsize=(5, 3.2))
    if counts:
        ax.hist(counts, bins=min(30, max(counts)), color=MISSING, edgecolor="white")
    if cap is not None:
        ax.axvline(cap, color="black", linestyle="--", linewidth=1, label=f"cap N={cap}")
        ax.legend(frameon=False, fontsize=8)
    ax.set_xlabel("augmentations per rare word")
    ax.set_ylabel("rare words")
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def pass_curve(accepted_per_pass: Sequence[int], path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(range(1, len(accepted_per_pass) + 1), accepted_per_pass, marker="o", color=GENERATED)
    ax.set_xlabel("pass")
    ax.set_ylabel("new sentence pairs")
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
