"""Score-distribution diagnostics: histograms, per-class correlation
between systems, a polarization index, and CSV export for external
plotting.

These quantify when and why score fusion helps: fusion pays off when
same-class scores correlate across systems and scores are not saturated
at the extremes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .scores import ScoreSet, minmax_normalize

POLARIZATION_BAND = 0.05


@dataclass
class ScorePanel:
    """Named score sets over one common trial list, plus labels."""

    systems: dict[str, ScoreSet]
    labels: dict[str, str]

    def __post_init__(self):
        if not self.systems:
            raise ValueError("panel needs at least one system")
        names = list(self.systems)
        ref = set(self.systems[names[0]].ids())
        for name in names[1:]:
            if set(self.systems[name].ids()) != ref:
                raise ValueError(f"system {name!r} covers a different trial set")

    def names(self) -> list[str]:
        return list(self.systems)

    def common_ids(self) -> list[str]:
        return self.systems[self.names()[0]].ids()


def histogram(scores: ScoreSet, n_bins: int, lo: float, hi: float) -> np.ndarray:
    """Equal-width bin counts over [lo, hi].

    Out-of-range scores are clamped into the edge bins and the right edge
    falls in the last bin, so counts always sum to the trial count.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")
    if lo >= hi:
        raise ValueError(f"degenerate range [{lo}, {hi}]")
    vals = scores.values()
    idx = np.floor((vals - lo) / (hi - lo) * n_bins).astype(int)
    idx = np.clip(idx, 0, n_bins - 1)
    return np.bincount(idx, minlength=n_bins)


def pairwise_correlation(
    panel: ScorePanel, class_filter: str = "all", method: str = "pearson"
) -> np.ndarray:
    """Correlation matrix between systems over one class of trials.

    class_filter is "bonafide", "spoof" or "all"; method is "pearson" or
    "spearman" (fusion benefit is rank-driven, so ranks are offered too).
    """
    if class_filter not in ("bonafide", "spoof", "all"):
        raise ValueError(f"bad class_filter {class_filter!r}")
    ids = [
        u for u in panel.common_ids()
        if class_filter == "all" or panel.labels.get(u) == class_filter
    ]
    if len(ids) < 2:
        raise ValueError(f"need at least 2 trials in class {class_filter!r}")
    rows = []
    for name in panel.names():
        d = panel.systems[name].as_dict()
        col = np.array([d[u] for u in ids])
        if method == "spearman":
            col = np.argsort(np.argsort(col)).astype(np.float64)
        if np.var(col) == 0.0:
            raise ValueError(f"system {name!r} has zero score variance in {class_filter!r}")
        rows.append(col)
    return np.corrcoef(np.vstack(rows))


def polarization_index(scores: ScoreSet, band: float = POLARIZATION_BAND) -> float:
    """Fraction of min-max-normalized scores within `band` of 0 or 1.

    High values mean saturated, over-confident decisions.
    """
    vals = scores.values()
    near_edge = (vals <= band) | (vals >= 1.0 - band)
    return float(np.mean(near_edge))


def export_panel_csv(panel: ScorePanel, out_dir, n_bins: int = 40) -> list[str]:
    """Write one CSV per system pair plus a histogram CSV per system.

    Pair files hold (utt_id, score_a, score_b, label); histogram files hold
    (bin_lo, bin_hi, count) over [0, 1] after min-max normalization.
    Returns the created file names (deterministic order).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    created = []
    names = panel.names()
    ids = panel.common_ids()
    for a, b in combinations(names, 2):
        fname = f"pair_{a}__{b}.csv"
        da = panel.systems[a].as_dict()
        db = panel.systems[b].as_dict()
        with open(out_dir / fname, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["utt_id", f"score_{a}", f"score_{b}", "label"])
            for u in ids:
                writer.writerow([u, f"{da[u]:.12g}", f"{db[u]:.12g}",
                                 panel.labels.get(u, "unknown")])
        created.append(fname)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    for name in names:
        counts = histogram(minmax_normalize(panel.systems[name]), n_bins, 0.0, 1.0)
        fname = f"hist_{name}.csv"
        with open(out_dir / fname, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_lo", "bin_hi", "count"])
            for k in range(n_bins):
                writer.writerow([f"{edges[k]:.6g}", f"{edges[k + 1]:.6g}", int(counts[k])])
        created.append(fname)
    return created
