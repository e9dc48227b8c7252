"""Detection score sets and metrics: min-max normalization, EER with
linear interpolation at the FAR/FRR crossing, the two-round weighted EER,
and Cllr.

Polarity convention: higher score means more bonafide.  Score files are
UTF-8 "utt_id<TAB>score" lines; label files are "utt_id<TAB>label" lines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

EER_WEIGHT_ROUND1 = 0.4
EER_WEIGHT_ROUND2 = 0.6


@dataclass
class ScoreSet:
    """Per-utterance scores with an optional utt_id -> label map."""

    entries: list[tuple[str, float]]
    labels: dict[str, str] | None = field(default=None)

    def __post_init__(self):
        ids = [u for u, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate utt_ids in score set")
        if not all(np.isfinite(s) for _, s in self.entries):
            raise ValueError("scores must be finite")

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return [u for u, _ in self.entries]

    def values(self) -> np.ndarray:
        return np.array([s for _, s in self.entries], dtype=np.float64)

    def as_dict(self) -> dict[str, float]:
        return dict(self.entries)

    def with_labels(self, labels: dict[str, str]) -> "ScoreSet":
        return ScoreSet(entries=list(self.entries), labels=dict(labels))

    def split_by_label(self) -> tuple[np.ndarray, np.ndarray]:
        """(bonafide scores, spoof scores); requires labels."""
        if self.labels is None:
            raise ValueError("score set has no labels")
        bona, spoof = [], []
        for utt, s in self.entries:
            label = self.labels.get(utt)
            if label == "bonafide":
                bona.append(s)
            elif label == "spoof":
                spoof.append(s)
        return np.array(bona, dtype=np.float64), np.array(spoof, dtype=np.float64)


def minmax_normalize(scores: ScoreSet) -> ScoreSet:
    """Map scores to [0, 1] via (s - min) / (max - min); endpoints attained."""
    if len(scores) < 2:
        raise ValueError("min-max normalization needs at least 2 scores")
    vals = scores.values()
    lo, hi = float(vals.min()), float(vals.max())
    if hi == lo:
        raise ValueError("constant score set cannot be min-max normalized")
    scaled = (vals - lo) / (hi - lo)
    return ScoreSet(
        entries=[(u, float(s)) for (u, _), s in zip(scores.entries, scaled)],
        labels=scores.labels,
    )


def _operating_points(bona: np.ndarray, spoof: np.ndarray):
    """Candidate thresholds (below min, score midpoints, above max) with
    FAR = P(spoof >= t) and FRR = P(bonafide < t) at each."""
    all_scores = np.unique(np.concatenate([bona, spoof]))
    mids = (all_scores[:-1] + all_scores[1:]) / 2.0
    thresholds = np.concatenate([[all_scores[0] - 1.0], mids, [all_scores[-1] + 1.0]])
    bona_sorted = np.sort(bona)
    spoof_sorted = np.sort(spoof)
    far = 1.0 - np.searchsorted(spoof_sorted, thresholds, side="left") / spoof.size
    frr = np.searchsorted(bona_sorted, thresholds, side="left") / bona.size
    return thresholds, far, frr


def compute_eer(scores: ScoreSet) -> tuple[float, float]:
    """Equal error rate and its threshold.

    Sweeps thresholds at score midpoints; FAR - FRR is non-increasing, so
    the crossing is unique.  When no threshold attains FAR == FRR exactly,
    both the rate and the threshold are linearly interpolated between the
    two bracketing operating points.
    """
    bona, spoof = scores.split_by_label()
    if bona.size == 0 or spoof.size == 0:
        raise ValueError("EER needs at least one bonafide and one spoof trial")
    thresholds, far, frr = _operating_points(bona, spoof)
    diff = far - frr
    idx = int(np.argmax(diff <= 0.0))
    if diff[idx] == 0.0:
        return float(far[idx]), float(thresholds[idx])
    d_prev, d_next = diff[idx - 1], diff[idx]
    alpha = d_prev / (d_prev - d_next)
    eer = far[idx - 1] + alpha * (far[idx] - far[idx - 1])
    thr = thresholds[idx - 1] + alpha * (thresholds[idx] - thresholds[idx - 1])
    return float(eer), float(thr)


def weer(eer_round1: float, eer_round2: float) -> float:
    """Final-ranking weighted EER: 0.4 * round-1 EER + 0.6 * round-2 EER."""
    for v in (eer_round1, eer_round2):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"EER values must lie in [0, 1], got {v}")
    return EER_WEIGHT_ROUND1 * eer_round1 + EER_WEIGHT_ROUND2 * eer_round2


def _softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x) without overflow
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def cllr(scores: ScoreSet) -> float:
    """Cost of log-likelihood ratio.

    (1/2) * [mean over bonafide of log2(1 + e^-s) + mean over spoof of
    log2(1 + e^s)]; 1.0 for all-zero scores, 0 in the well-calibrated,
    well-separated limit.
    """
    bona, spoof = scores.split_by_label()
    if bona.size == 0 or spoof.size == 0:
        raise ValueError("Cllr needs both classes")
    ln2 = np.log(2.0)
    return float(0.5 * (np.mean(_softplus(-bona)) / ln2 + np.mean(_softplus(spoof)) / ln2))


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def save_scores(path, scores: ScoreSet) -> None:
    lines = [f"{u}\t{s:.12g}" for u, s in scores.entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_scores(path, negate: bool = False) -> ScoreSet:
    """Read a score file; negate flips polarity for lower-is-bonafide sources."""
    entries = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'utt_id<TAB>score'")
        value = float(parts[1])
        entries.append((parts[0], -value if negate else value))
    return ScoreSet(entries=entries)


def save_labels(path, labels: dict[str, str]) -> None:
    lines = [f"{u}\t{labels[u]}" for u in labels]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_labels(path) -> dict[str, str]:
    labels = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in ("bonafide", "spoof", "unknown"):
            raise DataError(f"{path}:{lineno}: expected 'utt_id<TAB>bonafide|spoof|unknown'")
        labels[parts[0]] = parts[1]
    return labels
