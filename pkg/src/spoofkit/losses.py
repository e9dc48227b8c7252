"""Training objectives: additive-margin softmax over length-normalized
embeddings, and center loss jointly optimized with cross-entropy.

Class indices follow the toolkit convention spoof=0, bonafide=1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LABEL_INDEX = {"spoof": 0, "bonafide": 1}


@dataclass(frozen=True)
class LossConfig:
    kind: str = "am_softmax"  # am_softmax | center_joint
    scale: float = 20.0
    margin: float = 0.9
    center_lambda: float = 0.05
    center_alpha: float = 0.5

    def __post_init__(self):
        if self.kind not in ("am_softmax", "center_joint"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if not 0.0 <= self.margin < 1.0:
            raise ValueError("margin must lie in [0, 1)")
        if self.center_lambda < 0:
            raise ValueError("center_lambda must be non-negative")


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood with a stable log-sum-exp."""
    labels = np.asarray(labels)
    lse = ad.logsumexp(logits, axis=1)
    picked = ad.pick(logits, labels)
    return ad.mean_op(ad.add(lse, ad.scale(picked, -1.0)))


def _normalize_rows(t: Tensor, what: str) -> Tensor:
    norms = ad.sqrt(ad.sum_op(ad.mul(t, t), axis=1, keepdims=True))
    if np.any(norms.data == 0.0):
        raise ValueError(f"zero-norm {what}: cannot length-normalize")
    return ad.div(t, norms)


def am_softmax_loss(
    embeddings: Tensor,
    labels: np.ndarray,
    class_weights: Tensor,
    scale: float = 20.0,
    margin: float = 0.9,
) -> Tensor:
    """Cross-entropy over s*(cos - m*onehot) cosine logits.

    Embeddings and the rows of class_weights [2, dim] are length-normalized,
    so the loss is invariant to positive rescaling of either.
    """
    labels = np.asarray(labels)
    x_hat = _normalize_rows(embeddings, "embedding")
    w_hat = _normalize_rows(class_weights, "class weight vector")
    cosines = ad.matmul(x_hat, ad.transpose(w_hat, (1, 0)))
    onehot = np.zeros(cosines.shape, dtype=cosines.dtype)
    onehot[np.arange(labels.size), labels] = 1.0
    adjusted = ad.scale(ad.add(cosines, -margin * onehot), scale)
    return cross_entropy(adjusted, labels)


def am_softmax_logits(
    embeddings: np.ndarray, class_weights: np.ndarray, scale: float = 20.0
) -> np.ndarray:
    """Margin-free cosine logits s*cos for scoring trained AM models."""
    x = embeddings / np.linalg.norm(embeddings, axis=1, keepdims=True)
    w = class_weights / np.linalg.norm(class_weights, axis=1, keepdims=True)
    return scale * (x @ w.T)


def center_joint_loss(
    embeddings: Tensor,
    logits: Tensor,
    labels: np.ndarray,
    centers: np.ndarray,
    center_lambda: float = 0.05,
) -> Tensor:
    """CE(logits) + lambda/2 * mean ||x_i - c_{y_i}||^2.

    Centers are constants here; update_centers applies the delta rule
    between optimizer steps.
    """
    labels = np.asarray(labels)
    ce = cross_entropy(logits, labels)
    if center_lambda == 0.0:
        return ce
    target = Tensor(centers[labels].astype(embeddings.dtype))
    diff = ad.add(embeddings, ad.scale(target, -1.0))
    sq_dist = ad.sum_op(ad.mul(diff, diff), axis=1)
    return ad.add(ce, ad.scale(ad.mean_op(sq_dist), 0.5 * center_lambda))


def update_centers(
    centers: np.ndarray, embeddings: np.ndarray, labels: np.ndarray, alpha: float = 0.5
) -> None:
    """Delta-rule center update, in place: c_j -= alpha * mean shift.

    The per-class shift is sum(c_j - x_i) / (1 + n_j) over the batch
    members of class j.
    """
    labels = np.asarray(labels)
    for j in range(centers.shape[0]):
        members = embeddings[labels == j]
        if members.size == 0:
            continue
        delta = (centers[j] * len(members) - members.sum(axis=0)) / (1.0 + len(members))
        centers[j] -= alpha * delta.astype(centers.dtype)
