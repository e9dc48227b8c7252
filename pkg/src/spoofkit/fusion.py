"""Score-level fusion: weighted sums of normalized system scores, logistic
regression weight fitting, and the partially-fake override rule.

The fitting objective is the class-balanced (equal effective prior)
logistic loss of the affine fusion, so the fused output behaves like a
calibrated log-likelihood ratio.  Weights may come out negative; the model
file stores them as plain text: first line the bias, then one
"system_name<TAB>weight" line per system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .scores import ScoreSet, _softplus

PARTIAL_FAKE_THRESHOLD = 0.775


@dataclass
class FusionModel:
    weights: dict[str, float]
    bias: float = 0.0

    def __post_init__(self):
        if not any(w != 0.0 for w in self.weights.values()):
            raise ValueError("fusion model needs at least one nonzero weight")


def fuse_weighted(system_scores: dict[str, ScoreSet], model: FusionModel) -> ScoreSet:
    """fused(utt) = bias + sum_k w_k * s_k(utt); all systems must cover the
    same utterances (inputs are expected to be min-max normalized)."""
    names = list(model.weights)
    missing = [n for n in names if n not in system_scores]
    if missing:
        raise ValueError(f"missing score sets for systems: {missing}")
    reference = system_scores[names[0]].ids()
    ref_set = set(reference)
    for name in names[1:]:
        if set(system_scores[name].ids()) != ref_set:
            raise ValueError(f"utt_id mismatch between {names[0]!r} and {name!r}")
    maps = {n: system_scores[n].as_dict() for n in names}
    entries = [
        (utt, model.bias + sum(model.weights[n] * maps[n][utt] for n in names))
        for utt in reference
    ]
    return ScoreSet(entries=entries, labels=system_scores[names[0]].labels)


def _balanced_logistic_loss(weights_and_bias, matrix, y_sign, bona_w, spoof_w):
    w = weights_and_bias[:-1]
    b = weights_and_bias[-1]
    fused = matrix.T @ w + b
    margins = y_sign * fused
    per_trial = _softplus(-margins)
    sample_w = np.where(y_sign > 0, bona_w, spoof_w)
    loss = float(np.sum(sample_w * per_trial))
    # d softplus(-m)/d fused = -y * sigmoid(-m)
    sig = 1.0 / (1.0 + np.exp(margins))
    dfused = sample_w * (-y_sign) * sig
    grad = np.concatenate([matrix @ dfused, [np.sum(dfused)]])
    return loss, grad


def fit_logistic_fusion(
    score_matrix: np.ndarray,
    labels: list[str] | np.ndarray,
    system_names: list[str] | None = None,
    max_iter: int = 10_000,
    grad_tol: float = 1e-8,
) -> FusionModel:
    """Fit fusion weights by prior-weighted logistic regression.

    score_matrix is [n_systems x n_trials]; labels are per-trial
    bonafide/spoof strings.  The problem is convex; a damped Newton method
    with backtracking line search drives the gradient infinity-norm below
    grad_tol (or stops after max_iter iterations).  Always calibrate on a
    held-out split, never on evaluation data.
    """
    matrix = np.asarray(score_matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError("score_matrix must be [n_systems x n_trials]")
    n_systems, n_trials = matrix.shape
    if n_trials <= n_systems:
        raise ValueError("need more trials than systems to fit fusion weights")
    labels = list(labels)
    y_sign = np.array([1.0 if lab == "bonafide" else -1.0 for lab in labels])
    n_bona = int(np.sum(y_sign > 0))
    n_spoof = n_trials - n_bona
    if n_bona == 0 or n_spoof == 0:
        raise ValueError("fusion fitting needs both classes present")
    bona_w = 0.5 / n_bona
    spoof_w = 0.5 / n_spoof

    theta = np.zeros(n_systems + 1)
    loss, grad = _balanced_logistic_loss(theta, matrix, y_sign, bona_w, spoof_w)
    design = np.vstack([matrix, np.ones(n_trials)])
    for _ in range(max_iter):
        if np.max(np.abs(grad)) < grad_tol:
            break
        fused = matrix.T @ theta[:-1] + theta[-1]
        p = 1.0 / (1.0 + np.exp(-(y_sign * fused)))
        sample_w = np.where(y_sign > 0, bona_w, spoof_w)
        curvature = sample_w * p * (1.0 - p)
        hessian = (design * curvature) @ design.T
        hessian[np.diag_indices_from(hessian)] += 1e-12
        try:
            direction = -np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            direction = -grad
        if grad @ direction >= 0:
            direction = -grad
        # backtracking keeps the objective non-increasing
        step = 1.0
        while step > 1e-12:
            cand = theta + step * direction
            cand_loss, cand_grad = _balanced_logistic_loss(cand, matrix, y_sign, bona_w, spoof_w)
            if cand_loss <= loss + 1e-4 * step * (grad @ direction):
                break
            step *= 0.5
        if step <= 1e-12:
            break
        theta, loss, grad = cand, cand_loss, cand_grad

    if system_names is None:
        system_names = [f"system{i}" for i in range(n_systems)]
    weights = {name: float(w) for name, w in zip(system_names, theta[:-1])}
    if not any(w != 0.0 for w in weights.values()):
        # pathological flat fit: fall back to the first system
        weights[system_names[0]] = 1.0
    return FusionModel(weights=weights, bias=float(theta[-1]))


def partial_fake_override(
    fused: ScoreSet, pf_prob: ScoreSet, tau: float = PARTIAL_FAKE_THRESHOLD
) -> ScoreSet:
    """Floor the fused score of utterances flagged as partially fake.

    Where pf_prob(utt) > tau (strictly), the utterance's score becomes the
    minimum score of the input fused set; all others pass through.
    """
    if set(fused.ids()) != set(pf_prob.ids()):
        raise ValueError("fused scores and partial-fake probabilities cover different utts")
    floor = float(fused.values().min())
    probs = pf_prob.as_dict()
    entries = [(u, floor if probs[u] > tau else s) for u, s in fused.entries]
    return ScoreSet(entries=entries, labels=fused.labels)


# ---------------------------------------------------------------------------
# model file
# ---------------------------------------------------------------------------

def save_fusion_model(path, model: FusionModel) -> None:
    lines = [f"{model.bias:.12g}"]
    lines += [f"{name}\t{w:.12g}" for name, w in model.weights.items()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_fusion_model(path) -> FusionModel:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty fusion model file")
    try:
        bias = float(lines[0])
    except ValueError as exc:
        raise DataError(f"{path}: first line must be the bias") from exc
    weights = {}
    for ln in lines[1:]:
        parts = ln.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}: expected 'system_name<TAB>weight' lines")
        weights[parts[0]] = float(parts[1])
    return FusionModel(weights=weights, bias=bias)
