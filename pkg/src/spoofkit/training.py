"""Training loop: online augmentation, per-batch chunk-size randomization,
Adam with the halving schedule, and dev-loss model selection.

Everything is deterministic given the seed: batch order, online recipes,
chunk draws and dropout masks all derive from (seed, epoch, scope) hashes,
so the training log is bit-reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .audio import AudioBuffer, read_wav
from .augment import AugmentPolicy, AugmentPools, apply_recipe, chunk_to_length, sample_chunk_size
from .dsp import CqtConfig, Spectrogram, StftConfig, cqt_log_power, low_band_slice, stft_log_power
from .errors import NumericalError
from .lcnn import LcnnConfig, LcnnParams, forward_lcnn, init_lcnn_params
from .losses import LABEL_INDEX, LossConfig, am_softmax_logits, am_softmax_loss, center_joint_loss, update_centers
from .manifest import TrialManifest, derive_seed
from .optim import BASE_LR, AdamState, adam_step, steplr
from .scores import ScoreSet

logger = logging.getLogger(__name__)

FEATURE_KINDS = ("stft1024", "stft2048", "cqt")


def make_feature_fn(kind: str, low_band_hz: float = 4000.0) -> Callable[[AudioBuffer], Spectrogram]:
    """Front-end closure: spectrogram extraction plus low-band slicing."""
    if kind == "stft1024":
        cfg = StftConfig(window_length=1024, n_fft=1024, hop_length=160)
        return lambda audio: low_band_slice(stft_log_power(audio, cfg), low_band_hz)
    if kind == "stft2048":
        cfg = StftConfig(window_length=2048, n_fft=2048, hop_length=160)
        return lambda audio: low_band_slice(stft_log_power(audio, cfg), low_band_hz)
    if kind == "cqt":
        cfg = CqtConfig(f_max=low_band_hz)
        return lambda audio: cqt_log_power(audio, cfg)
    raise ValueError(f"unknown feature kind {kind!r}, expected one of {FEATURE_KINDS}")


def feature_bins(kind: str, low_band_hz: float = 4000.0, sample_rate: int = 16000) -> int:
    """Row count the front-end produces; the model input height."""
    if kind == "stft1024":
        return int(low_band_hz / (sample_rate / 1024)) + 1
    if kind == "stft2048":
        return int(low_band_hz / (sample_rate / 2048)) + 1
    if kind == "cqt":
        return CqtConfig(f_max=low_band_hz).bin_frequencies().size
    raise ValueError(f"unknown feature kind {kind!r}")


@dataclass
class TrainSetup:
    train_manifest: TrialManifest
    dev_manifest: TrialManifest
    feature_fn: Callable[[AudioBuffer], Spectrogram]
    model_cfg: LcnnConfig
    loss_cfg: LossConfig
    pools: AugmentPools = field(default_factory=AugmentPools.empty)
    policy: AugmentPolicy | None = None
    batch_size: int = 32
    base_lr: float = BASE_LR
    chunk_range: tuple[int, int] = (500, 700)
    dev_chunk: int = 200
    dev_features: dict[str, Spectrogram] | None = None  # precomputed, keyed by utt_id

    def __post_init__(self):
        if len(self.train_manifest) == 0 or len(self.dev_manifest) == 0:
            raise ValueError("train and dev manifests must be non-empty")


@dataclass
class TrainResult:
    params: LcnnParams
    log_rows: list[tuple[int, float, float, float]]
    best_epoch: int


def _load_features(entry, feature_fn, pools) -> Spectrogram:
    audio = read_wav(entry.path)
    if not entry.recipe.is_empty():
        audio = apply_recipe(audio, entry.recipe, pools)
    return feature_fn(audio)


def _batch_loss(params, batch, labels, loss_cfg, train, rng):
    logits, embedding = forward_lcnn(params, batch, train=train, rng=rng)
    if loss_cfg.kind == "am_softmax":
        loss = am_softmax_loss(embedding, labels, params.tensors["amsoftmax.w"],
                               scale=loss_cfg.scale, margin=loss_cfg.margin)
    else:
        loss = center_joint_loss(embedding, logits, labels, params.buffers["centers"],
                                 center_lambda=loss_cfg.center_lambda)
    return loss, embedding


def _dev_loss(params, dev_features, dev_labels, loss_cfg, chunk: int, batch_size: int) -> float:
    total = 0.0
    count = 0
    for start in range(0, len(dev_features), batch_size):
        feats = dev_features[start : start + batch_size]
        labels = dev_labels[start : start + batch_size]
        batch = np.stack([chunk_to_length(f, chunk).values for f in feats])
        loss, _ = _batch_loss(params, batch, labels, loss_cfg, train=False, rng=None)
        total += float(loss.data) * len(feats)
        count += len(feats)
    return total / count


def train_loop(setup: TrainSetup, epochs: int, seed: int) -> TrainResult:
    """Train and return the checkpoint with the lowest dev loss.

    Zero epochs returns the initial parameters and an empty log.  A
    non-finite training loss aborts with the offending batch identified.
    """
    rng_init = np.random.default_rng(derive_seed(seed, "init"))
    params = init_lcnn_params(setup.model_cfg, rng_init)
    adam = AdamState.for_params(params.tensors)

    logger.info("caching %d dev feature sets", len(setup.dev_manifest))
    if setup.dev_features is not None:
        dev_features = [setup.dev_features[e.utt_id] for e in setup.dev_manifest]
    else:
        dev_features = [_load_features(e, setup.feature_fn, setup.pools)
                        for e in setup.dev_manifest]
    dev_labels = np.array([LABEL_INDEX[e.label] for e in setup.dev_manifest])

    best = params.clone()
    best_loss = np.inf
    best_epoch = -1
    log_rows: list[tuple[int, float, float, float]] = []
    entries = list(setup.train_manifest)

    for epoch in range(epochs):
        lr = steplr(setup.base_lr, epoch)
        order_rng = np.random.default_rng(derive_seed(seed, epoch, "order"))
        order = order_rng.permutation(len(entries))
        epoch_loss = 0.0
        n_batches = 0
        for b_idx, start in enumerate(range(0, len(order), setup.batch_size)):
            batch_entries = [entries[i] for i in order[start : start + setup.batch_size]]
            batch_rng = np.random.default_rng(derive_seed(seed, epoch, "batch", b_idx))
            n_frames = sample_chunk_size(batch_rng, *setup.chunk_range)
            feats = []
            labels = []
            for e in batch_entries:
                utt_rng = np.random.default_rng(derive_seed(seed, epoch, e.utt_id))
                audio = read_wav(e.path)
                if not e.recipe.is_empty():
                    audio = apply_recipe(audio, e.recipe, setup.pools)
                if setup.policy is not None:
                    online = setup.policy.sample(utt_rng, setup.pools)
                    if not online.is_empty():
                        audio = apply_recipe(audio, online, setup.pools)
                spec = setup.feature_fn(audio)
                feats.append(chunk_to_length(spec, n_frames, rng=utt_rng).values)
                labels.append(LABEL_INDEX[e.label])
            batch = np.stack(feats)
            labels = np.array(labels)

            params.zero_grads()
            loss, embedding = _batch_loss(params, batch, labels, setup.loss_cfg,
                                          train=True, rng=batch_rng)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch}, batch {b_idx}"
                )
            ad.backward(loss)
            adam_step(params.tensors, adam, lr)
            if setup.loss_cfg.kind == "center_joint":
                update_centers(params.buffers["centers"], embedding.data, labels,
                               alpha=setup.loss_cfg.center_alpha)
            epoch_loss += loss_val
            n_batches += 1

        train_loss = epoch_loss / max(n_batches, 1)
        dev_loss = _dev_loss(params, dev_features, dev_labels, setup.loss_cfg,
                             setup.dev_chunk, setup.batch_size)
        log_rows.append((epoch, train_loss, dev_loss, lr))
        logger.info("epoch %d: train %.4f dev %.4f lr %.2e", epoch, train_loss, dev_loss, lr)
        if dev_loss < best_loss:
            best_loss = dev_loss
            best = params.clone()
            best_epoch = epoch

    return TrainResult(params=best, log_rows=log_rows, best_epoch=best_epoch)


def write_training_log(path, rows) -> None:
    lines = ["epoch,train_loss,dev_loss,lr"]
    lines += [f"{e},{tl:.10g},{dl:.10g},{lr:.10g}" for e, tl, dl, lr in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def score_manifest(
    params: LcnnParams,
    loss_cfg: LossConfig,
    manifest: TrialManifest,
    feature_fn: Callable[[AudioBuffer], Spectrogram],
    pools: AugmentPools | None = None,
    eval_chunk: int | None = None,
    features: dict[str, Spectrogram] | None = None,
) -> ScoreSet:
    """Score every utterance: higher output means more bonafide.

    AM-softmax systems score through the cosine head (their FC2 head is
    untrained); center-loss systems score through the FC2 logits.  With
    `features` given, precomputed spectrograms are used instead of reading
    and re-extracting the audio.
    """
    pools = pools or AugmentPools.empty()
    entries = []
    for e in manifest:
        if features is not None:
            spec = features[e.utt_id]
        else:
            spec = _load_features(e, feature_fn, pools)
        if eval_chunk is not None:
            spec = chunk_to_length(spec, eval_chunk)
        logits, embedding = forward_lcnn(params, spec.values[None, :, :], train=False)
        if loss_cfg.kind == "am_softmax":
            head = am_softmax_logits(embedding.data, params.tensors["amsoftmax.w"].data,
                                     scale=loss_cfg.scale)
        else:
            head = logits.data
        entries.append((e.utt_id, float(head[0, 1] - head[0, 0])))
    return ScoreSet(entries=entries, labels=manifest.labels())
