"""Stage orchestration: gen-corpus, extract, train, score, fuse-fit,
fuse-apply, eval, analyze.

Each stage writes a stamp (content hash over the config sections it
depends on plus the hashes of its upstream stages) next to its artifacts.
Rerunning a stage whose stamp matches is a no-op; running a stage whose
dependencies carry stale stamps fails instead of silently reusing old
artifacts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from .analysis import ScorePanel, export_panel_csv, pairwise_correlation, polarization_index
from .audio import AudioBuffer
from .augment import AugmentPools, active_level_normalize
from .config import ExperimentConfig, SystemSection
from .dsp import load_spectrogram, save_spectrogram
from .errors import DataError
from .fusion import (
    FusionModel,
    fit_logistic_fusion,
    fuse_weighted,
    load_fusion_model,
    partial_fake_override,
    save_fusion_model,
)
from .lcnn import LcnnConfig, load_checkpoint, save_checkpoint
from .manifest import (
    NATIVE_CODECS,
    CorpusMultiplier,
    TrialManifest,
    compose_corpus,
    derive_seed,
    load_manifest,
    save_manifest,
)
from .scores import ScoreSet, cllr, compute_eer, load_labels, load_scores, minmax_normalize, save_labels, save_scores
from .synth import SyntheticCorpusConfig, generate_noise_pool, generate_rir_pool, generate_synthetic_corpus
from .training import (
    TrainSetup,
    _load_features,
    feature_bins,
    make_feature_fn,
    score_manifest,
    train_loop,
    write_training_log,
)

logger = logging.getLogger(__name__)

STAGES = ("gen-corpus", "extract", "train", "score", "fuse-fit", "fuse-apply", "eval", "analyze")

_STAGE_DEPS = {
    "gen-corpus": (),
    "extract": ("gen-corpus",),
    "train": ("extract",),
    "score": ("train",),
    "fuse-fit": ("score",),
    "fuse-apply": ("fuse-fit",),
    "eval": ("fuse-apply",),
    "analyze": ("score",),
}

SPLITS = ("train", "dev", "eval")


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=str)


def _section_dict(dc) -> dict:
    return dataclasses.asdict(dc) if dc is not None else {}


class Workspace:
    """Paths and stamp bookkeeping under one work_dir."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.root = Path(cfg.work_dir)

    # -- layout -----------------------------------------------------------
    def corpus_dir(self, split):
        return self.root / "corpus" / split

    def manifest_path(self, split):
        return self.corpus_dir(split) / "manifest.tsv"

    def labels_path(self, split):
        return self.corpus_dir(split) / "labels.tsv"

    def feature_dir(self, system, split):
        return self.root / "features" / system / split

    def checkpoint_path(self, system):
        return self.root / "models" / f"{system}.ckpt"

    def log_path(self, system):
        return self.root / "logs" / f"{system}.csv"

    def score_path(self, system, split):
        return self.root / "scores" / f"{system}.{split}.txt"

    def fused_score_path(self):
        return self.root / "scores" / "fused.eval.txt"

    def fusion_model_path(self):
        return self.root / "fusion" / "model.txt"

    def report_path(self):
        return self.root / "report" / "eval_report.json"

    def analysis_dir(self):
        return self.root / "analysis"

    def pools(self) -> AugmentPools:
        return AugmentPools.from_dirs(
            noise_dir=self.root / "corpus" / "noise",
            rir_dir=self.root / "corpus" / "rir",
            codec_hooks=self.cfg.codec_hooks,
        )

    # -- stamps -----------------------------------------------------------
    def _stamp_path(self, stage, system=None):
        name = stage if system is None else f"{stage}__{system}"
        return self.root / "stamps" / f"{name}.json"

    def stage_hash(self, stage: str, system: str | None = None) -> str:
        cfg = self.cfg
        if stage == "gen-corpus":
            payload = {"corpus": _section_dict(cfg.corpus), "seed": cfg.seed}
        elif stage == "extract":
            sys_cfg = cfg.systems[system]
            payload = {
                "up": self.stage_hash("gen-corpus"),
                "feature": sys_cfg.feature,
                "normalize_input": sys_cfg.normalize_input,
            }
        elif stage == "train":
            sys_cfg = cfg.systems[system]
            payload = {
                "up": self.stage_hash("extract", system),
                "system": _section_dict(sys_cfg),
                "augment": _section_dict(cfg.augment),
                "seed": cfg.seed,
            }
        elif stage == "score":
            payload = {
                "up": self.stage_hash("train", system),
                "eval_chunk": cfg.systems[system].training.eval_chunk,
            }
        elif stage == "fuse-fit":
            payload = {"up": {s: self.stage_hash("score", s) for s in sorted(cfg.systems)}}
        elif stage == "fuse-apply":
            payload = {
                "up": self.stage_hash("fuse-fit"),
                "scores": {s: self.stage_hash("score", s) for s in sorted(cfg.systems)},
                "fusion": _section_dict(cfg.fusion),
            }
        elif stage == "eval":
            payload = {
                "up": self.stage_hash("fuse-apply"),
                "scores": {s: self.stage_hash("score", s) for s in sorted(cfg.systems)},
            }
        elif stage == "analyze":
            payload = {"up": {s: self.stage_hash("score", s) for s in sorted(cfg.systems)}}
        else:
            raise ValueError(f"unknown stage {stage!r}")
        return hashlib.sha256(_canonical(payload).encode()).hexdigest()

    def read_stamp(self, stage, system=None) -> dict | None:
        p = self._stamp_path(stage, system)
        if not p.is_file():
            return None
        return json.loads(p.read_text())

    def write_stamp(self, stage, system=None) -> None:
        p = self._stamp_path(stage, system)
        p.parent.mkdir(parents=True, exist_ok=True)
        stamp = {
            "stage": stage,
            "system": system,
            "hash": self.stage_hash(stage, system),
            "seed": self.cfg.seed,
        }
        p.write_text(json.dumps(stamp, sort_keys=True, indent=1) + "\n")

    def is_current(self, stage, system=None) -> bool:
        stamp = self.read_stamp(stage, system)
        return stamp is not None and stamp["hash"] == self.stage_hash(stage, system)

    def require_dependency(self, stage, system=None) -> None:
        for dep in _STAGE_DEPS[stage]:
            targets = [system] if dep in ("extract", "train", "score") and system is not None \
                else ([None] if dep not in ("extract", "train", "score")
                      else sorted(self.cfg.systems))
            for target in targets:
                stamp = self.read_stamp(dep, target)
                if stamp is None:
                    raise DataError(
                        f"stage {stage!r} needs {dep!r}"
                        + (f" for system {target!r}" if target else "")
                        + "; run it first"
                    )
                if stamp["hash"] != self.stage_hash(dep, target):
                    raise DataError(
                        f"stale artifacts: {dep!r}"
                        + (f" for system {target!r}" if target else "")
                        + " was produced under a different config; rerun it"
                    )


def _system_feature_fn(sys_cfg: SystemSection):
    base = make_feature_fn(sys_cfg.feature)
    if not sys_cfg.normalize_input:
        return base

    def with_norm(audio: AudioBuffer):
        normalized, _ = active_level_normalize(audio)
        return base(normalized)

    return with_norm


def _model_config(sys_cfg: SystemSection) -> LcnnConfig:
    return LcnnConfig(
        input_bins=feature_bins(sys_cfg.feature),
        embedding_dim=sys_cfg.embedding_dim,
        dropout_rate=sys_cfg.training.dropout,
        width_scale=sys_cfg.training.width_scale,
    )


# ---------------------------------------------------------------------------
# stage implementations
# ---------------------------------------------------------------------------

def _stage_gen_corpus(ws: Workspace) -> None:
    cfg = ws.cfg
    for split, per_class in (
        ("train", cfg.corpus.train_per_class),
        ("dev", cfg.corpus.dev_per_class),
        ("eval", cfg.corpus.eval_per_class),
    ):
        families = cfg.corpus.families
        if split == "eval" and cfg.corpus.eval_families is not None:
            families = cfg.corpus.eval_families
        corpus_cfg = SyntheticCorpusConfig(
            sample_rate=cfg.corpus.sample_rate, families=families
        )
        manifest = generate_synthetic_corpus(
            ws.corpus_dir(split),
            per_class,
            derive_seed(cfg.seed, "corpus", split),
            cfg=corpus_cfg,
            prefix=split,
        )
        if cfg.corpus.compose and split in ("train", "dev"):
            pools = AugmentPools.from_dirs(codec_hooks=cfg.codec_hooks)
            manifest, achieved = compose_corpus(
                manifest,
                CorpusMultiplier(
                    codecs=cfg.corpus.compose_codecs,
                    sample_count=cfg.corpus.compose_sample,
                ),
                available_codecs=NATIVE_CODECS + tuple(cfg.codec_hooks),
                rng=np.random.default_rng(derive_seed(cfg.seed, "compose", split)),
            )
            logger.info("composed %s corpus at %dx multiplier", split, achieved)
        save_manifest(ws.manifest_path(split), manifest)
        save_labels(ws.labels_path(split), manifest.labels())
    generate_noise_pool(ws.root / "corpus" / "noise", cfg.corpus.noise_files,
                        derive_seed(cfg.seed, "noisepool"), sr=cfg.corpus.sample_rate)
    generate_rir_pool(ws.root / "corpus" / "rir", cfg.corpus.rir_files,
                      derive_seed(cfg.seed, "rirpool"), sr=cfg.corpus.sample_rate)


def _stage_extract(ws: Workspace, system: str) -> None:
    sys_cfg = ws.cfg.systems[system]
    feature_fn = _system_feature_fn(sys_cfg)
    pools = ws.pools()
    for split in ("dev", "eval"):
        out_dir = ws.feature_dir(system, split)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = load_manifest(ws.manifest_path(split))
        for entry in manifest:
            spec = _load_features(entry, feature_fn, pools)
            save_spectrogram(out_dir / f"{entry.utt_id}.spg", spec)
        logger.info("extracted %d %s features for %s", len(manifest), split, system)


def _load_feature_dir(ws: Workspace, system: str, split: str, manifest: TrialManifest) -> dict:
    out = {}
    for entry in manifest:
        path = ws.feature_dir(system, split) / f"{entry.utt_id}.spg"
        if not path.is_file():
            raise DataError(f"missing feature file {path}; rerun extract")
        out[entry.utt_id] = load_spectrogram(path)
    return out


def _stage_train(ws: Workspace, system: str) -> None:
    cfg = ws.cfg
    sys_cfg = cfg.systems[system]
    train_manifest = load_manifest(ws.manifest_path("train"))
    dev_manifest = load_manifest(ws.manifest_path("dev"))
    setup = TrainSetup(
        train_manifest=train_manifest,
        dev_manifest=dev_manifest,
        feature_fn=_system_feature_fn(sys_cfg),
        model_cfg=_model_config(sys_cfg),
        loss_cfg=sys_cfg.loss_config(),
        pools=ws.pools(),
        policy=cfg.augment,
        batch_size=sys_cfg.training.batch_size,
        base_lr=sys_cfg.training.base_lr,
        chunk_range=(sys_cfg.training.chunk_min, sys_cfg.training.chunk_max),
        dev_chunk=sys_cfg.training.dev_chunk,
        dev_features=_load_feature_dir(ws, system, "dev", dev_manifest),
    )
    result = train_loop(setup, epochs=sys_cfg.training.epochs,
                        seed=derive_seed(cfg.seed, "train", system))
    ws.checkpoint_path(system).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        ws.checkpoint_path(system),
        result.params,
        meta={
            "system": system,
            "config_hash": ws.stage_hash("train", system),
            "seed": cfg.seed,
            "best_epoch": result.best_epoch,
        },
    )
    ws.log_path(system).parent.mkdir(parents=True, exist_ok=True)
    write_training_log(ws.log_path(system), result.log_rows)


def _stage_score(ws: Workspace, system: str) -> None:
    cfg = ws.cfg
    sys_cfg = cfg.systems[system]
    params, _ = load_checkpoint(ws.checkpoint_path(system))
    eval_chunk = sys_cfg.training.eval_chunk or None
    ws.score_path(system, "dev").parent.mkdir(parents=True, exist_ok=True)
    for split in ("dev", "eval"):
        manifest = load_manifest(ws.manifest_path(split))
        features = _load_feature_dir(ws, system, split, manifest)
        scores = score_manifest(
            params,
            sys_cfg.loss_config(),
            manifest,
            feature_fn=_system_feature_fn(sys_cfg),
            eval_chunk=eval_chunk,
            features=features,
        )
        save_scores(ws.score_path(system, split), scores)


def _stage_fuse_fit(ws: Workspace) -> None:
    cfg = ws.cfg
    names = sorted(cfg.systems)
    labels = load_labels(ws.labels_path("dev"))
    normalized = {}
    for name in names:
        normalized[name] = minmax_normalize(load_scores(ws.score_path(name, "dev")))
    ids = normalized[names[0]].ids()
    matrix = np.vstack([
        np.array([normalized[n].as_dict()[u] for u in ids]) for n in names
    ])
    model = fit_logistic_fusion(matrix, [labels[u] for u in ids], system_names=names)
    ws.fusion_model_path().parent.mkdir(parents=True, exist_ok=True)
    save_fusion_model(ws.fusion_model_path(), model)
    logger.info("fusion weights: %s bias %.4f", model.weights, model.bias)


def _stage_fuse_apply(ws: Workspace) -> None:
    cfg = ws.cfg
    model = load_fusion_model(ws.fusion_model_path())
    system_scores = {
        name: minmax_normalize(load_scores(ws.score_path(name, "eval")))
        for name in cfg.systems
    }
    fused = fuse_weighted(system_scores, model)
    if cfg.fusion.pf_scores:
        pf = load_scores(cfg.fusion.pf_scores)
        fused = partial_fake_override(fused, pf, tau=cfg.fusion.pf_threshold)
    save_scores(ws.fused_score_path(), fused)


def _stage_eval(ws: Workspace) -> dict:
    cfg = ws.cfg
    labels = load_labels(ws.labels_path("eval"))
    report = {"systems": {}, "fused": {}}
    for name in sorted(cfg.systems):
        scores = load_scores(ws.score_path(name, "eval")).with_labels(labels)
        eer, thr = compute_eer(scores)
        report["systems"][name] = {"eer": eer, "threshold": thr, "cllr": cllr(scores)}
    fused = load_scores(ws.fused_score_path()).with_labels(labels)
    eer, thr = compute_eer(fused)
    report["fused"] = {"eer": eer, "threshold": thr, "cllr": cllr(fused)}
    ws.report_path().parent.mkdir(parents=True, exist_ok=True)
    ws.report_path().write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    for name, r in report["systems"].items():
        logger.info("eval %-24s EER %6.2f%%  Cllr %.3f", name, 100 * r["eer"], r["cllr"])
    logger.info("eval %-24s EER %6.2f%%  Cllr %.3f", "fused", 100 * report["fused"]["eer"],
                report["fused"]["cllr"])
    return report


def _stage_analyze(ws: Workspace) -> dict:
    cfg = ws.cfg
    labels = load_labels(ws.labels_path("eval"))
    systems = {
        name: minmax_normalize(load_scores(ws.score_path(name, "eval")))
        for name in sorted(cfg.systems)
    }
    panel = ScorePanel(systems=systems, labels=labels)
    created = export_panel_csv(panel, ws.analysis_dir())
    report = {
        "polarization": {n: polarization_index(s) for n, s in systems.items()},
        "files": created,
    }
    names = panel.names()
    if len(names) >= 2:
        for cls in ("bonafide", "spoof"):
            matrix = pairwise_correlation(panel, class_filter=cls)
            report[f"correlation_{cls}"] = {
                f"{names[i]}|{names[j]}": float(matrix[i, j])
                for i in range(len(names)) for j in range(i + 1, len(names))
            }
    (ws.analysis_dir() / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=1) + "\n"
    )
    return report


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

_PER_SYSTEM_STAGES = ("extract", "train", "score")


def run_pipeline(cfg: ExperimentConfig, stages) -> dict:
    """Run the requested stages in canonical order; returns stage results.

    Completed up-to-date stages are skipped; missing or stale dependencies
    raise DataError instead of reusing questionable artifacts.
    """
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ValueError(f"unknown stages: {unknown}")
    ws = Workspace(cfg)
    ws.root.mkdir(parents=True, exist_ok=True)
    results: dict = {}
    for stage in STAGES:
        if stage not in stages:
            continue
        if stage in _PER_SYSTEM_STAGES:
            for system in sorted(cfg.systems):
                ws.require_dependency(stage, system)
                if ws.is_current(stage, system):
                    logger.info("%s (%s): up to date, skipping", stage, system)
                    continue
                logger.info("running %s (%s)", stage, system)
                {"extract": _stage_extract, "train": _stage_train,
                 "score": _stage_score}[stage](ws, system)
                ws.write_stamp(stage, system)
        else:
            ws.require_dependency(stage)
            if ws.is_current(stage):
                logger.info("%s: up to date, skipping", stage)
                continue
            logger.info("running %s", stage)
            if stage == "gen-corpus":
                _stage_gen_corpus(ws)
            elif stage == "fuse-fit":
                _stage_fuse_fit(ws)
            elif stage == "fuse-apply":
                _stage_fuse_apply(ws)
            elif stage == "eval":
                results["eval"] = _stage_eval(ws)
            elif stage == "analyze":
                results["analyze"] = _stage_analyze(ws)
            ws.write_stamp(stage)
    return results
