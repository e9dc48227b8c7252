"""Experiment configuration: a plain-text key=value file with section
headers (INI grammar, parsed with configparser).

Sections:

  [experiment]       work_dir, seed
  [corpus]           synthetic corpus sizes, artifact families, pools,
                     optional codec/normalization composition
  [augment]          online augmentation policy for training
  [training]         defaults for every system (epochs, batch size, ...)
  [system:NAME]      one per single system: feature, loss, embedding_dim,
                     normalize_input, plus any [training] override
  [fusion]           calibration split and the optional partially-fake
                     override score file

See the README for the full grammar and defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentPolicy
from .errors import UsageError
from .losses import LossConfig
from .training import FEATURE_KINDS

_VALID_LOSSES = ("am_softmax", "center_joint")


@dataclass(frozen=True)
class CorpusSection:
    train_per_class: int = 200
    dev_per_class: int = 100
    eval_per_class: int = 200
    noise_files: int = 9
    rir_files: int = 4
    sample_rate: int = 16000
    families: tuple[str, ...] = ("tilt", "phase", "splice")
    eval_families: tuple[str, ...] | None = None  # None = same as families
    compose: bool = False
    compose_codecs: tuple[str, ...] = ("alaw", "mulaw")
    compose_sample: int | None = None


@dataclass(frozen=True)
class TrainingSection:
    epochs: int = 8
    batch_size: int = 32
    base_lr: float = 3e-4
    chunk_min: int = 500
    chunk_max: int = 700
    dev_chunk: int = 200
    eval_chunk: int = 0  # 0 = score at full length
    width_scale: float = 1.0
    dropout: float = 0.5


@dataclass(frozen=True)
class SystemSection:
    name: str
    feature: str = "stft1024"
    loss: str = "am_softmax"
    embedding_dim: int = 512
    normalize_input: bool = False
    training: TrainingSection = field(default_factory=TrainingSection)

    def loss_config(self) -> LossConfig:
        return LossConfig(kind=self.loss)


@dataclass(frozen=True)
class FusionSection:
    pf_scores: str | None = None
    pf_threshold: float = 0.775


@dataclass(frozen=True)
class ExperimentConfig:
    work_dir: str
    seed: int
    corpus: CorpusSection = field(default_factory=CorpusSection)
    augment: AugmentPolicy | None = field(default_factory=AugmentPolicy)
    training: TrainingSection = field(default_factory=TrainingSection)
    systems: dict[str, SystemSection] = field(default_factory=dict)
    fusion: FusionSection = field(default_factory=FusionSection)
    codec_hooks: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.systems:
            raise UsageError("config defines no [system:NAME] sections")
        for s in self.systems.values():
            if s.feature not in FEATURE_KINDS:
                raise UsageError(f"system {s.name!r}: unknown feature {s.feature!r}")
            if s.loss not in _VALID_LOSSES:
                raise UsageError(f"system {s.name!r}: unknown loss {s.loss!r}")


def _get(section, key, conv, default):
    if key not in section:
        return default
    raw = section[key].strip()
    try:
        return conv(raw)
    except ValueError as exc:
        raise UsageError(f"bad value for {key!r}: {raw!r}") from exc


def _bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _tuple(raw: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in raw.split(",") if x.strip())


def _training_from(section, base: TrainingSection) -> TrainingSection:
    return TrainingSection(
        epochs=_get(section, "epochs", int, base.epochs),
        batch_size=_get(section, "batch_size", int, base.batch_size),
        base_lr=_get(section, "base_lr", float, base.base_lr),
        chunk_min=_get(section, "chunk_min", int, base.chunk_min),
        chunk_max=_get(section, "chunk_max", int, base.chunk_max),
        dev_chunk=_get(section, "dev_chunk", int, base.dev_chunk),
        eval_chunk=_get(section, "eval_chunk", int, base.eval_chunk),
        width_scale=_get(section, "width_scale", float, base.width_scale),
        dropout=_get(section, "dropout", float, base.dropout),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read_string(path.read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise UsageError(f"cannot parse {path}: {exc}") from exc

    if "experiment" not in parser:
        raise UsageError(f"{path}: missing [experiment] section")
    exp = parser["experiment"]
    if "work_dir" not in exp or "seed" not in exp:
        raise UsageError(f"{path}: [experiment] needs work_dir and seed")
    work_dir = exp["work_dir"].strip()
    if not Path(work_dir).is_absolute():
        work_dir = str((path.parent / work_dir).resolve())
    seed = _get(exp, "seed", int, None)

    corpus_sec = parser["corpus"] if "corpus" in parser else {}
    eval_families_raw = corpus_sec.get("eval_families", "").strip() if corpus_sec else ""
    corpus = CorpusSection(
        train_per_class=_get(corpus_sec, "train_per_class", int, 200),
        dev_per_class=_get(corpus_sec, "dev_per_class", int, 100),
        eval_per_class=_get(corpus_sec, "eval_per_class", int, 200),
        noise_files=_get(corpus_sec, "noise_files", int, 9),
        rir_files=_get(corpus_sec, "rir_files", int, 4),
        sample_rate=_get(corpus_sec, "sample_rate", int, 16000),
        families=_get(corpus_sec, "families", _tuple, ("tilt", "phase", "splice")),
        eval_families=_tuple(eval_families_raw) if eval_families_raw else None,
        compose=_get(corpus_sec, "compose", _bool, False),
        compose_codecs=_get(corpus_sec, "compose_codecs", _tuple, ("alaw", "mulaw")),
        compose_sample=_get(corpus_sec, "compose_sample", int, 0) or None,
    )

    aug_sec = parser["augment"] if "augment" in parser else {}
    enabled = _get(aug_sec, "enabled", _bool, True)
    augment = None
    if enabled:
        snr = _get(aug_sec, "noise_snr_db", _tuple, ("0", "15"))
        augment = AugmentPolicy(
            noise_prob=_get(aug_sec, "noise_prob", float, 0.5),
            reverb_prob=_get(aug_sec, "reverb_prob", float, 0.3),
            speed_prob=_get(aug_sec, "speed_prob", float, 0.0),
            snr_range_db=(float(snr[0]), float(snr[1])),
        )

    training = _training_from(parser["training"] if "training" in parser else {},
                              TrainingSection())

    systems = {}
    for section_name in parser.sections():
        if not section_name.startswith("system:"):
            continue
        name = section_name.split(":", 1)[1].strip()
        if not name:
            raise UsageError(f"{path}: empty system name in [{section_name}]")
        sec = parser[section_name]
        systems[name] = SystemSection(
            name=name,
            feature=_get(sec, "feature", str, "stft1024"),
            loss=_get(sec, "loss", str, "am_softmax"),
            embedding_dim=_get(sec, "embedding_dim", int, 512),
            normalize_input=_get(sec, "normalize_input", _bool, False),
            training=_training_from(sec, training),
        )

    fusion_sec = parser["fusion"] if "fusion" in parser else {}
    pf_raw = fusion_sec.get("pf_scores", "").strip() if fusion_sec else ""
    fusion = FusionSection(
        pf_scores=str((path.parent / pf_raw).resolve()) if pf_raw else None,
        pf_threshold=_get(fusion_sec, "pf_threshold", float, 0.775),
    )

    codec_hooks = dict(parser["codec_hooks"]) if "codec_hooks" in parser else {}

    return ExperimentConfig(
        work_dir=work_dir,
        seed=seed,
        corpus=corpus,
        augment=augment,
        training=training,
        systems=systems,
        fusion=fusion,
        codec_hooks=codec_hooks,
    )
