"""Trial manifests: the (utterance, path, label, recipe) lists that drive
training, scoring and corpus composition.

Manifest file format, one UTF-8 line per entry:

    utt_id<TAB>path<TAB>label<TAB>key=value key=value ...

The fourth field is a space-separated key=value list (never JSON); "-"
means an empty recipe.  Known keys map onto AugmentRecipe fields; unknown
keys are preserved in recipe.extra.  Paths are stored relative to the
manifest file and resolved against its directory on load.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError

LABELS = ("bonafide", "spoof", "unknown")

NATIVE_CODECS = ("alaw", "mulaw")
EXTERNAL_CODECS = ("mp3", "m4a", "ogg", "opus", "g722")
ALL_CODECS = NATIVE_CODECS + EXTERNAL_CODECS


@dataclass(frozen=True)
class AugmentRecipe:
    """One utterance's augmentation settings.

    noise is (noise_id, snr_db); codec is a companding law or an external
    encoder name; extra carries free-form metadata (e.g. the synthetic
    corpus records its artifact family here).
    """

    noise: tuple[str, float] | None = None
    rir: str | None = None
    speed: float | None = None
    codec: str | None = None
    normalize: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.noise is not None and not np.isfinite(self.noise[1]):
            raise ValueError("noise snr_db must be finite")
        if self.speed is not None and not 0.9 <= self.speed <= 1.1:
            raise ValueError(f"speed factor must be in [0.9, 1.1], got {self.speed}")

    def is_empty(self) -> bool:
        return (
            self.noise is None
            and self.rir is None
            and self.speed is None
            and self.codec is None
            and not self.normalize
            and not self.extra
        )

    def to_field(self) -> str:
        parts = []
        if self.noise is not None:
            parts.append(f"noise={self.noise[0]}")
            parts.append(f"snr_db={self.noise[1]:g}")
        if self.rir is not None:
            parts.append(f"rir={self.rir}")
        if self.speed is not None:
            parts.append(f"speed={self.speed:g}")
        if self.codec is not None:
            parts.append(f"codec={self.codec}")
        if self.normalize:
            parts.append("normalize=1")
        for k in sorted(self.extra):
            parts.append(f"{k}={self.extra[k]}")
        return " ".join(parts) if parts else "-"

    @classmethod
    def from_field(cls, text: str) -> "AugmentRecipe":
        text = text.strip()
        if not text or text == "-":
            return cls()
        kv = {}
        for token in text.split():
            if "=" not in token:
                raise DataError(f"malformed recipe token {token!r}")
            k, v = token.split("=", 1)
            kv[k] = v
        noise = None
        if "noise" in kv:
            noise = (kv.pop("noise"), float(kv.pop("snr_db", "nan")))
        speed = float(kv.pop("speed")) if "speed" in kv else None
        rir = kv.pop("rir", None)
        codec = kv.pop("codec", None)
        normalize = kv.pop("normalize", "0") not in ("0", "")
        return cls(noise=noise, rir=rir, speed=speed, codec=codec,
                   normalize=normalize, extra=kv)


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    path: str
    label: str
    recipe: AugmentRecipe = field(default_factory=AugmentRecipe)

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")


@dataclass
class TrialManifest:
    entries: list[ManifestEntry]

    def __post_init__(self):
        ids = [e.utt_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({u for u in ids if ids.count(u) > 1})
            raise ValueError(f"duplicate utt_ids in manifest: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def labels(self) -> dict[str, str]:
        return {e.utt_id: e.label for e in self.entries}


def save_manifest(path, manifest: TrialManifest) -> None:
    path = Path(path)
    lines = []
    for e in manifest.entries:
        rel = e.path
        try:
            rel = str(Path(e.path).relative_to(path.parent))
        except ValueError:
            pass
        lines.append(f"{e.utt_id}\t{rel}\t{e.label}\t{e.recipe.to_field()}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path) -> TrialManifest:
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields")
        utt_id, rel, label, recipe_field = fields
        full = rel if Path(rel).is_absolute() else str(path.parent / rel)
        entries.append(
            ManifestEntry(utt_id=utt_id, path=full, label=label,
                          recipe=AugmentRecipe.from_field(recipe_field))
        )
    return TrialManifest(entries=entries)


def derive_seed(master_seed: int, *scope) -> int:
    """Stable per-(epoch, utterance, ...) seed for reproducible parallel work.

    Hash-derived so recipes re-randomize across epochs while staying
    independent of worker scheduling.
    """
    key = ":".join([str(master_seed)] + [str(s) for s in scope])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class CorpusMultiplier:
    """How compose_corpus expands a base manifest.

    codecs lists the variant codecs to attempt (native laws always work;
    external names need a registered encoder hook); include_normalized adds
    the level-normalized copy.  sample_count picks that many entries
    uniformly without replacement from the expansion; None keeps all.
    """

    codecs: tuple[str, ...] = ALL_CODECS
    include_normalized: bool = True
    sample_count: int | None = None


def compose_corpus(
    manifest: TrialManifest,
    multiplier: CorpusMultiplier,
    available_codecs: tuple[str, ...] = NATIVE_CODECS,
    rng: np.random.Generator | None = None,
) -> tuple[TrialManifest, int]:
    """Expand a manifest with codec and normalization variants, then sample.

    Per base entry emits the original, one variant per usable codec, and
    (optionally) a level-normalized variant; with all 7 codecs usable this
    is a 9x expansion.  Unavailable codecs are skipped and the achieved
    per-utterance multiplier is returned alongside the manifest.
    """
    if len(manifest) == 0:
        raise ValueError("base manifest is empty")
    usable = [c for c in multiplier.codecs if c in available_codecs]
    entries = []
    for e in manifest:
        entries.append(e)
        for codec in usable:
            entries.append(
                ManifestEntry(
                    utt_id=f"{e.utt_id}-{codec}",
                    path=e.path,
                    label=e.label,
                    recipe=replace(e.recipe, codec=codec),
                )
            )
        if multiplier.include_normalized:
            entries.append(
                ManifestEntry(
                    utt_id=f"{e.utt_id}-norm",
                    path=e.path,
                    label=e.label,
                    recipe=replace(e.recipe, normalize=True),
                )
            )
    achieved = 1 + len(usable) + (1 if multiplier.include_normalized else 0)

    if multiplier.sample_count is not None:
        if multiplier.sample_count > len(entries):
            raise ValueError(
                f"requested {multiplier.sample_count} entries but only "
                f"{len(entries)} are available"
            )
        if rng is None:
            rng = np.random.default_rng(0)
        picked = rng.choice(len(entries), size=multiplier.sample_count, replace=False)
        entries = [entries[i] for i in sorted(picked)]
    return TrialManifest(entries=entries), achieved
