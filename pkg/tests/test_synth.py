import numpy as np
import pytest

from spoofkit.audio import read_wav
from spoofkit.dsp import STFT_1024, low_band_slice, stft_log_power
from spoofkit.synth import (
    FAMILIES,
    SyntheticCorpusConfig,
    generate_noise_pool,
    generate_rir_pool,
    generate_synthetic_corpus,
)


def spectral_tilt_statistic(path):
    """Slope of mean log power against log frequency over 300-4000 Hz.

    Fitted by least squares; spoofs with an upward tilt shift come out
    higher.  Independent of any trained model.
    """
    spec = low_band_slice(stft_log_power(read_wav(path), STFT_1024), 4000.0)
    sel = spec.bin_frequencies >= 300.0
    mean_lp = spec.values[sel].mean(axis=1)
    lf = np.log(spec.bin_frequencies[sel])
    design = np.vstack([lf, np.ones_like(lf)]).T
    slope, _ = np.linalg.lstsq(design, mean_lp, rcond=None)[0]
    return float(slope)


class TestGenerateCorpus:
    def test_counts_and_labels(self, tmp_path):
        man = generate_synthetic_corpus(tmp_path, 5, seed=1)
        assert len(man) == 10
        labels = [e.label for e in man]
        assert labels.count("bonafide") == 5 and labels.count("spoof") == 5
        wavs = list((tmp_path / "wav").glob("*.wav"))
        assert len(wavs) == 10

    def test_deterministic(self, tmp_path):
        man_a = generate_synthetic_corpus(tmp_path / "a", 3, seed=77)
        man_b = generate_synthetic_corpus(tmp_path / "b", 3, seed=77)
        for ea, eb in zip(man_a, man_b):
            assert ea.utt_id == eb.utt_id
            with open(ea.path, "rb") as fa, open(eb.path, "rb") as fb:
                assert fa.read() == fb.read()

    def test_families_recorded(self, tmp_path):
        man = generate_synthetic_corpus(tmp_path, 8, seed=5)
        for e in man:
            if e.label == "spoof":
                assert e.recipe.extra["artifact"] in FAMILIES
            else:
                assert "artifact" not in e.recipe.extra

    def test_family_restriction(self, tmp_path):
        cfg = SyntheticCorpusConfig(families=("splice",))
        man = generate_synthetic_corpus(tmp_path, 4, seed=2, cfg=cfg)
        fams = {e.recipe.extra["artifact"] for e in man if e.label == "spoof"}
        assert fams == {"splice"}

    def test_durations_and_rate(self, tmp_path):
        man = generate_synthetic_corpus(tmp_path, 4, seed=9)
        for e in man:
            buf = read_wav(e.path)
            assert buf.sample_rate == 16000
            assert 1.0 <= buf.duration <= 3.0

    def test_invalid_family_rejected(self):
        with pytest.raises(ValueError):
            SyntheticCorpusConfig(families=("vocoder",))

    def test_n_per_class_validated(self, tmp_path):
        with pytest.raises(ValueError):
            generate_synthetic_corpus(tmp_path, 0, seed=1)


def test_tilt_statistic_separates_classes(tmp_path):
    # classifier-free check that the corpus is learnable: AUC of the tilt
    # statistic over 200 utterances
    man = generate_synthetic_corpus(tmp_path, 100, seed=123)
    bona = np.array([spectral_tilt_statistic(e.path) for e in man if e.label == "bonafide"])
    spoof = np.array([spectral_tilt_statistic(e.path) for e in man if e.label == "spoof"])
    auc = np.mean([(s > b) + 0.5 * (s == b) for s in spoof for b in bona])
    assert auc > 0.9


class TestPools:
    def test_noise_pool(self, tmp_path):
        pool = generate_noise_pool(tmp_path, 6, seed=3)
        assert len(pool) == 6
        for path in pool.values():
            buf = read_wav(path)
            assert buf.rms() > 0.0

    def test_rir_pool_has_direct_path(self, tmp_path):
        pool = generate_rir_pool(tmp_path, 3, seed=4)
        for path in pool.values():
            buf = read_wav(path)
            assert np.argmax(np.abs(buf.samples)) == 0

    def test_pools_deterministic(self, tmp_path):
        a = generate_noise_pool(tmp_path / "a", 2, seed=8)
        b = generate_noise_pool(tmp_path / "b", 2, seed=8)
        for ka, kb in zip(sorted(a), sorted(b)):
            with open(a[ka], "rb") as fa, open(b[kb], "rb") as fb:
                assert fa.read() == fb.read()
