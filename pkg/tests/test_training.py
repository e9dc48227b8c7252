import numpy as np
import pytest

from spoofkit.augment import AugmentPolicy, AugmentPools
from spoofkit.errors import NumericalError
from spoofkit.lcnn import LcnnConfig
from spoofkit.losses import LossConfig
from spoofkit.manifest import ManifestEntry, TrialManifest
from spoofkit.synth import generate_synthetic_corpus
from spoofkit.training import (
    TrainSetup,
    feature_bins,
    make_feature_fn,
    score_manifest,
    train_loop,
    write_training_log,
)

TINY_MODEL = LcnnConfig(input_bins=257, embedding_dim=128, dropout_rate=0.0,
                        width_scale=0.125)


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("tinycorpus")
    train = generate_synthetic_corpus(root / "train", 8, seed=41, prefix="tr")
    dev = generate_synthetic_corpus(root / "dev", 4, seed=42, prefix="dv")
    return train, dev


def tiny_setup(train, dev, **overrides):
    defaults = dict(
        train_manifest=train,
        dev_manifest=dev,
        feature_fn=make_feature_fn("stft1024"),
        model_cfg=TINY_MODEL,
        loss_cfg=LossConfig(kind="am_softmax"),
        batch_size=4,
        chunk_range=(40, 60),
        dev_chunk=50,
    )
    defaults.update(overrides)
    return TrainSetup(**defaults)


class TestFeatureFns:
    def test_bins_match_model_contract(self):
        assert feature_bins("stft1024") == 257
        assert feature_bins("stft2048") == 513
        assert feature_bins("cqt") == 393

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_feature_fn("mel")


class TestTrainLoop:
    def test_zero_epochs_returns_initial_params(self, tiny_corpus):
        train, dev = tiny_corpus
        result = train_loop(tiny_setup(train, dev), epochs=0, seed=7)
        assert result.log_rows == []
        assert result.best_epoch == -1

    def test_deterministic_logs(self, tiny_corpus):
        train, dev = tiny_corpus
        r1 = train_loop(tiny_setup(train, dev), epochs=2, seed=7)
        r2 = train_loop(tiny_setup(train, dev), epochs=2, seed=7)
        assert r1.log_rows == r2.log_rows
        for name in r1.params.tensors:
            np.testing.assert_array_equal(r1.params.tensors[name].data,
                                          r2.params.tensors[name].data)

    def test_seed_changes_trajectory(self, tiny_corpus):
        train, dev = tiny_corpus
        r1 = train_loop(tiny_setup(train, dev), epochs=1, seed=7)
        r2 = train_loop(tiny_setup(train, dev), epochs=1, seed=8)
        assert r1.log_rows != r2.log_rows

    def test_best_checkpoint_tracks_min_dev_loss(self, tiny_corpus):
        train, dev = tiny_corpus
        result = train_loop(tiny_setup(train, dev), epochs=3, seed=7)
        dev_losses = [row[2] for row in result.log_rows]
        assert result.best_epoch == int(np.argmin(dev_losses))

    def test_empty_manifest_rejected(self, tiny_corpus):
        train, dev = tiny_corpus
        with pytest.raises(ValueError):
            tiny_setup(TrialManifest(entries=[]), dev)

    def test_divergence_reports_batch(self, tiny_corpus, monkeypatch):
        train, dev = tiny_corpus
        setup = tiny_setup(train, dev, base_lr=1e12)  # blow up on purpose
        with pytest.raises(NumericalError, match="batch"):
            train_loop(setup, epochs=2, seed=7)

    def test_online_policy_changes_training(self, tiny_corpus, tmp_path):
        from spoofkit.synth import generate_noise_pool

        train, dev = tiny_corpus
        generate_noise_pool(tmp_path / "noise", 2, seed=1)
        pools = AugmentPools.from_dirs(noise_dir=tmp_path / "noise")
        plain = train_loop(tiny_setup(train, dev), epochs=1, seed=7)
        noisy = train_loop(
            tiny_setup(train, dev, pools=pools,
                       policy=AugmentPolicy(noise_prob=1.0, reverb_prob=0.0)),
            epochs=1, seed=7)
        assert plain.log_rows != noisy.log_rows


class TestScoring:
    def test_score_set_covers_manifest(self, tiny_corpus):
        train, dev = tiny_corpus
        result = train_loop(tiny_setup(train, dev), epochs=0, seed=7)
        scores = score_manifest(result.params, LossConfig(kind="am_softmax"), dev,
                                make_feature_fn("stft1024"))
        assert set(scores.ids()) == {e.utt_id for e in dev}
        assert scores.labels == dev.labels()

    def test_am_scores_use_cosine_head(self, tiny_corpus):
        train, dev = tiny_corpus
        result = train_loop(tiny_setup(train, dev), epochs=0, seed=7)
        scores = score_manifest(result.params, LossConfig(kind="am_softmax"), dev,
                                make_feature_fn("stft1024"))
        # cosine-head scores are bounded by 2 * scale
        assert np.all(np.abs(scores.values()) <= 2 * 20.0)

    def test_eval_chunk_changes_scores(self, tiny_corpus):
        train, dev = tiny_corpus
        result = train_loop(tiny_setup(train, dev), epochs=0, seed=7)
        full = score_manifest(result.params, LossConfig(), dev, make_feature_fn("stft1024"))
        chunked = score_manifest(result.params, LossConfig(), dev,
                                 make_feature_fn("stft1024"), eval_chunk=48)
        assert full.values().tolist() != chunked.values().tolist()


def test_training_log_format(tmp_path):
    rows = [(0, 1.5, 1.25, 3e-4), (1, 1.25, 1.0, 3e-4)]
    p = tmp_path / "log.csv"
    write_training_log(p, rows)
    lines = p.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,dev_loss,lr"
    assert lines[1].startswith("0,1.5,1.25,")
    assert len(lines) == 3
