import json

import numpy as np
import pytest

from spoofkit.cli import main
from spoofkit.config import load_config
from spoofkit.errors import DataError, UsageError
from spoofkit.pipeline import STAGES, Workspace, run_pipeline
from spoofkit.scores import ScoreSet, load_scores, save_scores

MINI_CONFIG = """
[experiment]
work_dir = {work_dir}
seed = 4242

[corpus]
train_per_class = 6
dev_per_class = 4
eval_per_class = 6
noise_files = 3
rir_files = 2

[augment]
noise_prob = 0.5
reverb_prob = 0.25
noise_snr_db = 10,20

[training]
epochs = 1
batch_size = 8
chunk_min = 30
chunk_max = 40
dev_chunk = 32
width_scale = 0.125
dropout = 0.0

[system:sysa]
feature = stft1024
loss = am_softmax
embedding_dim = 128

[system:sysb]
feature = stft1024
loss = center_joint
embedding_dim = 128
"""


@pytest.fixture(scope="module")
def mini_run(tmp_path_factory):
    """One full pipeline run shared by the read-only assertions below."""
    root = tmp_path_factory.mktemp("mini")
    cfg_path = root / "exp.ini"
    cfg_path.write_text(MINI_CONFIG.format(work_dir=root / "work"))
    for stage in STAGES:
        assert main([stage, "--config", str(cfg_path)]) == 0
    return root, cfg_path


class TestConfigParsing:
    def test_minimal(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text(MINI_CONFIG.format(work_dir=tmp_path / "w"))
        cfg = load_config(p)
        assert cfg.seed == 4242
        assert set(cfg.systems) == {"sysa", "sysb"}
        assert cfg.systems["sysb"].loss == "center_joint"
        assert cfg.systems["sysa"].training.epochs == 1
        assert cfg.training.chunk_min == 30

    def test_system_override(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text(MINI_CONFIG.format(work_dir=tmp_path / "w")
                     + "\n[system:sysc]\nfeature = stft2048\nepochs = 3\n")
        cfg = load_config(p)
        assert cfg.systems["sysc"].training.epochs == 3
        assert cfg.systems["sysa"].training.epochs == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(UsageError):
            load_config(tmp_path / "absent.ini")

    def test_missing_experiment_section(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[corpus]\ntrain_per_class = 3\n")
        with pytest.raises(UsageError):
            load_config(p)

    def test_unknown_feature_rejected(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[experiment]\nwork_dir = w\nseed = 1\n"
                     "[system:x]\nfeature = mel\n")
        with pytest.raises(UsageError):
            load_config(p)

    def test_no_systems_rejected(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[experiment]\nwork_dir = w\nseed = 1\n")
        with pytest.raises(UsageError):
            load_config(p)


class TestPipelineArtifacts:
    def test_all_artifacts_exist(self, mini_run):
        root, cfg_path = mini_run
        ws = Workspace(load_config(cfg_path))
        for split in ("train", "dev", "eval"):
            assert ws.manifest_path(split).is_file()
        for system in ("sysa", "sysb"):
            assert ws.checkpoint_path(system).is_file()
            assert ws.log_path(system).is_file()
            for split in ("dev", "eval"):
                assert ws.score_path(system, split).is_file()
        assert ws.fusion_model_path().is_file()
        assert ws.fused_score_path().is_file()
        assert ws.report_path().is_file()
        assert (ws.analysis_dir() / "report.json").is_file()
        assert (ws.analysis_dir() / "pair_sysa__sysb.csv").is_file()

    def test_report_structure(self, mini_run):
        root, cfg_path = mini_run
        ws = Workspace(load_config(cfg_path))
        report = json.loads(ws.report_path().read_text())
        assert set(report["systems"]) == {"sysa", "sysb"}
        for r in report["systems"].values():
            assert 0.0 <= r["eer"] <= 1.0
        assert 0.0 <= report["fused"]["eer"] <= 1.0

    def test_stamps_written(self, mini_run):
        root, cfg_path = mini_run
        ws = Workspace(load_config(cfg_path))
        assert ws.is_current("gen-corpus")
        assert ws.is_current("train", "sysa")
        assert ws.is_current("analyze")

    def test_rerun_is_noop(self, mini_run):
        root, cfg_path = mini_run
        ws = Workspace(load_config(cfg_path))
        before = ws.checkpoint_path("sysa").stat().st_mtime_ns
        assert main(["train", "--config", str(cfg_path)]) == 0
        assert ws.checkpoint_path("sysa").stat().st_mtime_ns == before

    def test_score_files_cover_eval(self, mini_run):
        root, cfg_path = mini_run
        ws = Workspace(load_config(cfg_path))
        scores = load_scores(ws.score_path("sysa", "eval"))
        assert len(scores) == 12


class TestStaleness:
    def test_missing_dependency(self, tmp_path):
        cfg_path = tmp_path / "c.ini"
        cfg_path.write_text(MINI_CONFIG.format(work_dir=tmp_path / "w"))
        cfg = load_config(cfg_path)
        with pytest.raises(DataError, match="run it first"):
            run_pipeline(cfg, ["train"])

    def test_stale_dependency_detected(self, tmp_path):
        cfg_path = tmp_path / "c.ini"
        cfg_path.write_text(MINI_CONFIG.format(work_dir=tmp_path / "w"))
        run_pipeline(load_config(cfg_path), ["gen-corpus"])
        # changing the corpus config invalidates gen-corpus; extract must
        # refuse to run against the stale artifacts
        cfg_path.write_text(
            MINI_CONFIG.format(work_dir=tmp_path / "w").replace(
                "train_per_class = 6", "train_per_class = 7"))
        with pytest.raises(DataError, match="stale"):
            run_pipeline(load_config(cfg_path), ["extract"])


class TestPartialFakeWiring:
    def test_override_applied(self, mini_run, tmp_path):
        root, cfg_path = mini_run
        cfg = load_config(cfg_path)
        ws = Workspace(cfg)
        fused_before = load_scores(ws.fused_score_path())
        # flag two utterances as partially fake with high probability
        ids = fused_before.ids()
        pf = ScoreSet(entries=[(u, 0.9 if u in ids[:2] else 0.1) for u in ids])
        pf_path = tmp_path / "pf.txt"
        save_scores(pf_path, pf)
        cfg2_path = tmp_path / "pf.ini"
        cfg2_path.write_text(
            MINI_CONFIG.format(work_dir=root / "work")
            + f"\n[fusion]\npf_scores = {pf_path}\n")
        assert main(["fuse-apply", "--config", str(cfg2_path)]) == 0
        fused_after = load_scores(Workspace(load_config(cfg2_path)).fused_score_path())
        floor = min(s for _, s in fused_before.entries)
        after = fused_after.as_dict()
        for u in ids[:2]:
            assert after[u] == pytest.approx(floor)


class TestCliExitCodes:
    def test_usage_error_no_command(self):
        assert main([]) == 1

    def test_usage_error_bad_config(self, tmp_path):
        assert main(["gen-corpus", "--config", str(tmp_path / "nope.ini")]) == 1

    def test_data_error_missing_dependency(self, tmp_path):
        cfg_path = tmp_path / "c.ini"
        cfg_path.write_text(MINI_CONFIG.format(work_dir=tmp_path / "w"))
        assert main(["score", "--config", str(cfg_path)]) == 2

    def test_unknown_flag_is_usage_error(self, tmp_path):
        assert main(["gen-corpus", "--conf", "x"]) == 1
