import json

import numpy as np
import pytest

from drcn.data import NoiseSpec, make_synthetic_corpus
from drcn.errors import ConfigError, NonFiniteError
from drcn.model import ModelConfig, build_model
from drcn.optim import LrSchedule
from drcn.trainer import TrainConfig, evaluate, split_corpus, train


def tiny_config(tmp_path=None, **kw):
    base = dict(model=ModelConfig.miniature(), epochs=3, batch_size=4, synthetic_count=5,
                synthetic_size=50, stride=5, val_count=1, seed=11,
                out_dir=None if tmp_path is None else str(tmp_path))
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    def test_defaults_follow_protocol(self):
        cfg = TrainConfig()
        assert (cfg.batch_size, cfg.patch_size, cfg.epochs) == (64, 45, 100)
        assert cfg.schedule == LrSchedule(1e-3, 0.1, 60)
        assert cfg.model == ModelConfig.gray()

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="epoch"):
            TrainConfig.from_dict({"epoch": 3})
        with pytest.raises(ConfigError, match="warmup"):
            TrainConfig.from_dict({"schedule": {"warmup": 1}})
        with pytest.raises(ConfigError, match="width"):
            TrainConfig.from_dict({"model": {"width": 1}})

    def test_from_dict_roundtrip(self):
        cfg = tiny_config()
        assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_split(self):
        images = make_synthetic_corpus(10, 45)
        train_set, val = split_corpus(images, TrainConfig(val_fraction=0.1))
        assert len(val) == 1 and len(train_set) == 9
        assert not {n for n, _ in val} & {n for n, _ in train_set}


class TestEvaluate:
    def test_zero_residual_model_reports_noisy_psnr(self):
        model = build_model(ModelConfig.miniature()).eval()
        model.last.params["weight"][...] = 0
        result = evaluate(model, make_synthetic_corpus(3, 40), NoiseSpec(25, 0))
        for row in result.rows:
            assert row.denoised_psnr == pytest.approx(row.noisy_psnr, abs=0.05)

    def test_noisy_baseline_sigma25(self):
        model = build_model(ModelConfig.miniature()).eval()
        result = evaluate(model, make_synthetic_corpus(4, 96), NoiseSpec(25, 3))
        for row in result.rows:
            assert abs(row.noisy_psnr - 20.17) < 0.3

    def test_any_size(self):
        model = build_model(ModelConfig.miniature()).eval()
        result = evaluate(model, [("odd", np.full((1, 37, 81), 0.5))], NoiseSpec(15, 0))
        assert len(result.rows) == 1 and np.isfinite(result.mean_psnr)

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate(build_model(ModelConfig.miniature()).eval(), [], NoiseSpec())


class TestTrain:
    def test_runs_and_logs(self, tmp_path):
        result = train(tiny_config(tmp_path))
        assert len(result.log) == 3 and all(np.isfinite(r.loss) for r in result.log)
        assert (tmp_path / "epoch_0003.drcn").exists()
        lines = (tmp_path / "train.log").read_text().splitlines()
        assert lines[0].startswith("# config ")
        assert lines[1].startswith("epoch=0 loss=")
        summary = json.loads((tmp_path / "run.json").read_text())
        assert summary["steps"] == result.steps and len(summary["epochs"]) == 3

    def test_same_seed_identical_checkpoints(self, tmp_path):
        a = train(tiny_config(tmp_path / "a"))
        b = train(tiny_config(tmp_path / "b"))
        assert (tmp_path / "a/epoch_0003.drcn").read_bytes() == (tmp_path / "b/epoch_0003.drcn").read_bytes()
        assert a.step_losses == b.step_losses

    def test_resume_matches_uninterrupted(self, tmp_path):
        full = train(tiny_config(tmp_path / "full", epochs=4))
        train(tiny_config(tmp_path / "part", epochs=2))
        resumed = train(tiny_config(tmp_path / "part", epochs=4), resume=str(tmp_path / "part/epoch_0002.drcn"))
        assert resumed.step_losses == full.step_losses
        assert [r.loss for r in resumed.log] == [r.loss for r in full.log]
        assert (tmp_path / "full/epoch_0004.drcn").read_bytes() == (tmp_path / "part/epoch_0004.drcn").read_bytes()

    def test_resume_config_mismatch(self, tmp_path):
        train(tiny_config(tmp_path, epochs=1))
        with pytest.raises(ConfigError):
            train(tiny_config(tmp_path, epochs=2, model=ModelConfig.reduced()),
                  resume=str(tmp_path / "epoch_0001.drcn"))

    def test_non_finite_aborts(self):
        images = make_synthetic_corpus(3, 45)
        images[0] = ("bad", np.full((1, 45, 45), np.nan))
        with pytest.raises(NonFiniteError):
            train(tiny_config(epochs=1, val_count=0), images=images)

    def test_corpus_dir(self, tmp_path):
        from drcn.data import write_corpus
        write_corpus(make_synthetic_corpus(3, 46, seed=2), tmp_path / "corpus")
        result = train(tiny_config(epochs=1, corpus_dir=str(tmp_path / "corpus")))
        assert result.steps > 0
