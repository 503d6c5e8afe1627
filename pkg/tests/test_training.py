"""Training harness: determinism, checkpoint fidelity, failure handling."""

import json
import os

import numpy as np
import pytest

from thinseg.errors import ConfigurationError, DataError, NumericError
from thinseg.model import FeedbackUNet
from thinseg.optim import AdamW
from thinseg.rng import Rng, derive_seed
from thinseg.synthdata import SceneSpec, write_dataset
from thinseg.tensor import Tensor, no_grad
from thinseg.training import (
    CSV_HEADER,
    TrainConfig,
    evaluate,
    evaluate_model,
    infer,
    load_checkpoint,
    save_checkpoint,
    scene_inputs,
    train,
)


def tiny_config(**overrides):
    values = dict(epochs=2, batch_size=4, base_width=8, T=1, seed=0)
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("data"))
    write_dataset(root, SceneSpec(seed=21), 10, split=0.8)
    return root


class TestConfig:
    def test_paper_defaults(self):
        cfg = TrainConfig()
        assert cfg.lr == 5e-4
        assert cfg.weight_decay == 1e-3
        assert cfg.epochs == 100
        assert cfg.batch_size == 4
        assert cfg.T == 3
        assert cfg.w == 0.1
        assert cfg.class_weight_mode == "nmfb"
        assert cfg.base_width == 48
        assert cfg.use_ftl and cfg.use_ifl and cfg.use_ifm
        assert cfg.use_luma_channels

    def test_desk_preset(self):
        cfg = TrainConfig.desk()
        assert cfg.epochs == 30
        assert cfg.base_width == 16
        assert cfg.T == 3  # everything else keeps the paper defaults
        assert TrainConfig.desk(epochs=2).epochs == 2

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(lr=0.0)
        with pytest.raises(ConfigurationError):
            TrainConfig(epochs=-1)
        with pytest.raises(ConfigurationError):
            TrainConfig(skip_attention_mode="bogus")

    def test_from_dict_rejects_unknown_fields(self):
        with pytest.raises(ConfigurationError) as err:
            TrainConfig.from_dict({"lr": 1e-3, "momentum": 0.9})
        assert "momentum" in str(err.value)


class TestSceneInputs:
    def test_shapes_and_channel_cut(self, dataset):
        from thinseg.synthdata import load_split

        scenes = load_split(dataset, "val")
        xs, ys = scene_inputs(scenes)
        assert xs.shape == (2, 5, 64, 64)
        assert ys.shape == (2, 64, 64)
        assert ys.dtype == np.int64
        xs3, _ = scene_inputs(scenes, use_luma_channels=False)
        assert xs3.shape == (2, 3, 64, 64)
        assert np.array_equal(xs3, xs[:, :3])


class TestTrainLoop:
    def test_two_runs_are_bit_identical(self, dataset, tmp_path):
        cfg = tiny_config()
        r1 = train(cfg, dataset, str(tmp_path / "run1"))
        r2 = train(cfg, dataset, str(tmp_path / "run2"))
        with open(r1.csv_path) as f:
            csv1 = f.read()
        with open(r2.csv_path) as f:
            csv2 = f.read()
        assert csv1 == csv2
        with open(r1.checkpoint_path, "rb") as f:
            ck1 = f.read()
        with open(r2.checkpoint_path, "rb") as f:
            ck2 = f.read()
        assert ck1 == ck2
        with open(r1.checkpoint_path + ".json") as f:
            sc1 = f.read()
        with open(r2.checkpoint_path + ".json") as f:
            sc2 = f.read()
        assert sc1 == sc2

    def test_csv_layout_and_result(self, dataset, tmp_path):
        cfg = tiny_config()
        result = train(cfg, dataset, str(tmp_path / "run"))
        with open(result.csv_path) as f:
            lines = f.read().splitlines()
        assert lines[0] == CSV_HEADER
        # 8 train scenes, batch 4 -> 2 steps/epoch, 2 epochs
        assert result.steps == 4
        assert len(lines) == 1 + result.steps
        first = lines[1].split(",")
        assert first[0] == "0"
        assert len(first) == 7
        ce, dice, ftl, seg, ifl_v, total = map(float, first[1:])
        assert abs(seg - (10 * ce + 4 * dice + 0.3 * ftl)) < 1e-5
        assert abs(total - (seg + ifl_v)) < 1e-5
        # CSV rounds to 9 significant digits
        assert abs(result.initial_loss
                   - float(lines[1].split(",")[-1])) < 1e-6
        assert abs(result.final_loss
                   - float(lines[-1].split(",")[-1])) < 1e-6

    def test_disabled_terms_log_zero(self, dataset, tmp_path):
        cfg = tiny_config(epochs=1, use_ftl=False, use_ifl=False)
        result = train(cfg, dataset, str(tmp_path / "run"))
        with open(result.csv_path) as f:
            rows = [line.split(",") for line in f.read().splitlines()[1:]]
        for row in rows:
            assert float(row[3]) == 0.0  # L_FTL column
            assert float(row[5]) == 0.0  # L_IFL column
            assert abs(float(row[6]) - float(row[4])) < 1e-6

    def test_rolling_checkpoint_present(self, dataset, tmp_path):
        out = str(tmp_path / "run")
        train(tiny_config(epochs=1), dataset, out)
        assert os.path.exists(os.path.join(out, "ckpt-last.msra"))
        assert os.path.exists(os.path.join(out, "ckpt-final.msra"))
        assert os.path.exists(os.path.join(out, "ckpt-final.msra.json"))

    def test_empty_split_rejected(self, tmp_path):
        root = str(tmp_path / "data")
        write_dataset(root, SceneSpec(seed=1), 2, split=0.0)
        with pytest.raises(DataError):
            train(tiny_config(), root, str(tmp_path / "run"))

    def test_nan_loss_aborts_with_diagnostics(self, dataset, tmp_path):
        """A divergent step must stop the run and name the components."""
        cfg = tiny_config(epochs=1, lr=1e12)  # guaranteed blow-up
        with np.errstate(all="ignore"), pytest.raises(NumericError) as err:
            train(cfg, dataset, str(tmp_path / "run"))
        msg = str(err.value)
        assert "CE=" in msg and "Dice=" in msg


class TestCheckpoints:
    def test_round_trip_preserves_forward(self, dataset, tmp_path):
        cfg = tiny_config()
        result = train(cfg, dataset, str(tmp_path / "run"))
        model, opt, config, epoch, rng_state = load_checkpoint(
            result.checkpoint_path)
        assert config == cfg
        assert epoch == cfg.epochs - 1
        assert opt.t == result.steps
        rng = Rng(99)
        x = Tensor(rng.uniform(0.0, 1.0, 1 * 5 * 16 * 16)
                   .reshape(1, 5, 16, 16).astype(np.float32))
        model.eval()
        again, _, _, _, _ = load_checkpoint(result.checkpoint_path)
        again.eval()
        with no_grad():
            a = model(x).logits[-1].data
            b = again(x).logits[-1].data
        assert np.array_equal(a, b)

    def test_save_load_save_bytes(self, dataset, tmp_path):
        result = train(tiny_config(), dataset, str(tmp_path / "run"))
        model, opt, config, epoch, rng_state = load_checkpoint(
            result.checkpoint_path)
        path2 = str(tmp_path / "resaved.msra")
        save_checkpoint(path2, model, opt, config, epoch, rng_state)
        with open(result.checkpoint_path, "rb") as f:
            first = f.read()
        with open(path2, "rb") as f:
            second = f.read()
        assert first == second
        with open(result.checkpoint_path + ".json") as f:
            sidecar1 = f.read()
        with open(path2 + ".json") as f:
            sidecar2 = f.read()
        assert sidecar1 == sidecar2

    def test_sidecar_contents(self, dataset, tmp_path):
        result = train(tiny_config(), dataset, str(tmp_path / "run"))
        with open(result.checkpoint_path + ".json") as f:
            raw = f.read()
        sidecar = json.loads(raw)
        assert set(sidecar) == {"config", "epoch", "opt_step", "rng_state"}
        assert raw.endswith("\n")
        assert raw == json.dumps(sidecar, indent=2, sort_keys=True) + "\n"

    def test_missing_sidecar(self, dataset, tmp_path):
        result = train(tiny_config(epochs=1), dataset, str(tmp_path / "run"))
        os.remove(result.checkpoint_path + ".json")
        with pytest.raises(DataError):
            load_checkpoint(result.checkpoint_path)


class TestEvaluateAndInfer:
    def test_evaluate_schema(self, dataset, tmp_path):
        result = train(tiny_config(), dataset, str(tmp_path / "run"))
        report = evaluate(result.checkpoint_path, dataset, "val")
        d = report.to_dict()
        assert list(d) == ["mcIoU", "ISI-IoU", "mDice", "mAP50", "mAP95",
                           "per_class"]
        assert 0.0 <= d["mcIoU"] <= 100.0
        assert d["mAP95"] <= d["mAP50"] + 1e-9

    def test_infer_shapes_and_padding(self, dataset, tmp_path):
        result = train(tiny_config(), dataset, str(tmp_path / "run"))
        model, _, _, _, _ = load_checkpoint(result.checkpoint_path)
        rng = Rng(31)
        image = (rng.u64(50 * 70 * 3) % 256).astype(np.uint8).reshape(50, 70, 3)
        final, per_pass = infer(model, image)
        assert final.shape == (50, 70)
        assert final.dtype == np.uint8
        assert per_pass is None

    def test_infer_per_iteration(self, dataset, tmp_path):
        cfg = tiny_config(T=2)
        result = train(cfg, dataset, str(tmp_path / "run"))
        model, _, _, _, _ = load_checkpoint(result.checkpoint_path)
        rng = Rng(32)
        image = (rng.u64(64 * 64 * 3) % 256).astype(np.uint8).reshape(64, 64, 3)
        final, per_pass = infer(model, image, per_iteration=True)
        assert len(per_pass) == cfg.T + 1
        assert all(m.shape == (64, 64) for m in per_pass)
        assert np.array_equal(per_pass[-1], final)

    def test_evaluate_model_runs_in_eval_mode(self, dataset):
        from thinseg.synthdata import load_split

        cfg = tiny_config()
        model = FeedbackUNet(cfg.model_config(),
                             Rng(derive_seed(cfg.seed, 1)))
        scenes = load_split(dataset, "val")
        buffers = {n: b.copy() for n, b in model.named_buffers()}
        evaluate_model(model, scenes)
        for n, b in model.named_buffers():
            assert np.array_equal(b, buffers[n])


class TestOptimizerIntegration:
    def test_checkpoint_resume_matches_continuous(self, dataset, tmp_path):
        """Stopping after epoch 1 and resuming by hand matches the moments
        of an uninterrupted run (the save/load cycle loses nothing)."""
        from thinseg.synthdata import load_split

        cfg = tiny_config(epochs=1)
        r1 = train(cfg, dataset, str(tmp_path / "one"))
        model, opt, _, _, _ = load_checkpoint(r1.checkpoint_path)
        state1 = opt.state_arrays()
        cfg2 = tiny_config(epochs=1)
        r2 = train(cfg2, dataset, str(tmp_path / "two"))
        _, opt2, _, _, _ = load_checkpoint(r2.checkpoint_path)
        state2 = opt2.state_arrays()
        for k in state1:
            assert np.array_equal(state1[k], state2[k])
