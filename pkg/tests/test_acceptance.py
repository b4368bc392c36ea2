"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line (also repeated in the terminal
summary). Run with ``pytest tests/test_acceptance.py -s``.
"""
import zlib

import numpy as np
import pytest

from drcn.checkpoint import dumps, load_checkpoint, save_checkpoint
from drcn.data import NoiseSpec
from drcn.hdc import hdc_max_gap, hdc_validate, receptive_field
from drcn.model import ModelConfig, build_model, count_params
from drcn.metrics import psnr
from drcn.optim import AdamState, LrSchedule, adam_step, mse_loss
from drcn.tensor import conv2d_naive
from drcn.trainer import TrainConfig, _flat_params, evaluate, split_corpus, load_images, train
from drcn.layers import conv2d_forward

from conftest import ACCEPTANCE_LINES
from test_layers import LAYER_KINDS, conv_configs, gradient_check, make_layer, random_conv
from test_model import model_gradient_errors
from test_trainer import tiny_config


def report(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_1_hdc_worked_examples():
    good = hdc_max_gap([1, 2, 5], 3)
    bad = hdc_max_gap([1, 2, 9], 3)
    ok = (good[1] == 2 and hdc_validate([1, 2, 5]).valid
          and bad[1] == 5 and not hdc_validate([1, 2, 9]).valid)
    report(1, "HDC worked examples", ok, f"[1,2,5] M2={good[1]}, [1,2,9] M2={bad[1]}")


def test_2_parameter_counts():
    gray = count_params(build_model(ModelConfig.gray()))
    color = count_params(build_model(ModelConfig.color()))
    ok = (abs(gray.total - 3.3e5) <= 0.05 * 3.3e5 and abs(color.total - 3.4e5) <= 0.05 * 3.4e5
          and gray.conv_weights == 334_528 and color.conv_weights == 340_032)
    report(2, "parameter counts", ok,
           f"gray total {gray.total} (weights {gray.conv_weights}), "
           f"color total {color.total} (weights {color.conv_weights})")


def test_3_gradient_checks():
    worst = {}
    for kind in LAYER_KINDS:
        rng = np.random.default_rng(zlib.crc32(kind.encode()))
        layer = make_layer(kind, rng)
        worst[kind] = max(gradient_check(layer, rng.standard_normal((2, 4, 6, 6)), rng).values())
    rng = np.random.default_rng(99)
    model = build_model(ModelConfig.miniature(), 11)
    for _, layer, key in model.named_parameters():
        if key in ("bias", "beta"):
            layer.params[key][...] = rng.standard_normal(layer.params[key].shape) * 0.1
    x = rng.random((2, 1, 8, 8))
    worst["model"] = max(model_gradient_errors(model, x, rng.standard_normal(x.shape) * 0.1).values())
    top = max(worst, key=worst.get)
    report(3, "gradient checks", worst[top] < 1e-4,
           f"{len(worst)} checks, worst {top} rel err {worst[top]:.2e} (< 1e-4)")


def test_4_conv_oracle():
    worst = 0.0
    for cfg in conv_configs(200):
        rng = np.random.default_rng(cfg["seed"])
        layer = random_conv(rng, cfg["cin"], cfg["cout"], cfg["k"], cfg["r"])
        x = rng.standard_normal((cfg["n"], cfg["cin"], cfg["h"], cfg["w"]))
        ref = conv2d_naive(x, layer.weight, layer.bias, layer.spec)
        worst = max(worst, float(np.max(np.abs(conv2d_forward(layer, x) - ref))))
    report(4, "conv oracle equivalence", worst < 1e-12, f"200 configs, max abs diff {worst:.2e}")


DESK_SCALE = dict(
    model=ModelConfig.reduced(), sigma=25.0, synthetic_count=12, synthetic_size=96,
    batch_size=8, epochs=190, schedule=LrSchedule(1e-3, 0.1, 160),
    val_count=3, eval_every=0, seed=0,
)


@pytest.mark.slow
def test_5_desk_scale_denoising(tmp_path):
    cfg = TrainConfig(**DESK_SCALE, out_dir=str(tmp_path))
    result = train(cfg)
    _, held_out = split_corpus(load_images(cfg), cfg)
    ev = evaluate(result.model, held_out, NoiseSpec(25.0, 1000))
    gain = ev.mean_psnr - ev.mean_noisy_psnr
    ok = result.steps >= 2000 and len(held_out) == 3 and gain >= 3.0
    report(5, "desk-scale denoising", ok,
           f"{result.steps} steps, held-out noisy {ev.mean_noisy_psnr:.2f} dB -> "
           f"denoised {ev.mean_psnr:.2f} dB (+{gain:.2f} dB, need +3.00)")


@pytest.mark.slow
def test_6_overfit_single_patch():
    from drcn.data import add_gaussian_noise, synthetic_image
    clean = synthetic_image(0, 45, 1, 0)[None]
    noisy = add_gaussian_noise(clean, NoiseSpec(25, 0))
    label = noisy - clean
    model = build_model(ModelConfig.miniature(), 0).train()
    opt = AdamState()
    for step in range(1, 5001):
        loss, grad = mse_loss(model.forward(noisy), label)
        if loss < 1e-4:
            break
        model.backward(grad)
        adam_step(opt, *_flat_params(model), 3e-3)
    report(6, "overfit single patch", loss < 1e-4, f"MSE {loss:.3e} after {opt.t} Adam steps")


def test_7_determinism_and_persistence(tmp_path):
    a = train(tiny_config(tmp_path / "a"))
    b = train(tiny_config(tmp_path / "b"))
    identical = (tmp_path / "a/epoch_0003.drcn").read_bytes() == (tmp_path / "b/epoch_0003.drcn").read_bytes()

    model, opt, info = load_checkpoint(str(tmp_path / "a/epoch_0003.drcn"))
    save_checkpoint(model, opt, str(tmp_path / "copy.drcn"), epoch=info.epoch, seed=info.seed, extra=info.extra)
    roundtrip = (tmp_path / "copy.drcn").read_bytes() == (tmp_path / "a/epoch_0003.drcn").read_bytes()
    roundtrip &= all(np.array_equal(p, q) for (_, l1, k1), (_, l2, k2) in
                     zip(model.named_parameters(), a.model.named_parameters())
                     for p, q in [(l1.params[k1], l2.params[k2])])

    train(tiny_config(tmp_path / "c", epochs=1))
    resumed = train(tiny_config(tmp_path / "c"), resume=str(tmp_path / "c/epoch_0001.drcn"))
    resumes = resumed.step_losses == a.step_losses and dumps(resumed.model, resumed.optimizer) == dumps(a.model, a.optimizer)
    report(7, "determinism and persistence", identical and roundtrip and resumes,
           f"same-seed checkpoints identical={identical}, roundtrip bit-exact={roundtrip}, "
           f"resume reproduces {len(a.step_losses)} step losses={resumes}")


def test_8_metric_correctness():
    clean = np.full((1, 16, 16), 100 / 255)
    noisy = clean + np.where(np.indices((1, 16, 16)).sum(0) % 2, 25, -25) / 255
    p = psnr(noisy, clean)
    same = psnr(clean, clean).psnr_db
    extreme = psnr(np.zeros((1, 4, 4)), np.ones((1, 4, 4))).psnr_db
    ok = abs(p.psnr_db - 20.17) <= 0.01 and p.mse == 625 and same == float("inf") and extreme == 0.0
    report(8, "metric correctness", ok, f"MSE {p.mse:g} -> {p.psnr_db:.4f} dB, identical -> {same}, 0 vs 255 -> {extreme} dB")


def test_9_receptive_field():
    full = build_model(ModelConfig.gray()).receptive_field()
    stack = receptive_field([(3, 1), (3, 2), (3, 5)])
    report(9, "receptive field", full == 57 and stack == 17, f"gray model {full}, [1,2,5] stack {stack}")
