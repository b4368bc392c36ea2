"""Training loop and dataset evaluation."""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import checkpoint as ckpt
from .data import NoiseSpec, PatchDataset, add_gaussian_noise, derive_seed, load_corpus, make_synthetic_corpus, philox
from .errors import ConfigError, NonFiniteError
from .metrics import mean_psnr, psnr
from .model import Model, ModelConfig, build_model, denoise
from .optim import AdamState, LrSchedule, adam_step, mse_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Everything a run depends on. Defaults are the full-scale training protocol."""

    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: LrSchedule = field(default_factory=LrSchedule)
    sigma: float = 25.0
    epochs: int = 100
    batch_size: int = 64
    patch_size: int = 45
    stride: int = 35
    patches_per_image: int | None = None
    augment: bool = True
    seed: int = 0
    val_fraction: float = 0.1
    val_count: int | None = None
    corpus_dir: str | None = None
    synthetic_count: int = 12
    synthetic_size: int = 64
    out_dir: str | None = None
    checkpoint_every: int = 1
    eval_every: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        data = dict(data)
        if "model" in data:
            data["model"] = ModelConfig.from_dict(data["model"])
        if "schedule" in data:
            sched = data["schedule"]
            bad = sorted(set(sched) - {f.name for f in fields(LrSchedule)})
            if bad:
                raise ConfigError(f"unknown schedule keys: {bad}")
            data["schedule"] = LrSchedule(**sched)
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self):
        self.model.validate()
        NoiseSpec(self.sigma)
        if self.epochs < 0 or self.batch_size < 1 or self.stride < 1 or self.patch_size < 1:
            raise ConfigError("epochs, batch_size, stride and patch_size must be positive")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_psnr: float | None
    lr: float
    seconds: float
    steps: int

    def line(self) -> str:
        vp = "nan" if self.val_psnr is None else f"{self.val_psnr:.4f}"
        return (f"epoch={self.epoch} loss={self.loss:.8e} val_psnr={vp} "
                f"lr={self.lr:.1e} seconds={self.seconds:.2f}")


@dataclass
class TrainResult:
    model: Model
    optimizer: AdamState
    log: list
    checkpoint_path: str | None = None
    step_losses: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.step_losses)


@dataclass
class EvalRow:
    name: str
    noisy_psnr: float
    denoised_psnr: float


@dataclass
class EvalResult:
    rows: list

    @property
    def mean_psnr(self) -> float:
        return mean_psnr(r.denoised_psnr for r in self.rows)

    @property
    def mean_noisy_psnr(self) -> float:
        return mean_psnr(r.noisy_psnr for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "mean_psnr": self.mean_psnr,
            "mean_noisy_psnr": self.mean_noisy_psnr,
            "images": [asdict(r) for r in self.rows],
        }

    def table(self) -> str:
        width = max([len("image")] + [len(r.name) for r in self.rows])
        lines = [f"{'image':<{width}}  {'noisy':>9}  {'denoised':>9}"]
        lines += [f"{r.name:<{width}}  {r.noisy_psnr:9.4f}  {r.denoised_psnr:9.4f}" for r in self.rows]
        lines.append(f"{'mean':<{width}}  {self.mean_noisy_psnr:9.4f}  {self.mean_psnr:9.4f}")
        return "\n".join(lines)


def image_noise(sigma: float, seed: int, index: int) -> NoiseSpec:
    """Noise for the ``index``-th image of an evaluation set."""
    return NoiseSpec(sigma, seed + index)


def evaluate(model: Model, images, noise: NoiseSpec) -> EvalResult:
    """Denoise each whole image with seeded noise and report PSNR per image."""
    images = list(images)
    if not images:
        raise ValueError("evaluation corpus is empty")
    rows = []
    for i, (name, clean) in enumerate(images):
        noisy = add_gaussian_noise(clean, image_noise(noise.sigma, noise.seed, i))
        restored = denoise(model, noisy[None])[0]
        rows.append(EvalRow(name, psnr(noisy, clean).psnr_db, psnr(restored, clean).psnr_db))
    return EvalResult(rows)


def split_corpus(images, cfg: TrainConfig):
    """Seeded train/validation split."""
    n = len(images)
    if cfg.val_count is not None:
        n_val = cfg.val_count
    else:
        n_val = int(round(cfg.val_fraction * n)) if n > 1 else 0
        if cfg.val_fraction > 0 and n > 1:
            n_val = max(n_val, 1)
    if n_val >= n:
        raise ConfigError(f"validation split of {n_val} leaves no training images out of {n}")
    order = philox(derive_seed(cfg.seed, 7)).permutation(n)
    val = sorted(order[:n_val])
    train = sorted(order[n_val:])
    return [images[i] for i in train], [images[i] for i in val]


def load_images(cfg: TrainConfig):
    if cfg.corpus_dir:
        images = load_corpus(cfg.corpus_dir)
        if not images:
            raise ValueError(f"no PGM/PPM images in {cfg.corpus_dir}")
        return images
    return make_synthetic_corpus(cfg.synthetic_count, cfg.synthetic_size, cfg.model.input_channels,
                                 cfg.seed)


def _flat_params(model: Model):
    params, grads = {}, {}
    for name, layer, key in model.named_parameters():
        params[name] = layer.params[key]
        grads[name] = layer.grads[key]
    return params, grads


def train_step(model: Model, opt: AdamState, batch, lr: float) -> float:
    model.train()
    pred = model.forward(batch.noisy)
    loss, grad = mse_loss(pred, batch.residual_label)
    if not np.isfinite(loss):
        sources = sorted({m.source for m in batch.meta})
        raise NonFiniteError(f"non-finite loss {loss} on batch from {sources}")
    model.backward(grad)
    params, grads = _flat_params(model)
    adam_step(opt, params, grads, lr)
    return loss


def train(cfg: TrainConfig, resume: str | None = None, images=None, on_epoch=None) -> TrainResult:
    """Run (or resume) training; fully determined by ``cfg`` and the corpus."""
    cfg.validate()
    images = load_images(cfg) if images is None else list(images)
    train_images, val_images = split_corpus(images, cfg)
    dataset = PatchDataset(train_images, cfg.patch_size, cfg.stride, cfg.patches_per_image, cfg.seed)
    if dataset.skipped:
        log.warning("%d image(s) smaller than the patch were skipped", dataset.skipped)

    history, step_losses = [], []
    if resume:
        model, opt, info = ckpt.load_checkpoint(resume)
        if model.config != cfg.model:
            raise ConfigError("checkpoint model config differs from the run config")
        opt = opt or AdamState()
        start = info.epoch
        history = [EpochRecord(**r) for r in info.extra.get("log", [])]
        step_losses = list(info.extra.get("step_losses", []))
    else:
        model, opt, start = build_model(cfg.model, cfg.seed), AdamState(), 0

    log_file = summary_path = None
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        log_file = open(os.path.join(cfg.out_dir, "train.log"), "a", encoding="utf-8")
        log_file.write("# config " + json.dumps(cfg.to_dict(), sort_keys=True) + "\n")
        summary_path = os.path.join(cfg.out_dir, "run.json")

    last_ckpt = None
    try:
        for epoch in range(start, cfg.epochs):
            t0 = time.perf_counter()
            lr = cfg.schedule.lr_at(epoch)
            losses = []
            for batch in dataset.batches(epoch, cfg.batch_size, cfg.sigma, cfg.seed, cfg.augment):
                losses.append(train_step(model, opt, batch, lr))
            step_losses.extend(losses)
            val = None
            if val_images and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
                model.eval()
                val = evaluate(model, val_images, NoiseSpec(cfg.sigma, derive_seed(cfg.seed, 9))).mean_psnr
                model.train()
            rec = EpochRecord(epoch, float(np.mean(losses)), val, lr, time.perf_counter() - t0, len(losses))
            history.append(rec)
            log.info(rec.line())
            if log_file:
                log_file.write(rec.line() + "\n")
                log_file.flush()
            if cfg.out_dir and cfg.checkpoint_every and (
                (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs
            ):
                last_ckpt = os.path.join(cfg.out_dir, f"epoch_{epoch + 1:04d}.drcn")
                extra = {
                    "log": [{**asdict(r), "seconds": 0.0} for r in history],
                    "step_losses": step_losses,
                }
                ckpt.save_checkpoint(model, opt, last_ckpt, epoch=epoch + 1, seed=cfg.seed, extra=extra)
            if on_epoch:
                on_epoch(rec)
    finally:
        if log_file:
            log_file.close()

    if summary_path:
        with open(summary_path, "w", encoding="utf-8") as fh:
            json.dump({
                "config": cfg.to_dict(),
                "epochs": [asdict(r) for r in history],
                "steps": len(step_losses),
                "final_loss": history[-1].loss if history else None,
                "checkpoint": last_ckpt,
            }, fh, indent=2)
    model.eval()
    return TrainResult(model, opt, history, last_ckpt, step_losses)
