"""The eleven-layer multiscale dilated residual denoiser.

Layout: multiscale conv group + BN + PReLU, then ``num_blocks`` residual
HDC blocks (each three dilated conv/BN/PReLU stages under one identity
shortcut), then a plain convolution back to the image channels.  The
network predicts the noise; denoising subtracts that prediction.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError, ModeError, ShapeError
from .hdc import hdc_validate, receptive_field
from .layers import (
    BatchNormLayer,
    ConvLayer,
    Layer,
    MultiscaleGroup,
    PReLULayer,
    ResidualHDCBlock,
    Sequential,
)
from .tensor import as_tensor4


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int = 1
    feature_channels: int = 64
    multiscale: tuple = ((3, 12), (5, 20), (7, 32))
    block_dilations: tuple = (1, 2, 5)
    num_blocks: int = 3
    block_kernel: int = 3
    final_kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "multiscale", tuple((int(k), int(f)) for k, f in self.multiscale))
        object.__setattr__(self, "block_dilations", tuple(int(r) for r in self.block_dilations))

    @property
    def depth(self) -> int:
        return 1 + self.num_blocks * len(self.block_dilations) + 1

    def validate(self):
        problems = []
        if self.input_channels not in (1, 3):
            problems.append(f"input_channels must be 1 or 3, got {self.input_channels}")
        if self.feature_channels < 1:
            problems.append("feature_channels must be positive")
        if not self.multiscale:
            problems.append("multiscale group needs at least one branch")
        total = sum(f for _, f in self.multiscale)
        if total != self.feature_channels:
            problems.append(
                f"multiscale filters sum to {total}, expected feature_channels={self.feature_channels}"
            )
        for k, f in self.multiscale:
            if k < 1 or k % 2 == 0 or f < 1:
                problems.append(f"bad multiscale branch (kernel={k}, filters={f})")
        for name in ("block_kernel", "final_kernel"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                problems.append(f"{name} must be odd and positive, got {k}")
        if self.num_blocks < 0:
            problems.append("num_blocks must be nonnegative")
        if self.num_blocks:
            try:
                report = hdc_validate(self.block_dilations, max(self.block_kernel, 3))
            except ValueError as exc:
                problems.append(str(exc))
            else:
                if not report.valid:
                    problems.append(
                        f"block dilations {list(self.block_dilations)} fail the HDC check "
                        f"(gaps {list(report.gaps)})"
                    )
        if problems:
            raise ConfigError("invalid model config: " + "; ".join(problems))
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["multiscale"] = [list(b) for b in self.multiscale]
        d["block_dilations"] = list(self.block_dilations)
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {unknown}")
        return cls(**data)

    @classmethod
    def gray(cls):
        return cls()

    @classmethod
    def color(cls):
        return cls(input_channels=3)

    @classmethod
    def miniature(cls, input_channels=1):
        return cls(input_channels, 8, ((3, 2), (5, 2), (7, 4)), num_blocks=2)

    @classmethod
    def reduced(cls, input_channels=1):
        return cls(input_channels, 16, ((3, 4), (5, 4), (7, 8)), num_blocks=2)


class Model(Layer):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config.validate()
        c = config
        self.first = Sequential(
            MultiscaleGroup(c.input_channels, c.multiscale),
            BatchNormLayer(c.feature_channels),
            PReLULayer(c.feature_channels),
            names=("multiscale", "bn", "act"),
        )
        self.blocks = [
            ResidualHDCBlock(c.feature_channels, c.block_dilations, c.block_kernel)
            for _ in range(c.num_blocks)
        ]
        self.last = ConvLayer(c.feature_channels, c.input_channels, c.final_kernel)

    def children(self):
        return [("first", self.first)] + [(f"block{i}", b) for i, b in enumerate(self.blocks)] + [
            ("last", self.last)
        ]

    def forward(self, x, update_stats=True):
        x = as_tensor4(x)
        if x.shape[1] != self.config.input_channels:
            raise ShapeError(
                f"model expects {self.config.input_channels} channels, got {x.shape[1]}"
            )
        h = self.first.forward(x, update_stats)
        for block in self.blocks:
            h = block.forward(h, update_stats)
        return self.last.forward(h, update_stats)

    def backward(self, grad_out):
        g = self.last.backward(grad_out)
        for block in reversed(self.blocks):
            g = block.backward(g)
        return self.first.backward(g)

    def conv_layers(self):
        """All convolutions in declaration order, with qualified names."""
        return [(name, layer) for name, layer in iter_leaves(self) if isinstance(layer, ConvLayer)]

    def receptive_field(self) -> int:
        c = self.config
        stack = [(max(k for k, _ in c.multiscale), 1)]
        stack += [(c.block_kernel, r) for _ in range(c.num_blocks) for r in c.block_dilations]
        stack.append((c.final_kernel, 1))
        return receptive_field(stack)


def iter_leaves(layer: Layer, prefix=""):
    kids = layer.children()
    if not kids:
        yield prefix.rstrip("."), layer
        return
    for name, child in kids:
        yield from iter_leaves(child, f"{prefix}{name}.")


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    """Xavier-uniform conv weights, zero biases, BN gamma=1/beta=0, PReLU slope 0.25."""
    model = Model(config)
    rng = np.random.default_rng(seed)
    for _, conv in model.conv_layers():
        o, c, k, _ = conv.weight.shape
        bound = np.sqrt(6.0 / (c * k * k + o * k * k))
        conv.params["weight"][...] = rng.uniform(-bound, bound, size=conv.weight.shape)
    return model


@dataclass
class ParamCount:
    total: int
    breakdown: dict = field(default_factory=dict)
    conv_weights: int = 0
    conv_biases: int = 0
    batchnorm: int = 0
    prelu: int = 0


def count_params(model: Layer) -> ParamCount:
    """Count learnable scalars per leaf layer; BN running statistics are excluded."""
    result = ParamCount(0)
    for name, layer in iter_leaves(model):
        n = sum(int(a.size) for a in layer.params.values())
        if not n:
            continue
        result.breakdown[name] = n
        result.total += n
        if isinstance(layer, ConvLayer):
            result.conv_weights += int(layer.weight.size)
            result.conv_biases += int(layer.bias.size)
        elif isinstance(layer, BatchNormLayer):
            result.batchnorm += n
        elif isinstance(layer, PReLULayer):
            result.prelu += n
    return result


def model_forward(model: Model, batch) -> np.ndarray:
    """Predicted residual (noise estimate), same shape as ``batch``."""
    return model.forward(batch)


def denoise(model: Model, image, clamp=(0.0, 1.0)) -> np.ndarray:
    """x_hat = clamp(y - R(y)). Requires an inference-mode model."""
    if model.training:
        raise ModeError("denoise needs an inference-mode model; call model.eval() first")
    y = as_tensor4(image)
    x_hat = y - model.forward(y)
    if clamp is not None:
        x_hat = np.clip(x_hat, clamp[0], clamp[1])
    return x_hat
