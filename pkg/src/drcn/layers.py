"""Layers with hand-written forward and backward passes.

Every layer keeps its learnable arrays in ``params`` and the matching
gradients (filled by ``backward``) in ``grads``.  ``forward`` caches what
``backward`` needs, so calls must alternate forward/backward per batch.
"""
from __future__ import annotations

import numpy as np

from .errors import DegenerateBatchError, ShapeError
from .tensor import DTYPE, ConvSpec, as_tensor4, check_conv_args


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True

    def children(self):
        return []

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def named_parameters(self, prefix=""):
        """Yield (qualified name, owning layer, key) in declaration order."""
        for key in self.params:
            yield prefix + key, self, key
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix=""):
        for key in self.buffers:
            yield prefix + key, self, key
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def zero_grad(self):
        for _, layer, key in self.named_parameters():
            layer.grads[key] = np.zeros_like(layer.params[key])

    def forward(self, x, update_stats=True):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)


# -- convolution ------------------------------------------------------------

def im2col(xp: np.ndarray, kernel: int, dilation: int, ho: int, wo: int) -> np.ndarray:
    """Gather dilated patches of a padded input into (N, C*K*K, Ho*Wo) columns.

    Row order within a sample is (channel, ky, kx), matching
    ``weights.reshape(O, -1)``.
    """
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kernel, kernel, ho, wo), dtype=xp.dtype)
    for u in range(kernel):
        for v in range(kernel):
            cols[:, :, u, v] = xp[:, :, u * dilation:u * dilation + ho, v * dilation:v * dilation + wo]
    return cols.reshape(n, c * kernel * kernel, ho * wo)


def col2im(dcols: np.ndarray, padded_shape, kernel: int, dilation: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back onto the padded grid."""
    n, c = padded_shape[:2]
    dcols = dcols.reshape(n, c, kernel, kernel, ho, wo)
    dxp = np.zeros(padded_shape, dtype=dcols.dtype)
    for u in range(kernel):
        for v in range(kernel):
            dxp[:, :, u * dilation:u * dilation + ho, v * dilation:v * dilation + wo] += dcols[:, :, u, v]
    return dxp


def _pad(x, p):
    if not p:
        return x
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    xp[:, :, p:p + h, p:p + w] = x
    return xp


def conv2d_im2col(x, weights, bias, spec: ConvSpec) -> np.ndarray:
    x, ho, wo = check_conv_args(x, weights, bias, spec)
    cols = im2col(_pad(x, spec.padding), spec.kernel, spec.dilation, ho, wo)
    out = np.matmul(weights.reshape(spec.out_channels, -1), cols)
    out += bias[None, :, None]
    return out.reshape(x.shape[0], spec.out_channels, ho, wo)


class ConvLayer(Layer):
    """Same-padded dilated convolution (stride 1, zero padding).

    Forward keeps its im2col columns for backward when they fit in
    ``cache_limit`` bytes; larger ones are rebuilt during backward.
    """

    cache_limit = 64 * 2**20

    def __init__(self, in_channels, out_channels, kernel=3, dilation=1):
        super().__init__()
        self.spec = ConvSpec(in_channels, out_channels, kernel, dilation)
        self.params["weight"] = np.zeros(self.spec.weight_shape(), dtype=DTYPE)
        self.params["bias"] = np.zeros(out_channels, dtype=DTYPE)
        self._x = None
        self._cols = None

    @property
    def weight(self):
        return self.params["weight"]

    @property
    def bias(self):
        return self.params["bias"]

    def forward(self, x, update_stats=True):
        x, ho, wo = check_conv_args(x, self.weight, self.bias, self.spec)
        spec = self.spec
        cols = im2col(_pad(x, spec.padding), spec.kernel, spec.dilation, ho, wo)
        self._x = x
        self._cols = cols if cols.nbytes <= self.cache_limit else None
        out = np.matmul(self.weight.reshape(spec.out_channels, -1), cols)
        out += self.bias[None, :, None]
        return out.reshape(x.shape[0], spec.out_channels, ho, wo)

    def backward(self, grad_out):
        x, spec = self._x, self.spec
        n, _, h, w = x.shape
        ho, wo = spec.output_size(h, w)
        if grad_out.shape != (n, spec.out_channels, ho, wo):
            raise ShapeError(f"grad_output shape {grad_out.shape} does not match conv output")
        p = spec.padding
        padded_shape = (n, spec.in_channels, h + 2 * p, w + 2 * p)
        cols = self._cols
        if cols is None:
            cols = im2col(_pad(x, p), spec.kernel, spec.dilation, ho, wo)
        g = grad_out.reshape(n, spec.out_channels, ho * wo)
        dw = np.zeros((spec.out_channels, cols.shape[1]), dtype=DTYPE)
        for b in range(n):
            dw += g[b] @ cols[b].T
        self.grads["weight"] = dw.reshape(self.weight.shape)
        self.grads["bias"] = grad_out.sum(axis=(0, 2, 3))
        dcols = np.matmul(self.weight.reshape(spec.out_channels, -1).T, g)
        dxp = col2im(dcols, padded_shape, spec.kernel, spec.dilation, ho, wo)
        return np.ascontiguousarray(dxp[:, :, p:p + h, p:p + w]) if p else dxp


# -- batch normalization ----------------------------------------------------

class BatchNormLayer(Layer):
    """Per-channel batch normalization over (n, h, w).

    Normalizes with the biased batch variance; the running variance tracks
    the unbiased estimate, as in the original batch-norm formulation.
    """

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        if eps <= 0:
            raise ValueError("eps must be positive")
        if not 0 < momentum < 1:
            raise ValueError("momentum must lie in (0, 1)")
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels, dtype=DTYPE)
        self.params["beta"] = np.zeros(channels, dtype=DTYPE)
        self.buffers["running_mean"] = np.zeros(channels, dtype=DTYPE)
        self.buffers["running_var"] = np.ones(channels, dtype=DTYPE)
        self._cache = None

    def forward(self, x, update_stats=True):
        x = as_tensor4(x)
        if x.shape[1] != self.channels:
            raise ShapeError(f"input has {x.shape[1]} channels, batch norm expects {self.channels}")
        gamma = self.params["gamma"][None, :, None, None]
        beta = self.params["beta"][None, :, None, None]
        if not self.training:
            mean = self.buffers["running_mean"][None, :, None, None]
            var = self.buffers["running_var"][None, :, None, None]
            self._cache = ("infer", x, 1.0 / np.sqrt(var + self.eps))
            return gamma * (x - mean) * self._cache[2] + beta

        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise DegenerateBatchError(
                "train-mode batch norm needs batch*height*width >= 2 per channel"
            )
        mean = x.mean(axis=(0, 2, 3))
        centered = x - mean[None, :, None, None]
        var = np.mean(centered * centered, axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = centered * inv_std[None, :, None, None]
        if update_stats:
            mom = self.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm *= 1.0 - mom
            rm += mom * mean
            rv *= 1.0 - mom
            rv += mom * var * (m / (m - 1))
        self._cache = ("train", x_hat, inv_std)
        return gamma * x_hat + beta

    def backward(self, grad_out):
        mode, a, inv_std = self._cache
        if grad_out.shape != a.shape:
            raise ShapeError(f"grad_output shape {grad_out.shape} != {a.shape}")
        gamma = self.params["gamma"]
        if mode == "infer":
            x_hat = (a - self.buffers["running_mean"][None, :, None, None]) * inv_std
            self.grads["gamma"] = np.sum(grad_out * x_hat, axis=(0, 2, 3))
            self.grads["beta"] = grad_out.sum(axis=(0, 2, 3))
            return grad_out * (gamma[None, :, None, None] * inv_std)

        x_hat = a
        m = x_hat.shape[0] * x_hat.shape[2] * x_hat.shape[3]
        sum_g = grad_out.sum(axis=(0, 2, 3))
        sum_gx = np.sum(grad_out * x_hat, axis=(0, 2, 3))
        self.grads["gamma"] = sum_gx
        self.grads["beta"] = sum_g
        # full Jacobian: batch mean and variance both depend on the input
        scale = (gamma * inv_std / m)[None, :, None, None]
        return scale * (m * grad_out - sum_g[None, :, None, None] - x_hat * sum_gx[None, :, None, None])


# -- activation -------------------------------------------------------------

class PReLULayer(Layer):
    def __init__(self, channels, init=0.25):
        super().__init__()
        self.channels = channels
        self.params["slope"] = np.full(channels, init, dtype=DTYPE)
        self._x = None

    def forward(self, x, update_stats=True):
        x = as_tensor4(x)
        if x.shape[1] != self.channels:
            raise ShapeError(f"input has {x.shape[1]} channels, PReLU expects {self.channels}")
        self._x = x
        a = self.params["slope"][None, :, None, None]
        return np.where(x >= 0, x, a * x)

    def backward(self, grad_out):
        x = self._x
        if grad_out.shape != x.shape:
            raise ShapeError(f"grad_output shape {grad_out.shape} != {x.shape}")
        neg = x < 0
        self.grads["slope"] = np.sum(np.where(neg, grad_out * x, 0.0), axis=(0, 2, 3))
        a = self.params["slope"][None, :, None, None]
        return np.where(neg, a * grad_out, grad_out)


# -- composites -------------------------------------------------------------

class Sequential(Layer):
    def __init__(self, *layers, names=None):
        super().__init__()
        self.layers = list(layers)
        self.names = list(names) if names else [str(i) for i in range(len(layers))]

    def children(self):
        return list(zip(self.names, self.layers))

    def forward(self, x, update_stats=True):
        for layer in self.layers:
            x = layer.forward(x, update_stats)
        return x

    def backward(self, grad_out):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out


class MultiscaleGroup(Layer):
    """Parallel same-padded convolutions of different kernel sizes, concatenated on channels."""

    def __init__(self, in_channels, branches=((3, 12), (5, 20), (7, 32))):
        super().__init__()
        self.branches = [ConvLayer(in_channels, filters, kernel) for kernel, filters in branches]
        self.out_channels = sum(f for _, f in branches)

    def children(self):
        return [(f"branch{i}", b) for i, b in enumerate(self.branches)]

    def forward(self, x, update_stats=True):
        outs = [b.forward(x, update_stats) for b in self.branches]
        if len({o.shape[2:] for o in outs}) != 1:
            raise AssertionError("multiscale branches produced different spatial sizes")
        return np.concatenate(outs, axis=1)

    def backward(self, grad_out):
        grad_in = None
        start = 0
        for b in self.branches:
            stop = start + b.spec.out_channels
            g = b.backward(grad_out[:, start:stop])
            grad_in = g if grad_in is None else grad_in + g
            start = stop
        return grad_in


class ResidualHDCBlock(Layer):
    """Identity shortcut around conv -> BN -> PReLU triples with hybrid dilation rates."""

    def __init__(self, channels=64, dilations=(1, 2, 5), kernel=3):
        super().__init__()
        self.channels = channels
        self.dilations = tuple(dilations)
        self.stages = [
            Sequential(
                ConvLayer(channels, channels, kernel, r),
                BatchNormLayer(channels),
                PReLULayer(channels),
                names=("conv", "bn", "act"),
            )
            for r in self.dilations
        ]

    def children(self):
        return [(f"stage{i}", s) for i, s in enumerate(self.stages)]

    def residual(self, x, update_stats=True):
        """The branch F(x) without the shortcut."""
        for stage in self.stages:
            x = stage.forward(x, update_stats)
        return x

    def forward(self, x, update_stats=True):
        x = as_tensor4(x)
        if x.shape[1] != self.channels:
            raise ShapeError(f"residual block expects {self.channels} channels, got {x.shape[1]}")
        return x + self.residual(x, update_stats)

    def backward(self, grad_out):
        g = grad_out
        for stage in reversed(self.stages):
            g = stage.backward(g)
        return grad_out + g


# -- functional surface -----------------------------------------------------

def conv2d_forward(layer: ConvLayer, x):
    return layer.forward(x)


def batchnorm_forward(layer: BatchNormLayer, x):
    return layer.forward(x)


def prelu_forward(layer: PReLULayer, x):
    return layer.forward(x)


def multiscale_forward(group: MultiscaleGroup, x):
    return group.forward(x)


def residual_block_forward(block: ResidualHDCBlock, x):
    return block.forward(x)


def layer_backward(layer: Layer, cached_input, grad_output):
    """Vector-Jacobian product of ``layer`` at ``cached_input``.

    Re-runs the forward pass without touching running statistics, then
    returns ``(grad_input, {param name: grad})``.
    """
    layer.forward(cached_input, update_stats=False)
    grad_in = layer.backward(np.asarray(grad_output, dtype=DTYPE))
    param_grads = {name: owner.grads[key].copy() for name, owner, key in layer.named_parameters()}
    return grad_in, param_grads
