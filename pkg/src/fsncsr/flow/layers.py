"""Invertible layers. Activations are NHWC tensors; log-dets are per sample."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..numerics import ops
from ..numerics.autodiff import Tensor
from ..numerics.optim import ParamStore

Params = Mapping[str, Tensor]


def squeeze2(x: Tensor) -> Tensor:
    """Fold each 2x2 spatial block into channels (order: dy, dx, c)."""
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"cannot squeeze odd spatial size {h}x{w}")
    x = ops.reshape(x, (n, h // 2, 2, w // 2, 2, c))
    x = ops.transpose(x, (0, 1, 3, 2, 4, 5))
    return ops.reshape(x, (n, h // 2, w // 2, 4 * c))


def unsqueeze2(x: Tensor) -> Tensor:
    n, h, w, c4 = x.shape
    c = c4 // 4
    x = ops.reshape(x, (n, h, w, 2, 2, c))
    x = ops.transpose(x, (0, 1, 3, 2, 4, 5))
    return ops.reshape(x, (n, 2 * h, 2 * w, c))


class ConvNet:
    """Two 3x3 same-padded convolutions with tanh between; last layer zero-initialized."""

    def __init__(self, name: str, in_ch: int, hidden: int, out_ch: int):
        self.name = name
        self.in_ch, self.hidden, self.out_ch = in_ch, hidden, out_ch

    def register(self, store: ParamStore, rng: np.random.Generator) -> None:
        std = 1.0 / np.sqrt(9 * self.in_ch)
        store.add(f"{self.name}.w1", rng.standard_normal((3, 3, self.in_ch, self.hidden)) * std)
        store.add(f"{self.name}.b1", np.zeros(self.hidden))
        store.add(f"{self.name}.w2", np.zeros((3, 3, self.hidden, self.out_ch)))
        store.add(f"{self.name}.b2", np.zeros(self.out_ch))

    def __call__(self, p: Params, x: Tensor) -> Tensor:
        h = ops.tanh(ops.conv2d(x, p[f"{self.name}.w1"]) + p[f"{self.name}.b1"])
        return ops.conv2d(h, p[f"{self.name}.w2"]) + p[f"{self.name}.b2"]


class ActNorm:
    def __init__(self, name: str, channels: int):
        self.name = name
        self.channels = channels

    def register(self, store: ParamStore, rng: np.random.Generator) -> None:
        store.add(f"{self.name}.scale", np.ones(self.channels))
        store.add(f"{self.name}.bias", np.zeros(self.channels))

    def data_init(self, store: ParamStore, x: np.ndarray) -> None:
        """Per-channel zero mean / unit variance on ``x``; flat channels keep scale 1."""
        mean = x.mean(axis=(0, 1, 2))
        std = x.std(axis=(0, 1, 2))
        scale = np.ones_like(std)
        live = std > 1e-8
        scale[live] = 1.0 / std[live]
        store[f"{self.name}.bias"] = -mean
        store[f"{self.name}.scale"] = scale

    def _scale(self, p: Params) -> Tensor:
        s = p[f"{self.name}.scale"]
        if np.any(s.data == 0.0):
            raise ZeroDivisionError(f"{self.name}: zero actnorm scale")
        return s

    def forward(self, p: Params, x: Tensor, cond: Tensor | None = None):
        s = self._scale(p)
        y = (x + p[f"{self.name}.bias"]) * s
        logdet = ops.log(ops.absolute(s)).sum() * float(x.shape[1] * x.shape[2])
        return y, logdet

    def inverse(self, p: Params, y: Tensor, cond: Tensor | None = None):
        s = self._scale(p)
        x = y / s - p[f"{self.name}.bias"]
        logdet = ops.log(ops.absolute(s)).sum() * float(y.shape[1] * y.shape[2])
        return x, -logdet


class InvMix1x1:
    """Per-pixel channel mixing y = W x with an unconstrained W."""

    def __init__(self, name: str, channels: int):
        self.name = name
        self.channels = channels

    def register(self, store: ParamStore, rng: np.random.Generator) -> None:
        store.add(f"{self.name}.weight", np.eye(self.channels))

    def forward(self, p: Params, x: Tensor, cond: Tensor | None = None):
        w = p[f"{self.name}.weight"]
        y = _mix(x, w)
        logdet = ops.logabsdet(w) * float(x.shape[1] * x.shape[2])
        return y, logdet

    def inverse(self, p: Params, y: Tensor, cond: Tensor | None = None):
        w = p[f"{self.name}.weight"].data
        sign, value = np.linalg.slogdet(w)
        if sign == 0 or value < np.log(1e-12):
            raise np.linalg.LinAlgError(f"{self.name}: singular mixing matrix")
        w_inv = Tensor(np.linalg.inv(w))
        x = _mix(y, w_inv)
        return x, Tensor(-value * y.shape[1] * y.shape[2])


def _mix(x: Tensor, w: Tensor) -> Tensor:
    n, h, wd, c = x.shape
    flat = ops.reshape(x, (n * h * wd, c))
    out = ops.matmul(flat, ops.transpose(w, (1, 0)))
    return ops.reshape(out, (n, h, wd, c))


def _scale_and_shift(raw: Tensor, channels: int, clamp: float):
    log_scale = ops.clamp(raw[..., :channels], -clamp, clamp)
    shift = raw[..., channels:]
    return log_scale, shift


class NoiseInjector:
    """Elementwise affine map whose scale and shift depend only on the condition."""

    def __init__(self, name: str, channels: int, cond_channels: int, hidden: int, clamp: float):
        self.name = name
        self.channels = channels
        self.clamp = clamp
        self.net = ConvNet(f"{name}.net", cond_channels, hidden, 2 * channels)

    def register(self, store: ParamStore, rng: np.random.Generator) -> None:
        self.net.register(store, rng)

    def _params(self, p: Params, cond: Tensor):
        log_scale, shift = _scale_and_shift(self.net(p, cond), self.channels, self.clamp)
        if not log_scale.is_finite() or not shift.is_finite():
            raise FloatingPointError(f"{self.name}: non-finite scale")
        return log_scale, shift

    def forward(self, p: Params, x: Tensor, cond: Tensor):
        log_scale, shift = self._params(p, cond)
        y = x * ops.exp(log_scale) + shift
        return y, log_scale.sum(axis=(1, 2, 3))

    def inverse(self, p: Params, y: Tensor, cond: Tensor):
        log_scale, shift = self._params(p, cond)
        x = (y - shift) * ops.exp(-log_scale)
        return x, -log_scale.sum(axis=(1, 2, 3))


class AffineCoupling:
    """Second channel half transformed by scale/shift computed from the first half and the condition."""

    def __init__(self, name: str, channels: int, cond_channels: int, hidden: int, clamp: float):
        if channels < 2:
            raise ValueError("coupling needs at least 2 channels")
        self.name = name
        self.channels = channels
        self.split = channels // 2
        self.clamp = clamp
        self.net = ConvNet(f"{name}.net", self.split + cond_channels, hidden, 2 * (channels - self.split))

    def register(self, store: ParamStore, rng: np.random.Generator) -> None:
        self.net.register(store, rng)

    def _params(self, p: Params, xa: Tensor, cond: Tensor):
        raw = self.net(p, ops.concat([xa, cond], axis=-1))
        log_scale, shift = _scale_and_shift(raw, self.channels - self.split, self.clamp)
        if not log_scale.is_finite() or not shift.is_finite():
            raise FloatingPointError(f"{self.name}: non-finite scale")
        return log_scale, shift

    def forward(self, p: Params, x: Tensor, cond: Tensor):
        xa, xb = x[..., : self.split], x[..., self.split :]
        log_scale, shift = self._params(p, xa, cond)
        yb = xb * ops.exp(log_scale) + shift
        return ops.concat([xa, yb], axis=-1), log_scale.sum(axis=(1, 2, 3))

    def inverse(self, p: Params, y: Tensor, cond: Tensor):
        ya, yb = y[..., : self.split], y[..., self.split :]
        log_scale, shift = self._params(p, ya, cond)
        xb = (yb - shift) * ops.exp(-log_scale)
        return ops.concat([ya, xb], axis=-1), -log_scale.sum(axis=(1, 2, 3))
