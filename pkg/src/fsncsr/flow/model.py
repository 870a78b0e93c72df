"""Conditional multi-level flow over the high-frequency residual."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from ..imagecore import resize_matrix
from ..numerics import ops
from ..numerics.autodiff import Tensor
from ..numerics.optim import ParamStore
from .layers import ActNorm, AffineCoupling, ConvNet, InvMix1x1, NoiseInjector, squeeze2, unsqueeze2

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FlowConfig:
    channels: int = 3
    scale: int = 4
    levels: int = 2
    steps: int = 4
    hidden: int = 32
    encoder_width: int = 32
    clamp: float = 8.0

    def __post_init__(self):
        if self.levels < 1 or self.steps < 1:
            raise ValueError("levels and steps must be >= 1")
        if self.scale < 2:
            raise ValueError("scale must be >= 2")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Condition:
    """Raw conditioning inputs, batched NHWC.

    ``lr`` is the (possibly noise-perturbed) LR image, ``noise`` the HR-sized
    noise draw and ``sigma`` its per-sample standard deviation.
    """

    lr: np.ndarray
    noise: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.lr = np.asarray(self.lr, dtype=np.float64)
        self.noise = np.asarray(self.noise, dtype=np.float64)
        if self.lr.ndim == 3:
            self.lr = self.lr[None]
        if self.noise.ndim == 3:
            self.noise = self.noise[None]
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=np.float64), (self.lr.shape[0],)).copy()
        if self.noise.shape[0] != self.lr.shape[0]:
            raise ValueError("lr and noise batch sizes differ")

    @property
    def batch(self) -> int:
        return self.lr.shape[0]

    def select(self, index) -> "Condition":
        return Condition(self.lr[index], self.noise[index], self.sigma[index])

    @staticmethod
    def stack(conds: list["Condition"]) -> "Condition":
        return Condition(
            np.concatenate([c.lr for c in conds]),
            np.concatenate([c.noise for c in conds]),
            np.concatenate([c.sigma for c in conds]),
        )


class FlowModel:
    """L levels of (squeeze, K x [ActNorm, InvMix1x1, NoiseInjector, AffineCoupling]).

    All dimensions are kept to the end, so the latent has the squeezed shape
    (H / 2^L, W / 2^L, C * 4^L).
    """

    def __init__(self, config: FlowConfig, seed: int = 0):
        self.config = config
        self.store = ParamStore()
        self.actnorm_initialized = False
        # layer names whose log-det sign is flipped; a negative-control hook for gradcheck
        self.flip_logdet: set[str] = set()
        rng = np.random.default_rng(seed)

        c, width = config.channels, config.encoder_width
        for i, (cin, cout) in enumerate([(c, width), (width, width), (width, width)]):
            std = 1.0 / math.sqrt(9 * cin)
            self.store.add(f"encoder.conv{i}.w", rng.standard_normal((3, 3, cin, cout)) * std)
            self.store.add(f"encoder.conv{i}.b", np.zeros(cout))

        cond_ch = width + c + 1
        self.levels: list[list] = []
        ch = c
        for lvl in range(config.levels):
            ch *= 4
            layers = []
            for k in range(config.steps):
                prefix = f"level{lvl}.step{k}"
                layers += [
                    ActNorm(f"{prefix}.actnorm", ch),
                    InvMix1x1(f"{prefix}.invmix", ch),
                    NoiseInjector(f"{prefix}.inject", ch, cond_ch, config.hidden, config.clamp),
                    AffineCoupling(f"{prefix}.coupling", ch, cond_ch, config.hidden, config.clamp),
                ]
            for layer in layers:
                layer.register(self.store, rng)
            self.levels.append(layers)

    # ------------------------------------------------------------------
    def layers(self):
        for level in self.levels:
            yield from level

    def params(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return self.store.as_tensors(requires_grad)

    def latent_shape(self, hr_h: int, hr_w: int) -> tuple[int, int, int]:
        f = 2**self.config.levels
        return hr_h // f, hr_w // f, self.config.channels * 4**self.config.levels

    def check_hr_shape(self, h: int, w: int) -> None:
        f = 2**self.config.levels
        if h % f or w % f:
            raise ValueError(f"HR size {h}x{w} not divisible by 2^levels = {f}")
        if h % self.config.scale or w % self.config.scale:
            raise ValueError(f"HR size {h}x{w} not divisible by scale {self.config.scale}")

    # ------------------------------------------------------------------
    def encode(self, p: Mapping[str, Tensor], lr: np.ndarray) -> Tensor:
        h = Tensor(lr)
        for i in range(3):
            h = ops.tanh(ops.conv2d(h, p[f"encoder.conv{i}.w"]) + p[f"encoder.conv{i}.b"])
        return h

    def level_conditions(self, p: Mapping[str, Tensor], cond: Condition, hr_h: int, hr_w: int) -> list[Tensor]:
        """Per-level conditioning maps: [LR features, resized noise, sigma]."""
        feats = self.encode(p, cond.lr)
        n = cond.batch
        out = []
        for lvl in range(self.config.levels):
            f = 2 ** (lvl + 1)
            lh, lw = hr_h // f, hr_w // f
            if feats.shape[1:3] == (lh, lw):
                lf = feats
            else:
                lf = ops.resample(feats, resize_matrix(feats.shape[1], lh), resize_matrix(feats.shape[2], lw))
            rows = resize_matrix(hr_h, lh)
            cols = resize_matrix(hr_w, lw)
            noise = np.einsum("ih,nhwc,jw->nijc", rows, cond.noise, cols, optimize=True)
            sigma = np.broadcast_to(cond.sigma[:, None, None, None], (n, lh, lw, 1))
            out.append(ops.concat([lf, Tensor(noise), Tensor(sigma)], axis=-1))
        return out

    def _as_batch(self, x) -> Tensor:
        if isinstance(x, Tensor):
            return x if x.ndim == 4 else ops.reshape(x, (1,) + x.shape)
        x = np.asarray(x, dtype=np.float64)
        return Tensor(x[None] if x.ndim == 3 else x)

    def forward(self, x, cond: Condition, params: Mapping[str, Tensor] | None = None):
        """x (N,H,W,C) -> (z, per-sample logdet)."""
        p = self.params() if params is None else params
        h = self._as_batch(x)
        n, hr_h, hr_w, _ = h.shape
        if cond.batch != n:
            raise ValueError(f"condition batch {cond.batch} != input batch {n}")
        self.check_hr_shape(hr_h, hr_w)
        conds = self.level_conditions(p, cond, hr_h, hr_w)
        logdet = Tensor(np.zeros(n))
        for lvl, layers in enumerate(self.levels):
            h = squeeze2(h)
            for layer in layers:
                h, ld = layer.forward(p, h, conds[lvl])
                if layer.name in self.flip_logdet:
                    ld = -ld
                logdet = logdet + ld
        return h, logdet

    def inverse(self, z, cond: Condition, params: Mapping[str, Tensor] | None = None) -> np.ndarray:
        p = self.params() if params is None else params
        h = self._as_batch(z)
        n = h.shape[0]
        f = 2**self.config.levels
        hr_h, hr_w = h.shape[1] * f, h.shape[2] * f
        expected = self.latent_shape(hr_h, hr_w)[2]
        if h.shape[3] != expected:
            raise ValueError(f"latent has {h.shape[3]} channels, model expects {expected}")
        if cond.batch != n:
            raise ValueError(f"condition batch {cond.batch} != latent batch {n}")
        conds = self.level_conditions(p, cond, hr_h, hr_w)
        for lvl in reversed(range(len(self.levels))):
            for layer in reversed(self.levels[lvl]):
                h, _ = layer.inverse(p, h, conds[lvl])
            h = unsqueeze2(h)
        return h.data

    def nll(self, x, cond: Condition, params: Mapping[str, Tensor] | None = None):
        """Per-sample NLL in nats and bits/dim, both as Tensors of shape (N,)."""
        z, logdet = self.forward(x, cond, params)
        dims = int(np.prod(z.shape[1:]))
        nats = (z * z).sum(axis=(1, 2, 3)) * 0.5 + 0.5 * dims * LOG_2PI - logdet
        return nats, nats * (1.0 / (dims * math.log(2.0)))

    def loss(self, x, cond: Condition, params: Mapping[str, Tensor] | None = None) -> Tensor:
        """Mean bits/dim over the batch."""
        _, bpd = self.nll(x, cond, params)
        return bpd.mean()

    # ------------------------------------------------------------------
    def data_init(self, x, cond: Condition) -> None:
        """Data-dependent ActNorm initialization from one batch."""
        p = self.params()
        h = self._as_batch(x)
        conds = self.level_conditions(p, cond, h.shape[1], h.shape[2])
        for lvl, layers in enumerate(self.levels):
            h = squeeze2(h)
            for layer in layers:
                if isinstance(layer, ActNorm):
                    layer.data_init(self.store, h.data)
                    p = self.params()
                h, _ = layer.forward(p, h, conds[lvl])
        self.actnorm_initialized = True

    def zero_init_layers(self) -> list[str]:
        """Names of the zero-initialized output convolutions."""
        names = []
        for layer in self.layers():
            net = getattr(layer, "net", None)
            if isinstance(net, ConvNet):
                names += [f"{net.name}.w2", f"{net.name}.b2"]
        return names

    def perturb(self, rng: np.random.Generator, std: float = 0.05) -> None:
        """Randomize every parameter slightly away from its identity initialization."""
        for name, value in self.store.params.items():
            self.store[name] = value + std * rng.standard_normal(value.shape)

    def diagnose(self, x, cond: Condition) -> str | None:
        """Name of the first layer whose output or log-det is non-finite, if any."""
        p = self.params()
        h = self._as_batch(x)
        try:
            conds = self.level_conditions(p, cond, h.shape[1], h.shape[2])
        except FloatingPointError:
            return "encoder"
        if not all(c.is_finite() for c in conds):
            return "encoder"
        for lvl, layers in enumerate(self.levels):
            h = squeeze2(h)
            for layer in layers:
                try:
                    h, ld = layer.forward(p, h, conds[lvl])
                except (FloatingPointError, ZeroDivisionError, np.linalg.LinAlgError):
                    return layer.name
                if not h.is_finite() or not ld.is_finite():
                    return layer.name
        return None
