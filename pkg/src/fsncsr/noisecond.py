"""Noise injection on the high-frequency target and on the LR condition."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .flow.model import Condition
from .imagecore import bicubic_resize, downsample, highpass


@dataclass(frozen=True)
class NoiseSchedule:
    sigma_min: float = 0.0
    sigma_max: float = 0.2
    inference_sigma: float = 0.1

    def __post_init__(self):
        vals = (self.sigma_min, self.sigma_max, self.inference_sigma)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("noise levels must be finite")
        if self.sigma_min < 0 or self.inference_sigma < 0:
            raise ValueError("noise levels must be non-negative")
        if self.sigma_min > self.sigma_max:
            raise ValueError("sigma_min must not exceed sigma_max")

    def to_dict(self) -> dict:
        return asdict(self)


def _lr_size(hr_shape, s: int) -> tuple[int, int]:
    h, w = hr_shape[:2]
    if h % s or w % s:
        raise ValueError(f"HR size {h}x{w} not divisible by scale {s}")
    return h // s, w // s


def sample_training_noise(schedule: NoiseSchedule, hr_shape, s: int, rng: np.random.Generator):
    """Draw sigma ~ U(min, max), v ~ N(0, sigma^2 I) at HR size and w = resize(v) at LR size.

    ``w`` uses the bicubic resize without the [0, 1] clamp applied to images.
    """
    lh, lw = _lr_size(hr_shape, s)
    sigma = float(rng.uniform(schedule.sigma_min, schedule.sigma_max))
    v = sigma * rng.standard_normal(tuple(hr_shape))
    w = bicubic_resize(v, lh, lw)
    return v, w, sigma


def make_training_pair(x, s: int, schedule: NoiseSchedule, rng: np.random.Generator):
    """HR crop -> (x_hf + v, y + w, Condition(y + w, v, sigma))."""
    x = np.asarray(x, dtype=np.float64)
    x_hf = highpass(x, s)
    y = downsample(x, s)
    v, w, sigma = sample_training_noise(schedule, x.shape, s, rng)
    x_hf_plus = x_hf + v
    y_plus = y + w
    return x_hf_plus, y_plus, Condition(y_plus, v, sigma)


def make_inference_condition(y, s: int, schedule: NoiseSchedule, rng: np.random.Generator) -> Condition:
    """Fresh v at the inference noise level; the LR image itself is not perturbed."""
    y = np.asarray(y, dtype=np.float64)
    h, w, c = y.shape
    sigma = schedule.inference_sigma
    v = sigma * rng.standard_normal((h * s, w * s, c))
    return Condition(y, v, sigma)
