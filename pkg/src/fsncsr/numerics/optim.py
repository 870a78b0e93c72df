"""Parameter storage, Adam and the step-halving learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .autodiff import Tensor

HALVING_FRACTIONS = (0.50, 0.75, 0.90, 0.95)


@dataclass(frozen=True)
class OptimizerConfig:
    base_lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8
    total_steps: int = 1

    def __post_init__(self):
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ValueError("betas must lie in (0, 1)")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.base_lr < 0.0:
            raise ValueError("base_lr must be non-negative")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")


@dataclass
class ParamStore:
    """Named float64 parameters plus Adam's first/second moments."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.params[name].shape:
            raise ValueError(f"shape mismatch for {name!r}: {value.shape} vs {self.params[name].shape}")
        self.params[name] = value.copy()

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def num_values(self) -> int:
        return sum(p.size for p in self.params.values())

    def as_tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def copy(self) -> "ParamStore":
        return ParamStore(
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.m.items()},
            {k: v.copy() for k, v in self.v.items()},
            self.step,
        )


def lr_schedule(step: int, cfg: OptimizerConfig) -> float:
    """Base rate halved once for every threshold of total_steps reached."""
    if step < 0:
        raise ValueError("step must be non-negative")
    k = sum(step >= frac * cfg.total_steps for frac in HALVING_FRACTIONS)
    return cfg.base_lr * 0.5**k


def adam_step(
    store: ParamStore, grads: Mapping[str, np.ndarray], cfg: OptimizerConfig, step: int
) -> ParamStore:
    """Bias-corrected Adam update in place; returns ``store`` for chaining."""
    if step < 1:
        raise ValueError("adam step counter starts at 1")
    if step <= store.step:
        raise ValueError(f"step {step} does not advance the store (at {store.step})")
    for name, g in grads.items():
        if name not in store.params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != store.params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape for {name!r}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name!r}")

    lr = lr_schedule(step, cfg)
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1**step
    bc2 = 1.0 - b2**step
    for name, p in store.params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)
    store.step = step
    return store
