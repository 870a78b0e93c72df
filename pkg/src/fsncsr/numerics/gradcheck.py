"""Gradient evaluation and finite-difference verification."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import Tensor, UnsupportedOperation
from .optim import ParamStore

LossFn = Callable[[Mapping[str, Tensor]], Tensor]


def _as_arrays(params) -> dict[str, np.ndarray]:
    if isinstance(params, ParamStore):
        return params.params
    return {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}


def value_and_grad(loss_fn: LossFn, params) -> tuple[float, dict[str, np.ndarray]]:
    arrays = _as_arrays(params)
    leaves = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
    loss = loss_fn(leaves)
    if not isinstance(loss, Tensor):
        raise UnsupportedOperation(
            f"loss must be a Tensor built from supported ops, got {type(loss).__name__}"
        )
    if loss.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    loss.backward()
    grads = {
        k: (t.grad.reshape(t.shape) if t.grad is not None else np.zeros_like(t.data))
        for k, t in leaves.items()
    }
    return loss.item(), grads


def grad(loss_fn: LossFn, params) -> dict[str, np.ndarray]:
    """d loss / d p for every named parameter."""
    return value_and_grad(loss_fn, params)[1]


def _evaluate(loss_fn: LossFn, arrays: Mapping[str, np.ndarray]) -> float:
    out = loss_fn({k: Tensor(v) for k, v in arrays.items()})
    if not isinstance(out, Tensor):
        raise UnsupportedOperation("loss must be a Tensor")
    value = out.item()
    if not np.isfinite(value):
        raise FloatingPointError("loss is non-finite at a probe point")
    return value


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    probes: int
    passed: bool


@dataclass
class GradCheckReport:
    tol: float
    eps: float
    entries: list[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def failures(self) -> list[ParamCheck]:
        return [e for e in self.entries if not e.passed]

    def lines(self) -> list[str]:
        return [
            f"{'PASS' if e.passed else 'FAIL'}  {e.name:<40s} max_rel={e.max_rel_error:.3e} probes={e.probes}"
            for e in self.entries
        ]


def check_gradients(
    loss_fn: LossFn,
    params,
    eps: float = 1e-5,
    tol: float = 1e-3,
    max_coords: int | None = None,
    directions: int = 1,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    With ``max_coords=None`` every scalar coordinate is probed. Otherwise each
    parameter gets ``directions`` random unit-direction probes (covering all
    of its coordinates at once) plus the ``max_coords`` coordinates with the
    largest analytic gradient magnitude.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    arrays = {k: v.copy() for k, v in _as_arrays(params).items()}
    base = _evaluate(loss_fn, arrays)
    if not np.isfinite(base):
        raise FloatingPointError("loss is non-finite")
    _, analytic = value_and_grad(loss_fn, arrays)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol, eps=eps)

    for name, p in arrays.items():
        g = analytic[name]
        original = p.copy()
        probes: list[tuple[np.ndarray, float]] = []
        if max_coords is None:
            for idx in range(p.size):
                d = np.zeros(p.size)
                d[idx] = 1.0
                probes.append((d.reshape(p.shape), float(g.reshape(-1)[idx])))
        else:
            for _ in range(directions):
                d = rng.standard_normal(p.shape)
                d /= np.linalg.norm(d)
                probes.append((d, float(np.sum(g * d))))
            top = np.argsort(-np.abs(g.reshape(-1)), kind="stable")[: min(max_coords, p.size)]
            for idx in top:
                d = np.zeros(p.size)
                d[idx] = 1.0
                probes.append((d.reshape(p.shape), float(g.reshape(-1)[idx])))

        worst = 0.0
        for direction, expected in probes:
            arrays[name] = original + eps * direction
            up = _evaluate(loss_fn, arrays)
            arrays[name] = original - eps * direction
            down = _evaluate(loss_fn, arrays)
            numeric = (up - down) / (2.0 * eps)
            worst = max(worst, relative_error(expected, numeric))
        arrays[name] = original
        report.entries.append(ParamCheck(name, worst, len(probes), worst <= tol))
    return report


def numeric_jacobian(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector map, shape (out_dim, in_dim)."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    cols = []
    for i in range(flat.size):
        step = np.zeros_like(flat)
        step[i] = eps
        up = np.asarray(fn((flat + step).reshape(x.shape))).reshape(-1)
        down = np.asarray(fn((flat - step).reshape(x.shape))).reshape(-1)
        cols.append((up - down) / (2.0 * eps))
    return np.stack(cols, axis=1)


def brute_force_logdet(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, eps: float = 1e-6) -> float:
    """log|det J| of ``fn`` at ``x`` from an explicitly assembled Jacobian."""
    jac = numeric_jacobian(fn, x, eps)
    if jac.shape[0] != jac.shape[1]:
        raise ValueError(f"Jacobian is not square: {jac.shape}")
    sign, value = np.linalg.slogdet(jac)
    if sign == 0:
        raise np.linalg.LinAlgError("Jacobian is singular")
    return float(value)
