"""HR crop sampling, augmentation and the NLL training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .flow.checkpoint import load_checkpoint, save_checkpoint
from .flow.model import Condition, FlowConfig, FlowModel
from .imagecore import load_png
from .noisecond import NoiseSchedule, make_training_pair
from .numerics.gradcheck import value_and_grad
from .numerics.optim import OptimizerConfig, adam_step, lr_schedule

log = logging.getLogger(__name__)


class NonFiniteLoss(FloatingPointError):
    def __init__(self, step: int, layer: str | None):
        self.step = step
        self.layer = layer
        where = f"first non-finite output at layer {layer!r}" if layer else "no single layer isolated"
        super().__init__(f"non-finite loss at step {step}: {where}")


@dataclass(frozen=True)
class SyntheticSpec:
    """Seeded band-limited images: random sinusoids plus blurred noise."""

    count: int = 8
    size: int = 64
    seed: int = 1234


@dataclass(frozen=True)
class DatasetSpec:
    hr_dir: str | None = None
    crop: int = 32
    scale: int = 4
    hflip: bool = True
    rotate: bool = True
    synthetic: SyntheticSpec | None = None


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    total_steps: int = 500
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(total_steps=500))
    noise: NoiseSchedule = field(default_factory=NoiseSchedule)
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.total_steps < 1:
            raise ValueError("batch_size and total_steps must be >= 1")
        if self.optimizer.total_steps != self.total_steps:
            object.__setattr__(self, "optimizer", replace(self.optimizer, total_steps=self.total_steps))


def synthetic_images(spec: SyntheticSpec, channels: int = 3) -> list[np.ndarray]:
    rng = np.random.default_rng(spec.seed)
    yy, xx = np.mgrid[0 : spec.size, 0 : spec.size] / spec.size
    images = []
    for _ in range(spec.count):
        img = np.zeros((spec.size, spec.size, channels))
        for c in range(channels):
            for _ in range(6):
                fy, fx = rng.uniform(-12.0, 12.0, size=2)
                phase = rng.uniform(0.0, 2.0 * np.pi)
                img[:, :, c] += rng.uniform(0.2, 1.0) * np.sin(2.0 * np.pi * (fy * yy + fx * xx) + phase)
        img += 1.5 * gaussian_filter(rng.standard_normal(img.shape), sigma=(1.0, 1.0, 0.0))
        img -= img.min()
        img /= img.max()
        images.append(img)
    return images


def load_sources(spec: DatasetSpec, channels: int = 3) -> list[np.ndarray]:
    if spec.hr_dir:
        paths = sorted(Path(spec.hr_dir).glob("*.png"))
        if not paths:
            raise FileNotFoundError(f"no PNG files in {spec.hr_dir}")
        images = [load_png(p) for p in paths]
        images = [img for img in images if img.shape[2] == channels]
        if not images:
            raise ValueError(f"no {channels}-channel images in {spec.hr_dir}")
    elif spec.synthetic is not None:
        images = synthetic_images(spec.synthetic, channels)
    else:
        raise ValueError("dataset needs hr_dir or a synthetic spec")
    for img in images:
        if min(img.shape[:2]) < spec.crop:
            raise ValueError(f"source image {img.shape[:2]} smaller than crop {spec.crop}")
    return images


def augment(crop: np.ndarray, flip: bool, k: int) -> np.ndarray:
    if flip:
        crop = crop[:, ::-1]
    return np.ascontiguousarray(np.rot90(crop, k, axes=(0, 1)))


def sample_batch(
    sources: list[np.ndarray], spec: DatasetSpec, batch: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Random image, random crop, then a random horizontal flip and 90-degree rotation."""
    out = []
    for _ in range(batch):
        img = sources[int(rng.integers(len(sources)))]
        h, w = img.shape[:2]
        if h < spec.crop or w < spec.crop:
            raise ValueError(f"image {h}x{w} smaller than crop {spec.crop}")
        top = int(rng.integers(h - spec.crop + 1))
        left = int(rng.integers(w - spec.crop + 1))
        crop = img[top : top + spec.crop, left : left + spec.crop]
        flip = bool(rng.integers(2)) if spec.hflip else False
        k = int(rng.integers(4)) if spec.rotate else 0
        out.append(augment(crop, flip, k))
    return out


def prepare_batch(crops, s: int, schedule: NoiseSchedule, rng: np.random.Generator):
    """Stack noisy high-frequency targets and their conditions."""
    targets, conds = [], []
    for crop in crops:
        x_hf_plus, _, cond = make_training_pair(crop, s, schedule, rng)
        targets.append(x_hf_plus)
        conds.append(cond)
    return np.stack(targets), Condition.stack(conds)


def train_step(
    model: FlowModel,
    crops,
    cfg: TrainConfig,
    step: int,
    rng: np.random.Generator,
) -> float:
    """One Adam step on the mean bits/dim of the batch; returns the pre-update loss."""
    x, cond = prepare_batch(crops, model.config.scale, cfg.noise, rng)
    if not model.actnorm_initialized:
        model.data_init(x, cond)
    try:
        loss, grads = value_and_grad(lambda p: model.loss(x, cond, p), model.store)
    except (FloatingPointError, ZeroDivisionError, np.linalg.LinAlgError):
        raise NonFiniteLoss(step, model.diagnose(x, cond)) from None
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise NonFiniteLoss(step, model.diagnose(x, cond))
    adam_step(model.store, grads, cfg.optimizer, step)
    return loss


@dataclass
class TrainResult:
    checkpoint: Path
    log_path: Path
    losses: list[float]
    model: FlowModel


def _state(model: FlowModel, step: int, rng: np.random.Generator) -> dict:
    return {
        "step": step,
        "actnorm_initialized": model.actnorm_initialized,
        "rng": rng.bit_generator.state,
    }


def train_loop(
    flow_cfg: FlowConfig,
    cfg: TrainConfig,
    spec: DatasetSpec,
    out_dir,
    echo: dict | None = None,
    resume: str | Path | None = None,
    stop_after: int | None = None,
) -> TrainResult:
    """Run ``cfg.total_steps`` steps, appending ``step<TAB>lr<TAB>bits_per_dim`` per step.

    ``echo`` is the config stored in checkpoints; a resumed run must present
    the same one. ``stop_after`` ends the run early (used to test resuming).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = echo if echo is not None else {"flow": flow_cfg.to_dict()}
    sources = load_sources(spec, flow_cfg.channels)
    model = FlowModel(flow_cfg, seed=cfg.seed)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    start = 1
    log_path = out_dir / "train_log.tsv"
    losses: list[float] = []

    if resume is not None:
        header, store = load_checkpoint(resume, expected_config=echo)
        model.store = store
        state = header["state"]
        model.actnorm_initialized = bool(state["actnorm_initialized"])
        rng.bit_generator.state = state["rng"]
        start = int(state["step"]) + 1
        kept = log_path.read_text().splitlines()[: start - 1] if log_path.exists() else []
        log_path.write_text("".join(line + "\n" for line in kept))
        losses = [float(line.split("\t")[2]) for line in kept]
    else:
        log_path.write_text("")

    last = cfg.total_steps if stop_after is None else min(stop_after, cfg.total_steps)
    checkpoint = out_dir / f"checkpoint_{last:07d}.fsnc"
    with open(log_path, "a") as fh:
        for step in range(start, last + 1):
            crops = sample_batch(sources, spec, cfg.batch_size, rng)
            lr = lr_schedule(step, cfg.optimizer)
            loss = train_step(model, crops, cfg, step, rng)
            losses.append(loss)
            fh.write(f"{step}\t{lr:.10g}\t{loss:.10f}\n")
            fh.flush()
            if step % 50 == 0:
                log.info("step %d lr %.3g bits/dim %.5f", step, lr, loss)
            if step == last or (cfg.checkpoint_every and step % cfg.checkpoint_every == 0):
                checkpoint = out_dir / f"checkpoint_{step:07d}.fsnc"
                save_checkpoint(checkpoint, echo, model.store, _state(model, step, rng))
    return TrainResult(checkpoint, log_path, losses, model)


def load_model(path, expected_config: dict | None = None) -> tuple[FlowModel, dict]:
    """Rebuild a FlowModel from a checkpoint whose config has a ``flow`` section."""
    header, store = load_checkpoint(path, expected_config)
    flow = dict(header["config"]["flow"])
    flow.setdefault("scale", header["config"].get("scale", 4))
    flow_cfg = FlowConfig(**flow)
    model = FlowModel(flow_cfg)
    if set(store.params) != set(model.store.params):
        raise ValueError("checkpoint parameters do not match the configured architecture")
    model.store = store
    model.actnorm_initialized = bool(header["state"].get("actnorm_initialized", True))
    return model, header
