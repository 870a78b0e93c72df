"""Experiment configuration: one JSON document expanded from a profile."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .flow.checkpoint import config_hash
from .flow.model import FlowConfig
from .metrics import DiversityConfig
from .noisecond import NoiseSchedule
from .numerics.optim import OptimizerConfig
from .sampler import SamplerConfig
from .train import DatasetSpec, SyntheticSpec, TrainConfig

SEED_ENV = "FSNCSR_SEED"


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


def profile_defaults(profile: str, scale: int) -> dict:
    if profile not in ("desk", "paper"):
        raise ConfigError("profile", f"expected 'desk' or 'paper', got {profile!r}")
    x8 = scale >= 8
    paper = profile == "paper"
    steps = (220_000 if x8 else 180_000) if paper else 500
    return {
        "profile": profile,
        "scale": scale,
        "seed": 0,
        "flow": {"channels": 3, "levels": 3 if x8 else 2, "steps": 4, "hidden": 32, "encoder_width": 32, "clamp": 8.0},
        "dataset": {
            "hr_dir": None,
            "crop": 160 if paper else (64 if x8 else 32),
            "hflip": True,
            "rotate": True,
            "synthetic": None,
        },
        "train": {
            "batch_size": 16 if paper else 4,
            "total_steps": steps,
            "checkpoint_every": 10_000 if paper else 0,
            "optimizer": {"base_lr": 2e-4, "beta1": 0.9, "beta2": 0.99, "epsilon": 1e-8},
        },
        "noise": {"sigma_min": 0.0, "sigma_max": 0.2, "inference_sigma": 0.1},
        "sampler": {"temperature": 0.85 if x8 else 0.9, "num_samples": 10},
        "diversity": {"patch_size": 64, "distance": "mse"},
        "paths": {"out_dir": "runs/" + profile, "checkpoint": None},
    }


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        name = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(name, "unknown field")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, name + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class ExperimentConfig:
    raw: dict
    flow: FlowConfig
    dataset: DatasetSpec
    train: TrainConfig
    noise: NoiseSchedule
    sampler: SamplerConfig
    diversity: DiversityConfig
    out_dir: Path
    checkpoint: Path | None

    @property
    def profile(self) -> str:
        return self.raw["profile"]

    @property
    def scale(self) -> int:
        return self.raw["scale"]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    def hash(self) -> str:
        return config_hash(self.raw)

    def echo(self) -> dict:
        """The dict stored in checkpoints (resolved values only)."""
        return self.raw


def build_config(doc: dict, base_dir: Path | None = None, env: dict | None = None) -> ExperimentConfig:
    """Expand profile defaults, apply overrides and validate everything up front."""
    env = os.environ if env is None else env
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    profile = doc.get("profile", "desk")
    scale = doc.get("scale", 4)
    if not isinstance(scale, int) or isinstance(scale, bool) or scale < 2:
        raise ConfigError("scale", "must be an integer >= 2")
    raw = _merge(profile_defaults(profile, scale), doc)
    if env.get(SEED_ENV):
        try:
            raw["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(SEED_ENV, "must be an integer") from None
    base_dir = base_dir or Path.cwd()

    ds = raw["dataset"]
    synthetic = ds["synthetic"]
    if synthetic is True:
        synthetic = {}
    if ds["hr_dir"] is None and synthetic in (None, False):
        raise ConfigError("dataset.hr_dir", "no HR image directory given and no synthetic dataset configured")
    hr_dir = None
    if ds["hr_dir"] is not None:
        hr_path = (base_dir / ds["hr_dir"]).resolve()
        if not hr_path.is_dir():
            raise ConfigError("dataset.hr_dir", f"directory {hr_path} does not exist")
        hr_dir = str(hr_path)

    try:
        flow = FlowConfig(scale=scale, **raw["flow"])
        f = 2**flow.levels
        crop = ds["crop"]
        if crop % scale:
            raise ConfigError("dataset.crop", f"{crop} not divisible by scale {scale}")
        if crop % f:
            raise ConfigError("dataset.crop", f"{crop} not divisible by 2^levels = {f}")
        spec = DatasetSpec(
            hr_dir=hr_dir,
            crop=crop,
            scale=scale,
            hflip=bool(ds["hflip"]),
            rotate=bool(ds["rotate"]),
            synthetic=SyntheticSpec(**synthetic) if synthetic not in (None, False) else None,
        )
        if spec.synthetic is not None and spec.synthetic.size < crop:
            raise ConfigError("dataset.synthetic.size", f"smaller than crop {crop}")
        tr = raw["train"]
        noise = NoiseSchedule(**raw["noise"])
        train = TrainConfig(
            batch_size=tr["batch_size"],
            total_steps=tr["total_steps"],
            optimizer=OptimizerConfig(total_steps=tr["total_steps"], **tr["optimizer"]),
            noise=noise,
            checkpoint_every=tr["checkpoint_every"],
            seed=raw["seed"],
        )
        sampler = SamplerConfig(
            temperature=raw["sampler"]["temperature"],
            num_samples=raw["sampler"]["num_samples"],
            seed=raw["seed"],
            inference_sigma=noise.inference_sigma,
        )
        diversity = DiversityConfig(
            num_samples=raw["sampler"]["num_samples"],
            patch_size=raw["diversity"]["patch_size"],
            distance=raw["diversity"]["distance"],
        )
        diversity.distance_fn()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError("<config>", str(exc)) from exc

    ckpt = raw["paths"]["checkpoint"]
    return ExperimentConfig(
        raw=raw,
        flow=flow,
        dataset=spec,
        train=train,
        noise=noise,
        sampler=sampler,
        diversity=diversity,
        out_dir=(base_dir / raw["paths"]["out_dir"]).resolve(),
        checkpoint=(base_dir / ckpt).resolve() if ckpt else None,
    )


def load_config(path, env: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError("<file>", f"{path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return build_config(doc, base_dir=path.parent, env=env)
