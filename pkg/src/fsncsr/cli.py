"""``fsncsr`` command line.

Exit codes: 0 success, 1 gradient check failed, 2 invalid config,
3 non-finite loss, 4 incompatible shapes, 5 missing sample files,
6 indivisible image size.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .flow.checkpoint import CheckpointError
from .flow.model import Condition, FlowModel
from .imagecore import ImageFormatError, highpass, load_png, lowpass, save_fshf, save_png
from .metrics import DiversityConfig, MissingSampleError, evaluate
from .numerics.gradcheck import brute_force_logdet, check_gradients
from .sampler import SamplerConfig, sample_sr
from .train import NonFiniteLoss, load_model, load_sources, prepare_batch, train_loop

log = logging.getLogger("fsncsr")

EXIT_OK = 0
EXIT_GRADCHECK = 1
EXIT_CONFIG = 2
EXIT_NONFINITE = 3
EXIT_SHAPE = 4
EXIT_MISSING = 5
EXIT_INDIVISIBLE = 6


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def write_run_manifest(out_dir: Path, command: str, config_hash: str | None, seed: int | None, artifacts, started: float) -> Path:
    manifest = {
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "artifacts": [str(a) for a in artifacts],
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "versions": {"fsncsr": __version__, "python": platform.python_version(), "numpy": np.__version__},
    }
    path = out_dir / "run_manifest.json"
    _atomic_write(path, json.dumps(manifest, indent=2))
    return path


# ----------------------------------------------------------------------
def cmd_train(args) -> int:
    started = time.time()
    cfg = load_config(args.config)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    result = train_loop(cfg.flow, cfg.train, cfg.dataset, cfg.out_dir, echo=cfg.echo(), resume=args.resume)
    print(f"checkpoint {result.checkpoint}")
    print(f"final bits/dim {result.losses[-1]:.5f}")
    write_run_manifest(cfg.out_dir, "train", cfg.hash(), cfg.seed, [result.checkpoint, result.log_path], started)
    return EXIT_OK


def _lr_inputs(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        if not files:
            raise FileNotFoundError(f"no PNG files in {path}")
        return files
    return [path]


def cmd_sample(args) -> int:
    started = time.time()
    model, header = load_model(args.checkpoint)
    raw = header["config"]
    defaults = raw.get("sampler", {})
    noise = raw.get("noise", {})
    scfg = SamplerConfig(
        temperature=args.temperature if args.temperature is not None else defaults.get("temperature", 0.9),
        num_samples=args.num if args.num is not None else defaults.get("num_samples", 10),
        seed=args.seed if args.seed is not None else raw.get("seed", 0),
        inference_sigma=args.sigma_inf if args.sigma_inf is not None else noise.get("inference_sigma", 0.1),
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries, artifacts = [], []
    for lr_path in _lr_inputs(Path(args.input)):
        y = load_png(lr_path)
        s = model.config.scale
        try:
            model.check_hr_shape(y.shape[0] * s, y.shape[1] * s)
            if y.shape[2] != model.config.channels:
                raise ValueError(f"{y.shape[2]} channels, model expects {model.config.channels}")
        except ValueError as exc:
            print(f"error: {lr_path}: {exc}", file=sys.stderr)
            return EXIT_SHAPE
        names, meta = [], []
        for i in range(scfg.num_samples):
            img = sample_sr(model, y, scfg, i, image_id=lr_path.name)
            name = f"{lr_path.stem}_s{i}.png"
            save_png(img, out_dir / name)
            names.append(name)
            artifacts.append(out_dir / name)
            meta.append(
                {"index": i, "seed": scfg.seed, "temperature": scfg.temperature, "sigma_inf": scfg.inference_sigma}
            )
        entries.append({"gt": lr_path.name, "lr": str(lr_path), "scale": s, "samples": names, "sample_info": meta})
    manifest = out_dir / "manifest.json"
    _atomic_write(manifest, json.dumps(entries, indent=2))
    print(f"wrote {len(artifacts)} samples, manifest {manifest}")
    write_run_manifest(out_dir, "sample", header.get("config_hash"), scfg.seed, artifacts + [manifest], started)
    return EXIT_OK


def cmd_eval(args) -> int:
    started = time.time()
    cfg = DiversityConfig(num_samples=args.num, patch_size=args.patch, distance=args.distance)
    try:
        report = evaluate(args.gt_dir, args.manifest, cfg, scale=args.scale)
    except MissingSampleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    out_dir = Path(args.out) if args.out else Path(args.manifest).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    tsv = out_dir / f"report_p{args.patch}.tsv"
    js = out_dir / f"report_p{args.patch}.json"
    _atomic_write(tsv, report.to_tsv())
    _atomic_write(js, report.to_json())
    sys.stdout.write(report.to_tsv())
    write_run_manifest(out_dir, "eval", None, None, [tsv, js], started)
    return EXIT_OK


def cmd_freqsplit(args) -> int:
    started = time.time()
    x = load_png(args.image)
    s = args.scale
    h, w = x.shape[:2]
    if h % s or w % s:
        print(f"error: image size {h}x{w} not divisible by scale {s}", file=sys.stderr)
        return EXIT_INDIVISIBLE
    low = lowpass(x, s)
    high = highpass(x, s)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    paths = [out_dir / f"{stem}_low.png", out_dir / f"{stem}_high.fshf", out_dir / f"{stem}_recombined.png"]
    save_png(low, paths[0])
    save_fshf(high, paths[1])
    save_png(low + high, paths[2])
    print(f"mean |high| = {np.mean(np.abs(high)):.6f}")
    write_run_manifest(out_dir, "freqsplit", None, None, paths, started)
    return EXIT_OK


def run_gradcheck(
    cfg: ExperimentConfig,
    train_steps: int = 0,
    flip_logdet: str | None = None,
    eps: float = 1e-5,
    tol: float = 1e-3,
    logdet_tol: float = 1e-4,
    out_dir: Path | None = None,
) -> tuple[bool, list[str]]:
    """Gradient check of the NLL plus a brute-force Jacobian log-det check."""
    if train_steps:
        tcfg = type(cfg.train)(
            batch_size=cfg.train.batch_size,
            total_steps=train_steps,
            optimizer=cfg.train.optimizer,
            noise=cfg.train.noise,
            seed=cfg.train.seed,
        )
        model = train_loop(cfg.flow, tcfg, cfg.dataset, out_dir or cfg.out_dir / "gradcheck", echo=cfg.echo()).model
    else:
        model = FlowModel(cfg.flow, seed=cfg.seed)
        sources = load_sources(cfg.dataset, cfg.flow.channels)
        rng = np.random.default_rng(cfg.seed)
        crops = [src[: cfg.dataset.crop, : cfg.dataset.crop] for src in sources[:2]]
        model.data_init(*prepare_batch(crops, cfg.flow.scale, cfg.noise, rng))
    if flip_logdet:
        model.flip_logdet.add(flip_logdet)

    rng = np.random.default_rng(cfg.seed + 1)
    side = math.lcm(2**cfg.flow.levels, cfg.flow.scale)
    x = 0.1 * rng.standard_normal((1, side, side, cfg.flow.channels))
    cond = Condition(
        rng.random((1, side // cfg.flow.scale, side // cfg.flow.scale, cfg.flow.channels)),
        0.05 * rng.standard_normal(x.shape),
        [0.05],
    )
    lines = []
    report = check_gradients(lambda p: model.loss(x, cond, p), model.store, eps=eps, tol=tol, max_coords=3)
    lines += report.lines()
    ok = report.passed

    _, analytic = model.forward(x, cond)
    numeric = brute_force_logdet(lambda a: model.forward(a[None], cond)[0].data, x[0])
    err = abs(float(analytic.data[0]) - numeric) / max(abs(numeric), abs(float(analytic.data[0])), 1.0)
    ld_ok = err <= logdet_tol
    lines.append(
        f"{'PASS' if ld_ok else 'FAIL'}  logdet (dims={x.size}) analytic={float(analytic.data[0]):.8f} "
        f"jacobian={numeric:.8f} rel={err:.3e}"
    )
    return ok and ld_ok, lines


def cmd_gradcheck(args) -> int:
    started = time.time()
    cfg = load_config(args.config)
    ok, lines = run_gradcheck(cfg, train_steps=args.steps, flip_logdet=args.flip_logdet)
    for line in lines:
        print(line)
    print("gradcheck", "PASS" if ok else "FAIL")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_run_manifest(cfg.out_dir, "gradcheck", cfg.hash(), cfg.seed, [], started)
    return EXIT_OK if ok else EXIT_GRADCHECK


# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fsncsr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("config")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw super-resolved samples")
    p.add_argument("checkpoint")
    p.add_argument("input", help="LR PNG or directory of LR PNGs")
    p.add_argument("--out", default="samples")
    p.add_argument("--temperature", type=float)
    p.add_argument("--num", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma-inf", type=float)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="diversity / LR-PSNR / sparsity report")
    p.add_argument("gt_dir")
    p.add_argument("manifest")
    p.add_argument("--patch", type=int, default=64)
    p.add_argument("--distance", default="mse")
    p.add_argument("--num", type=int, default=10)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("freqsplit", help="write low-pass, high-pass and recombined images")
    p.add_argument("image")
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_freqsplit)

    p = sub.add_parser("gradcheck", help="finite-difference gradient and log-det checks")
    p.add_argument("config")
    p.add_argument("--steps", type=int, default=0, help="train this many steps first")
    p.add_argument("--flip-logdet", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except (CheckpointError, ImageFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING if args.command == "eval" else EXIT_CONFIG
    except ValueError as exc:
        if "divisible" in str(exc):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INDIVISIBLE if args.command == "freqsplit" else EXIT_SHAPE
        raise


if __name__ == "__main__":
    sys.exit(main())
