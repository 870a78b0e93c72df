"""Diversity score, LR-PSNR and high-frequency sparsity."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .imagecore import as_image, downsample, highpass, load_png, lowpass, quantize_u8

Distance = Callable[[np.ndarray, np.ndarray], np.ndarray]


class MissingSampleError(FileNotFoundError):
    pass


def _mse_distance(gt_patches: np.ndarray, sample_patches: np.ndarray) -> np.ndarray:
    return np.mean((gt_patches - sample_patches) ** 2, axis=(1, 2, 3))


def _mae_distance(gt_patches: np.ndarray, sample_patches: np.ndarray) -> np.ndarray:
    return np.mean(np.abs(gt_patches - sample_patches), axis=(1, 2, 3))


# Each distance maps two (K, P, P, C) stacks to K patch distances.
DISTANCES: dict[str, Distance] = {"mse": _mse_distance, "mae": _mae_distance}


def register_distance(name: str, fn: Distance) -> None:
    DISTANCES[name] = fn


@dataclass(frozen=True)
class DiversityConfig:
    num_samples: int = 10
    patch_size: int = 64
    distance: str = "mse"

    def __post_init__(self):
        if self.patch_size < 1 or self.num_samples < 1:
            raise ValueError("patch_size and num_samples must be >= 1")

    def distance_fn(self) -> Distance:
        try:
            return DISTANCES[self.distance]
        except KeyError:
            raise ValueError(f"unknown distance {self.distance!r}; known: {sorted(DISTANCES)}") from None


def patches(img: np.ndarray, size: int) -> np.ndarray:
    """Non-overlapping size x size tiles in row-major order; partial edge tiles dropped."""
    img = as_image(img)
    h, w, c = img.shape
    ny, nx = h // size, w // size
    if ny == 0 or nx == 0:
        raise ValueError(f"no full {size}x{size} patch fits in a {h}x{w} image")
    tiles = img[: ny * size, : nx * size].reshape(ny, size, nx, size, c)
    return tiles.transpose(0, 2, 1, 3, 4).reshape(ny * nx, size, size, c)


def patch_distances(gt, samples: Sequence, cfg: DiversityConfig) -> np.ndarray:
    """(M, K) matrix of d(gt patch k, sample i patch k)."""
    gt = as_image(gt)
    dist = cfg.distance_fn()
    ref = patches(gt, cfg.patch_size)
    rows = []
    for s in samples:
        s = as_image(s)
        if s.shape != gt.shape:
            raise ValueError(f"sample shape {s.shape} != ground truth shape {gt.shape}")
        rows.append(np.asarray(dist(ref, patches(s, cfg.patch_size)), dtype=np.float64))
    return np.stack(rows)


def global_min_from_distances(d: np.ndarray) -> float:
    """Smallest per-sample mean patch distance."""
    return float(np.min(np.mean(np.asarray(d, dtype=np.float64), axis=1)))


def diversity_from_distances(d: np.ndarray) -> tuple[float, float]:
    """(S_M, d_bar) from an (M, K) patch-distance matrix.

    S_M = (d_bar - mean_k min_i d[i, k]) / d_bar. A zero d_bar makes the ratio
    0/0; it is reported as S_M = 0 with a RuntimeWarning.
    """
    d = np.asarray(d, dtype=np.float64)
    dbar = global_min_from_distances(d)
    best_patch = float(np.mean(np.min(d, axis=0)))
    if dbar == 0.0:
        warnings.warn("global minimum distance is zero; diversity reported as 0", RuntimeWarning, stacklevel=2)
        return 0.0, 0.0
    return (dbar - best_patch) / dbar, dbar


def global_min_distance(gt, samples: Sequence, cfg: DiversityConfig) -> float:
    return global_min_from_distances(patch_distances(gt, samples, cfg))


def diversity_score(gt, samples: Sequence, cfg: DiversityConfig) -> float:
    return diversity_from_distances(patch_distances(gt, samples, cfg))[0]


def lr_psnr(sr, y, s: int) -> float:
    """PSNR (peak 1) between downsample(sr) and y; ``math.inf`` for an exact match."""
    ds = downsample(as_image(sr), s)
    y = as_image(y)
    if ds.shape != y.shape:
        raise ValueError(f"downsampled output {ds.shape} does not match LR input {y.shape}")
    mse = float(np.mean((ds - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def nonzero_count(h) -> int:
    return int(np.count_nonzero(quantize_u8(h, high_frequency=True)))


def sparsity(h) -> float:
    """Fraction of high-frequency values that quantize to zero."""
    h = np.asarray(h, dtype=np.float64)
    return 1.0 - nonzero_count(h) / h.size


def relative_sparsity(h, h_gt) -> float:
    """1 - nnz(h) / nnz(h_gt). An all-zero ground truth yields 1.0 or -inf (with a warning)."""
    h, h_gt = np.asarray(h), np.asarray(h_gt)
    if h.shape != h_gt.shape:
        raise ValueError(f"shape mismatch {h.shape} vs {h_gt.shape}")
    nnz, nnz_gt = nonzero_count(h), nonzero_count(h_gt)
    if nnz_gt == 0:
        if nnz == 0:
            return 1.0
        warnings.warn("ground-truth high frequency has no non-zero pixels", RuntimeWarning, stacklevel=2)
        return -math.inf
    return 1.0 - nnz / nnz_gt


# ----------------------------------------------------------------------
# reports


@dataclass
class ImageMetrics:
    image: str
    diversity: float
    dbar: float
    lr_psnr: float
    sparsity: float
    rs: float
    gt_sparsity: float
    degenerate: bool = False

    @property
    def diversity_display(self) -> float:
        return 100.0 * self.diversity


@dataclass
class MetricsReport:
    patch_size: int
    distance: str
    scale: int
    rows: list[ImageMetrics] = field(default_factory=list)

    def means(self) -> dict[str, float]:
        if not self.rows:
            return {}
        keys = ("diversity", "dbar", "lr_psnr", "sparsity", "rs", "gt_sparsity")
        out = {k: float(np.mean([getattr(r, k) for r in self.rows])) for k in keys}
        out["diversity_display"] = 100.0 * out["diversity"]
        return out

    def to_json(self) -> str:
        def clean(v):
            return _fmt(v) if isinstance(v, float) and not math.isfinite(v) else v

        payload = {
            "patch_size": self.patch_size,
            "distance": self.distance,
            "scale": self.scale,
            "images": [
                {k: clean(v) for k, v in dict(asdict(r), diversity_x100=r.diversity_display).items()}
                for r in self.rows
            ],
            "mean": {k: clean(v) for k, v in self.means().items()},
        }
        return json.dumps(payload, indent=2)

    def to_tsv(self) -> str:
        lines = [
            f"# patch_size={self.patch_size}\tdistance={self.distance}\tscale={self.scale}",
            "image\tdiversity_x100\tdbar\tlr_psnr_db\tsparsity\trs",
        ]
        for r in self.rows:
            lines.append(
                "\t".join(
                    [r.image, _fmt(r.diversity_display), _fmt(r.dbar), _fmt(r.lr_psnr), _fmt(r.sparsity), _fmt(r.rs)]
                )
            )
        m = self.means()
        if m:
            lines.append(
                "\t".join(
                    ["mean", _fmt(m["diversity_display"]), _fmt(m["dbar"]), _fmt(m["lr_psnr"]), _fmt(m["sparsity"]), _fmt(m["rs"])]
                )
            )
        return "\n".join(lines) + "\n"


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return f"{v:.6f}"


def image_metrics(name: str, gt, samples: Sequence, s: int, cfg: DiversityConfig) -> ImageMetrics:
    gt = as_image(gt)
    d = patch_distances(gt, samples, cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        div, dbar = diversity_from_distances(d)
    y = downsample(gt, s)
    base = lowpass(gt, s)
    gt_hf = highpass(gt, s)
    psnrs = [lr_psnr(x, y, s) for x in samples]
    hfs = [as_image(x) - base for x in samples]
    return ImageMetrics(
        image=name,
        diversity=div,
        dbar=dbar,
        lr_psnr=float(np.mean(psnrs)),
        sparsity=float(np.mean([sparsity(h) for h in hfs])),
        rs=float(np.mean([relative_sparsity(h, gt_hf) for h in hfs])),
        gt_sparsity=sparsity(gt_hf),
        degenerate=bool(caught),
    )


def read_manifest(path) -> list[dict]:
    entries = json.loads(Path(path).read_text())
    if not isinstance(entries, list):
        raise ValueError("manifest must be a JSON list")
    for e in entries:
        if "gt" not in e or "samples" not in e:
            raise ValueError("manifest entries need 'gt' and 'samples'")
    return entries


def evaluate(gt_dir, manifest_path, cfg: DiversityConfig, scale: int = 4) -> MetricsReport:
    """Metrics for every manifest entry, rows ordered by image name.

    Sample paths are relative to the manifest's directory, ``gt`` to ``gt_dir``.
    """
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    report = MetricsReport(cfg.patch_size, cfg.distance, scale)
    for entry in sorted(read_manifest(manifest_path), key=lambda e: e["gt"]):
        gt_path = Path(gt_dir) / entry["gt"]
        if not gt_path.exists():
            raise MissingSampleError(f"missing ground truth {gt_path}")
        paths = [base / p for p in entry["samples"]]
        missing = [str(p) for p in paths if not p.exists()]
        if missing:
            raise MissingSampleError(f"missing samples: {', '.join(missing)}")
        if len(paths) < cfg.num_samples:
            raise MissingSampleError(f"{entry['gt']}: {len(paths)} samples, need {cfg.num_samples}")
        samples = [load_png(p) for p in paths[: cfg.num_samples]]
        s = int(entry.get("scale", scale))
        report.rows.append(image_metrics(entry["gt"], load_png(gt_path), samples, s, cfg))
    return report
