import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsncsr.imagecore import downsample, save_png
from fsncsr.metrics import (
    DiversityConfig,
    MissingSampleError,
    diversity_from_distances,
    diversity_score,
    evaluate,
    global_min_distance,
    lr_psnr,
    patch_distances,
    patches,
    register_distance,
    relative_sparsity,
    sparsity,
)

TWO_SAMPLE = np.array([[0.2, 0.4], [0.5, 0.1]])


def patchwise_image(values, p):
    """Row of p x p constant patches."""
    return np.concatenate([np.full((p, p, 1), v) for v in values], axis=1)


class TestDiversity:
    def test_two_sample_hand_case(self):
        s, dbar = diversity_from_distances(TWO_SAMPLE)
        assert dbar == pytest.approx(0.3, abs=1e-15)
        assert s == pytest.approx(0.5, abs=1e-12)
        assert 100 * s == pytest.approx(50.0)

    def test_two_sample_case_from_images(self):
        # MSE of a constant offset a is a^2, so offsets sqrt(d) reproduce the matrix
        gt = np.zeros((4, 8, 1))
        samples = [patchwise_image(np.sqrt(row), 4) for row in TWO_SAMPLE]
        cfg = DiversityConfig(num_samples=2, patch_size=4)
        np.testing.assert_allclose(patch_distances(gt, samples, cfg), TWO_SAMPLE, atol=1e-15)
        assert global_min_distance(gt, samples, cfg) == pytest.approx(0.3, abs=1e-15)
        assert diversity_score(gt, samples, cfg) == pytest.approx(0.5, abs=1e-12)

    def test_identical_samples_score_zero(self):
        rng = np.random.default_rng(0)
        gt, x = rng.random((16, 16, 3)), rng.random((16, 16, 3))
        assert diversity_score(gt, [x] * 10, DiversityConfig(patch_size=4)) == 0.0

    def test_single_sample_scores_zero(self):
        rng = np.random.default_rng(1)
        assert diversity_score(rng.random((8, 8, 1)), [rng.random((8, 8, 1))], DiversityConfig(1, 4)) == 0.0

    def test_sample_equal_to_gt(self):
        rng = np.random.default_rng(2)
        gt = rng.random((8, 8, 1))
        cfg = DiversityConfig(2, 4)
        assert global_min_distance(gt, [gt, rng.random((8, 8, 1))], cfg) == 0.0
        with pytest.warns(RuntimeWarning, match="zero"):
            assert diversity_score(gt, [gt, gt], cfg) == 0.0

    def test_order_invariance(self):
        rng = np.random.default_rng(3)
        gt = rng.random((16, 16, 1))
        samples = [rng.random((16, 16, 1)) for _ in range(5)]
        cfg = DiversityConfig(5, 8)
        a = diversity_score(gt, samples, cfg)
        assert diversity_score(gt, samples[::-1], cfg) == pytest.approx(a, abs=1e-15)
        assert global_min_distance(gt, samples[::-1], cfg) == global_min_distance(gt, samples, cfg)

    def test_duplicating_samples_changes_nothing(self):
        rng = np.random.default_rng(4)
        d = rng.random((4, 9))
        assert diversity_from_distances(np.vstack([d, d]))[0] == pytest.approx(diversity_from_distances(d)[0], abs=1e-15)

    @given(st.integers(0, 10_000), st.integers(1, 10), st.integers(1, 16))
    @settings(max_examples=50, deadline=None)
    def test_bounded_and_scale_invariant(self, seed, m, k):
        d = np.random.default_rng(seed).random((m, k)) + 1e-6
        s, _ = diversity_from_distances(d)
        assert 0.0 <= s <= 1.0
        for c in (0.1, 10.0):
            assert diversity_from_distances(c * d)[0] == pytest.approx(s, abs=1e-12)

    def test_patch_grid_drops_partial_tiles(self):
        img = np.arange(10 * 7, dtype=float).reshape(10, 7, 1)
        tiles = patches(img, 3)
        assert tiles.shape == (6, 3, 3, 1)
        np.testing.assert_array_equal(tiles[1], img[0:3, 3:6])
        with pytest.raises(ValueError):
            patches(img, 11)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            diversity_score(np.zeros((8, 8, 1)), [np.zeros((8, 4, 1))], DiversityConfig(1, 4))

    def test_custom_distance(self):
        register_distance("max", lambda a, b: np.max(np.abs(a - b), axis=(1, 2, 3)))
        gt = np.zeros((4, 8, 1))
        d = patch_distances(gt, [patchwise_image([0.1, 0.3], 4)], DiversityConfig(1, 4, "max"))
        np.testing.assert_allclose(d, [[0.1, 0.3]])
        with pytest.raises(ValueError):
            DiversityConfig(distance="lpips").distance_fn()


class TestLrPsnr:
    def test_exact_match_is_infinite(self):
        rng = np.random.default_rng(0)
        x = rng.random((16, 16, 3))
        assert lr_psnr(x, downsample(x, 4), 4) == math.inf

    def test_uniform_error(self):
        x = np.full((16, 16, 3), 0.5)
        assert lr_psnr(x, np.full((4, 4, 3), 0.4), 4) == pytest.approx(20.0, abs=1e-6)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            x, y = rng.random((16, 8, 3)), rng.random((4, 2, 3))
            ref = -10 * math.log10(np.mean((downsample(x, 4) - y) ** 2))
            assert lr_psnr(x, y, 4) == pytest.approx(ref, abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            lr_psnr(np.zeros((16, 16, 3)), np.zeros((8, 8, 3)), 4)


class TestSparsity:
    def test_hand_cases(self):
        assert sparsity(np.zeros((4, 4, 3))) == 1.0
        signs = np.where(np.random.default_rng(0).random((4, 4, 3)) < 0.5, -1, 1)
        assert sparsity(signs * np.random.default_rng(1).uniform(1 / 255, 1, (4, 4, 3))) == 0.0
        half = np.concatenate([np.full((2, 4, 1), 0.5), np.full((2, 4, 1), 0.001)])
        assert sparsity(half) == 0.5

    def test_relative_hand_cases(self):
        gt = np.array([0.5, 0.5, 0.5, 0.5, 0.0, 0.0])
        assert relative_sparsity(np.array([0.5, 0.5, 0.0, 0.0, 0.0, 0.0]), gt) == 0.5
        assert relative_sparsity(gt, gt) == 0.0
        assert relative_sparsity(np.full(6, 0.2), gt) == pytest.approx(-0.5)

    def test_all_zero_ground_truth(self):
        zero = np.zeros(4)
        assert relative_sparsity(zero, zero) == 1.0
        with pytest.warns(RuntimeWarning):
            assert relative_sparsity(np.full(4, 0.3), zero) == -math.inf

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            relative_sparsity(np.zeros(3), np.zeros(4))

    def test_shrinking_magnitudes_never_lowers_sparsity(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            h = rng.normal(0, 0.01, (8, 8, 3))
            smaller = h * rng.random(h.shape)
            assert sparsity(smaller) >= sparsity(h)


def _write_corpus(root, images):
    """images: name -> (gt, [samples]); writes PNGs and a manifest."""
    gt_dir, out = root / "gt", root / "sr"
    gt_dir.mkdir()
    out.mkdir()
    manifest = []
    for name, (gt, samples) in images.items():
        save_png(gt, gt_dir / name)
        paths = []
        for i, s in enumerate(samples):
            save_png(s, out / f"{name[:-4]}_s{i}.png")
            paths.append(f"{name[:-4]}_s{i}.png")
        manifest.append({"gt": name, "samples": paths})
    (out / "manifest.json").write_text(json.dumps(manifest))
    return gt_dir, out / "manifest.json"


class TestEvaluate:
    def test_toy_corpus(self, tmp_path):
        q = 1 / 255
        gt_b = np.full((8, 16, 1), 100 * q)
        images = {
            # constant offsets of 10 and 20 levels: d rows 100 q^2 and 400 q^2
            "a.png": (np.zeros((16, 16, 1)), [np.full((16, 16, 1), 10 * q), np.full((16, 16, 1), 20 * q)]),
            # patchwise offsets (10, 20) and (20, 10): d = [[100, 400], [400, 100]] q^2
            "b.png": (gt_b, [patchwise_image([110 * q, 120 * q], 8), patchwise_image([120 * q, 110 * q], 8)]),
        }
        gt_dir, manifest = _write_corpus(tmp_path, images)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            report = evaluate(gt_dir, manifest, DiversityConfig(num_samples=2, patch_size=8), scale=4)
        a, b = report.rows
        assert (a.image, b.image) == ("a.png", "b.png")
        assert a.diversity == 0.0 and a.dbar == pytest.approx(100 * q * q, rel=1e-9)
        assert b.dbar == pytest.approx(250 * q * q, rel=1e-9)
        assert b.diversity == pytest.approx(0.6, abs=1e-9)
        assert a.lr_psnr == pytest.approx((20 * math.log10(25.5) + 20 * math.log10(12.75)) / 2, abs=1e-9)
        assert a.sparsity == b.sparsity == 0.0
        assert a.gt_sparsity == b.gt_sparsity == 1.0
        assert a.rs == b.rs == -math.inf
        assert report.means()["diversity"] == pytest.approx(0.3, abs=1e-9)
        assert "-inf" in report.to_tsv() and '"-inf"' in report.to_json()

    def test_gt_against_itself(self, tmp_path):
        rng = np.random.default_rng(0)
        gt = np.round(rng.random((16, 16, 3)) * 255) / 255
        gt_dir, manifest = _write_corpus(tmp_path, {"x.png": (gt, [gt] * 3)})
        report = evaluate(gt_dir, manifest, DiversityConfig(num_samples=3, patch_size=8), scale=4)
        row = report.rows[0]
        assert row.diversity == 0.0 and row.degenerate
        assert row.lr_psnr == math.inf and row.rs == 0.0
        tsv_row = report.to_tsv().splitlines()[2].split("\t")
        assert tsv_row[1] == "0.000000" and tsv_row[3] == "inf"

    def test_missing_sample(self, tmp_path):
        gt = np.zeros((8, 8, 1))
        gt_dir, manifest = _write_corpus(tmp_path, {"x.png": (gt, [gt, gt])})
        (manifest.parent / "x_s1.png").unlink()
        with pytest.raises(MissingSampleError):
            evaluate(gt_dir, manifest, DiversityConfig(num_samples=2, patch_size=4))

    def test_too_few_samples(self, tmp_path):
        gt = np.zeros((8, 8, 1))
        gt_dir, manifest = _write_corpus(tmp_path, {"x.png": (gt, [gt])})
        with pytest.raises(MissingSampleError):
            evaluate(gt_dir, manifest, DiversityConfig(num_samples=2, patch_size=4))

    def test_report_records_patch_size(self, tmp_path):
        gt = np.zeros((8, 8, 1))
        gt_dir, manifest = _write_corpus(tmp_path, {"x.png": (gt, [gt + 0.1])})
        for p in (4, 8):
            report = evaluate(gt_dir, manifest, DiversityConfig(num_samples=1, patch_size=p))
            assert report.to_tsv().startswith(f"# patch_size={p}\t")
            assert json.loads(report.to_json())["patch_size"] == p
