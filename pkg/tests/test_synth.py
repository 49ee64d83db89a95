import dataclasses
import os

import numpy as np
import pytest

from dannet.losses import psnr
from dannet.synth import (
    DegradationSpec,
    HazeParams,
    SnowParams,
    augment,
    gen_clean,
    gen_fields,
    load_manifest,
    make_dataset,
    synth_haze,
    synth_snow,
    synthesize_pair,
)

from oracles import haze_ref, snow_ref


class TestHazeModel:
    def test_unit_transmission_is_identity_bitwise(self):
        clean = gen_clean(0, 32)
        out = synth_haze(clean, HazeParams(np.ones((32, 32)), 0.9))
        np.testing.assert_array_equal(out, clean)

    def test_full_haze_limit_approaches_atmosphere(self):
        clean = gen_clean(1, 32)
        out = synth_haze(clean, HazeParams(np.full((32, 32), 1e-6), 0.8))
        assert np.abs(out - 0.8).max() <= 1e-5

    def test_direct_substitution(self):
        clean = np.full((3, 32, 32), 0.5, dtype=np.float32)
        out = synth_haze(clean, HazeParams(np.full((32, 32), 0.5), 1.0))
        np.testing.assert_allclose(out, 0.75, rtol=1e-6)

    def test_matches_elementwise_oracle(self):
        clean = gen_clean(2, 32)
        p = gen_fields(DegradationSpec(mode="haze", seed=3))
        out = synth_haze(clean, p)
        assert np.abs(out - haze_ref(clean, p.transmission, p.atmosphere)).max() <= 1e-6

    def test_invalid_transmission_rejected(self):
        clean = gen_clean(4, 32)
        with pytest.raises(ValueError, match="transmission"):
            synth_haze(clean, HazeParams(np.zeros((32, 32)), 0.9))
        with pytest.raises(ValueError, match="transmission"):
            synth_haze(clean, HazeParams(np.full((32, 32), 1.5), 0.9))


class TestSnowModel:
    def test_degenerate_masks_identity_bitwise(self):
        clean = gen_clean(5, 32)
        p = SnowParams(
            transmission=np.ones((32, 32)),
            atmosphere=0.9,
            snow_mask=np.zeros((32, 32)),
            snow_locations=np.ones((32, 32)),
            snow_color=np.ones((3, 32, 32)),
        )
        np.testing.assert_array_equal(synth_snow(clean, p), clean)

    def test_no_snow_locations_identity(self):
        clean = gen_clean(6, 32)
        p = SnowParams(
            transmission=np.ones((32, 32)),
            atmosphere=0.8,
            snow_mask=np.random.default_rng(0).random((32, 32)),
            snow_locations=np.zeros((32, 32)),
            snow_color=np.random.default_rng(1).random((3, 32, 32)),
        )
        np.testing.assert_array_equal(synth_snow(clean, p), clean)

    def test_direct_substitution(self):
        clean = np.full((3, 32, 32), 0.2, dtype=np.float32)
        p = SnowParams(
            transmission=np.full((32, 32), 0.5),
            atmosphere=0.8,
            snow_mask=np.ones((32, 32)),
            snow_locations=np.ones((32, 32)),
            snow_color=np.ones((3, 32, 32)),
        )
        out = synth_snow(clean, p)  # veil-free composite is 1.0; 0.5 + 0.8*0.5
        np.testing.assert_allclose(out, 0.9, rtol=1e-6)

    def test_matches_elementwise_oracle(self):
        clean = gen_clean(7, 32)
        p = gen_fields(DegradationSpec(mode="snow", seed=8))
        out = synth_snow(clean, p)
        ref = snow_ref(clean, p.transmission, p.atmosphere, p.snow_mask,
                       p.snow_locations, p.snow_color)
        assert np.abs(out - ref).max() <= 1e-6

    def test_non_binary_mask_rejected(self):
        clean = gen_clean(9, 32)
        p = SnowParams(
            transmission=np.ones((32, 32)),
            atmosphere=0.8,
            snow_mask=np.ones((32, 32)),
            snow_locations=np.full((32, 32), 0.5),
            snow_color=np.ones((3, 32, 32)),
        )
        with pytest.raises(ValueError, match="binary"):
            synth_snow(clean, p)


class TestFieldGeneration:
    def test_deterministic_per_seed(self):
        spec = DegradationSpec(mode="snow", seed=10)
        a, b = gen_fields(spec), gen_fields(spec)
        np.testing.assert_array_equal(a.transmission, b.transmission)
        np.testing.assert_array_equal(a.snow_locations, b.snow_locations)
        np.testing.assert_array_equal(a.snow_color, b.snow_color)

    def test_transmission_clamp_contract(self):
        for seed in range(200):
            p = gen_fields(DegradationSpec(mode="haze", seed=seed))
            assert p.transmission.min() >= 0.2 and p.transmission.max() <= 1.0

    def test_snow_coverage_in_configured_band(self):
        spec = DegradationSpec(mode="snow", seed=0)
        lo, hi = spec.snow_cov_range
        covered = []
        for seed in range(100):
            p = gen_fields(dataclasses.replace(spec, seed=seed))
            # independent mask count, not the generator's own report
            cov = float(np.count_nonzero(p.snow_locations)) / p.snow_locations.size
            assert abs(cov - p.coverage) < 1e-12
            covered.append(cov)
        assert lo <= float(np.mean(covered)) <= hi

    def test_mixed_mode_needs_resolution(self):
        with pytest.raises(ValueError, match="mixed"):
            gen_fields(DegradationSpec(mode="mixed", seed=0))

    def test_atmosphere_range(self):
        for seed in range(50):
            p = gen_fields(DegradationSpec(mode="haze", seed=seed))
            assert 0.7 <= p.atmosphere <= 1.0


class TestCleanGeneration:
    def test_deterministic(self):
        np.testing.assert_array_equal(gen_clean(11, 32), gen_clean(11, 32))

    def test_range_and_variance_over_corpus(self):
        for seed in range(1000):
            img = gen_clean(seed, 32)
            assert img.min() >= 0.0 and img.max() <= 1.0
            assert img.var() > 0.0

    def test_rejects_bad_size(self):
        with pytest.raises(ValueError):
            gen_clean(0, 24)
        with pytest.raises(ValueError):
            gen_clean(0, 16)


class TestAugment:
    def test_four_quarter_turns_identity(self):
        deg, clean = gen_clean(12, 32), gen_clean(13, 32)
        rotated = (deg, clean)
        # force pure rotation by constructing it directly
        for _ in range(4):
            rotated = (np.ascontiguousarray(np.rot90(rotated[0], 1, axes=(1, 2))),
                       np.ascontiguousarray(np.rot90(rotated[1], 1, axes=(1, 2))))
        np.testing.assert_array_equal(rotated[0], deg)
        np.testing.assert_array_equal(rotated[1], clean)

    def test_flip_twice_identity(self):
        img = gen_clean(14, 32)
        np.testing.assert_array_equal(img[:, :, ::-1][:, :, ::-1], img)

    def test_pair_gets_same_transform(self):
        deg = gen_clean(15, 32)
        clean = deg.copy()
        out_deg, out_clean = augment((deg, clean), seed=3)
        np.testing.assert_array_equal(out_deg, out_clean)

    def test_psnr_invariant_under_paired_augmentation(self):
        deg, clean = synthesize_pair(DegradationSpec(mode="haze", seed=16), "haze", 99)
        before = psnr(deg, clean)
        for seed in range(8):
            a_deg, a_clean = augment((deg, clean), seed=seed)
            assert abs(psnr(a_deg, a_clean) - before) < 1e-9

    def test_covers_all_transforms(self):
        img = gen_clean(17, 32)
        variants = set()
        for seed in range(64):
            out, _ = augment((img, img), seed=seed)
            variants.add(out.tobytes())
        assert len(variants) == 8  # 4 rotations x 2 flips

    def test_non_square_rejected(self):
        img = np.zeros((3, 16, 32), dtype=np.float32)
        with pytest.raises(ValueError, match="square"):
            augment((img, img), seed=0)


class TestDataset:
    def test_file_arithmetic(self, tmp_path):
        manifest = make_dataset(DegradationSpec(mode="haze", seed=1), 4, tmp_path)
        files = sorted(os.listdir(tmp_path))
        assert len([f for f in files if f.endswith(".ppm")]) == 8
        assert os.path.basename(manifest) in files

    def test_regeneration_is_bitwise(self, tmp_path):
        spec = DegradationSpec(mode="mixed", seed=2)
        dir_a, dir_b = tmp_path / "a", tmp_path / "b"
        manifest_a = make_dataset(spec, 6, dir_a)
        loaded_spec, entries = load_manifest(manifest_a)
        make_dataset(loaded_spec, len(entries), dir_b)
        for name in sorted(os.listdir(dir_a)):
            with open(dir_a / name, "rb") as fa, open(dir_b / name, "rb") as fb:
                assert fa.read() == fb.read(), name

    def test_mixed_census_respects_ratio(self, tmp_path):
        spec = DegradationSpec(mode="mixed", seed=3)
        manifest = make_dataset(spec, 10, tmp_path)
        _, entries = load_manifest(manifest)
        n_haze = sum(1 for e in entries if e.mode == "haze")
        assert abs(n_haze - 10 * spec.mixed_haze_ratio) <= 1

    def test_degradation_is_measurable(self):
        for seed in range(12):
            for mode in ("haze", "snow"):
                deg, clean = synthesize_pair(DegradationSpec(mode=mode, seed=seed), mode, seed)
                assert psnr(deg, clean) < 35.0
                assert deg.min() >= 0.0 and deg.max() <= 1.0

    def test_spec_round_trips_through_manifest(self, tmp_path):
        spec = DegradationSpec(mode="snow", seed=4, snow_cov_range=(0.05, 0.1))
        manifest = make_dataset(spec, 2, tmp_path)
        loaded, _ = load_manifest(manifest)
        assert loaded == spec
