import numpy as np
import pytest

from cf_translate.analysis import acv, build_report, mcv
from cf_translate.images import DatasetManifest
from cf_translate.stats import OK
from cf_translate.synth import (
    SynthSpec,
    disk_mask,
    generate_image,
    load_geometry,
    oracle_translate,
    write_dataset,
)


class TestSynthSpec:
    def test_defaults_valid(self):
        spec = SynthSpec()
        assert spec.channels == 4 and spec.height == 64
        assert spec.sigma == 8.0

    def test_null_effect_allowed(self):
        SynthSpec(effect_magnitude=0.0)

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            SynthSpec(effect_magnitude=1.0)
        with pytest.raises(ValueError):
            SynthSpec(effect_channel=4)
        with pytest.raises(ValueError):
            SynthSpec(radius_range=(5, 3))

    def test_json_round_trip(self):
        spec = SynthSpec(effect_magnitude=0.3, radius_range=(2, 6), seed=7)
        assert SynthSpec.from_json(spec.to_json()) == spec


class TestDiskMask:
    def test_single_disk(self):
        mask = disk_mask(9, 9, [(4, 4, 2)])
        assert mask[4, 4] and mask[4, 6] and mask[2, 4]
        assert not mask[4, 7] and not mask[0, 0]

    def test_union(self):
        mask = disk_mask(10, 10, [(2, 2, 1), (7, 7, 1)])
        assert mask[2, 2] and mask[7, 7]
        assert mask.sum() == 2 * 5  # two crosses of 5 pixels each


class TestGeneration:
    def test_texture_spans_unit_interval(self):
        spec = SynthSpec(noise_level=0.0, seed=1)
        img, _ = generate_image(spec, group=0, index=0)
        for k in range(spec.channels):
            assert img.pixels[k].min() == pytest.approx(0.0, abs=1e-6)
            assert img.pixels[k].max() == pytest.approx(1.0, abs=1e-6)

    def test_same_seed_bit_identical(self):
        spec = SynthSpec(seed=3)
        a, disks_a = generate_image(spec, 1, 5)
        b, disks_b = generate_image(spec, 1, 5)
        assert np.array_equal(a.pixels, b.pixels)
        assert disks_a == disks_b

    def test_groups_share_construction_except_effect(self):
        # with delta = 0 the two groups' generators are the same function
        spec = SynthSpec(effect_magnitude=0.0, seed=4)
        img0, d0 = generate_image(spec, 0, 2)
        img1, d1 = generate_image(spec, 1, 2)
        assert img0.pixels.shape == img1.pixels.shape
        # different rng streams per group, so textures differ
        assert not np.array_equal(img0.pixels, img1.pixels)

    def test_effect_confined_to_channel_and_mask(self):
        spec = SynthSpec(effect_magnitude=0.3, noise_level=0.0, seed=5)
        img1, disks = generate_image(spec, 1, 0)
        # rebuild the same texture by drawing from the identical rng stream
        null_spec = SynthSpec(effect_magnitude=0.0, noise_level=0.0, seed=5)
        base, base_disks = generate_image(null_spec, 1, 0)
        assert disks == base_disks
        mask = disk_mask(spec.height, spec.width, disks)
        diff = img1.pixels.astype(np.float64) - base.pixels.astype(np.float64)
        for k in range(spec.channels):
            if k == spec.effect_channel:
                assert np.abs(diff[k][~mask]).max() == 0.0
                # pixels already saturated at 1.0 legitimately gain nothing
                assert (diff[k][mask] >= 0.0).all()
                assert np.median(diff[k][mask]) > 0.0
            else:
                assert np.abs(diff[k]).max() == 0.0

    def test_heavy_clipping_warns(self):
        spec = SynthSpec(effect_magnitude=0.9, noise_level=0.0, seed=6)
        with pytest.warns(UserWarning, match="clipped"):
            generate_image(spec, 1, 0)


class TestDataset:
    def test_write_and_reload(self, tmp_path):
        spec = SynthSpec(n_per_group=3, seed=7)
        manifest = write_dataset(spec, tmp_path)
        assert len(manifest.entries) == 6
        manifest.require_both_groups()

        reloaded = DatasetManifest.load(tmp_path)
        loaded_spec, geometry = load_geometry(tmp_path)
        assert loaded_spec == spec
        assert set(geometry) == {e.image_id for e in reloaded.entries}
        img = reloaded.load_image("g0i00")
        assert img.pixels.dtype == np.float32
        assert 0.0 <= img.pixels.min() and img.pixels.max() <= 1.0

    def test_same_seed_same_dataset(self, tmp_path):
        spec = SynthSpec(n_per_group=2, seed=8)
        m1 = write_dataset(spec, tmp_path / "a")
        m2 = write_dataset(spec, tmp_path / "b")
        for e1, e2 in zip(m1.entries, m2.entries):
            assert np.array_equal(
                m1.load_image(e1.image_id).pixels, m2.load_image(e2.image_id).pixels
            )

    def test_missing_geometry_is_actionable(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="geometry"):
            load_geometry(tmp_path)


class TestOracle:
    def test_difference_only_in_effect_region(self, tmp_path):
        spec = SynthSpec(n_per_group=2, effect_magnitude=0.25, seed=9)
        manifest = write_dataset(spec, tmp_path)
        _, geometry = load_geometry(tmp_path)
        img = manifest.load_image("g0i00")
        res = oracle_translate(img, spec, geometry)
        diff = res.difference
        mask = disk_mask(spec.height, spec.width, geometry["g0i00"])
        for k in range(spec.channels):
            if k == spec.effect_channel:
                assert np.abs(diff[k][~mask]).max() == 0.0
                assert diff[k][mask].max() <= spec.effect_magnitude + 1e-6
                assert diff[k][mask].max() > 0.0
            else:
                assert np.abs(diff[k]).max() == 0.0

    def test_metrics_on_oracle_outputs(self, tmp_path):
        spec = SynthSpec(n_per_group=4, effect_magnitude=0.25, seed=10)
        manifest = write_dataset(spec, tmp_path)
        _, geometry = load_geometry(tmp_path)
        results = [
            oracle_translate(manifest.load_image(e.image_id), spec, geometry)
            for e in manifest.group_entries(0)
        ]
        m, a = mcv(results), acv(results)
        k = spec.effect_channel
        assert m[k] == 1.0 and a[k] == 1.0
        for other in range(spec.channels):
            if other != k:
                assert abs(m[other]) == 0.0 and a[other] == 0.0

    def test_missing_record_rejected(self, tmp_path):
        spec = SynthSpec(n_per_group=1, seed=11)
        manifest = write_dataset(spec, tmp_path)
        img = manifest.load_image("g0i00")
        with pytest.raises(KeyError, match="geometry"):
            oracle_translate(img, spec, {})

    def test_paired_oracle_test_beats_unpaired(self, tmp_path):
        spec = SynthSpec(n_per_group=16, effect_magnitude=0.2, seed=12)
        manifest = write_dataset(spec, tmp_path)
        _, geometry = load_geometry(tmp_path)
        results = [
            oracle_translate(manifest.load_image(e.image_id), spec, geometry)
            for e in manifest.group_entries(0)
        ]
        row = build_report(results, manifest).row(f"ch{spec.effect_channel}")
        assert row.unpaired.status == OK and row.paired.status == OK
        assert row.paired.p_value < row.unpaired.p_value


class TestGroupStatistics:
    def test_mean_shift_matches_coverage_times_delta(self, tmp_path):
        # blur_sigma=4 keeps between-image texture variance small enough for
        # the group-mean comparison to be meaningful at this n
        spec = SynthSpec(
            n_per_group=32, effect_magnitude=0.3, noise_level=0.0, seed=13,
            blur_sigma=4.0,
        )
        manifest = write_dataset(spec, tmp_path)
        _, geometry = load_geometry(tmp_path)
        k = spec.effect_channel

        # the oracle gives the exact expected shift for each group-0 texture
        expected_shifts = []
        for e in manifest.group_entries(0):
            img = manifest.load_image(e.image_id)
            res = oracle_translate(img, spec, geometry)
            expected_shifts.append(res.difference[k].mean())
        expected = float(np.mean(expected_shifts))
        assert expected > 0.0

        g0 = np.mean([
            manifest.load_image(e.image_id).pixels[k].mean()
            for e in manifest.group_entries(0)
        ])
        g1 = np.mean([
            manifest.load_image(e.image_id).pixels[k].mean()
            for e in manifest.group_entries(1)
        ])
        # group difference equals the oracle-predicted shift up to base-texture noise
        assert g1 - g0 == pytest.approx(expected, abs=0.025)

    def test_null_effect_groups_exchangeable(self, tmp_path):
        spec = SynthSpec(
            n_per_group=64, effect_magnitude=0.0, seed=14, blur_sigma=4.0
        )
        manifest = write_dataset(spec, tmp_path)
        for k in range(spec.channels):
            g0 = np.mean([
                manifest.load_image(e.image_id).pixels[k].mean()
                for e in manifest.group_entries(0)
            ])
            g1 = np.mean([
                manifest.load_image(e.image_id).pixels[k].mean()
                for e in manifest.group_entries(1)
            ])
            assert abs(g1 - g0) < 0.05
