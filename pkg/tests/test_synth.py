import numpy as np
import pytest

from demfuse.synth import (
    PRESET_NAMES,
    SceneSpec,
    build_truth,
    generate_scene,
    preset,
    with_seed,
)


def small_spec(**overrides) -> SceneSpec:
    base = dict(
        rows=32,
        cols=32,
        ground_level=100.0,
        buildings=((4, 4, 10.0, 8, 8),),
        n_inputs=2,
        noise_sigmas=(1.0, 2.0),
        outlier_rate=0.0,
        outlier_hoas=(45.81, 53.21),
        seed=7,
    )
    base.update(overrides)
    return SceneSpec(**base)


class TestSceneSpec:
    def test_out_of_bounds_building_rejected(self):
        with pytest.raises(ValueError, match="out of bounds"):
            small_spec(buildings=((30, 30, 5.0, 8, 8),))

    def test_sigma_count_must_match(self):
        with pytest.raises(ValueError, match="noise_sigmas"):
            small_spec(noise_sigmas=(1.0,))

    def test_json_roundtrip(self):
        spec = small_spec()
        again = SceneSpec.from_json(spec.to_json())
        assert again == spec

    def test_json_roundtrip_through_file(self, tmp_path):
        spec = preset("inner_city")
        p = tmp_path / "scene.json"
        p.write_text(spec.to_json())
        assert SceneSpec.read(p) == spec


class TestGenerateScene:
    def test_noiseless_inputs_equal_truth(self):
        spec = small_spec(noise_sigmas=(0.0, 0.0))
        truth, inputs, _ = generate_scene(spec)
        for g in inputs:
            assert np.array_equal(g.heights, truth.heights)

    def test_truth_values_are_ground_or_roof(self):
        spec = small_spec()
        truth = build_truth(spec)
        assert set(np.unique(truth)) == {100.0, 110.0}

    def test_empirical_noise_std(self):
        spec = small_spec(rows=128, cols=128, noise_sigmas=(2.0, 2.0))
        truth, inputs, _ = generate_scene(spec)
        resid = inputs[0].heights - truth.heights
        assert abs(resid.std() - 2.0) / 2.0 < 0.05

    def test_empirical_outlier_rate(self):
        spec = small_spec(rows=256, cols=256, noise_sigmas=(0.0, 0.0), outlier_rate=0.05)
        truth, inputs, _ = generate_scene(spec)
        frac = float(np.mean(inputs[0].heights != truth.heights))
        assert abs(frac - 0.05) / 0.05 < 0.2

    def test_outliers_are_plus_minus_one_hoa(self):
        spec = small_spec(rows=64, cols=64, noise_sigmas=(0.0, 0.0), outlier_rate=0.1)
        truth, inputs, _ = generate_scene(spec)
        delta = inputs[1].heights - truth.heights
        hit = delta != 0
        assert hit.any()
        assert np.allclose(np.abs(delta[hit]), 53.21, atol=1e-9)
        assert (delta > 0).any() and (delta < 0).any()

    def test_same_seed_bit_identical(self):
        spec = small_spec(outlier_rate=0.03)
        t1, i1, h1 = generate_scene(spec)
        t2, i2, h2 = generate_scene(spec)
        assert np.array_equal(t1.heights, t2.heights)
        for a, b in zip(i1, i2):
            assert np.array_equal(a.heights, b.heights)
        for a, b in zip(h1, h2):
            assert np.array_equal(a.grid.heights, b.grid.heights)

    def test_different_seed_differs(self):
        a = generate_scene(small_spec(seed=1))[1][0]
        b = generate_scene(small_spec(seed=2))[1][0]
        assert not np.array_equal(a.heights, b.heights)

    def test_hems_constant_at_sigma(self):
        spec = small_spec()
        _, _, hems = generate_scene(spec)
        assert np.all(hems[0].grid.heights == 1.0)
        assert np.all(hems[1].grid.heights == 2.0)


class TestPresets:
    def test_agricultural_has_no_buildings(self):
        assert preset("agricultural").buildings == ()
        assert preset("agricultural").ramp_m > 0

    def test_presets_are_deterministic(self):
        for name in PRESET_NAMES:
            assert preset(name) == preset(name)

    def test_presets_differ_pairwise_in_building_count(self):
        counts = [len(preset(name).buildings) for name in PRESET_NAMES]
        assert len(set(counts)) == len(counts)

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError, match="unknown preset"):
            preset("downtown")

    def test_with_seed(self):
        spec = with_seed(preset("industrial"), 99)
        assert spec.seed == 99

    def test_agricultural_truth_is_a_ramp(self):
        spec = with_seed(preset("agricultural"), 5)
        truth = build_truth(spec)
        assert truth.max() - truth.min() == pytest.approx(spec.ramp_m)
        assert np.all(np.diff(truth, axis=1) >= 0)
