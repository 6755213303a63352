import json

import numpy as np
import pytest

from demfuse.cli import main
from demfuse.quality import CSV_HEADER
from demfuse.raster import read_grid, write_grid

from conftest import make_grid, random_grid


def run(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture
def scene_dir(tmp_path):
    out = tmp_path / "scene"
    assert run("synth", "--preset", "industrial", "--seed", "7", "--out", out) == 0
    return out


class TestSynthCommand:
    def test_writes_expected_files(self, scene_dir):
        names = sorted(p.name for p in scene_dir.iterdir())
        assert names == [
            "hem_1.asc",
            "hem_2.asc",
            "input_1.asc",
            "input_2.asc",
            "scene.json",
            "truth.asc",
        ]
        spec = json.loads((scene_dir / "scene.json").read_text())
        assert spec["seed"] == 7

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("synth", "--preset", "residential", "--seed", "3", "--out", a) == 0
        assert run("synth", "--preset", "residential", "--seed", "3", "--out", b) == 0
        for p in sorted(a.iterdir()):
            assert p.read_bytes() == (b / p.name).read_bytes(), p.name

    def test_unknown_preset_is_usage_error(self, tmp_path, capsys):
        assert run("synth", "--preset", "swamp", "--out", tmp_path) == 2
        assert "usage" in capsys.readouterr().err

    def test_preset_or_spec_required(self, tmp_path, capsys):
        assert run("synth", "--out", tmp_path) == 2

    def test_spec_file_input(self, tmp_path, scene_dir):
        out = tmp_path / "from_spec"
        assert run("synth", "--spec", scene_dir / "scene.json", "--out", out) == 0
        assert (out / "truth.asc").read_bytes() == (scene_dir / "truth.asc").read_bytes()

    def test_raw_f32_format(self, tmp_path):
        out = tmp_path / "raw"
        assert run("synth", "--preset", "agricultural", "--format", "raw-f32", "--out", out) == 0
        g = read_grid(out / "truth.f32")
        assert g.rows == 256


class TestFuseCommand:
    def test_tvl1_writes_fused_and_manifest(self, scene_dir, tmp_path):
        out = tmp_path / "fused"
        code = run(
            "fuse", "--method", "tvl1", "--gamma", "1.2", "--max-iters", "60",
            scene_dir / "input_1.asc", scene_dir / "input_2.asc",
            "--out", out, "--trace",
        )
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["schema"] == 1
        assert manifest["method"] == "tvl1"
        assert manifest["gamma"] == 1.2
        assert manifest["tau"] == pytest.approx(1 / np.sqrt(8))
        assert manifest["iterations"] >= 1
        assert manifest["wall_time_s"] > 0
        fused = read_grid(out / "fused.asc")
        assert fused.rows == 256
        trace = (out / "energy_trace.csv").read_text().splitlines()
        assert trace[0] == "iteration,energy,max_dual_norm,rel_change"
        assert len(trace) == manifest["iterations"] + 2

    def test_wa_with_equal_hems_is_arithmetic_mean(self, tmp_path, rng):
        a = random_grid(rng, 8, 8, lo=100, hi=200)
        b = random_grid(rng, 8, 8, lo=100, hi=200)
        hem = make_grid(np.full((8, 8), 1.5))
        for name, g in (("a.asc", a), ("b.asc", b), ("hem.asc", hem)):
            write_grid(g, tmp_path / name)
        out = tmp_path / "wa"
        code = run(
            "fuse", "--method", "wa",
            "--hem", tmp_path / "hem.asc", "--hem", tmp_path / "hem.asc",
            tmp_path / "a.asc", tmp_path / "b.asc", "--out", out,
        )
        assert code == 0
        fused = read_grid(out / "fused.asc")
        mean = 0.5 * (a.heights + b.heights)
        assert np.allclose(fused.heights, mean, rtol=1e-5)

    def test_wa_without_weights_is_usage_error(self, scene_dir, tmp_path, capsys):
        code = run(
            "fuse", "--method", "wa",
            scene_dir / "input_1.asc", scene_dir / "input_2.asc",
            "--out", tmp_path / "x",
        )
        assert code == 2
        assert "requires" in capsys.readouterr().err

    def test_median_method(self, scene_dir, tmp_path):
        out = tmp_path / "med"
        assert run(
            "fuse", "--method", "median",
            scene_dir / "input_1.asc", scene_dir / "input_2.asc", "--out", out,
        ) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["gamma"] is None and manifest["iterations"] is None

    def test_incompatible_inputs_are_runtime_error(self, tmp_path, capsys):
        write_grid(make_grid(np.zeros((4, 4))), tmp_path / "a.asc")
        write_grid(make_grid(np.zeros((5, 5))), tmp_path / "b.asc")
        code = run(
            "fuse", "--method", "median", tmp_path / "a.asc", tmp_path / "b.asc",
            "--out", tmp_path / "x",
        )
        assert code == 1
        assert "incompatible" in capsys.readouterr().err

    def test_coregister_recovers_shift(self, tmp_path, rng):
        from demfuse.raster import translate_grid

        fixed = random_grid(rng, 32, 32, lo=0, hi=40)
        moving = translate_grid(fixed, -2, -1)
        moving = moving.with_heights(
            np.where(moving.valid_mask, moving.heights + 3.0, np.nan)
        )
        write_grid(fixed, tmp_path / "fixed.asc")
        write_grid(moving, tmp_path / "moving.asc")
        out = tmp_path / "co"
        code = run(
            "fuse", "--method", "median", "--coregister", "4",
            tmp_path / "fixed.asc", tmp_path / "moving.asc", "--out", out,
        )
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["coregister"][1]["shift"] == [2, 1]
        assert manifest["coregister"][1]["bias"] == pytest.approx(3.0, abs=1e-4)


class TestEvalCommand:
    def test_candidate_equals_reference(self, tmp_path, rng):
        g = random_grid(rng, 16, 16)
        write_grid(g, tmp_path / "g.asc")
        out = tmp_path / "eval"
        assert run(
            "eval", tmp_path / "g.asc", "--reference", tmp_path / "g.asc", "--out", out
        ) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["rmse"] == 0.0
        assert (report["band_lt2"], report["band_lt4"], report["band_ge4"]) == (100.0, 100.0, 0.0)
        assert (out / "residual_map.pgm").exists()
        assert (out / "residuals.asc").exists()

    def test_hoa_threshold_reported(self, tmp_path, rng):
        g = random_grid(rng, 8, 8)
        write_grid(g, tmp_path / "g.asc")
        out = tmp_path / "eval"
        assert run(
            "eval", tmp_path / "g.asc", "--reference", tmp_path / "g.asc",
            "--hoa", "45.81", "--hoa", "72.02", "--out", out,
        ) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["pu_threshold"] == pytest.approx(30.3575)
        assert round(report["pu_threshold"], 2) == 30.36
        assert report["n_pu_errors"] == 0

    def test_csv_field_order(self, tmp_path, rng):
        g = random_grid(rng, 6, 6)
        write_grid(g, tmp_path / "g.asc")
        out = tmp_path / "eval"
        run("eval", tmp_path / "g.asc", "--reference", tmp_path / "g.asc", "--out", out)
        lines = (out / "report.csv").read_text().splitlines()
        assert lines[0] == CSV_HEADER


class TestLcurveCommand:
    def test_default_grid_emits_15_rows(self, tmp_path, rng):
        truth = np.zeros((16, 16))
        truth[:, 8:] = 10.0
        a = make_grid(truth + rng.normal(0, 1, truth.shape))
        b = make_grid(truth + rng.normal(0, 1, truth.shape))
        write_grid(a, tmp_path / "a.asc")
        write_grid(b, tmp_path / "b.asc")
        out = tmp_path / "lc"
        code = run(
            "lcurve", tmp_path / "a.asc", tmp_path / "b.asc",
            "--max-iters", "40", "--out", out,
        )
        assert code == 0
        lines = (out / "lcurve.csv").read_text().splitlines()
        assert lines[0] == "gamma,log_data,log_reg,curvature"
        assert len(lines) == 16
        selected = json.loads((out / "selected.json").read_text())
        assert selected["gamma_star"] in selected["candidates"]

    def test_apply_writes_fused(self, tmp_path, rng):
        a = random_grid(rng, 12, 12)
        b = random_grid(rng, 12, 12)
        write_grid(a, tmp_path / "a.asc")
        write_grid(b, tmp_path / "b.asc")
        out = tmp_path / "lc"
        code = run(
            "lcurve", tmp_path / "a.asc", tmp_path / "b.asc",
            "--gammas", "0.1,0.5,1.0,2.0", "--max-iters", "30", "--apply", "--out", out,
        )
        assert code == 0
        assert (out / "fused.asc").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["gamma"] == json.loads((out / "selected.json").read_text())["gamma_star"]


@pytest.fixture(scope="module")
def bench_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench") / "run"
    code = run(
        "bench", "--preset", "industrial", "--seed", "7",
        "--max-iters", "150", "--out", out,
    )
    assert code == 0
    return out


class TestBenchCommand:
    def test_table_has_k_plus_3_rows(self, bench_dir):
        lines = (bench_dir / "bench.csv").read_text().splitlines()
        assert lines[0] == "dem," + CSV_HEADER
        assert len(lines) == 1 + 2 + 3  # header + k inputs + wa/tvl1/huber
        names = [ln.split(",")[0] for ln in lines[1:]]
        assert names == ["input_1", "input_2", "wa", "tvl1", "huber"]

    def test_fused_beats_inputs(self, bench_dir):
        data = json.loads((bench_dir / "bench.json").read_text())
        rows = {r["dem"]: r for r in data["rows"]}
        worst_input = max(rows["input_1"]["rmse"], rows["input_2"]["rmse"])
        for method in ("wa", "tvl1", "huber"):
            assert rows[method]["rmse"] < worst_input

    def test_rerun_is_byte_identical(self, bench_dir, tmp_path):
        out2 = tmp_path / "again"
        assert run(
            "bench", "--preset", "industrial", "--seed", "7",
            "--max-iters", "150", "--out", out2,
        ) == 0
        assert (out2 / "bench.csv").read_bytes() == (bench_dir / "bench.csv").read_bytes()
        assert (out2 / "bench.json").read_bytes() == (bench_dir / "bench.json").read_bytes()


def test_version_flag(capsys):
    assert run("--version") == 0
    assert "demfuse" in capsys.readouterr().out
