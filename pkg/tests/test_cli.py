"""End-to-end tests for the command-line frontend."""

import json

import numpy as np
import pytest
from PIL import Image

from focusdepth import core
from focusdepth.cli import main
from focusdepth.core import DepthMap, named_rng

FAST_SOLVE = ["--steps", "8", "--surf-res", "8", "--c2", "4", "--log-every", "4"]


@pytest.fixture()
def scene_dir(tmp_path):
    """A tiny RGB + depth input pair plus a synthesized 3-plane manifest."""
    rng = named_rng(0, "cli_scene")
    rgb = (rng.uniform(0.2, 0.9, (24, 24, 3)) * 255).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(tmp_path / "rgb.png")
    depth = np.where(np.arange(24)[None, :] < 12, 1.0, 1.5)
    depth = np.broadcast_to(depth, (24, 24)).copy()
    core.save_depth(DepthMap(depth), tmp_path / "depth.pfm")
    rc = main(["synth", "--rgb", str(tmp_path / "rgb.png"),
               "--depth", str(tmp_path / "depth.pfm"),
               "--focus", "0.9,1.2,1.6",
               "--out-manifest", str(tmp_path / "scene" / "manifest.json")])
    assert rc == 0
    return tmp_path


class TestSynth:
    def test_writes_manifest_planes_and_depth(self, scene_dir):
        manifest = core.load_manifest(scene_dir / "scene" / "manifest.json")
        assert len(manifest.image_paths) == 3
        assert tuple(manifest.focal_distances) == (0.9, 1.2, 1.6)
        stack = core.load_stack(manifest)
        assert (stack.num_planes, stack.height, stack.width) == (3, 24, 24)
        gt = core.load_depth(manifest.depth_path)
        assert gt.shape == (24, 24)

    def test_missing_input_fails_cleanly(self, tmp_path, capsys):
        rc = main(["synth", "--rgb", str(tmp_path / "nope.png"),
                   "--depth", str(tmp_path / "nope.pfm"),
                   "--focus", "1,2",
                   "--out-manifest", str(tmp_path / "m.json")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_focus_distance_fails(self, scene_dir, capsys):
        rc = main(["synth", "--rgb", str(scene_dir / "rgb.png"),
                   "--depth", str(scene_dir / "depth.pfm"),
                   "--focus", "1.0,-2.0",
                   "--out-manifest", str(scene_dir / "bad" / "m.json")])
        assert rc == 1


class TestSolve:
    def test_writes_depth_probs_and_trace(self, scene_dir, capsys):
        manifest = str(scene_dir / "scene" / "manifest.json")
        out_depth = scene_dir / "pred.pfm"
        out_probs = scene_dir / "probs.npy"
        trace_csv = scene_dir / "trace.csv"
        rc = main(["solve", "--manifest", manifest, *FAST_SOLVE,
                   "--out-depth", str(out_depth),
                   "--out-probs", str(out_probs),
                   "--trace-csv", str(trace_csv)])
        assert rc == 0
        assert "final:" in capsys.readouterr().out
        pred = core.load_depth(out_depth)
        assert pred.shape == (24, 24)
        probs = np.load(out_probs)
        assert probs.shape == (24, 24, 3)
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-9)
        lines = trace_csv.read_text().strip().split("\n")
        assert lines[0] == "step,total,depth,sv,fv,rmse,invalid_trend_pct"
        assert len(lines) >= 3  # step 0 plus logged steps

    def test_config_file_with_flag_override(self, scene_dir):
        manifest = str(scene_dir / "scene" / "manifest.json")
        cfg_path = scene_dir / "cfg.json"
        cfg_path.write_text(json.dumps({"steps": 4, "surf_res": 8, "c2": 4}))
        trace = scene_dir / "trace2.csv"
        rc = main(["solve", "--manifest", manifest, "--config", str(cfg_path),
                   "--steps", "2", "--trace-csv", str(trace)])
        assert rc == 0
        # The explicit flag wins over the config value.
        last = trace.read_text().strip().split("\n")[-1]
        assert last.split(",")[0] == "2"

    def test_unknown_config_key_fails(self, scene_dir, capsys):
        manifest = str(scene_dir / "scene" / "manifest.json")
        cfg_path = scene_dir / "bad.json"
        cfg_path.write_text(json.dumps({"step_count": 4}))
        rc = main(["solve", "--manifest", manifest, "--config", str(cfg_path)])
        assert rc == 1
        assert "unknown config keys" in capsys.readouterr().err

    def test_missing_manifest_fails(self, tmp_path):
        rc = main(["solve", "--manifest", str(tmp_path / "none.json"), *FAST_SOLVE])
        assert rc == 1


class TestAblate:
    def test_table_on_stdout(self, scene_dir, capsys):
        manifest = str(scene_dir / "scene" / "manifest.json")
        rc = main(["ablate", "--manifest", manifest, *FAST_SOLVE,
                   "--variants", "no_sv,no_fv"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert lines[0].startswith("variant,mse,rmse")
        assert [ln.split(",")[0] for ln in lines[1:]] == ["full", "no_sv", "no_fv"]

    def test_table_to_file(self, scene_dir):
        manifest = str(scene_dir / "scene" / "manifest.json")
        out_csv = scene_dir / "ablation.csv"
        rc = main(["ablate", "--manifest", manifest, *FAST_SOLVE,
                   "--variants", "no_q", "--out-csv", str(out_csv)])
        assert rc == 0
        assert out_csv.read_text().count("\n") == 3  # header + full + no_q

    def test_unknown_variant_fails(self, scene_dir, capsys):
        manifest = str(scene_dir / "scene" / "manifest.json")
        rc = main(["ablate", "--manifest", manifest, *FAST_SOLVE,
                   "--variants", "no_such_thing"])
        assert rc == 1


class TestEval:
    def test_json_report(self, scene_dir, capsys):
        pred = scene_dir / "pred_eval.pfm"
        core.save_depth(DepthMap(np.full((24, 24), 1.25)), pred)
        rc = main(["eval", "--pred", str(pred), "--gt", str(scene_dir / "depth.pfm")])
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert report["valid_pixels"] == 576
        assert report["invalid_trend_pct"] is None
        assert report["rmse"] == pytest.approx(0.25, abs=1e-9)

    def test_csv_report_with_probs(self, scene_dir, capsys):
        pred = scene_dir / "pred_eval.pfm"
        core.save_depth(DepthMap(np.full((24, 24), 1.25)), pred)
        probs_path = scene_dir / "p.npy"
        np.save(probs_path, np.full((24, 24, 3), 1 / 3))
        out_file = scene_dir / "report.csv"
        rc = main(["eval", "--pred", str(pred), "--gt", str(scene_dir / "depth.pfm"),
                   "--probs", str(probs_path), "--out", "csv",
                   "--out-file", str(out_file)])
        assert rc == 0
        header, row = out_file.read_text().strip().split("\n")
        cols = dict(zip(header.split(","), row.split(",")))
        assert float(cols["invalid_trend_pct"]) == 0.0


class TestGradcheck:
    def test_reports_all_terms_ok(self, capsys):
        rc = main(["gradcheck", "--seed", "0"])
        assert rc == 0
        out = capsys.readouterr().out
        for name in ("depth_loss", "focal_variational_loss",
                     "spatial_variational_loss", "projection_backward"):
            assert f"{name}:" in out
        assert "FAIL" not in out


class TestEntryPoints:
    def test_module_invocation(self, tmp_path):
        import subprocess, sys
        proc = subprocess.run([sys.executable, "-m", "focusdepth.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert "synth" in proc.stdout and "gradcheck" in proc.stdout

    def test_unknown_command_rejected(self):
        with pytest.raises(SystemExit):
            main(["frobnicate"])
