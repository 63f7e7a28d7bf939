import json

import numpy as np
import pytest

from probepose.cli import main
from probepose.image import read_png
from probepose.recon import VoxelVolume, save_volume


def test_help_and_unknown_flags(capsys):
    with pytest.raises(SystemExit) as e:
        main(["metrics", "--help"])
    assert e.value.code == 0
    with pytest.raises(SystemExit) as e:
        main(["metrics", "a", "b", "--bogus"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["fly"])
    assert e.value.code == 2


def test_missing_file_is_usage_error(tmp_path, capsys):
    assert main(["metrics", str(tmp_path / "a.vol"), str(tmp_path / "b.vol")]) == 2


def test_metrics_identical(tmp_path, capsys):
    save_volume(tmp_path / "a.vol", VoxelVolume([0, 0, 0], 5e-4, np.ones((3, 3, 3), bool)))
    assert main(["metrics", str(tmp_path / "a.vol"), str(tmp_path / "a.vol")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["dice"] == 1.0 and out["hausdorff_mm"] == 0.0


def test_gen_pattern(tmp_path):
    assert main(["gen-pattern", "--out", str(tmp_path / "p.png"), "--size", "64"]) == 0
    assert read_png(tmp_path / "p.png").shape == (64, 64, 3)


def test_render_and_estimate_aligned(tmp_path, capsys):
    pose = ["10", "-20", "80", "180", "0", "30"]
    for cam in ("left", "right"):
        assert main(["render", "--pose", *pose, "--camera", cam, "--out", str(tmp_path / f"{cam}.png")]) == 0
    assert main(["estimate", "--left", str(tmp_path / "left.png"), "--right", str(tmp_path / "right.png"),
                 "--init", *pose]) == 0
    out = json.loads(capsys.readouterr().out)
    assert np.allclose(out["pose"]["translation_mm"], [10, -20, 80], atol=0.05)
    assert out["cameras"] == ["left", "right"]


def test_pipeline_error_exits_one(tmp_path, capsys):
    from probepose.image import blank, write_png

    write_png(tmp_path / "blank.png", blank(640, 360, (90, 90, 90)))
    rc = main(["estimate", "--left", str(tmp_path / "blank.png"), "--init", "0", "0", "80", "180", "0", "0"])
    assert rc == 1
    assert "RestorationFailed" in capsys.readouterr().err


def test_reconstruct_phantom(tmp_path, capsys):
    assert main(["reconstruct", "--phantom", "cylinder", "--out", str(tmp_path / "c.vol")]) == 0
    assert json.loads(capsys.readouterr().out)["voxels"] > 0


def test_config_rejects_unknown_keys(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"seed": 1, "colour": "red"}))
    assert main(["eval-traj", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path)]) == 2
