import json
import os

import numpy as np
import pytest

from gsavatar.cli import main


def run(args):
    return main(list(args))


@pytest.fixture(scope="module")
def toy_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("assets") / "toy.btpl"
    assert run(["make-toy", "--joints", "4", "--segments", "4", "-o", str(path)]) == 0
    return str(path)


def test_make_toy_deterministic(tmp_path):
    a = tmp_path / "a.btpl"
    b = tmp_path / "b.btpl"
    assert run(["make-toy", "--joints", "3", "--segments", "4", "--seed", "5", "-o", str(a)]) == 0
    assert run(["make-toy", "--joints", "3", "--segments", "4", "--seed", "5", "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_validate_good_template(toy_file, capsys):
    assert run(["validate", toy_file]) == 0
    out = capsys.readouterr().out
    assert "OK" in out and "1/1" in out


def test_validate_broken_file(tmp_path):
    bad = tmp_path / "bad.btpl"
    bad.write_bytes(b"BTPL1\n" + b"\x00" * 16)
    assert run(["validate", str(bad)]) == 1


def test_render_missing_camera_names_path(toy_file, tmp_path, capsys):
    missing = str(tmp_path / "nope.cam.json")
    code = run(["render", "--template", toy_file, "--camera", missing,
                "--uv-res", "24", "--vol-res", "8", "-o", str(tmp_path / "x.png")])
    assert code == 1
    assert missing in capsys.readouterr().err


def test_render_deterministic_bytes(toy_file, tmp_path):
    a = tmp_path / "a.png"
    b = tmp_path / "b.png"
    common = ["render", "--template", toy_file, "--uv-res", "24", "--vol-res", "8",
              "--width", "48", "--height", "48"]
    assert run(common + ["-o", str(a)]) == 0
    assert run(common + ["-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_turntable_filenames_and_determinism(toy_file, tmp_path):
    out1 = tmp_path / "t1"
    out2 = tmp_path / "t2"
    common = ["turntable", "--template", toy_file, "--views", "4",
              "--uv-res", "24", "--vol-res", "8", "--width", "32", "--height", "32",
              "--write-cameras"]
    assert run(common + ["-o", str(out1)]) == 0
    assert run(common + ["-o", str(out2)]) == 0
    names = sorted(os.listdir(out1))
    assert names == ["view_000.cam.json", "view_000.png", "view_001.cam.json", "view_001.png",
                     "view_002.cam.json", "view_002.png", "view_003.cam.json", "view_003.png"]
    for n in names:
        assert (out1 / n).read_bytes() == (out2 / n).read_bytes(), n


def test_turntable_24_views_defaults(toy_file, tmp_path):
    out = tmp_path / "t24"
    assert run(["turntable", "--template", toy_file, "--uv-res", "16", "--vol-res", "8",
                "--width", "16", "--height", "16", "-o", str(out)]) == 0
    names = sorted(p for p in os.listdir(out) if p.endswith(".png"))
    assert len(names) == 24
    assert names[0] == "view_000.png" and names[-1] == "view_023.png"


def test_animate_cli(toy_file, tmp_path):
    seq = {
        "fps": 8.0,
        "joint_names": [f"joint_{i:02d}" for i in range(4)],
        "frames": [
            {"root_t": [0, 0, 0], "rot": [[1, 0, 0, 0]] * 4},
            {"root_t": [0, 0, 0], "rot_aa": [[0, 0, 0.4]] + [[0, 0, 0]] * 3},
        ],
    }
    seq_path = tmp_path / "seq.pose.json"
    seq_path.write_text(json.dumps(seq))
    out = tmp_path / "frames"
    assert run(["animate", "--template", toy_file, "--seq", str(seq_path),
                "--uv-res", "24", "--vol-res", "8", "--width", "32", "--height", "32",
                "-o", str(out)]) == 0
    assert sorted(os.listdir(out)) == ["frame_000.png", "frame_001.png"]


def test_edit_texture_cli(toy_file, tmp_path):
    from PIL import Image as PILImage

    from gsavatar import Avatar, load_template
    from gsavatar.uvgauss import save_maps

    avatar = Avatar.build(load_template(toy_file), uv_resolution=24, volume_resolution=8)
    maps_path = tmp_path / "maps.gam"
    save_maps(avatar.maps, maps_path)
    patch_path = tmp_path / "patch.png"
    PILImage.new("RGBA", (4, 4), (0, 255, 0, 255)).save(patch_path)
    out = tmp_path / "edited.gam"
    assert run(["edit-texture", "--maps", str(maps_path), "--patch", str(patch_path),
                "--rect", "0,0,1,1", "-o", str(out)]) == 0
    from gsavatar.uvgauss import load_maps as _load

    edited = _load(out)
    assert edited.color[..., 1].min() > 0.9


def test_edit_shape_cli(toy_file, tmp_path, capsys):
    out = tmp_path / "shaped.png"
    assert run(["edit-shape", "--template", toy_file, "--new-beta", "1.0,0.0",
                "--uv-res", "24", "--vol-res", "8", "--width", "32", "--height", "32",
                "-o", str(out)]) == 0
    assert out.is_file()
    assert "anchors" in capsys.readouterr().out


def test_fit_color_cli_smoke(toy_file, tmp_path):
    # build targets by rendering a red avatar, then fit from gray
    from gsavatar import Avatar, load_template
    from gsavatar.uvgauss import save_maps

    avatar = Avatar.build(load_template(toy_file), uv_resolution=16, volume_resolution=8)
    red = avatar.maps.copy()
    red.color[:] = np.asarray([0.8, 0.1, 0.1], dtype=np.float32)
    red_path = tmp_path / "red.gam"
    save_maps(red, red_path)

    views = tmp_path / "views"
    assert run(["turntable", "--template", toy_file, "--maps", str(red_path),
                "--views", "2", "--uv-res", "16", "--vol-res", "8",
                "--width", "24", "--height", "24", "--write-cameras", "-o", str(views)]) == 0
    # fit-color expects NNN.png/NNN.cam.json stems; turntable wrote view_NNN.*
    out_maps = tmp_path / "fit.gam"
    csv = tmp_path / "trace.csv"
    plot = tmp_path / "trace.png"
    assert run(["fit-color", "--template", toy_file, "--views-dir", str(views),
                "--iterations", "10", "--step", "0.1", "--uv-res", "16", "--vol-res", "8",
                "--trace-csv", str(csv), "--trace-plot", str(plot), "-o", str(out_maps)]) == 0
    assert out_maps.is_file() and plot.is_file()
    lines = csv.read_text().strip().splitlines()
    assert lines[0] == "iter,loss,psnr"
    assert len(lines) == 12  # header + 10 iterations + final evaluation
    first = float(lines[1].split(",")[1])
    last = float(lines[-1].split(",")[1])
    assert last < first


def test_unknown_subcommand_is_user_error(capsys):
    assert run(["frobnicate"]) == 1
    assert capsys.readouterr().err != ""
