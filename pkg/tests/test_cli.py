import os

import numpy as np
import pytest

from phasemotion.cli import (EXIT_CONFIG, EXIT_DATA, EXIT_MISSING, main,
                             parse_config)
from phasemotion.kinematics import POINT_NAMES, forward_kinematics
from phasemotion.motiondata import load_motion, root_positions
from phasemotion.synth import gen_action


def run(args):
    return main(args)


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            p = os.path.join(dirpath, name)
            out[os.path.relpath(p, root)] = read_bytes(p)
    return out


# -- config plumbing -----------------------------------------------------------


def test_unknown_key_rejected():
    with pytest.raises(Exception):
        parse_config("synth-data", None, ["out=x", "bogus=1"])


def test_flags_win_over_file(tmp_path):
    cfg_file = tmp_path / "c.txt"
    cfg_file.write_text("# comment\nseed = 5\nstreams_train = 3\n")
    cfg = parse_config("synth-data", str(cfg_file),
                       [f"out={tmp_path}", "seed=9"])
    assert cfg["seed"] == 9 and cfg["streams_train"] == 3


def test_missing_required_key_is_config_error():
    assert run(["synth-data"]) == EXIT_CONFIG


def test_bad_value_is_config_error(tmp_path):
    assert run(["synth-data", f"out={tmp_path}", "seed=banana"]) == EXIT_CONFIG


# -- commands --------------------------------------------------------------------


def test_synth_data_idempotent(tmp_path):
    out = tmp_path / "corpus"
    args = ["synth-data", f"out={out}", "streams_train=6", "streams_test=2",
            "seed=3"]
    assert run(args) == 0
    first = tree_bytes(out)
    assert run(args) == 0
    assert tree_bytes(out) == first
    assert (out / "synth-data.config.txt").exists()


def test_compose_without_checkpoints_is_missing(tmp_path):
    code = run(["compose", f"pae={tmp_path}/nope.ckpt",
                f"denoisers={tmp_path}", f"out={tmp_path}/o",
                "text_p=walk", "text_s=squat"])
    assert code == EXIT_MISSING


def test_eval_without_corpus_is_missing(tmp_path):
    code = run(["eval", f"corpus={tmp_path}/nocorpus", f"pae={tmp_path}/x",
                f"denoisers={tmp_path}", f"out={tmp_path}/o"])
    assert code == EXIT_MISSING


def test_export_roundtrip(tmp_path):
    from phasemotion.motiondata import save_motion
    seg = gen_action("walk", 30, seed=4)
    src = tmp_path / "walk.mtn"
    save_motion(src, seg)
    out = tmp_path / "pos.txt"
    assert run(["export", f"input={src}", f"out={out}"]) == 0
    text = out.read_text().splitlines()
    assert text[0] == "#phasemotion-export v1"
    assert text[2] == "points " + " ".join(POINT_NAMES)
    # forward kinematics sanity: pelvis advances with the root
    pts = forward_kinematics(seg)
    root = root_positions(seg)
    assert np.allclose(pts[:, 0, 0], root[:, 0])
    assert np.all(np.diff(pts[:, 0, 0]) > 0)  # walking forward
    # re-run writes identical bytes
    first = read_bytes(out)
    assert run(["export", f"input={src}", f"out={out}"]) == 0
    assert read_bytes(out) == first


def test_export_missing_input(tmp_path):
    assert run(["export", f"input={tmp_path}/none.mtn",
                f"out={tmp_path}/o.txt"]) == EXIT_MISSING


def test_longgen_bad_request_is_data_error(tmp_path):
    req = tmp_path / "req.txt"
    req.write_text("garbage\n")
    # missing checkpoints are reported before the request is parsed
    code = run(["longgen", f"pae={tmp_path}/p.ckpt", f"denoisers={tmp_path}",
                f"out={tmp_path}/o", f"request={req}"])
    assert code == EXIT_MISSING
