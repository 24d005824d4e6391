import numpy as np
import pytest

from phasemotion.motiondata import (DEFAULT_LAYOUT, MotionSegment,
                                    dumps_motion, loads_motion, root_positions)
from phasemotion.rng import RngState, derive_seed
from phasemotion.synth import (CorpusConfig, Corpus, SynthConfig, REST_ANGLES,
                               JOINT_NAMES, build_corpus, extract_pairs,
                               gen_action, gen_stream, labeled_spans)

CFG = SynthConfig()


def test_rng_identical_state_identical_draws():
    a = RngState(123, counter=5).normal(10)
    b = RngState(123, counter=5).normal(10)
    assert np.array_equal(a, b)
    c = RngState(123, counter=6).normal(10)
    assert not np.array_equal(a, c)


def test_derive_seed_stable_and_label_sensitive():
    assert derive_seed(7, "x", 1) == derive_seed(7, "x", 1)
    assert derive_seed(7, "x", 1) != derive_seed(7, "x", 2)


def test_idle_stays_near_rest():
    seg = gen_action("idle", 48, seed=3)
    rest = np.zeros(DEFAULT_LAYOUT.width)
    rest[2] = 1.0  # heading cos
    for j, name in enumerate(JOINT_NAMES):
        rest[4 + 2 * j] = np.cos(REST_ANGLES[name])
        rest[5 + 2 * j] = np.sin(REST_ANGLES[name])
    dev = np.abs(seg.frames - rest).max(axis=0)
    assert dev.max() <= CFG.idle_amplitude + 1e-9


def test_walk_root_advances_strictly():
    seg = gen_action("walk", 48, seed=4)
    x = root_positions(seg)[:, 0]
    assert np.all(np.diff(x) > 0)


def test_wave_dominant_frequency_matches_template():
    from phasemotion.synth import sample_action_params
    seed = 5
    seg = gen_action("wave", 48, seed=seed)
    params = sample_action_params("wave", RngState(derive_seed(seed, "run", 0)))
    f_true = params.joint_freq[JOINT_NAMES.index("arm_r")]
    sin_ch = seg.frames[:, 4 + 2 * JOINT_NAMES.index("arm_r") + 1]
    spec = np.abs(np.fft.rfft(sin_ch - sin_ch.mean()))
    k_dom = 1 + int(np.argmax(spec[1:]))
    k_expected = f_true * seg.n / seg.fps
    assert abs(k_dom - k_expected) <= 1.0


def test_rotation_pairs_unit_norm():
    for name in ("walk", "wave", "squat", "spin", "idle", "reach"):
        seg = gen_action(name, 36, seed=6)
        assert seg.rotation_norm_errors() < 1e-9


def test_unknown_template_rejected():
    with pytest.raises(KeyError):
        gen_action("moonwalk", 48, seed=1)


def test_stream_single_action_equals_gen_action():
    a = gen_action("squat", 40, seed=8)
    b = gen_stream([("squat", 40)], seed=8)
    assert np.array_equal(a.frames, b.frames)


def test_repeated_idle_has_no_seam():
    seg = gen_stream([("idle", 48), ("idle", 48)], seed=9)
    deltas = np.abs(np.diff(seg.frames, axis=0)).max(axis=1)
    window = range(48 - CFG.transition_window, 48 + CFG.transition_window)
    inside = [d for t, d in enumerate(deltas) if t not in window]
    seam = [deltas[t] for t in window if t < len(deltas)]
    assert max(seam) <= max(inside) + 1e-12


def test_walk_squat_seam_velocity_bounded():
    seg = gen_stream([("walk", 48), ("squat", 48)], seed=10)
    vel = np.linalg.norm(np.diff(seg.frames, axis=0), axis=1)
    w = CFG.transition_window
    seam = vel[48 - w:48 + w]
    inside = np.concatenate([vel[: 48 - w], vel[48 + w:]])
    assert seam.max() <= 2.0 * inside.max()


def test_stream_is_c1_smooth():
    # second differences stay small relative to first differences
    seg = gen_stream([("walk", 48), ("wave", 36), ("spin", 48)], seed=11)
    d1 = np.abs(np.diff(seg.frames, axis=0)).max()
    d2 = np.abs(np.diff(seg.frames, 2, axis=0)).max()
    assert d2 < 0.6 * d1


def test_frame_labels_mark_blends():
    seg = gen_stream([("walk", 30), ("squat", 30)], seed=12)
    labels = seg.frame_labels
    assert labels[0] == "walk" and labels[-1] == "squat"
    # window endpoints are fully owned; interior frames carry both names
    assert labels[30 - CFG.transition_window // 2 + 1] == "walk+squat"
    assert labels[30 + CFG.transition_window // 2 - 2] == "walk+squat"
    assert labels[30 + CFG.transition_window // 2 - 1] == "squat"
    spans = labeled_spans(labels)
    assert spans == [(0, 30, "walk"), (30, 60, "squat")]


def test_extract_pairs_halves():
    seg = gen_stream([("walk", 48), ("squat", 48)], seed=13)
    pairs, skipped = extract_pairs(seg, "s0", CFG)
    assert skipped == 0 and len(pairs) == 1
    r = pairs[0]
    assert (r.p_start, r.boundary, r.s_end) == (0, 48, 96)
    assert (r.p_label, r.s_label) == ("walk", "squat")


def test_extract_pairs_three_actions_two_pairs():
    seg = gen_stream([("walk", 24), ("squat", 24), ("wave", 24)], seed=14)
    pairs, _ = extract_pairs(seg, "s1", CFG)
    assert len(pairs) == 2
    assert pairs[0].boundary == 24 and pairs[1].boundary == 48


def test_extract_pairs_clamps_long_spans():
    cfg = SynthConfig(n_min=8, n_max=20)
    seg = gen_stream([("walk", 40), ("squat", 40)],
                     seed=15, config=SynthConfig(n_min=24, n_max=96))
    pairs, _ = extract_pairs(seg, "s2", cfg)
    r = pairs[0]
    assert r.n_p == 20 and r.n_s == 20
    assert r.boundary == 40 and r.p_start == 20 and r.s_end == 60


def test_motion_file_roundtrip_lossless():
    seg = gen_stream([("walk", 30), ("wave", 30)], seed=16)
    back = loads_motion(dumps_motion(seg))
    assert np.array_equal(back.frames, seg.frames)
    assert back.fps == seg.fps
    assert back.frame_labels == seg.frame_labels
    assert back.label == seg.label
    assert back.layout == seg.layout


def test_motion_file_rejects_garbage():
    with pytest.raises(ValueError):
        loads_motion("hello world")


def test_corpus_build_deterministic_and_disjoint(tmp_path):
    cfg = CorpusConfig(n_streams_train=12, n_streams_test=4, seed=77)
    m1 = build_corpus(tmp_path / "c1", cfg)
    m2 = build_corpus(tmp_path / "c2", cfg)
    assert m1 == m2
    files1 = sorted((tmp_path / "c1" / "streams").iterdir())
    for f1 in files1:
        f2 = tmp_path / "c2" / "streams" / f1.name
        assert f1.read_bytes() == f2.read_bytes()
    corpus = Corpus(tmp_path / "c1")
    train_streams = {r.stream for r in corpus.pairs["train"]}
    test_streams = {r.stream for r in corpus.pairs["test"]}
    assert not (train_streams & test_streams)
    assert m1["counts"]["pairs_train"] == len(corpus.pairs["train"])
    # every stream file exists and loads
    x_p, x_t, x_s = corpus.pair_segments(corpus.pairs["train"][0])
    r = corpus.pairs["train"][0]
    assert x_p.n == r.n_p and x_s.n == r.n_s
    assert x_t.n == (r.n_p - r.n_p // 2) + r.n_s // 2
