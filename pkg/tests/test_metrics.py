import numpy as np
import pytest

from phasemotion.metrics import (ActionFrequencyClassifier, EvalWindow,
                                 boundary_gap, dominant_frequencies,
                                 format_report, l2_rot, l2_vel, npss, rms_jerk)
from phasemotion.motiondata import DEFAULT_LAYOUT, MotionSegment
from phasemotion.rng import RngState

FPS = 24.0
E = DEFAULT_LAYOUT.width


def seg(frames):
    return MotionSegment(np.asarray(frames, dtype=float), FPS, DEFAULT_LAYOUT)


def rand_seg(n, seed=0, scale=1.0):
    return seg(RngState(seed).normal(n, E) * scale)


def full_mask(n, lo=1, hi=None):
    m = np.zeros(n, dtype=bool)
    m[lo:hi] = True
    return m


def test_l2_vel_identity_and_offset_invariance():
    a = rand_seg(10, seed=1)
    assert l2_vel(EvalWindow(a, a, full_mask(10))) == 0.0
    shifted = seg(a.frames + 3.7)
    assert l2_vel(EvalWindow(a, shifted, full_mask(10))) < 1e-12


def test_l2_vel_hand_computation():
    ref = np.zeros((3, E))
    cand = np.zeros((3, E))
    ref[:, 0] = [0.0, 1.0, 2.0]     # ref velocity 1 per frame
    cand[:, 0] = [0.0, 0.5, 2.5]    # cand velocities 0.5, 2.0
    w = EvalWindow(seg(ref), seg(cand), full_mask(3))
    # per-frame velocity error norms: |0.5-1|=0.5, |2-1|=1 -> mean 0.75
    assert l2_vel(w) == pytest.approx(0.75)


def test_l2_vel_errors():
    a = rand_seg(6)
    with pytest.raises(ValueError):
        l2_vel(EvalWindow(a, a, full_mask(6, lo=0, hi=2)))  # frame 0 masked
    m = np.zeros(6, dtype=bool)
    m[3] = True
    with pytest.raises(ValueError):
        l2_vel(EvalWindow(a, a, m))  # single-frame mask


def test_l2_rot_identity_and_antipodal():
    from phasemotion.synth import gen_action
    a = gen_action("idle", 24, seed=2)  # rotation pairs are exactly unit norm
    a = seg(a.frames[:4])
    assert l2_rot(EvalWindow(a, a, full_mask(4, lo=0))) == 0.0
    flipped = a.frames.copy()
    flipped[:, 4:6] *= -1.0  # rotate one joint by pi: (cos,sin) -> antipodal
    w = EvalWindow(a, seg(flipped), full_mask(4, lo=0))
    assert l2_rot(w) == pytest.approx(2.0)


def test_l2_rot_matches_scalar_oracle():
    ref = rand_seg(4, seed=3)
    cand = rand_seg(4, seed=4)
    w = EvalWindow(ref, cand, full_mask(4, lo=0), "rotation")
    ch = w.channels()
    manual = np.mean([np.linalg.norm(cand.frames[t, ch] - ref.frames[t, ch])
                      for t in range(4)])
    assert l2_rot(w) == pytest.approx(manual)


def test_l2_rot_rejects_non_rotation_selector():
    a = rand_seg(4)
    with pytest.raises(ValueError):
        l2_rot(EvalWindow(a, a, full_mask(4, lo=0), "root_translation"))


def test_npss_identical_zero():
    a = rand_seg(16, seed=5)
    assert npss(EvalWindow(a, a, full_mask(16, lo=0))) == 0.0


def test_npss_adjacent_bins_one_step_transport():
    n = 32
    t = np.arange(n)
    ref = np.zeros((n, E))
    cand = np.zeros((n, E))
    ref[:, 0] = np.sin(2 * np.pi * 4 * t / n)
    cand[:, 0] = np.sin(2 * np.pi * 5 * t / n)
    w = EvalWindow(seg(ref), seg(cand), full_mask(n, lo=0), [0])
    assert npss(w) == pytest.approx(1.0, abs=1e-9)


def test_npss_multichannel_weighted_mean():
    n = 32
    rng = RngState(6)
    ref = rng.normal(n, E)
    cand = rng.normal(n, E)
    w_all = EvalWindow(seg(ref), seg(cand), full_mask(n, lo=0))
    per = []
    weights = []
    for c in range(E):
        v = npss(EvalWindow(seg(ref), seg(cand), full_mask(n, lo=0), [c]))
        p = (np.abs(np.fft.rfft(ref[:, c])) ** 2).sum()
        per.append(v)
        weights.append(p)
    expected = np.average(per, weights=weights)
    assert npss(w_all) == pytest.approx(expected, rel=1e-9)


def test_npss_gain_invariance():
    n = 32
    rng = RngState(7)
    ref = rng.normal(n, E)
    cand = rng.normal(n, E)
    a = npss(EvalWindow(seg(ref), seg(cand), full_mask(n, lo=0)))
    b = npss(EvalWindow(seg(ref * 3.0), seg(cand * 3.0), full_mask(n, lo=0)))
    assert a == pytest.approx(b, rel=1e-12)


def test_npss_zero_reference_warns():
    z = seg(np.zeros((8, E)))
    c = rand_seg(8, seed=8)
    with pytest.warns(RuntimeWarning):
        assert npss(EvalWindow(z, c, full_mask(8, lo=0))) == 0.0


def test_rms_jerk_constant_and_linear_zero():
    const = seg(np.ones((8, E)))
    assert rms_jerk(const) == 0.0
    ramp = seg(np.outer(np.arange(8.0), np.ones(E)))
    assert rms_jerk(ramp) == pytest.approx(0.0, abs=1e-9)


def test_rms_jerk_cubic_closed_form():
    n = 10
    frames = np.zeros((n, E))
    frames[:, 4] = np.arange(n, dtype=float) ** 3
    # third difference of t^3 is exactly 6 -> jerk = 6 * fps^3 on one channel
    expected = 6.0 * FPS ** 3 / np.sqrt(12)  # RMS over the 12 joint channels
    assert rms_jerk(seg(frames)) == pytest.approx(expected)


def test_rms_jerk_affine_invariance():
    a = rand_seg(12, seed=9)
    trend = np.outer(np.arange(12.0), RngState(10).normal(E)) + 5.0
    assert rms_jerk(seg(a.frames + trend)) == pytest.approx(rms_jerk(a), rel=1e-9)


def test_rms_jerk_needs_four_frames():
    with pytest.raises(ValueError):
        rms_jerk(rand_seg(3))


def test_boundary_gap_continuous_vs_concatenated():
    from phasemotion.synth import gen_stream, gen_action
    smooth = gen_stream([("walk", 48), ("squat", 48)], seed=11)
    ratio = boundary_gap(MotionSegment(smooth.frames, FPS, DEFAULT_LAYOUT), [48])
    assert ratio <= 2.0
    a = gen_action("walk", 48, seed=12)
    b = gen_action("spin", 48, seed=13)
    b2 = b.frames.copy()
    b2[:, 4:] = -b2[:, 4:]  # flip joints so the seam is a hard jump
    hard = np.concatenate([a.frames, b2])
    ratio2 = boundary_gap(seg(hard), [48])
    assert ratio2 > 2.0


def test_boundary_gap_constant_sequence_is_zero():
    assert boundary_gap(seg(np.ones((10, E))), [5]) == 0.0


def test_boundary_gap_validates_bounds():
    with pytest.raises(ValueError):
        boundary_gap(rand_seg(10), [0])


def test_dominant_frequencies_gating():
    n = 48
    t = np.arange(n) / FPS
    frames = np.zeros((n, E))
    frames[:, 4] = np.sin(2 * np.pi * 3.0 * t)          # strong 3 Hz
    frames[:, 5] = 1e-6 * np.sin(2 * np.pi * 7.0 * t)   # below the floor
    f = dominant_frequencies(frames, FPS)
    assert f[4] == pytest.approx(3.0, abs=FPS / n)
    assert f[5] == 0.0


def test_action_classifier_on_ground_truth():
    from phasemotion.synth import VOCABULARY, gen_action
    clf = ActionFrequencyClassifier(FPS)
    train = {a: [gen_action(a, 48, seed=100 * i + j).frames for j in range(6)]
             for i, a in enumerate(VOCABULARY)}
    clf.fit(train)
    correct = 0
    total = 0
    for i, a in enumerate(VOCABULARY):
        for j in range(4):
            pred = clf.predict(gen_action(a, 48, seed=9000 + 10 * i + j).frames)
            correct += pred == a
            total += 1
    assert correct / total >= 0.8


def test_format_report_stable():
    rows = [("l2_vel", "model", 0.5), ("npss", "interp", 1.25)]
    tsv, txt = format_report(rows)
    assert tsv.splitlines()[0] == "metric\tgroup\tvalue"
    assert "l2_vel\tmodel\t0.5" in tsv
    assert "evaluation summary" in txt
