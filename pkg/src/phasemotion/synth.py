"""Procedural synthetic skeletal-motion corpus with labeled transitions.

Every action is a parametric program: per-joint sinusoids/ramps over
angles, a root velocity profile, and a heading profile. Streams chain
several actions and cross-fade the program outputs (angles, velocities)
with a C1 smoothstep over a fixed window around each boundary, so the
ground-truth transitions are genuinely smooth. Rotation channels are
emitted as (cos, sin) of blended angles and are therefore exactly
unit-norm.

Everything is a pure function of (config, seed): regenerating a corpus
reproduces identical bytes.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .motiondata import (DEFAULT_LAYOUT, JOINT_NAMES, MotionSegment,
                         dumps_motion, load_motion)
from .rng import RngState, derive_seed

log = logging.getLogger(__name__)

VOCABULARY = ("idle", "reach", "spin", "squat", "walk", "wave")

REST_ANGLES = {"hip_l": 0.0, "hip_r": 0.0, "knee_l": 0.05, "knee_r": 0.05,
               "arm_l": 0.25, "arm_r": 0.25}

N_JOINTS = len(JOINT_NAMES)


def smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


@dataclass
class ActionParams:
    """One sampled instance of an action template."""

    name: str
    joint_base: np.ndarray   # [J] rad
    joint_amp: np.ndarray    # [J] rad
    joint_freq: np.ndarray   # [J] Hz
    joint_phase: np.ndarray  # [J] rad
    joint_ramp: np.ndarray   # [J] rad, reached at end of run via smoothstep
    fwd_speed: float         # units/s along +x
    vert_amp: float          # units/s vertical velocity amplitude
    vert_freq: float         # Hz
    vert_phase: float
    spin_rate: float         # rad/s heading rotation
    sway_amp: float          # rad heading sway
    sway_freq: float         # Hz

    def joint_angles(self, t_sec: np.ndarray, progress: np.ndarray) -> np.ndarray:
        osc = self.joint_amp[None, :] * np.sin(
            2 * np.pi * self.joint_freq[None, :] * t_sec[:, None]
            + self.joint_phase[None, :])
        ramp = self.joint_ramp[None, :] * smoothstep(progress)[:, None]
        return self.joint_base[None, :] + osc + ramp

    def root_velocity(self, t_sec: np.ndarray, fps: float) -> np.ndarray:
        vx = np.full_like(t_sec, self.fwd_speed / fps)
        vy = self.vert_amp * np.sin(2 * np.pi * self.vert_freq * t_sec
                                    + self.vert_phase) / fps
        return np.stack([vx, vy], axis=1)

    def heading(self, t_sec: np.ndarray, run_start_sec: float) -> np.ndarray:
        return (self.spin_rate * (t_sec - run_start_sec)
                + self.sway_amp * np.sin(2 * np.pi * self.sway_freq * t_sec))


def _joint_index(name: str) -> int:
    return JOINT_NAMES.index(name)


def sample_action_params(name: str, rng: RngState) -> ActionParams:
    if name not in VOCABULARY:
        raise KeyError(f"unknown action template '{name}'")
    base = np.array([REST_ANGLES[j] for j in JOINT_NAMES])
    amp = rng.uniform(0.01, 0.03, N_JOINTS)
    freq = rng.uniform(0.2, 0.6, N_JOINTS)
    phase = rng.uniform(0.0, 2 * np.pi, N_JOINTS)
    ramp = np.zeros(N_JOINTS)
    fwd_speed = 0.0
    vert_amp, vert_freq, vert_phase = 0.0, 0.3, 0.0
    spin_rate = 0.0
    sway_amp, sway_freq = 0.0, 0.3

    if name == "walk":
        f = float(rng.uniform(0.9, 1.4))
        phi = float(rng.uniform(0.0, 2 * np.pi))
        leg_amp = float(rng.uniform(0.5, 0.7))
        knee_amp = float(rng.uniform(0.3, 0.45))
        arm_amp = float(rng.uniform(0.15, 0.25))
        for j, a, p in (("hip_l", leg_amp, phi), ("hip_r", leg_amp, phi + np.pi),
                        ("knee_l", knee_amp, phi + 0.5 * np.pi),
                        ("knee_r", knee_amp, phi + 1.5 * np.pi),
                        ("arm_l", arm_amp, phi + np.pi), ("arm_r", arm_amp, phi)):
            i = _joint_index(j)
            amp[i], freq[i], phase[i] = a, f, p
        fwd_speed = float(rng.uniform(0.6, 1.0))
        vert_amp = float(rng.uniform(0.02, 0.05))
        vert_freq, vert_phase = 2 * f, 2 * phi
        sway_amp = float(rng.uniform(0.02, 0.05))
        sway_freq = f
    elif name == "wave":
        i = _joint_index("arm_r")
        base[i] = float(rng.uniform(0.8, 1.0))
        amp[i] = float(rng.uniform(0.4, 0.7))
        freq[i] = float(rng.uniform(0.5, 1.5))
        phase[i] = float(rng.uniform(0.0, 2 * np.pi))
    elif name == "squat":
        f = float(rng.uniform(0.35, 0.65))
        phi = float(rng.uniform(0.0, 2 * np.pi))
        knee_amp = float(rng.uniform(0.25, 0.4))
        for j in ("knee_l", "knee_r"):
            i = _joint_index(j)
            amp[i], freq[i], phase[i] = knee_amp, f, phi
        for j in ("hip_l", "hip_r"):
            i = _joint_index(j)
            amp[i], freq[i], phase[i] = 0.6 * knee_amp, f, phi + np.pi
        vert_amp = float(rng.uniform(0.05, 0.12))
        vert_freq, vert_phase = f, phi + np.pi
    elif name == "spin":
        spin_rate = float(rng.uniform(1.2, 3.0))
        amp = rng.uniform(0.04, 0.1, N_JOINTS)
        freq = rng.uniform(0.4, 0.9, N_JOINTS)
    elif name == "idle":
        amp = rng.uniform(0.02, 0.05, N_JOINTS)
        vert_amp = float(rng.uniform(0.005, 0.015))
        vert_freq = float(rng.uniform(0.2, 0.4))
    elif name == "reach":
        i = _joint_index("arm_l")
        amp[i] = 0.0
        ramp[i] = float(rng.uniform(0.8, 1.3)) - base[i]

    return ActionParams(name=name, joint_base=base, joint_amp=amp, joint_freq=freq,
                        joint_phase=phase, joint_ramp=ramp, fwd_speed=fwd_speed,
                        vert_amp=vert_amp, vert_freq=vert_freq, vert_phase=vert_phase,
                        spin_rate=spin_rate, sway_amp=sway_amp, sway_freq=sway_freq)


@dataclass
class SynthConfig:
    fps: float = 24.0
    n_min: int = 24
    n_max: int = 96
    transition_window: int = 12
    idle_amplitude: float = 0.05


DEFAULT_SYNTH = SynthConfig()


def gen_stream(actions: list[tuple[str, int]], seed: int,
               config: SynthConfig = DEFAULT_SYNTH) -> MotionSegment:
    """Chain actions into one labeled stream with C1 cross-faded seams."""
    if not actions:
        raise ValueError("need at least one action")
    for name, n in actions:
        if name not in VOCABULARY:
            raise KeyError(f"unknown action template '{name}'")
        if not config.n_min <= n <= config.n_max:
            raise ValueError(f"action length {n} outside "
                             f"[{config.n_min}, {config.n_max}]")
    lengths = [n for _, n in actions]
    starts = np.concatenate([[0], np.cumsum(lengths)])
    total = int(starts[-1])
    fps = config.fps
    t_sec = np.arange(total) / fps

    params: list[ActionParams] = []
    for idx, (name, _) in enumerate(actions):
        if idx > 0 and name == actions[idx - 1][0]:
            params.append(params[-1])  # same behavior continues seamlessly
        else:
            params.append(sample_action_params(name, RngState(derive_seed(seed, "run", idx))))

    # per-run weights: 1 inside the run, smoothstep cross-fade over the
    # window straddling each boundary, 0 elsewhere
    w = np.zeros((len(actions), total))
    half = config.transition_window // 2
    for idx in range(len(actions)):
        w[idx, starts[idx]:starts[idx + 1]] = 1.0
    for idx in range(len(actions) - 1):
        b = int(starts[idx + 1])
        lo = max(b - half, int(starts[idx]))
        hi = min(b + half, int(starts[idx + 2]))
        ramp = smoothstep((np.arange(lo, hi) - lo) / max(hi - 1 - lo, 1))
        w[idx, lo:hi] = 1.0 - ramp
        w[idx + 1, lo:hi] = ramp

    angles = np.zeros((total, N_JOINTS))
    root_vel = np.zeros((total, 2))
    heading = np.zeros(total)
    for idx, p in enumerate(params):
        active = w[idx] > 0.0
        if not np.any(active):
            continue
        ts = t_sec[active]
        run_len = max(lengths[idx] - 1, 1)
        progress = (np.arange(total)[active] - starts[idx]) / run_len
        wa = w[idx, active][:, None]
        angles[active] += wa * p.joint_angles(ts, progress)
        root_vel[active] += wa * p.root_velocity(ts, fps)
        heading[active] += wa[:, 0] * p.heading(ts, starts[idx] / fps)

    frames = np.zeros((total, DEFAULT_LAYOUT.width))
    frames[:, 0:2] = root_vel
    frames[:, 2] = np.cos(heading)
    frames[:, 3] = np.sin(heading)
    for j in range(N_JOINTS):
        frames[:, 4 + 2 * j] = np.cos(angles[:, j])
        frames[:, 5 + 2 * j] = np.sin(angles[:, j])

    frame_labels = []
    for t in range(total):
        owners = [actions[i][0] for i in range(len(actions)) if w[i, t] > 0.0]
        frame_labels.append("+".join(dict.fromkeys(owners)))

    return MotionSegment(frames=frames, fps=fps, layout=DEFAULT_LAYOUT,
                         label=[name for name, _ in actions],
                         frame_labels=frame_labels)


def gen_action(name: str, n: int, seed: int,
               config: SynthConfig = DEFAULT_SYNTH) -> MotionSegment:
    """Single-action segment; identical to a one-element stream."""
    return gen_stream([(name, n)], seed, config)


# -- corpus ---------------------------------------------------------------


@dataclass
class CorpusConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    n_streams_train: int = 2000
    n_streams_test: int = 500
    seed: int = 1234


@dataclass
class PairRecord:
    stream: str
    p_start: int
    boundary: int
    s_end: int
    p_label: str
    s_label: str

    @property
    def n_p(self) -> int:
        return self.boundary - self.p_start

    @property
    def n_s(self) -> int:
        return self.s_end - self.boundary


def _stream_actions(stream_idx: int, seed: int, config: SynthConfig) -> list[tuple[str, int]]:
    rng = RngState(derive_seed(seed, "stream", stream_idx))
    n_actions = 2 + int(rng.integers(0, 2))
    names: list[str] = []
    for _ in range(n_actions):
        choices = [v for v in VOCABULARY if not names or v != names[-1]]
        names.append(choices[int(rng.integers(0, len(choices)))])
    lengths = [int(rng.integers(config.n_min, config.n_max + 1)) for _ in names]
    return list(zip(names, lengths))


def labeled_spans(labels: list[str]) -> list[tuple[int, int, str]]:
    """Run-owned (start, end, name) spans tiling the stream.

    Blend windows are symmetric around a run boundary, so each blended
    stretch "a+b" is split in half: the left half belongs to a, the right
    half to b.
    """
    spans: list[tuple[int, int, str]] = []
    n = len(labels)
    run_start = 0
    last_name = labels[0].split("+")[0]
    t = 0
    while t < n:
        lab = labels[t]
        if "+" in lab:
            j = t
            while j < n and labels[j] == lab:
                j += 1
            mid = t + (j - t) // 2
            left, right = lab.split("+", 1)
            spans.append((run_start, mid, left))
            run_start = mid
            last_name = right
            t = j
        else:
            last_name = lab
            t += 1
    spans.append((run_start, n, last_name))
    return spans


def extract_pairs(stream: MotionSegment, stream_id: str,
                  config: SynthConfig) -> tuple[list[PairRecord], int]:
    """Consecutive labeled spans become pairs.

    Spans are clamped to [n_min, n_max] keeping the frames adjacent to the
    boundary; spans shorter than n_min are skipped and counted.
    """
    if stream.frame_labels is None:
        raise ValueError("stream has no frame labels")
    spans = labeled_spans(stream.frame_labels)

    skipped = 0
    pairs: list[PairRecord] = []
    for (a_start, a_end, a_name), (b_start, b_end, b_name) in zip(spans, spans[1:]):
        n_p = a_end - a_start
        n_s = b_end - b_start
        if n_p < config.n_min or n_s < config.n_min:
            skipped += 1
            continue
        p_start = max(a_start, a_end - config.n_max)
        s_end = min(b_end, b_start + config.n_max)
        pairs.append(PairRecord(stream=stream_id, p_start=p_start, boundary=a_end,
                                s_end=s_end, p_label=a_name, s_label=b_name))
    return pairs, skipped


def build_corpus(out_dir: str, config: CorpusConfig) -> dict:
    """Generate streams, split them by id hash, extract pairs, write files."""
    os.makedirs(os.path.join(out_dir, "streams"), exist_ok=True)
    n_total = config.n_streams_train + config.n_streams_test
    ids = [f"s{i:05d}" for i in range(n_total)]
    # split: order ids by a keyed hash, first block trains
    order = sorted(ids, key=lambda s: derive_seed(config.seed, "split", s))
    train_ids = set(order[: config.n_streams_train])

    pairs: dict[str, list[PairRecord]] = {"train": [], "test": []}
    skipped = 0
    for idx, sid in enumerate(ids):
        actions = _stream_actions(idx, config.seed, config.synth)
        stream = gen_stream(actions, derive_seed(config.seed, "gen", sid), config.synth)
        with open(os.path.join(out_dir, "streams", sid + ".mtn"), "w") as f:
            f.write(dumps_motion(stream))
        split = "train" if sid in train_ids else "test"
        recs, skip = extract_pairs(stream, sid, config.synth)
        pairs[split].extend(recs)
        skipped += skip
    if skipped:
        log.info("skipped %d spans shorter than n_min", skipped)

    manifest = {
        "version": 1,
        "seed": config.seed,
        "fps": config.synth.fps,
        "n_min": config.synth.n_min,
        "n_max": config.synth.n_max,
        "transition_window": config.synth.transition_window,
        "vocabulary": list(VOCABULARY),
        "layout": [[g.name, g.role, g.size] for g in DEFAULT_LAYOUT.groups],
        "counts": {
            "streams_train": config.n_streams_train,
            "streams_test": config.n_streams_test,
            "pairs_train": len(pairs["train"]),
            "pairs_test": len(pairs["test"]),
        },
        "skipped_spans": skipped,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
        f.write("\n")
    index = {
        split: [[r.stream, r.p_start, r.boundary, r.s_end, r.p_label, r.s_label]
                for r in recs]
        for split, recs in pairs.items()
    }
    with open(os.path.join(out_dir, "pairs.json"), "w") as f:
        json.dump(index, f, sort_keys=True, indent=0)
        f.write("\n")
    return manifest


class Corpus:
    """Read access to a generated corpus directory."""

    def __init__(self, path: str):
        self.path = path
        with open(os.path.join(path, "manifest.json")) as f:
            self.manifest = json.load(f)
        with open(os.path.join(path, "pairs.json")) as f:
            raw = json.load(f)
        self.pairs = {split: [PairRecord(*row) for row in rows]
                      for split, rows in raw.items()}
        self._streams: dict[str, MotionSegment] = {}

    @property
    def fps(self) -> float:
        return float(self.manifest["fps"])

    def stream(self, stream_id: str) -> MotionSegment:
        if stream_id not in self._streams:
            self._streams[stream_id] = load_motion(
                os.path.join(self.path, "streams", stream_id + ".mtn"))
        return self._streams[stream_id]

    def pair_segments(self, rec: PairRecord) -> tuple[MotionSegment, MotionSegment, MotionSegment]:
        """(X_p, X_t, X_s) cut from the stream; X_t straddles the boundary."""
        s = self.stream(rec.stream)
        x_p = s.cut(rec.p_start, rec.boundary, label=[rec.p_label])
        x_s = s.cut(rec.boundary, rec.s_end, label=[rec.s_label])
        t_start = rec.p_start + rec.n_p // 2
        t_end = rec.boundary + rec.n_s // 2
        x_t = s.cut(t_start, t_end, label=None)
        return x_p, x_t, x_s
