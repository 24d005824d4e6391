"""Geometric evaluation metrics for motion windows.

All metrics are pure functions. Velocities are first-order frame
differences; jerk is the third-order difference scaled by fps^3. NPSS
normalizes each channel's squared-magnitude spectrum to unit mass and
takes the power-weighted 1-Wasserstein distance between cumulative
spectra (weights are the reference channel powers), so it is invariant to
a common gain on both signals.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .motiondata import ChannelLayout, MotionSegment

ROTATION_ROLES = ("root_rotation", "joint_rotation")


def select_channels(layout: ChannelLayout, selector) -> np.ndarray:
    """Channel indices for a selector: None/'all', a role name, 'rotation',
    a group name, or an explicit index sequence."""
    if selector is None or selector == "all":
        return np.arange(layout.width)
    if isinstance(selector, str):
        if selector == "rotation":
            return np.concatenate([layout.indices(r) for r in ROTATION_ROLES])
        idx = layout.indices(selector)
        if len(idx):
            return idx
        s = layout.group_slice(selector)
        return np.arange(s.start, s.stop)
    return np.asarray(selector, dtype=np.intp)


@dataclass
class EvalWindow:
    reference: MotionSegment
    candidate: MotionSegment
    mask: np.ndarray                 # boolean [N], frames that are scored
    selector: object = None          # channel group selector

    def __post_init__(self):
        if self.reference.frames.shape != self.candidate.frames.shape:
            raise ValueError("reference and candidate shapes differ")
        if self.reference.layout != self.candidate.layout:
            raise ValueError("reference and candidate layouts differ")
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (self.reference.n,):
            raise ValueError("mask length must equal frame count")
        if not self.mask.any():
            raise ValueError("mask selects no frames")

    def channels(self) -> np.ndarray:
        return select_channels(self.reference.layout, self.selector)


def l2_vel(w: EvalWindow) -> float:
    """Mean over masked frames of ||candidate velocity - reference velocity||."""
    idx = np.flatnonzero(w.mask)
    if len(idx) < 2:
        raise ValueError("velocity needs at least two masked frames")
    if idx[0] == 0:
        raise ValueError("masked frame 0 has no predecessor")
    ch = w.channels()
    ref = w.reference.frames[:, ch]
    cand = w.candidate.frames[:, ch]
    dv = (cand[idx] - cand[idx - 1]) - (ref[idx] - ref[idx - 1])
    return float(np.linalg.norm(dv, axis=1).mean())


def l2_rot(w: EvalWindow) -> float:
    """Mean per-frame Euclidean distance over rotation channels."""
    if w.selector is None:
        w = EvalWindow(w.reference, w.candidate, w.mask, "rotation")
    ch = w.channels()
    rot = set(select_channels(w.reference.layout, "rotation").tolist())
    if not set(ch.tolist()) & rot:
        raise ValueError("selector excludes all rotation channels")
    idx = np.flatnonzero(w.mask)
    d = w.candidate.frames[np.ix_(idx, ch)] - w.reference.frames[np.ix_(idx, ch)]
    return float(np.linalg.norm(d, axis=1).mean())


def _unit_spectra(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(unit-sum power spectra [C, K], total power [C]) per channel."""
    power = np.abs(np.fft.rfft(x, axis=0)) ** 2
    total = power.sum(axis=0)
    safe = np.where(total > 0.0, total, 1.0)
    return (power / safe).T, total


def npss(w: EvalWindow) -> float:
    """Power-weighted Wasserstein distance between normalized spectra."""
    idx = np.flatnonzero(w.mask)
    if len(idx) < 4:
        raise ValueError("npss needs a masked window of at least 4 frames")
    if np.any(np.diff(idx) != 1):
        raise ValueError("npss needs a contiguous masked window")
    ch = w.channels()
    ref = w.reference.frames[np.ix_(idx, ch)]
    cand = w.candidate.frames[np.ix_(idx, ch)]
    p_ref, power = _unit_spectra(ref)
    p_cand, _ = _unit_spectra(cand)
    if power.sum() == 0.0:
        warnings.warn("npss: all-zero reference spectrum", RuntimeWarning)
        return 0.0
    emd = np.abs(np.cumsum(p_ref, axis=1) - np.cumsum(p_cand, axis=1)).sum(axis=1)
    return float((emd * power).sum() / power.sum())


def rms_jerk(m: MotionSegment, selector="joint_rotation") -> float:
    """RMS of the fps^3-scaled third-order difference over selected channels."""
    if m.n < 4:
        raise ValueError("jerk needs at least 4 frames")
    ch = select_channels(m.layout, selector)
    jerk = np.diff(m.frames[:, ch], n=3, axis=0) * m.fps ** 3
    return float(np.sqrt((jerk ** 2).mean()))


def boundary_gap(seq: MotionSegment, boundaries: list[int],
                 selector=None) -> float:
    """Worst boundary velocity over the median off-boundary velocity.

    Defined as 0 when the median velocity vanishes (constant sequences).
    """
    for b in boundaries:
        if not 1 <= b <= seq.n - 1:
            raise ValueError(f"boundary {b} outside [1, {seq.n - 1}]")
    ch = select_channels(seq.layout, selector)
    vel = np.linalg.norm(np.diff(seq.frames[:, ch], axis=0), axis=1)  # vel[t-1] = t-1 -> t
    bset = {b - 1 for b in boundaries}
    inner = np.array([v for i, v in enumerate(vel) if i not in bset])
    med = float(np.median(inner)) if len(inner) else 0.0
    if med == 0.0:
        return 0.0
    return float(max(vel[b - 1] for b in boundaries) / med)


# -- dominant-frequency action features -----------------------------------


def dominant_frequencies(frames: np.ndarray, fps: float,
                         power_floor: float = 0.01) -> np.ndarray:
    """Per-channel dominant non-DC frequency in Hz.

    Channels whose non-DC power falls below `power_floor` times the
    strongest channel's power read as 0 Hz, which keeps near-silent
    channels from contributing noise.
    """
    x = frames - frames.mean(axis=0)
    power = np.abs(np.fft.rfft(x, axis=0)) ** 2
    power[0] = 0.0
    totals = power.sum(axis=0)
    strongest = totals.max()
    freqs = np.fft.rfftfreq(frames.shape[0], d=1.0 / fps)
    out = freqs[np.argmax(power, axis=0)]
    if strongest == 0.0:
        return np.zeros(frames.shape[1])
    out[totals < power_floor * strongest] = 0.0
    return out


class ActionFrequencyClassifier:
    """Nearest-centroid classifier over per-channel dominant frequencies."""

    def __init__(self, fps: float, power_floor: float = 0.01):
        self.fps = fps
        self.power_floor = power_floor
        self.centroids: dict[str, np.ndarray] = {}

    def fit(self, examples: dict[str, list[np.ndarray]]) -> "ActionFrequencyClassifier":
        for action, frames_list in sorted(examples.items()):
            feats = [dominant_frequencies(f, self.fps, self.power_floor)
                     for f in frames_list]
            self.centroids[action] = np.mean(feats, axis=0)
        return self

    def predict(self, frames: np.ndarray) -> str:
        if not self.centroids:
            raise RuntimeError("classifier has not been fitted")
        feat = dominant_frequencies(frames, self.fps, self.power_floor)
        best, best_d = None, np.inf
        for action, centroid in self.centroids.items():
            d = float(np.linalg.norm(feat - centroid))
            if d < best_d:
                best, best_d = action, d
        return best


# -- reports ------------------------------------------------------------------


def format_report(rows: list[tuple[str, str, float]]) -> tuple[str, str]:
    """(machine-readable TSV, human summary) with a stable column order."""
    tsv_lines = ["metric\tgroup\tvalue"]
    for metric, group, value in rows:
        tsv_lines.append(f"{metric}\t{group}\t{value:.17g}")
    width = max(len(m) for m, _, _ in rows) if rows else 6
    gwidth = max(len(g) for _, g, _ in rows) if rows else 5
    txt_lines = ["evaluation summary", "-" * 18]
    for metric, group, value in rows:
        txt_lines.append(f"{metric:<{width}}  {group:<{gwidth}}  {value:.6g}")
    return "\n".join(tsv_lines) + "\n", "\n".join(txt_lines) + "\n"
