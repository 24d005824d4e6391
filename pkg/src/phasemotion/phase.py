"""Phase-parameter latents and their periodic reparameterization.

A motion segment is represented by four Q-vectors (frequency, amplitude,
offset, phase shift). Reparameterization evaluates, per frame t and
channel q,

    signal[t, q] = A[q] * sin(F[q] * (T[t, q] - S[q])) + B[q]

over a per-frame time window T. Windows are anchored piecewise: frames
left of the anchor map onto [-1, 0] and frames right of it onto [0, 1]
(normT), or carry signed frame offsets from the anchor (frameT). The
mixed window (mixT) gives the first half of the channels frame units and
the second half normalized progression.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import sinusoidal_pe_at

WINDOW_MODES = ("normT", "frameT", "mixT")


@dataclass
class PhaseParams:
    """Latent tuple (F, A, B, S); each a Q-vector."""

    f: np.ndarray
    a: np.ndarray
    b: np.ndarray
    s: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        q = len(self.f)
        for name in ("f", "a", "b", "s"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != (q,):
                raise ValueError(f"phase parameter '{name}' must have shape ({q},)")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"phase parameter '{name}' has non-finite entries")
            setattr(self, name, v)

    @property
    def q(self) -> int:
        return len(self.f)

    def flat(self) -> np.ndarray:
        """Concatenated [F, A, B, S] vector of length 4Q."""
        return np.concatenate([self.f, self.a, self.b, self.s])

    @classmethod
    def from_flat(cls, flat: np.ndarray, normalized: bool = False) -> "PhaseParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.ndim != 1 or flat.size % 4 != 0:
            raise ValueError(f"flat latent must be 1-D with length 4Q, got {flat.shape}")
        q = flat.size // 4
        return cls(f=flat[:q], a=flat[q:2 * q], b=flat[2 * q:3 * q], s=flat[3 * q:],
                   normalized=normalized)


@dataclass
class TimeWindow:
    values: np.ndarray  # [N, Q]
    mode: str
    anchor: int


def anchor_times(n: int, anchor: int, mode: str) -> np.ndarray:
    """Per-frame scalar time coordinate for one window column."""
    if not 0 <= anchor <= n - 1:
        raise ValueError(f"anchor {anchor} out of range for {n} frames")
    t = np.arange(n, dtype=np.float64)
    if mode == "frameT":
        return t - anchor
    if mode == "normT":
        out = np.zeros(n)
        if anchor > 0:
            out[: anchor + 1] = (t[: anchor + 1] - anchor) / anchor
        if anchor < n - 1:
            out[anchor:] = (t[anchor:] - anchor) / (n - 1 - anchor)
        return out
    raise ValueError(f"unknown window mode '{mode}'")


def build_time_window(n: int, qdim: int, mode: str, anchor: int) -> TimeWindow:
    if mode not in WINDOW_MODES:
        raise ValueError(f"unknown window mode '{mode}'")
    if mode == "mixT":
        if qdim % 2 != 0:
            raise ValueError("mixT needs an even channel count")
        frame_col = anchor_times(n, anchor, "frameT")
        norm_col = anchor_times(n, anchor, "normT")
        values = np.empty((n, qdim))
        values[:, : qdim // 2] = frame_col[:, None]
        values[:, qdim // 2:] = norm_col[:, None]
    else:
        values = np.repeat(anchor_times(n, anchor, mode)[:, None], qdim, axis=1)
    return TimeWindow(values=values, mode=mode, anchor=anchor)


def phase_signal(params: PhaseParams, window: TimeWindow) -> np.ndarray:
    """Evaluate the periodic signal [N, Q] for unnormalized parameters."""
    if params.normalized:
        raise ValueError("reparameterization needs unnormalized phase parameters")
    if window.values.shape[1] != params.q:
        raise ValueError(f"window has {window.values.shape[1]} channels, "
                         f"parameters have {params.q}")
    return params.a * np.sin(params.f * (window.values - params.s)) + params.b


def comp_pe(n: int, d: int) -> np.ndarray:
    """Composite positional embedding [N, 3d].

    Three sinusoidal embeddings stacked channel-wise, with the zero
    position shifted to the leading, middle (floor(N/2)), and ending
    frame respectively.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    t = np.arange(n, dtype=np.float64)
    lead = sinusoidal_pe_at(t, d)
    mid = sinusoidal_pe_at(t - (n // 2), d)
    end = sinusoidal_pe_at(t - (n - 1), d)
    return np.concatenate([lead, mid, end], axis=1)
