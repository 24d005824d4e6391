"""Motion segments, channel layouts, and the text-based motion file format.

Channel conventions for the default planar layout (E=16):

  * root_velocity (x, y): per-frame root displacement. Positions are the
    cumulative sum of these rows; keeping the representation translation
    invariant is what makes segment blending well posed.
  * root_heading (cos, sin): unit heading vector of the root.
  * six joint groups, each a (cos, sin) pair of one joint angle.

Motion files are plain text with a small header and one line of %.17g
values per frame; 17 significant digits round-trip float64 exactly.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

ROLE_ROOT_TRANSLATION = "root_translation"
ROLE_ROOT_ROTATION = "root_rotation"
ROLE_JOINT_ROTATION = "joint_rotation"

_MAGIC = "#phasemotion-motion v1"


@dataclass(frozen=True)
class ChannelGroup:
    name: str
    role: str
    size: int


@dataclass(frozen=True)
class ChannelLayout:
    groups: tuple[ChannelGroup, ...]

    @property
    def width(self) -> int:
        return sum(g.size for g in self.groups)

    def indices(self, role: str) -> np.ndarray:
        out = []
        off = 0
        for g in self.groups:
            if g.role == role:
                out.extend(range(off, off + g.size))
            off += g.size
        return np.array(out, dtype=np.intp)

    def group_slice(self, name: str) -> slice:
        off = 0
        for g in self.groups:
            if g.name == name:
                return slice(off, off + g.size)
            off += g.size
        raise KeyError(f"no channel group named '{name}'")

    def rotation_pairs(self) -> list[tuple[int, int]]:
        """(cos, sin) channel index pairs of every rotation group."""
        pairs = []
        off = 0
        for g in self.groups:
            if g.role in (ROLE_ROOT_ROTATION, ROLE_JOINT_ROTATION):
                for j in range(0, g.size, 2):
                    pairs.append((off + j, off + j + 1))
            off += g.size
        return pairs


JOINT_NAMES = ("hip_l", "hip_r", "knee_l", "knee_r", "arm_l", "arm_r")

DEFAULT_LAYOUT = ChannelLayout(groups=(
    ChannelGroup("root_velocity", ROLE_ROOT_TRANSLATION, 2),
    ChannelGroup("root_heading", ROLE_ROOT_ROTATION, 2),
) + tuple(ChannelGroup(n, ROLE_JOINT_ROTATION, 2) for n in JOINT_NAMES))


@dataclass
class MotionSegment:
    frames: np.ndarray  # [N, E]
    fps: float
    layout: ChannelLayout = DEFAULT_LAYOUT
    label: list[str] | None = None          # segment-level action tokens
    frame_labels: list[str] | None = None   # per-frame owner, "a+b" in blends

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValueError(f"frames must be [N, E], got shape {self.frames.shape}")
        if self.frames.shape[0] < 2:
            raise ValueError("a motion segment needs at least 2 frames")
        if self.frames.shape[1] != self.layout.width:
            raise ValueError(f"frame width {self.frames.shape[1]} does not match "
                             f"layout width {self.layout.width}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("motion frames contain non-finite values")
        if self.frame_labels is not None and len(self.frame_labels) != len(self.frames):
            raise ValueError("frame_labels length must equal frame count")

    @property
    def n(self) -> int:
        return self.frames.shape[0]

    @property
    def e(self) -> int:
        return self.frames.shape[1]

    def cut(self, start: int, end: int, label: list[str] | None = None) -> "MotionSegment":
        return MotionSegment(
            frames=self.frames[start:end].copy(),
            fps=self.fps,
            layout=self.layout,
            label=label,
            frame_labels=(self.frame_labels[start:end]
                          if self.frame_labels is not None else None),
        )

    def rotation_norm_errors(self) -> float:
        """Worst |norm - 1| over all (cos, sin) rotation pairs."""
        worst = 0.0
        for ci, si in self.layout.rotation_pairs():
            norms = np.hypot(self.frames[:, ci], self.frames[:, si])
            worst = max(worst, float(np.abs(norms - 1.0).max()))
        return worst


def root_positions(segment: MotionSegment) -> np.ndarray:
    """Integrated root trajectory [N, 2]; position of frame 0 is the origin."""
    vel = segment.frames[:, segment.layout.group_slice("root_velocity")]
    pos = np.cumsum(vel, axis=0)
    return pos - pos[0]


# -- run-length helpers for per-frame labels -----------------------------


def _encode_labels(labels: list[str]) -> str:
    parts = []
    i = 0
    while i < len(labels):
        j = i
        while j < len(labels) and labels[j] == labels[i]:
            j += 1
        parts.append(f"{labels[i]}:{j - i}")
        i = j
    return " ".join(parts)


def _decode_labels(text: str) -> list[str]:
    out: list[str] = []
    for part in text.split():
        name, count = part.rsplit(":", 1)
        out.extend([name] * int(count))
    return out


# -- motion file IO -------------------------------------------------------


def dumps_motion(segment: MotionSegment) -> str:
    buf = io.StringIO()
    buf.write(_MAGIC + "\n")
    buf.write(f"fps {segment.fps!r}\n")
    for g in segment.layout.groups:
        buf.write(f"group {g.name} {g.role} {g.size}\n")
    buf.write(f"frames {segment.n}\n")
    if segment.label is not None:
        buf.write("tokens " + " ".join(segment.label) + "\n")
    if segment.frame_labels is not None:
        buf.write("labels " + _encode_labels(segment.frame_labels) + "\n")
    buf.write("data\n")
    for row in segment.frames:
        buf.write(" ".join("%.17g" % v for v in row))
        buf.write("\n")
    return buf.getvalue()


def loads_motion(text: str) -> MotionSegment:
    lines = text.split("\n")
    if not lines or lines[0] != _MAGIC:
        raise ValueError("not a motion file")
    fps = None
    groups: list[ChannelGroup] = []
    n = None
    label = None
    frame_labels = None
    i = 1
    while i < len(lines):
        line = lines[i]
        i += 1
        if line == "data":
            break
        key, _, rest = line.partition(" ")
        if key == "fps":
            fps = float(rest)
        elif key == "group":
            name, role, size = rest.split()
            groups.append(ChannelGroup(name, role, int(size)))
        elif key == "frames":
            n = int(rest)
        elif key == "tokens":
            label = rest.split()
        elif key == "labels":
            frame_labels = _decode_labels(rest)
        else:
            raise ValueError(f"unknown motion file field '{key}'")
    else:
        raise ValueError("motion file has no data section")
    if fps is None or n is None or not groups:
        raise ValueError("motion file header incomplete")
    layout = ChannelLayout(groups=tuple(groups))
    payload = " ".join(lines[i:])
    frames = np.array(payload.split(), dtype=np.float64).reshape(n, layout.width)
    return MotionSegment(frames=frames, fps=fps, layout=layout,
                         label=label, frame_labels=frame_labels)


def save_motion(path, segment: MotionSegment) -> None:
    with open(path, "w") as f:
        f.write(dumps_motion(segment))


def load_motion(path) -> MotionSegment:
    with open(path) as f:
        return loads_motion(f.read())
