"""Planar forward kinematics for viewer export.

The figure lives in a sagittal plane: root x is forward travel, root y is
height above a base of 1.0. The heading angle leans the torso; hip and
knee angles hang the legs off the pelvis (knee relative to thigh), arm
angles hang single-segment arms off the chest. Bone lengths are fixed.

Export rows are one frame per line: frame index then (x, y) per point,
printed with 17 significant digits.
"""
from __future__ import annotations

import numpy as np

from .motiondata import JOINT_NAMES, MotionSegment, root_positions

BONES = {"torso": 0.6, "thigh": 0.45, "shin": 0.45, "arm": 0.55}
BASE_HEIGHT = 1.0
POINT_NAMES = ("pelvis", "chest", "knee_l", "foot_l", "knee_r", "foot_r",
               "hand_l", "hand_r")

_EXPORT_MAGIC = "#phasemotion-export v1"


def _angles(segment: MotionSegment, group: str) -> np.ndarray:
    s = segment.layout.group_slice(group)
    return np.arctan2(segment.frames[:, s.start + 1], segment.frames[:, s.start])


def _limb(origin: np.ndarray, angle: np.ndarray, length: float) -> np.ndarray:
    # angle 0 hangs straight down; positive swings forward (+x)
    return origin + length * np.stack([np.sin(angle), -np.cos(angle)], axis=1)


def forward_kinematics(segment: MotionSegment) -> np.ndarray:
    """Joint positions [N, P, 2] for the points in POINT_NAMES."""
    pos = root_positions(segment)
    pelvis = pos + np.array([0.0, BASE_HEIGHT])
    heading = _angles(segment, "root_heading")
    chest = pelvis + BONES["torso"] * np.stack(
        [np.sin(heading), np.cos(heading)], axis=1)
    hips = {n: _angles(segment, n) for n in ("hip_l", "hip_r")}
    knees = {n: _angles(segment, n) for n in ("knee_l", "knee_r")}
    arms = {n: _angles(segment, n) for n in ("arm_l", "arm_r")}

    knee_l = _limb(pelvis, heading + hips["hip_l"], BONES["thigh"])
    knee_r = _limb(pelvis, heading + hips["hip_r"], BONES["thigh"])
    foot_l = _limb(knee_l, heading + hips["hip_l"] + knees["knee_l"], BONES["shin"])
    foot_r = _limb(knee_r, heading + hips["hip_r"] + knees["knee_r"], BONES["shin"])
    hand_l = _limb(chest, heading + arms["arm_l"], BONES["arm"])
    hand_r = _limb(chest, heading + arms["arm_r"], BONES["arm"])
    return np.stack([pelvis, chest, knee_l, foot_l, knee_r, foot_r,
                     hand_l, hand_r], axis=1)


def dumps_positions(segment: MotionSegment) -> str:
    points = forward_kinematics(segment)
    lines = [_EXPORT_MAGIC,
             f"fps {segment.fps!r}",
             "points " + " ".join(POINT_NAMES),
             f"frames {segment.n}",
             "data"]
    flat = points.reshape(segment.n, -1)
    for t, row in enumerate(flat):
        lines.append(str(t) + " " + " ".join("%.17g" % v for v in row))
    return "\n".join(lines) + "\n"
