"""Abstract motion parsing and candidate camera trajectory synthesis.

A motion token picks a yaw-heading interval; M headings are sampled linearly
over it (inclusive of both ends) and each heading becomes one trajectory of T
poses stepping along the yawed forward direction. All poses are relative to
the input camera, so heading 0 with step s yields translations (0, 0, t*s).

Heading sign convention: positive yaw turns the camera right (about camera +y,
which points down). The lateral families mirror exactly: the `right` headings
are the negated `left` headings, likewise fwd-right / fwd-left.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .scene_model import CameraPose


class AbstractMotion(Enum):
    LEFT = "left"
    FWD_LEFT = "fwd-left"
    FORWARD = "forward"
    FWD_RIGHT = "fwd-right"
    RIGHT = "right"


# Fixed heading intervals in degrees for the pure-lateral families; the
# diagonal families span [-sweep, 0] and [0, sweep].
_LEFT_RANGE = (-90.0, -45.0)

DEFAULT_M = 3
DEFAULT_T = 4
DEFAULT_STEP_M = 0.25
DEFAULT_SWEEP_DEG = 60.0


def parse_motion(text: str) -> tuple[AbstractMotion, bool]:
    """Find the first motion token in free-form text.

    Matching is case-insensitive and treats hyphen, underscore and whitespace
    as equivalent separators. When several tokens occur the earliest one wins;
    at equal positions the longer token wins (so "fwd-left" beats "left").
    Returns (motion, defaulted); defaulted is True when no token was found and
    FORWARD was substituted.
    """
    norm = re.sub(r"[_\s]+", "-", text.lower())
    best: tuple[int, int, AbstractMotion] | None = None
    for motion in AbstractMotion:
        pos = norm.find(motion.value)
        if pos < 0:
            continue
        key = (pos, -len(motion.value))
        if best is None or key < best[:2]:
            best = (pos, -len(motion.value), motion)
    if best is None:
        return AbstractMotion.FORWARD, True
    return best[2], False


@dataclass(frozen=True)
class TrajectorySpec:
    """One candidate trajectory: a heading and T relative camera poses."""

    trajectory_index: int
    heading_deg: float
    poses: tuple[CameraPose, ...]  # relative to the input camera, step 1..T


def _sample_headings(lo: float, hi: float, m: int) -> list[float]:
    if m == 1:
        return [(lo + hi) / 2.0]
    return [lo + (hi - lo) * i / (m - 1) for i in range(m)]


def _family_headings(motion: AbstractMotion, m: int, sweep_deg: float) -> list[float]:
    if motion is AbstractMotion.FORWARD:
        return [0.0] * m
    if motion is AbstractMotion.LEFT:
        return _sample_headings(*_LEFT_RANGE, m)
    if motion is AbstractMotion.FWD_LEFT:
        return _sample_headings(-sweep_deg, 0.0, m)
    # Exact mirror of the matching left-family headings.
    left = _family_headings(
        AbstractMotion.LEFT if motion is AbstractMotion.RIGHT else AbstractMotion.FWD_LEFT,
        m,
        sweep_deg,
    )
    return [-h for h in reversed(left)]


def _yaw_pose(heading_deg: float, offset_m: float) -> CameraPose:
    # Rotation about camera +y (down); positive heading turns right.
    th = math.radians(heading_deg)
    c, s = math.cos(th), math.sin(th)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return CameraPose(rot, offset_m * np.array([s, 0.0, c]))


def instantiate_trajectories(
    motion: AbstractMotion,
    m_candidates: int = DEFAULT_M,
    t_steps: int = DEFAULT_T,
    step_m: float = DEFAULT_STEP_M,
    sweep_deg: float = DEFAULT_SWEEP_DEG,
) -> list[TrajectorySpec]:
    """Expand a motion into M trajectories of T poses each."""
    if m_candidates < 1 or t_steps < 1:
        raise ValueError("need at least one trajectory and one step")
    if step_m <= 0 or sweep_deg <= 0:
        raise ValueError("step_m and sweep_deg must be positive")
    specs = []
    for m, heading in enumerate(_family_headings(motion, m_candidates, sweep_deg)):
        poses = tuple(_yaw_pose(heading, t * step_m) for t in range(1, t_steps + 1))
        specs.append(TrajectorySpec(m, heading, poses))
    return specs
