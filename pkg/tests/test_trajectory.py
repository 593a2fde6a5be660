from __future__ import annotations

import math

import numpy as np
import pytest

from sandbox3d.trajectory_control import (
    AbstractMotion,
    instantiate_trajectories,
    parse_motion,
)


def test_parse_motion_plain_tokens():
    for motion in AbstractMotion:
        assert parse_motion(motion.value) == (motion, False)


def test_parse_motion_separator_normalization():
    assert parse_motion("FWD LEFT") == (AbstractMotion.FWD_LEFT, False)
    assert parse_motion("fwd_right") == (AbstractMotion.FWD_RIGHT, False)
    assert parse_motion("move\tfwd  left now") == (AbstractMotion.FWD_LEFT, False)


def test_parse_motion_earliest_wins():
    assert parse_motion("go left, not right") == (AbstractMotion.LEFT, False)
    assert parse_motion("right then left") == (AbstractMotion.RIGHT, False)


def test_parse_motion_longer_token_at_same_position():
    # "fwd-left" contains "left" later in the string but starts earlier
    assert parse_motion("fwd-left") == (AbstractMotion.FWD_LEFT, False)
    assert parse_motion("the fwd-right lane") == (AbstractMotion.FWD_RIGHT, False)
    # "forward" begins at the same index as no other token here
    assert parse_motion("forward") == (AbstractMotion.FORWARD, False)


def test_parse_motion_default_forward():
    assert parse_motion("stay put") == (AbstractMotion.FORWARD, True)
    assert parse_motion("") == (AbstractMotion.FORWARD, True)


def test_forward_headings_all_zero():
    specs = instantiate_trajectories(AbstractMotion.FORWARD, 3, 4, 0.25, 60.0)
    assert [s.heading_deg for s in specs] == [0.0, 0.0, 0.0]
    assert [s.trajectory_index for s in specs] == [0, 1, 2]


def test_left_headings_inclusive_linspace():
    specs = instantiate_trajectories(AbstractMotion.LEFT, 3, 1, 0.25, 60.0)
    assert [s.heading_deg for s in specs] == [-90.0, -67.5, -45.0]
    # m=1 collapses to the interval midpoint
    specs = instantiate_trajectories(AbstractMotion.LEFT, 1, 1, 0.25, 60.0)
    assert [s.heading_deg for s in specs] == [-67.5]


def test_fwd_left_spans_sweep():
    specs = instantiate_trajectories(AbstractMotion.FWD_LEFT, 4, 1, 0.25, 60.0)
    assert [s.heading_deg for s in specs] == [-60.0, -40.0, -20.0, 0.0]


def test_right_families_mirror_left_exactly():
    for left_kind, right_kind in (
        (AbstractMotion.LEFT, AbstractMotion.RIGHT),
        (AbstractMotion.FWD_LEFT, AbstractMotion.FWD_RIGHT),
    ):
        left = instantiate_trajectories(left_kind, 5, 1, 0.25, 57.0)
        right = instantiate_trajectories(right_kind, 5, 1, 0.25, 57.0)
        # exact IEEE negation, reversed order
        assert [s.heading_deg for s in right] == [-s.heading_deg for s in reversed(left)]


def test_pose_translation_along_yawed_forward():
    specs = instantiate_trajectories(AbstractMotion.FORWARD, 1, 3, 0.25, 60.0)
    poses = specs[0].poses
    assert len(poses) == 3
    for t, pose in enumerate(poses, start=1):
        np.testing.assert_allclose(pose.translation, [0.0, 0.0, t * 0.25], atol=1e-12)
        np.testing.assert_allclose(pose.rotation, np.eye(3), atol=1e-12)


def test_pose_rotation_heading_sign():
    # heading +90 turns the camera right: forward becomes camera -x ... in
    # camera coordinates the new forward axis maps to world (sin, 0, cos)
    specs = instantiate_trajectories(AbstractMotion.RIGHT, 1, 1, 0.5, 60.0)
    pose = specs[0].poses[0]
    h = math.radians(specs[0].heading_deg)
    assert specs[0].heading_deg == 67.5
    np.testing.assert_allclose(pose.forward(), [math.sin(h), 0.0, math.cos(h)], atol=1e-12)
    np.testing.assert_allclose(pose.translation, 0.5 * pose.forward(), atol=1e-12)


def test_step_spacing_uses_step_m():
    specs = instantiate_trajectories(AbstractMotion.FWD_LEFT, 2, 4, 0.1, 45.0)
    for spec in specs:
        d = [float(np.linalg.norm(p.translation)) for p in spec.poses]
        np.testing.assert_allclose(d, [0.1, 0.2, 0.3, 0.4], atol=1e-12)


def test_instantiate_validation():
    with pytest.raises(ValueError):
        instantiate_trajectories(AbstractMotion.FORWARD, 0, 4, 0.25, 60.0)
    with pytest.raises(ValueError):
        instantiate_trajectories(AbstractMotion.FORWARD, 3, 0, 0.25, 60.0)
    with pytest.raises(ValueError):
        instantiate_trajectories(AbstractMotion.FORWARD, 3, 4, 0.0, 60.0)
    with pytest.raises(ValueError):
        instantiate_trajectories(AbstractMotion.FORWARD, 3, 4, 0.25, -5.0)
