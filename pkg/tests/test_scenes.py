"""Synthetic scene generator and the on-disk scene format."""

import numpy as np
import pytest

from sceneflow4d.geom import se3_apply, warp_points
from sceneflow4d.scenes import (
    SWEEP_INTERVAL,
    Scene,
    SceneSpec,
    generate_scene,
    load_scene,
    save_scene,
    truncate_scene,
)

TINY = SceneSpec(extent=2.0, min_range=0.3, n_ground=60, n_movers=2, points_per_mover=15, n_sweeps=3)


def test_generator_is_deterministic():
    a, b = generate_scene(7, TINY), generate_scene(7, TINY)
    for sa, sb in zip(a.sweeps, b.sweeps):
        assert np.array_equal(sa, sb)
    for pa, pb in zip(a.poses, b.poses):
        assert np.array_equal(pa, pb)
    assert np.array_equal(a.gt_motion, b.gt_motion)
    assert np.array_equal(a.gt_speed, b.gt_speed)
    assert np.array_equal(a.class_id, b.class_id)
    c = generate_scene(8, TINY)
    assert not np.array_equal(a.sweeps[0], c.sweeps[0])


def test_counts_and_classes():
    s = generate_scene(3, TINY)
    n = TINY.n_ground + TINY.n_movers * TINY.points_per_mover
    assert s.num_sweeps == 3
    assert s.current_index == 1
    assert all(sw.shape == (n, 3) for sw in s.sweeps)
    assert np.sum(s.class_id == 0) == TINY.n_ground
    # movers cycle through the configured foreground classes
    assert set(np.unique(s.class_id)) == {0, 1, 2}
    assert np.sum(s.class_id == 1) == TINY.points_per_mover


def test_ground_is_static_and_movers_in_speed_range():
    s = generate_scene(11, TINY)
    ground = s.class_id == 0
    assert np.all(s.gt_motion[ground] == 0)
    assert np.all(s.gt_speed[ground] == 0)
    lo, hi = TINY.mover_speed
    assert np.all(s.gt_speed[~ground] >= lo - 1e-4)
    assert np.all(s.gt_speed[~ground] <= hi + 1e-4)
    assert np.allclose(s.gt_speed, np.linalg.norm(s.gt_motion, axis=1) / SWEEP_INTERVAL, rtol=1e-5)


def test_movers_hover_above_ground_returns():
    s = generate_scene(1, TINY)
    pts = s.current_points
    ground_top = pts[s.class_id == 0, 2].max()
    mover_bottom = pts[s.class_id > 0, 2].min()
    assert mover_bottom > ground_top


def test_gt_motion_closes_the_warp_loop():
    """Current mover points, warped to the last frame and advanced by their
    ground-truth motion, must land exactly on the last sweep's mover rows."""
    s = generate_scene(5, TINY)
    cur, last = s.current_index, s.num_sweeps - 1
    movers = s.class_id > 0
    warped = warp_points(s.current_points, s.poses[cur], s.poses[last])
    np.testing.assert_allclose(warped[movers] + s.gt_motion[movers], s.sweeps[last][movers], atol=1e-5)


def test_ring_ground_is_one_world_pattern():
    """Ring-mode ground is sampled once in the world frame: every sweep must
    re-observe the same world points, not a fresh draw."""
    spec = SceneSpec(extent=2.0, min_range=0.3, n_ground=80, ground_rings=8,
                     n_movers=1, points_per_mover=10, n_sweeps=3, ego_speed=(0.5, 0.5))
    s = generate_scene(13, spec)
    ng = spec.n_ground
    world = [se3_apply(s.poses[k], s.sweeps[k][:ng].astype(np.float64)) for k in range(3)]
    np.testing.assert_allclose(world[0], world[1], atol=1e-5)
    np.testing.assert_allclose(world[0], world[2], atol=1e-5)
    radii = np.hypot(world[0][:, 0], world[0][:, 1])
    assert radii.min() >= spec.min_range - 0.1
    assert radii.max() <= spec.extent + 0.1


def test_shell_movers_sit_on_the_box_surface():
    spec = SceneSpec(extent=2.0, min_range=0.3, n_ground=20, n_movers=1,
                     points_per_mover=80, mover_shell=True, n_sweeps=3)
    s = generate_scene(21, spec)
    pts = s.current_points[s.class_id > 0].astype(np.float64)
    center = (pts.min(axis=0) + pts.max(axis=0)) / 2
    half = np.asarray(spec.mover_size) / 2
    frac = np.abs(pts - center) / half
    # every point touches at least one face; volume sampling would not
    assert np.all(frac.max(axis=1) > 0.9)


def test_spec_validation():
    with pytest.raises(ValueError):
        generate_scene(0, SceneSpec(extent=-1.0))
    with pytest.raises(ValueError):
        generate_scene(0, SceneSpec(n_sweeps=1))
    with pytest.raises(ValueError):
        generate_scene(0, SceneSpec(mover_altitude=-0.1))
    with pytest.raises(ValueError):
        generate_scene(0, SceneSpec(mover_classes=(0,)))
    with pytest.raises(ValueError):
        generate_scene(0, SceneSpec(ground_rings=-1))


def test_truncate_keeps_current_sweep_and_gt():
    s = generate_scene(9, SceneSpec(extent=2.0, n_ground=40, n_movers=1, points_per_mover=10, n_sweeps=5))
    t = truncate_scene(s, 3)
    assert t.num_sweeps == 3
    assert np.array_equal(t.current_points, s.current_points)
    assert np.array_equal(t.poses[-1], s.poses[-1])
    assert t.gt_motion is s.gt_motion
    with pytest.raises(ValueError):
        truncate_scene(s, 1)
    with pytest.raises(ValueError):
        truncate_scene(s, 6)


def test_save_load_roundtrip(tmp_path):
    s = generate_scene(4, TINY)
    save_scene(tmp_path / "scene", s)
    back = load_scene(tmp_path / "scene")
    assert back.num_sweeps == s.num_sweeps
    assert back.sweep_interval == s.sweep_interval
    for sa, sb in zip(s.sweeps, back.sweeps):
        assert np.array_equal(sa, sb)
    for pa, pb in zip(s.poses, back.poses):
        assert np.array_equal(pa, pb)
    assert np.array_equal(back.gt_motion, s.gt_motion)
    assert np.array_equal(back.gt_speed, s.gt_speed)
    assert np.array_equal(back.class_id, s.class_id)


def test_load_rejects_foreign_directory(tmp_path):
    d = tmp_path / "other"
    d.mkdir()
    (d / "manifest.json").write_text('{"format": "something-else"}')
    with pytest.raises(ValueError):
        load_scene(d)


def test_scene_asserts_gt_alignment():
    pts = [np.zeros((4, 3), np.float32)] * 3
    poses = [np.eye(4)] * 3
    with pytest.raises(AssertionError):
        Scene(pts, poses, np.zeros((3, 3), np.float32), np.zeros(4, np.float32), np.zeros(4, np.uint8))
