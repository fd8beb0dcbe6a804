"""Synthetic multi-sweep scenes with exact ground-truth motion.

A scene holds T consecutive LiDAR sweeps, each expressed in its own ego
frame with a known ego-to-world pose. Sweeps cover times t-(T-2) .. t+1 at
a fixed 0.1 s interval; index T-2 is the "current" sweep whose points carry
supervision: per-point world displacement over one interval (gt_motion,
rotated into the t+1 ego frame), speed, and a semantic class id
(0=background, 1=car, 2=other-vehicle, 3=pedestrian, 4=wheeled-vru).

The generator builds a jittered ground plane with LiDAR-like radial density
(uniform in range, so density falls off as 1/r) plus box-shaped rigid
movers that translate at constant world velocity. Each mover's point set
is sampled once and moved rigidly, which makes the warp-plus-motion
consistency between sweeps t and t+1 exact rather than approximate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geom import make_se3, se3_inverse, se3_apply, world_vectors_to_frame, yaw_matrix

CLASS_NAMES = ("background", "car", "other_vehicle", "pedestrian", "wheeled_vru")
SWEEP_INTERVAL = 0.1  # seconds between sweeps (10 Hz)

SCENE_FORMAT = "sceneflow4d-scene"


@dataclass
class Scene:
    """T sweeps in their own ego frames plus current-sweep ground truth."""

    sweeps: list[np.ndarray]  # each (N_i, 3) float32
    poses: list[np.ndarray]  # each 4x4 ego-to-world
    gt_motion: np.ndarray  # (N_cur, 3) meters per interval, t+1 ego frame
    gt_speed: np.ndarray  # (N_cur,) m/s
    class_id: np.ndarray  # (N_cur,) uint8
    sweep_interval: float = SWEEP_INTERVAL

    def __post_init__(self):
        n_cur = self.sweeps[self.current_index].shape[0]
        assert self.gt_motion.shape == (n_cur, 3)
        assert self.gt_speed.shape == (n_cur,)
        assert self.class_id.shape == (n_cur,)
        assert self.class_id.max(initial=0) < len(CLASS_NAMES)

    @property
    def num_sweeps(self) -> int:
        return len(self.sweeps)

    @property
    def current_index(self) -> int:
        """Sweep the flow is predicted for; the last sweep is its target."""
        return self.num_sweeps - 2 if self.num_sweeps > 1 else 0

    @property
    def current_points(self) -> np.ndarray:
        return self.sweeps[self.current_index]


def truncate_scene(scene: Scene, n_sweeps: int) -> Scene:
    """Keep only the last ``n_sweeps`` sweeps of a scene.

    The current sweep sits at index T-2, so any n_sweeps >= 2 preserves it
    and the ground truth stays valid. Used to compare temporal context
    lengths on identical data.
    """
    if not 2 <= n_sweeps <= scene.num_sweeps:
        raise ValueError(f"n_sweeps must be in [2, {scene.num_sweeps}]")
    return Scene(
        sweeps=scene.sweeps[-n_sweeps:],
        poses=scene.poses[-n_sweeps:],
        gt_motion=scene.gt_motion,
        gt_speed=scene.gt_speed,
        class_id=scene.class_id,
        sweep_interval=scene.sweep_interval,
    )


@dataclass
class SceneSpec:
    """Knobs of the synthetic generator; defaults fit a desk-scale grid."""

    extent: float = 6.0  # ground sampling radius (meters)
    min_range: float = 0.5
    n_ground: int = 1200  # ground points per sweep
    ground_z: float = -0.2
    ground_jitter: float = 0.06
    n_movers: int = 4
    points_per_mover: int = 120
    mover_size: tuple[float, float, float] = (0.9, 0.6, 0.45)
    mover_altitude: float = 0.25  # gap between ground plane and box bottom
    mover_speed: tuple[float, float] = (0.6, 2.0)  # m/s
    ego_speed: tuple[float, float] = (0.0, 1.0)
    ego_yaw_rate: tuple[float, float] = (-0.2, 0.2)
    n_sweeps: int = 5
    mover_classes: tuple[int, ...] = (1, 2, 3, 4)
    # When positive, ground returns lie on this many concentric rings
    # (evenly spaced beam elevations from a sensor 1.8 m up) instead of
    # filling the disc. Ring points are sampled once in the world frame and
    # re-observed every sweep, the way a scanner re-hits the same ground
    # cells, rather than redrawn per sweep.
    ground_rings: int = 0
    # Sample mover points on the box surface instead of the volume; a
    # scanner sees shells, not solids.
    mover_shell: bool = False

    def validate(self):
        if self.extent <= 0 or self.min_range < 0:
            raise ValueError("extent must be positive and min_range non-negative")
        if self.ground_rings < 0:
            raise ValueError("ground_rings must be non-negative")
        if self.n_ground < 0 or self.n_movers < 0 or self.points_per_mover < 0:
            raise ValueError("counts must be non-negative")
        if any(s <= 0 for s in self.mover_size):
            raise ValueError("mover_size must be positive")
        if self.mover_altitude < 0:
            raise ValueError("mover_altitude must be non-negative")
        if self.n_sweeps < 2:
            raise ValueError("need at least two sweeps (current and target)")
        if not all(1 <= c < len(CLASS_NAMES) for c in self.mover_classes):
            raise ValueError("mover classes must be foreground ids")


def generate_scene(seed: int, spec: SceneSpec | None = None) -> Scene:
    """Deterministic synthetic scene; identical seeds give identical bytes."""
    spec = spec or SceneSpec()
    spec.validate()
    rng = np.random.default_rng(seed)
    t_count = spec.n_sweeps
    cur = t_count - 2
    # sweep k happens at (k - cur) * interval relative to the current sweep
    times = (np.arange(t_count) - cur) * SWEEP_INTERVAL

    ego_dir = rng.uniform(0.0, 2 * np.pi)
    ego_speed = rng.uniform(*spec.ego_speed)
    ego_vel = ego_speed * np.array([np.cos(ego_dir), np.sin(ego_dir), 0.0])
    yaw_rate = rng.uniform(*spec.ego_yaw_rate)
    poses = [make_se3(yaw_matrix(yaw_rate * tk), ego_vel * tk) for tk in times]

    movers = []
    for m in range(spec.n_movers):
        ang = rng.uniform(0.0, 2 * np.pi)
        rad = rng.uniform(spec.min_range + 1.0, max(spec.extent - 1.0, spec.min_range + 1.5))
        # movers float above the ground returns so that no voxel mixes
        # static and dynamic points at typical grid resolutions
        center_z = spec.ground_z + spec.mover_altitude + spec.mover_size[2] / 2
        center = np.array([rad * np.cos(ang), rad * np.sin(ang), center_z])
        local = (rng.random((spec.points_per_mover, 3)) - 0.5) * np.asarray(spec.mover_size)
        if spec.mover_shell:
            ax = rng.integers(0, 3, size=spec.points_per_mover)
            sgn = np.where(rng.random(spec.points_per_mover) < 0.5, -0.5, 0.5)
            local[np.arange(spec.points_per_mover), ax] = sgn * np.asarray(spec.mover_size)[ax]
        v_ang = rng.uniform(0.0, 2 * np.pi)
        v = rng.uniform(*spec.mover_speed) * np.array([np.cos(v_ang), np.sin(v_ang), 0.0])
        cls = spec.mover_classes[m % len(spec.mover_classes)]
        movers.append((center + local, v, cls))

    static_ground = None
    if spec.ground_rings > 0:
        sensor_h = 1.8
        phi = np.linspace(
            np.arctan2(sensor_h, spec.extent),
            np.arctan2(sensor_h, max(spec.min_range, 0.1)),
            spec.ground_rings,
        )
        ring_radii = sensor_h / np.tan(phi)
        # constant linear density along each ring
        ring_weights = ring_radii / ring_radii.sum()
        r = rng.choice(ring_radii, size=spec.n_ground, p=ring_weights)
        r = r + rng.uniform(-spec.ground_jitter, spec.ground_jitter, spec.n_ground)
        theta = rng.uniform(0.0, 2 * np.pi, spec.n_ground)
        static_ground = np.column_stack(
            [
                r * np.cos(theta),
                r * np.sin(theta),
                spec.ground_z + rng.uniform(-spec.ground_jitter, spec.ground_jitter, spec.n_ground),
            ]
        )

    sweeps = []
    cur_classes = None
    cur_motion_world = None
    for k, tk in enumerate(times):
        ego_xy = ego_vel[:2] * tk
        if static_ground is not None:
            ground = static_ground
        else:
            r = rng.uniform(spec.min_range, spec.extent, spec.n_ground)
            theta = rng.uniform(0.0, 2 * np.pi, spec.n_ground)
            ground = np.column_stack(
                [
                    ego_xy[0] + r * np.cos(theta),
                    ego_xy[1] + r * np.sin(theta),
                    spec.ground_z + rng.uniform(-spec.ground_jitter, spec.ground_jitter, spec.n_ground),
                ]
            )
        parts = [ground]
        classes = [np.zeros(spec.n_ground, dtype=np.uint8)]
        motions = [np.zeros((spec.n_ground, 3))]
        for base, v, cls in movers:
            parts.append(base + v * tk)
            classes.append(np.full(base.shape[0], cls, dtype=np.uint8))
            motions.append(np.tile(v * SWEEP_INTERVAL, (base.shape[0], 1)))
        world = np.concatenate(parts, axis=0)
        sweeps.append(se3_apply(se3_inverse(poses[k]), world).astype(np.float32))
        if k == cur:
            cur_classes = np.concatenate(classes)
            cur_motion_world = np.concatenate(motions, axis=0)

    gt_motion = world_vectors_to_frame(cur_motion_world, poses[-1]).astype(np.float32)
    gt_speed = (np.linalg.norm(gt_motion, axis=1) / SWEEP_INTERVAL).astype(np.float32)
    return Scene(sweeps, poses, gt_motion, gt_speed, cur_classes)


# ---------------------------------------------------------------------------
# scene directory format: manifest.json plus flat little-endian blobs


def save_scene(path, scene: Scene) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": SCENE_FORMAT,
        "schema_version": 1,
        "num_sweeps": scene.num_sweeps,
        "current_index": scene.current_index,
        "sweep_interval": scene.sweep_interval,
        "counts": [int(s.shape[0]) for s in scene.sweeps],
        "poses": [p.reshape(-1).tolist() for p in scene.poses],
        "dtype": "<f4",
        "class_dtype": "u1",
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    for i, pts in enumerate(scene.sweeps):
        np.ascontiguousarray(pts, dtype="<f4").tofile(path / f"points_{i}.bin")
    np.ascontiguousarray(scene.gt_motion, dtype="<f4").tofile(path / "gt_motion.bin")
    np.ascontiguousarray(scene.gt_speed, dtype="<f4").tofile(path / "gt_speed.bin")
    np.ascontiguousarray(scene.class_id, dtype="u1").tofile(path / "class_id.bin")


def load_scene(path) -> Scene:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != SCENE_FORMAT:
        raise ValueError(f"{path} is not a {SCENE_FORMAT} directory")
    counts = manifest["counts"]
    sweeps = []
    for i, n in enumerate(counts):
        pts = np.fromfile(path / f"points_{i}.bin", dtype="<f4").reshape(n, 3)
        sweeps.append(pts)
    poses = [np.asarray(p, dtype=np.float64).reshape(4, 4) for p in manifest["poses"]]
    n_cur = counts[manifest["current_index"]]
    gt_motion = np.fromfile(path / "gt_motion.bin", dtype="<f4").reshape(n_cur, 3)
    gt_speed = np.fromfile(path / "gt_speed.bin", dtype="<f4")
    class_id = np.fromfile(path / "class_id.bin", dtype="u1")
    return Scene(sweeps, poses, gt_motion, gt_speed, class_id, manifest["sweep_interval"])
