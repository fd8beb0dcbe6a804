"""End-to-end glue: scene -> warped sweeps -> voxels -> network -> flow.

Everything that depends only on geometry (warps, voxel assignments, raw
point features, kernel maps, resampling indices) is computed once per
scene in :func:`prepare_scene`; repeated passes during training reuse that
structure and pay only for the numerics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geom import warp_points
from .nn import Network, NetworkPlan
from .scenes import Scene
from .sparse import SparseTensor4D
from .voxelize import PointVoxelMap, assign_voxels, build_point_features, pool_to_voxels


@dataclass
class ScenePrep:
    """Per-scene structure shared by every forward/backward pass."""

    raw_feats: np.ndarray  # (sum of in-range points, 9)
    feat_slices: list[tuple[int, int]]  # rows of raw_feats per sweep
    sweep_maps: list[PointVoxelMap]
    coords4: np.ndarray
    keys4: np.ndarray
    plan: NetworkPlan
    gt_motion: np.ndarray  # in-range rows of the current sweep
    gt_speed: np.ndarray
    class_id: np.ndarray
    n_current_points: int  # original row count, including out-of-range

    @property
    def current_map(self) -> PointVoxelMap:
        return self.sweep_maps[len(self.sweep_maps) - 2 if len(self.sweep_maps) > 1 else 0]


def prepare_scene(net: Network, scene: Scene, dtype=np.float32) -> ScenePrep:
    """Warp all sweeps into the last sweep's ego frame and build structure."""
    grid = net.cfg.grid
    if scene.num_sweeps != grid.num_timesteps:
        raise ValueError(f"scene has {scene.num_sweeps} sweeps, grid expects {grid.num_timesteps}")
    ref_pose = scene.poses[-1]
    feats = []
    maps = []
    slices = []
    coord_parts = []
    offset = 0
    for i, pts in enumerate(scene.sweeps):
        warped = warp_points(pts, scene.poses[i], ref_pose)
        pvmap = assign_voxels(warped, grid)
        raw9 = build_point_features(warped, pvmap, grid, dtype)
        maps.append(pvmap)
        feats.append(raw9)
        slices.append((offset, offset + raw9.shape[0]))
        offset += raw9.shape[0]
        c4 = np.empty((pvmap.coords.shape[0], 4), dtype=np.int64)
        c4[:, :3] = pvmap.coords
        c4[:, 3] = i
        coord_parts.append(c4)
    coords4 = np.concatenate(coord_parts, axis=0)
    plan = net.build_plan(coords4)
    cur = scene.current_index
    kept = maps[cur].kept
    return ScenePrep(
        raw_feats=np.concatenate(feats, axis=0),
        feat_slices=slices,
        sweep_maps=maps,
        coords4=coords4,
        keys4=plan.levels[0].keys,
        plan=plan,
        gt_motion=scene.gt_motion[kept].astype(dtype),
        gt_speed=scene.gt_speed[kept].astype(dtype),
        class_id=scene.class_id[kept],
        n_current_points=scene.current_points.shape[0],
    )


def forward_scene(net: Network, prep: ScenePrep, training: bool = True, counter=None) -> ad.Tensor:
    """Predicted motion vectors for the current sweep's in-range points."""
    raw = ad.Tensor(prep.raw_feats)
    f_p = net.encode_points(raw, training, counter)
    per_sweep = []
    for pvmap, (start, stop) in zip(prep.sweep_maps, prep.feat_slices):
        per_sweep.append(pool_to_voxels(ad.slice_rows(f_p, start, stop), pvmap))
    f4d = SparseTensor4D(prep.coords4, ad.concat_rows(per_sweep), net.cfg.grid.dims4, keys=prep.keys4)
    out = net.forward(f4d, prep.plan, training, counter)
    voxel_slice = net.current_slice(out)
    cur = len(prep.sweep_maps) - 2 if len(prep.sweep_maps) > 1 else 0
    f_p_cur = ad.slice_rows(f_p, *prep.feat_slices[cur])
    return net.point_head(voxel_slice, f_p_cur, prep.sweep_maps[cur], training, counter)


def predict_scene(net: Network, scene: Scene) -> np.ndarray:
    """Inference: (N_current, 3) float32 flow, zeros on out-of-range rows."""
    prep = prepare_scene(net, scene)
    pred = forward_scene(net, prep, training=False)
    full = np.zeros((prep.n_current_points, 3), dtype=np.float32)
    full[prep.current_map.kept] = pred.data.astype(np.float32)
    return full


def scene_active_coords(scene: Scene, grid) -> tuple[np.ndarray, int, int]:
    """Active 4D coordinates plus point counts, without building features.

    Returns (coords4, total in-range points, current-sweep in-range points);
    enough structure for FLOP accounting.
    """
    ref_pose = scene.poses[-1]
    parts = []
    n_points = 0
    n_current = 0
    for i, pts in enumerate(scene.sweeps):
        pvmap = assign_voxels(warp_points(pts, scene.poses[i], ref_pose), grid)
        c4 = np.empty((pvmap.coords.shape[0], 4), dtype=np.int64)
        c4[:, :3] = pvmap.coords
        c4[:, 3] = i
        parts.append(c4)
        n_points += pvmap.kept.shape[0]
        if i == scene.current_index:
            n_current = pvmap.kept.shape[0]
    return np.concatenate(parts, axis=0), n_points, n_current
