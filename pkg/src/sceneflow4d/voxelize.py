"""Point-cloud voxelization and the voxel feature encoder.

Each warped sweep is binned into a regular 3D grid, every in-range point is
decorated with offsets from its voxel center and from its voxel's point
centroid (9 raw features), a shared linear+BN+ReLU encoder lifts those to 16
channels, and voxel features are the mean over member points. Sweeps are
then stacked along a time axis into one sparse 4D tensor.

Active voxels are kept sorted lexicographically by (t, h, l, w) so that
every downstream structure (kernel maps, pooling trees, checkpoint-relevant
summation order) is reproducible byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .sparse import SparseTensor4D, pack3


@dataclass(frozen=True)
class GridConfig:
    """Geometry of the voxel grid shared by all sweeps of a scene."""

    origin: tuple[float, float, float]
    voxel_size: tuple[float, float, float]
    dims: tuple[int, int, int]  # (W, L, H)
    num_timesteps: int

    def __post_init__(self):
        assert all(v > 0 for v in self.voxel_size)
        assert all(d > 0 for d in self.dims)
        assert self.num_timesteps > 0

    @property
    def dims4(self) -> tuple[int, int, int, int]:
        return (*self.dims, self.num_timesteps)

    @property
    def extent(self) -> np.ndarray:
        """Coverage size in meters per axis."""
        return np.asarray(self.dims) * np.asarray(self.voxel_size)

    @staticmethod
    def default_full() -> "GridConfig":
        return GridConfig(
            origin=(-51.2, -51.2, -3.2),
            voxel_size=(0.2, 0.2, 0.2),
            dims=(512, 512, 32),
            num_timesteps=5,
        )

    @staticmethod
    def from_dict(d: dict) -> "GridConfig":
        return GridConfig(
            origin=tuple(d["origin"]),
            voxel_size=tuple(d["voxel_size"]),
            dims=tuple(d["dims"]),
            num_timesteps=int(d["num_timesteps"]),
        )

    def to_dict(self) -> dict:
        return {
            "origin": list(self.origin),
            "voxel_size": list(self.voxel_size),
            "dims": list(self.dims),
            "num_timesteps": self.num_timesteps,
        }


@dataclass
class PointVoxelMap:
    """Assignment of one sweep's points to active voxels.

    ``voxel_of_point`` holds -1 for out-of-range points. ``kept`` indexes the
    in-range points in their original order; ``voxel_of_kept`` gives each
    kept point's row into ``coords``. ``order``/``starts``/``counts`` form a
    CSR grouping of kept-point rows by voxel, used for fixed-order means.
    """

    voxel_of_point: np.ndarray  # (N,) int64, -1 sentinel
    coords: np.ndarray  # (A, 3) int64 (w, l, h), sorted by (h, l, w)
    kept: np.ndarray  # (M,) indices into the original cloud
    voxel_of_kept: np.ndarray  # (M,) int64
    order: np.ndarray  # (M,) permutation grouping kept rows by voxel
    starts: np.ndarray  # (A,)
    counts: np.ndarray  # (A,)

    @property
    def num_active(self) -> int:
        return self.coords.shape[0]


def assign_voxels(points: np.ndarray, grid: GridConfig) -> PointVoxelMap:
    """Bin points into voxels: index = floor((p - origin) / voxel_size).

    Points falling outside [0, dims) on any axis get the -1 sentinel and are
    excluded from the active set.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    origin = np.asarray(grid.origin)
    size = np.asarray(grid.voxel_size)
    dims = np.asarray(grid.dims)
    idx = np.floor((points - origin) / size).astype(np.int64)
    in_range = np.all((points >= origin) & (points < origin + dims * size), axis=1)
    # guard float roundoff at the upper face
    idx = np.minimum(np.maximum(idx, 0), dims - 1)

    kept = np.flatnonzero(in_range)
    keys = pack3(idx[kept, 0], idx[kept, 1], idx[kept, 2])
    uniq, inverse = np.unique(keys, return_inverse=True)
    coords = np.empty((uniq.shape[0], 3), dtype=np.int64)
    coords[:, 0] = uniq & 0xFFFF
    coords[:, 1] = (uniq >> 16) & 0xFFFF
    coords[:, 2] = uniq >> 32

    voxel_of_point = np.full(points.shape[0], -1, dtype=np.int64)
    voxel_of_point[kept] = inverse
    order = np.argsort(inverse, kind="stable")
    counts = np.bincount(inverse, minlength=coords.shape[0]).astype(np.int64)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1])) if counts.size else np.zeros(0, dtype=np.int64)
    return PointVoxelMap(voxel_of_point, coords, kept, inverse, order, starts, counts)


def build_point_features(points: np.ndarray, pvmap: PointVoxelMap, grid: GridConfig, dtype=np.float32) -> np.ndarray:
    """Raw 9 features per in-range point.

    Columns: (x, y, z, offsets from the voxel geometric center, offsets from
    the mean of points sharing the voxel).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    xyz = points[pvmap.kept]
    origin = np.asarray(grid.origin)
    size = np.asarray(grid.voxel_size)
    centers = origin + (pvmap.coords[pvmap.voxel_of_kept] + 0.5) * size
    if xyz.shape[0]:
        sums = np.add.reduceat(xyz[pvmap.order], pvmap.starts, axis=0)
        cluster = sums / pvmap.counts[:, None]
        cluster_of_point = cluster[pvmap.voxel_of_kept]
    else:
        cluster_of_point = xyz
    return np.concatenate([xyz, xyz - centers, xyz - cluster_of_point], axis=1).astype(dtype)


@dataclass
class VfeLayer:
    """One linear + BN + ReLU stage of the voxel feature encoder."""

    w: ad.Tensor
    b: ad.Tensor
    gamma: ad.Tensor
    beta: ad.Tensor
    bn: ad.BatchNormState


def encode_vfe(raw: ad.Tensor, layers: list[VfeLayer], training: bool) -> ad.Tensor:
    """Lift raw point features to the encoder width; all outputs >= 0."""
    x = raw
    for layer in layers:
        x = ad.relu(ad.batch_norm(ad.linear(x, layer.w, layer.b), layer.gamma, layer.beta, layer.bn, training))
    return x


def pool_to_voxels(f_p: ad.Tensor, pvmap: PointVoxelMap) -> ad.Tensor:
    """Average member-point features into each active voxel (fixed order)."""
    return ad.segment_mean(f_p, pvmap.order, pvmap.starts, pvmap.counts)


def fuse_temporal(per_sweep: list[tuple[np.ndarray, ad.Tensor]], grid: GridConfig) -> SparseTensor4D:
    """Stack per-sweep voxel features along the time axis.

    ``per_sweep[τ]`` is (coords A_τ x 3, features A_τ x C) for time index τ.
    No cross-time mixing happens here; features are copied verbatim and the
    4D active set is the union of per-sweep sites tagged with their τ.
    """
    if len(per_sweep) != grid.num_timesteps:
        raise ValueError(f"expected {grid.num_timesteps} sweeps, got {len(per_sweep)}")
    coord_parts = []
    feat_parts = []
    for tau, (coords3, feats) in enumerate(per_sweep):
        c4 = np.empty((coords3.shape[0], 4), dtype=np.int64)
        c4[:, :3] = coords3
        c4[:, 3] = tau
        coord_parts.append(c4)
        feat_parts.append(feats)
    coords4 = np.concatenate(coord_parts, axis=0)
    features = ad.concat_rows(feat_parts)
    return SparseTensor4D(coords4, features, grid.dims4)
