"""Sparse 4D tensors and the submanifold convolution engine.

A sparse tensor stores only its active sites: integer coordinates (w,l,h,t)
plus a feature row per site. Coordinates are packed into 64-bit keys
(w:16, l:16, h:10, t:6 bits) so that sorting keys orders sites
lexicographically by (t,h,l,w); every tensor keeps its rows in that
canonical order, which fixes all accumulation orders and makes results
bitwise reproducible across runs and thread counts.

Convolution follows the kernel-map recipe: for every kernel offset collect
the (input_row, output_row) pairs that offset connects, then run
gather - GEMM - scatter per offset. Submanifold maps reuse the input
coordinate set as the output set, so site counts never grow with depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

_W_BITS, _L_BITS, _H_BITS, _T_BITS = 16, 16, 10, 6
_MAX_DIMS = (1 << _W_BITS, 1 << _L_BITS, 1 << _H_BITS, 1 << _T_BITS)


def pack3(w, l, h):
    """Pack 3D voxel coordinates; sorted keys order sites by (h,l,w)."""
    return (np.asarray(h, dtype=np.int64) << 32) | (np.asarray(l, dtype=np.int64) << 16) | np.asarray(w, dtype=np.int64)


def pack4(coords: np.ndarray) -> np.ndarray:
    """Pack (w,l,h,t) rows into one int64 key each."""
    c = np.asarray(coords, dtype=np.int64)
    return (c[:, 3] << 42) | (c[:, 2] << 32) | (c[:, 1] << 16) | c[:, 0]


def unpack4(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    out = np.empty((keys.shape[0], 4), dtype=np.int64)
    out[:, 0] = keys & 0xFFFF
    out[:, 1] = (keys >> 16) & 0xFFFF
    out[:, 2] = (keys >> 32) & 0x3FF
    out[:, 3] = keys >> 42
    return out


def lookup_rows(sorted_keys: np.ndarray, query_keys: np.ndarray) -> np.ndarray:
    """Row index of each query key in a strictly increasing key array, -1 if absent."""
    if sorted_keys.shape[0] == 0:
        return np.full(query_keys.shape[0], -1, dtype=np.int64)
    pos = np.searchsorted(sorted_keys, query_keys)
    pos_c = np.minimum(pos, sorted_keys.shape[0] - 1)
    found = sorted_keys[pos_c] == query_keys
    return np.where(found, pos_c, -1)


class SparseTensor4D:
    """Active sites of a W x L x H x T grid with C feature channels.

    ``features`` is an autodiff Tensor of shape (num_active, C); rows align
    with ``coords`` and are sorted by packed key.
    """

    __slots__ = ("coords", "features", "dims", "keys")

    def __init__(self, coords: np.ndarray, features: ad.Tensor, dims, keys: np.ndarray | None = None):
        self.coords = np.asarray(coords, dtype=np.int64).reshape(-1, 4)
        self.features = features if isinstance(features, ad.Tensor) else ad.Tensor(features)
        self.dims = tuple(int(d) for d in dims)
        if len(self.dims) != 4:
            raise ValueError("dims must be (W, L, H, T)")
        if any(d > m for d, m in zip(self.dims, _MAX_DIMS)):
            raise ValueError(f"dims {self.dims} exceed key packing capacity {_MAX_DIMS}")
        if self.features.data.shape[0] != self.coords.shape[0]:
            raise ValueError("feature rows must align with coordinates")
        if keys is None:
            self._check_coords()
            keys = pack4(self.coords)
            if np.any(np.diff(keys) <= 0):
                raise ValueError("coordinates must be unique and sorted by (t,h,l,w)")
        self.keys = keys

    def _check_coords(self):
        if self.coords.shape[0] and (
            self.coords.min() < 0 or np.any(self.coords >= np.asarray(self.dims))
        ):
            raise ValueError("coordinates out of range")

    @property
    def num_active(self) -> int:
        return self.coords.shape[0]

    @property
    def num_channels(self) -> int:
        return self.features.data.shape[1]

    def with_features(self, features: ad.Tensor) -> "SparseTensor4D":
        """Same active set, new feature rows."""
        return SparseTensor4D(self.coords, features, self.dims, keys=self.keys)


@dataclass
class SparseTensor3D:
    """One time slice: (w,l,h) coordinates plus features."""

    coords: np.ndarray
    features: ad.Tensor
    dims: tuple[int, int, int]

    @property
    def num_active(self) -> int:
        return self.coords.shape[0]


# ---------------------------------------------------------------------------
# kernel maps


def kernel_offsets(kernel_shape) -> np.ndarray:
    """Centered offsets in fixed lexicographic (w,l,h,t) order.

    Weight row k of a convolution belongs to offsets[k]; the center offset
    sits at index K//2 because every kernel dim is odd.
    """
    kw, kl, kh, kt = kernel_shape
    for k in (kw, kl, kh, kt):
        if k % 2 != 1 or k < 1:
            raise ValueError(f"kernel dims must be odd positive, got {kernel_shape}")
    grids = np.meshgrid(
        np.arange(kw) - kw // 2,
        np.arange(kl) - kl // 2,
        np.arange(kh) - kh // 2,
        np.arange(kt) - kt // 2,
        indexing="ij",
    )
    return np.stack([g.reshape(-1) for g in grids], axis=1).astype(np.int64)


@dataclass
class KernelMap:
    """Per-offset (in_row, out_row) pair lists for one tensor/kernel combo."""

    kernel_shape: tuple[int, int, int, int]
    offsets: np.ndarray  # (K, 4)
    in_rows: list[np.ndarray]
    out_rows: list[np.ndarray]
    num_sites: int

    @property
    def num_offsets(self) -> int:
        return self.offsets.shape[0]

    def pair_counts(self) -> np.ndarray:
        return np.asarray([r.shape[0] for r in self.in_rows], dtype=np.int64)


def build_kernel_map_subm(x: SparseTensor4D, kernel_shape) -> KernelMap:
    """Connectivity for a submanifold convolution on x's active set.

    A pair (i, j) appears under offset d exactly when
    coords[i] = coords[j] - d; the output set equals the input set, so the
    center offset always carries the identity pairing.
    """
    offsets = kernel_offsets(kernel_shape)
    coords = x.coords
    dims = np.asarray(x.dims)
    a = coords.shape[0]
    all_rows = np.arange(a, dtype=np.int64)
    in_rows: list[np.ndarray] = []
    out_rows: list[np.ndarray] = []
    for d in offsets:
        if not d.any():
            in_rows.append(all_rows)
            out_rows.append(all_rows)
            continue
        q = coords - d
        valid = np.all((q >= 0) & (q < dims), axis=1)
        rows_j = all_rows[valid]
        rows_i = lookup_rows(x.keys, pack4(q[valid]))
        hit = rows_i >= 0
        in_rows.append(rows_i[hit])
        out_rows.append(rows_j[hit])
    return KernelMap(tuple(kernel_shape), offsets, in_rows, out_rows, a)


def conv_subm(x: SparseTensor4D, weights: ad.Tensor, bias: ad.Tensor, kmap: KernelMap) -> SparseTensor4D:
    """Submanifold convolution: out[j] = bias + sum_d sum_(i,j) x[i] @ W[d].

    ``weights`` has shape (K, C_in, C_out) with rows aligned to
    kmap.offsets. Differentiable in x.features, weights and bias. Offsets
    are accumulated in enumeration order and each offset touches every
    output row at most once, so results are exactly reproducible.
    """
    feats = x.features
    a, c_in = feats.data.shape
    k, w_cin, c_out = weights.data.shape
    if w_cin != c_in:
        raise ValueError(f"weights expect {w_cin} input channels, tensor has {c_in}")
    if k != kmap.num_offsets:
        raise ValueError(f"kernel map has {kmap.num_offsets} offsets, weights {k}")
    if a != kmap.num_sites:
        raise ValueError("kernel map was built for a different active set")
    out_dtype = np.result_type(feats.data.dtype, weights.data.dtype)
    out = np.empty((a, c_out), dtype=out_dtype)
    out[:] = bias.data
    for ki in range(k):
        ii = kmap.in_rows[ki]
        if ii.shape[0] == 0:
            continue
        # The builder aliases in_rows/out_rows to one arange for the center
        # offset; that identity pairing covers every site, so skipping the
        # gather/scatter there saves two full copies of the feature matrix.
        if ii is kmap.out_rows[ki]:
            out += feats.data @ weights.data[ki]
        else:
            out[kmap.out_rows[ki]] += feats.data[ii] @ weights.data[ki]
    y = ad.Tensor(out)
    if ad.active_tape() is not None:
        x_data, w_data = feats.data, weights.data

        def bwd(g):
            dx = np.zeros(x_data.shape, dtype=g.dtype)
            dw = np.empty(w_data.shape, dtype=g.dtype)
            for ki in range(k):
                ii = kmap.in_rows[ki]
                if ii.shape[0] == 0:
                    dw[ki] = 0.0
                    continue
                if ii is kmap.out_rows[ki]:
                    dw[ki] = x_data.T @ g
                    dx += g @ w_data[ki].T
                else:
                    gj = g[kmap.out_rows[ki]]
                    dw[ki] = x_data[ii].T @ gj
                    dx[ii] += gj @ w_data[ki].T
            return (dx, dw, g.sum(axis=0))

        ad.record(y, (feats, weights, bias), bwd)
    return x.with_features(y)


# ---------------------------------------------------------------------------
# pooling / unpooling


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass
class PoolPlan:
    """Structure of one mean-pooling step, reusable across feature passes."""

    stride: tuple[int, int, int, int]
    coords: np.ndarray  # parent coordinates, canonical order
    keys: np.ndarray
    dims: tuple[int, int, int, int]
    order: np.ndarray  # CSR grouping of child rows by parent
    starts: np.ndarray
    counts: np.ndarray


def plan_pool(x: SparseTensor4D, stride) -> PoolPlan:
    stride = tuple(int(s) for s in stride)
    if any(s not in (1, 2) for s in stride):
        raise ValueError(f"stride components must be 1 or 2, got {stride}")
    parent_of_child = x.coords // np.asarray(stride, dtype=np.int64)
    keys, inverse = np.unique(pack4(parent_of_child), return_inverse=True)
    counts = np.bincount(inverse, minlength=keys.shape[0]).astype(np.int64)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1])) if counts.size else np.zeros(0, dtype=np.int64)
    order = np.argsort(inverse, kind="stable")
    dims = tuple(_ceil_div(d, s) for d, s in zip(x.dims, stride))
    return PoolPlan(stride, unpack4(keys), keys, dims, order, starts, counts)


def apply_pool(x: SparseTensor4D, plan: PoolPlan) -> SparseTensor4D:
    feats = ad.segment_mean(x.features, plan.order, plan.starts, plan.counts)
    return SparseTensor4D(plan.coords, feats, plan.dims, keys=plan.keys)


def pool_down(x: SparseTensor4D, stride) -> SparseTensor4D:
    """Mean over the active children of each parent cell (parameter-free)."""
    return apply_pool(x, plan_pool(x, stride))


@dataclass
class UpPlan:
    """Structure of one nearest-neighbor unpooling step."""

    stride: tuple[int, int, int, int]
    target_coords: np.ndarray
    target_keys: np.ndarray
    dims: tuple[int, int, int, int]
    parent_rows: np.ndarray  # row into the coarse tensor, -1 when absent
    valid: np.ndarray


def plan_up(coarse: SparseTensor4D, target_coords: np.ndarray, target_dims) -> UpPlan:
    """Match each target site to its parent floor(coord/stride) in coarse."""
    target_coords = np.asarray(target_coords, dtype=np.int64)
    stride = tuple(_ceil_div(d, c) for d, c in zip(target_dims, coarse.dims))
    if any(s not in (1, 2) for s in stride):
        raise ValueError(f"implied stride {stride} unsupported")
    parent = target_coords // np.asarray(stride, dtype=np.int64)
    rows = lookup_rows(coarse.keys, pack4(parent))
    return UpPlan(
        stride,
        target_coords,
        pack4(target_coords),
        tuple(int(d) for d in target_dims),
        rows,
        rows >= 0,
    )


def apply_up(coarse: SparseTensor4D, plan: UpPlan) -> SparseTensor4D:
    feats = coarse.features
    safe = np.where(plan.valid, plan.parent_rows, 0)
    data = feats.data[safe].copy()
    data[~plan.valid] = 0
    out = ad.Tensor(data)
    if ad.active_tape() is not None:
        n = feats.data.shape[0]
        scatter = safe[plan.valid]
        keep = plan.valid

        def bwd(g):
            gx = np.zeros((n,) + g.shape[1:], dtype=g.dtype)
            np.add.at(gx, scatter, g[keep])
            return (gx,)

        ad.record(out, (feats,), bwd)
    return SparseTensor4D(plan.target_coords, out, plan.dims, keys=plan.target_keys)


def up_sample(coarse: SparseTensor4D, target_coords: np.ndarray, target_dims) -> SparseTensor4D:
    """Copy each parent's feature onto its recorded finer-level children."""
    return apply_up(coarse, plan_up(coarse, target_coords, target_dims))


def slice_time(x: SparseTensor4D, t_index: int) -> SparseTensor3D:
    """Rows with coords.t == t_index, time column dropped.

    Canonical key order is t-major, so the slice is one contiguous row range.
    """
    if not 0 <= t_index < x.dims[3]:
        raise ValueError(f"t_index {t_index} outside [0, {x.dims[3]})")
    start = int(np.searchsorted(x.keys, np.int64(t_index) << 42))
    stop = int(np.searchsorted(x.keys, np.int64(t_index + 1) << 42))
    feats = ad.slice_rows(x.features, start, stop)
    return SparseTensor3D(x.coords[start:stop, :3].copy(), feats, x.dims[:3])
