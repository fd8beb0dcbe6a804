"""Dense reference implementations, used only by tests.

Everything here is deliberately naive (python loops over cells and kernel
offsets) so it cannot share bugs with the optimized sparse engine. Grids
are capped at 16x16x16x8 cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .sparse import SparseTensor4D, kernel_offsets, pack4

_MAX_ORACLE_DIMS = (16, 16, 16, 8)


def _check_dims(dims):
    if any(d > m for d, m in zip(dims, _MAX_ORACLE_DIMS)):
        raise ValueError(f"dims {tuple(dims)} exceed oracle bound {_MAX_ORACLE_DIMS}")


@dataclass
class DenseTensor4D:
    """Full W x L x H x T x C array plus an occupancy mask."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        assert self.values.shape[:4] == self.mask.shape
        assert not np.any(self.values[~self.mask])


def to_dense(x: SparseTensor4D) -> DenseTensor4D:
    _check_dims(x.dims)
    c = x.num_channels
    values = np.zeros(x.dims + (c,), dtype=x.features.data.dtype)
    mask = np.zeros(x.dims, dtype=bool)
    w, l, h, t = x.coords.T
    values[w, l, h, t] = x.features.data
    mask[w, l, h, t] = True
    return DenseTensor4D(values, mask)


def from_dense(d: DenseTensor4D, dims=None) -> SparseTensor4D:
    dims = d.mask.shape if dims is None else dims
    _check_dims(dims)
    coords = np.argwhere(d.mask).astype(np.int64)
    order = np.argsort(pack4(coords))
    coords = coords[order]
    feats = d.values[coords[:, 0], coords[:, 1], coords[:, 2], coords[:, 3]]
    return SparseTensor4D(coords, ad.Tensor(feats), dims)


def dense_conv4d(
    d: DenseTensor4D,
    weights: np.ndarray,
    bias: np.ndarray,
    kernel_shape,
    submanifold: bool = True,
) -> DenseTensor4D:
    """Zero-padded convolution: out[p] = bias + sum_d in[p - d] @ W[d].

    Weight rows follow the same offset enumeration as the sparse engine.
    With the submanifold flag the output is restricted to the input
    occupancy; without it every cell gets a (biased) output.
    """
    _check_dims(d.mask.shape)
    offsets = kernel_offsets(kernel_shape)
    wdim, ldim, hdim, tdim = d.mask.shape
    c_out = weights.shape[2]
    out_vals = np.zeros(d.mask.shape + (c_out,), dtype=np.result_type(d.values.dtype, weights.dtype))
    out_mask = d.mask.copy() if submanifold else np.ones(d.mask.shape, dtype=bool)
    for w in range(wdim):
        for l in range(ldim):
            for h in range(hdim):
                for t in range(tdim):
                    if not out_mask[w, l, h, t]:
                        continue
                    acc = bias.astype(out_vals.dtype).copy()
                    for k, (dw, dl, dh, dt) in enumerate(offsets):
                        sw, sl, sh, st = w - dw, l - dl, h - dh, t - dt
                        if not (0 <= sw < wdim and 0 <= sl < ldim and 0 <= sh < hdim and 0 <= st < tdim):
                            continue
                        if not d.mask[sw, sl, sh, st]:
                            continue
                        acc = acc + d.values[sw, sl, sh, st] @ weights[k]
                    out_vals[w, l, h, t] = acc
    return DenseTensor4D(out_vals, out_mask)


def dense_bn(d: DenseTensor4D, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> DenseTensor4D:
    """Training-mode batch norm over the occupied cells."""
    rows = d.values[d.mask]
    mu = rows.mean(axis=0)
    var = rows.var(axis=0)
    out = np.zeros_like(d.values)
    out[d.mask] = (rows - mu) / np.sqrt(var + eps) * gamma + beta
    return DenseTensor4D(out, d.mask.copy())


def dense_relu(d: DenseTensor4D) -> DenseTensor4D:
    return DenseTensor4D(np.maximum(d.values, 0.0), d.mask.copy())


def brute_force_kernel_map(coords: np.ndarray, kernel_shape, dims) -> dict[int, set[tuple[int, int]]]:
    """All-pairs neighbor scan; returns offset index -> set of (in, out) pairs."""
    _check_dims(dims)
    offsets = kernel_offsets(kernel_shape).tolist()
    rows = [tuple(c) for c in np.asarray(coords, dtype=np.int64).tolist()]
    pairs: dict[int, set[tuple[int, int]]] = {k: set() for k in range(len(offsets))}
    for k, d in enumerate(offsets):
        for j, cj in enumerate(rows):
            target = (cj[0] - d[0], cj[1] - d[1], cj[2] - d[2], cj[3] - d[3])
            for i, ci in enumerate(rows):
                if ci == target:
                    pairs[k].add((i, j))
    return pairs
