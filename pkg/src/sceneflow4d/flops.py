"""Analytic FLOP accounting driven by kernel-map pair counts.

Convolutions cost 2 * C_in * C_out * (total gather/scatter pairs), linear
layers 2 * N * in * out, batch norm 2 per element, ReLU 1 per element.
Counts are exact integers derived from the scene's active coordinates, not
timings, so reports are deterministic for a fixed input sparsity.

:class:`FlopCounter` implements the counter protocol the network's forward
pass accepts, which lets tests verify that this module's standalone
traversal and an instrumented forward pass agree call for call.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .nn import BlockParams, Network, NetworkConfig, block_unit_specs
from .sparse import KernelMap, SparseTensor4D


@dataclass
class LayerCost:
    name: str
    op: str  # conv | linear | bn | relu
    flops: int


class FlopCounter:
    """Accumulates per-layer costs; usable as a forward-pass counter."""

    def __init__(self):
        self.layers: list[LayerCost] = []

    def conv(self, name: str, kmap: KernelMap, rows: int, c_in: int, c_out: int, bn: bool = True, relu: bool = True):
        pairs = int(kmap.pair_counts().sum())
        self.layers.append(LayerCost(name, "conv", 2 * c_in * c_out * pairs))
        if bn:
            self.layers.append(LayerCost(f"{name}.bn", "bn", 2 * rows * c_out))
        if relu:
            self.layers.append(LayerCost(f"{name}.relu", "relu", rows * c_out))

    def linear(self, name: str, rows: int, c_in: int, c_out: int, bn: bool = False, relu: bool = False):
        self.layers.append(LayerCost(name, "linear", 2 * rows * c_in * c_out))
        if bn:
            self.layers.append(LayerCost(f"{name}.bn", "bn", 2 * rows * c_out))
        if relu:
            self.layers.append(LayerCost(f"{name}.relu", "relu", rows * c_out))

    def relu(self, name: str, elems: int):
        self.layers.append(LayerCost(name, "relu", int(elems)))

    def report(self) -> "FlopReport":
        return FlopReport(self.layers)


@dataclass
class FlopReport:
    layers: list[LayerCost]

    @property
    def total(self) -> int:
        return sum(l.flops for l in self.layers)

    def by_op(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for l in self.layers:
            out[l.op] = out.get(l.op, 0) + l.flops
        return out

    def write_csv(self, f) -> None:
        writer = csv.writer(f)
        writer.writerow(["layer", "op", "flops"])
        for l in self.layers:
            writer.writerow([l.name, l.op, l.flops])
        writer.writerow(["total", "", self.total])


def _walk_block(counter: FlopCounter, bp: BlockParams, level: int, plan, rows: int):
    for spec in block_unit_specs(bp.kind, bp.in_ch, bp.x, bp.y):
        unit = bp.units[spec.role]
        counter.conv(unit.name, plan.kmap(level, unit.kernel_shape), rows, unit.c_in, unit.c_out, bn=True, relu=spec.relu)
    counter.relu(f"{bp.name}.res_relu", rows * bp.y)


def count_flops(
    cfg: NetworkConfig,
    coords4: np.ndarray | SparseTensor4D,
    n_points: int = 0,
    n_current_points: int = 0,
) -> FlopReport:
    """Cost of one forward pass over the given active set.

    ``n_points`` (total in-range points across sweeps) prices the voxel
    feature encoder and ``n_current_points`` the point head; both default
    to zero so grid-only comparisons need no point data.
    """
    if isinstance(coords4, SparseTensor4D):
        coords4 = coords4.coords
    net = Network(cfg, seed=0)
    plan = net.build_plan(coords4)
    counter = FlopCounter()
    if n_points:
        for i, layer in enumerate(net.vfe):
            counter.linear(f"vfe.{i}", n_points, layer.w.data.shape[0], layer.w.data.shape[1], bn=True, relu=True)
    rows_at = lambda level: plan.levels[level].num_active
    for si, blocks in enumerate(net.enc_blocks):
        for bp in blocks:
            _walk_block(counter, bp, si, plan, rows_at(si))
    mid_level = len(net.enc_blocks)
    for bp in net.mid_blocks:
        _walk_block(counter, bp, mid_level, plan, rows_at(mid_level))
    for di, blocks in enumerate(net.dec_blocks):
        level = mid_level - 1 - di
        proj = net.skip_projs[di]
        if proj is not None:
            counter.conv(proj.name, plan.kmap(level, proj.kernel_shape), rows_at(level), proj.c_in, proj.c_out, bn=True, relu=False)
        for bp in blocks:
            _walk_block(counter, bp, level, plan, rows_at(level))
    if n_current_points:
        counter.linear("head.l1", n_current_points, net.head_w1.data.shape[0], net.head_w1.data.shape[1], relu=True)
        counter.linear("head.l2", n_current_points, net.head_w2.data.shape[0], net.head_w2.data.shape[1])
    return counter.report()


def compare_block_kinds(cfg: NetworkConfig, coords4, kinds=("conv4d", "stdb_b", "stdb_p", "stdb_d")) -> dict[str, int]:
    """Total forward FLOPs per block kind on the same active set."""
    return {kind: count_flops(replace(cfg, block_kind=kind), coords4).total for kind in kinds}
