"""Network building blocks and the sparse 4D hourglass.

Four interchangeable block kinds share one residual skeleton (final ReLU
after the residual add, 1x1x1x1 projection when channels change):

- conv4d: two full 3x3x3x3 convolutions, BN+ReLU each.
- stdb_b: spatial 3x3x3x1 then temporal 1x1x1x3, run sequentially.
- stdb_p: two sets; each set runs spatial and temporal convs on the same
  input in parallel, sums them, and fuses with a 1x1x1x1 conv (BN+ReLU).
- stdb_d: one spatial-then-temporal branch and one temporal-then-spatial
  branch, summed and fused with a 1x1x1x1 conv.

The hourglass runs two blocks per encoder stage (then mean-pool), two at
the bottleneck, and one per decoder stage after nearest-neighbor unpooling
onto the recorded encoder coordinates plus an additive skip connection.

Anything that depends only on the active coordinate set (kernel maps, pool
and unpool indices) lives in a :class:`NetworkPlan` so repeated passes over
one scene pay the structural cost once.

Forward passes optionally report work to a counter object with methods
``conv(name, kmap, rows, c_in, c_out, bn, relu)``,
``linear(name, rows, c_in, c_out, bn, relu)`` and ``relu(name, elems)``;
the analytic FLOP module implements this protocol and cross-checks its
standalone traversal against an instrumented pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .sparse import (
    KernelMap,
    SparseTensor3D,
    SparseTensor4D,
    apply_pool,
    apply_up,
    build_kernel_map_subm,
    conv_subm,
    plan_pool,
    plan_up,
    slice_time,
)
from .voxelize import GridConfig, PointVoxelMap, VfeLayer, encode_vfe

K_FULL = (3, 3, 3, 3)
K_SPATIAL = (3, 3, 3, 1)
K_TEMPORAL = (1, 1, 1, 3)
K_POINT = (1, 1, 1, 1)

BLOCK_KINDS = ("conv4d", "stdb_b", "stdb_p", "stdb_d")


@dataclass(frozen=True)
class UnitSpec:
    """One convolution of a block: role name, kernel, channels, trailing ReLU."""

    role: str
    kernel_shape: tuple[int, int, int, int]
    c_in: int
    c_out: int
    relu: bool


def block_unit_specs(kind: str, in_ch: int, x: int, y: int) -> list[UnitSpec]:
    """Convolution inventory of one block; drives parameter creation and
    FLOP accounting, so wiring and bookkeeping cannot drift apart."""
    if kind == "conv4d":
        units = [
            UnitSpec("c1", K_FULL, in_ch, x, True),
            UnitSpec("c2", K_FULL, x, y, True),
        ]
    elif kind == "stdb_b":
        units = [
            UnitSpec("sp", K_SPATIAL, in_ch, x, True),
            UnitSpec("tp", K_TEMPORAL, x, y, True),
        ]
    elif kind == "stdb_p":
        units = [
            UnitSpec("s1_sp", K_SPATIAL, in_ch, x, True),
            UnitSpec("s1_tp", K_TEMPORAL, in_ch, x, True),
            UnitSpec("s1_fuse", K_POINT, x, x, True),
            UnitSpec("s2_sp", K_SPATIAL, x, y, True),
            UnitSpec("s2_tp", K_TEMPORAL, x, y, True),
            UnitSpec("s2_fuse", K_POINT, y, y, True),
        ]
    elif kind == "stdb_d":
        units = [
            UnitSpec("a_sp", K_SPATIAL, in_ch, x, True),
            UnitSpec("a_tp", K_TEMPORAL, x, y, True),
            UnitSpec("b_tp", K_TEMPORAL, in_ch, x, True),
            UnitSpec("b_sp", K_SPATIAL, x, y, True),
            UnitSpec("fuse", K_POINT, y, y, True),
        ]
    else:
        raise ValueError(f"unknown block kind {kind!r}")
    if in_ch != y:
        units.append(UnitSpec("proj", K_POINT, in_ch, y, False))
    return units


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class StageSpec:
    """Blocks of one stage plus the resample that follows them."""

    blocks: tuple[tuple[int, int], ...]
    pool: tuple[int, int, int, int] | None = None
    up: tuple[int, int, int, int] | None = None

    def to_dict(self):
        return {
            "blocks": [list(b) for b in self.blocks],
            "pool": list(self.pool) if self.pool else None,
            "up": list(self.up) if self.up else None,
        }

    @staticmethod
    def from_dict(d):
        return StageSpec(
            blocks=tuple(tuple(b) for b in d["blocks"]),
            pool=tuple(d["pool"]) if d.get("pool") else None,
            up=tuple(d["up"]) if d.get("up") else None,
        )


def default_stage_plan() -> tuple[list[StageSpec], StageSpec, list[StageSpec]]:
    """Encoder / bottleneck / decoder channel and stride plan (full scale:
    16ch input at (512,512,32,5) down to 64ch at (32,32,4,5) and back)."""
    encoder = [
        StageSpec(((16, 32), (32, 32)), pool=(2, 2, 2, 1)),
        StageSpec(((32, 64), (64, 64)), pool=(2, 2, 2, 1)),
        StageSpec(((64, 64), (64, 64)), pool=(2, 2, 2, 1)),
        StageSpec(((64, 64), (64, 64)), pool=(2, 2, 1, 1)),
    ]
    bottleneck = StageSpec(((64, 64), (64, 64)), up=(2, 2, 1, 1))
    decoder = [
        StageSpec(((64, 64),), up=(2, 2, 2, 1)),
        StageSpec(((64, 64),), up=(2, 2, 2, 1)),
        StageSpec(((64, 64),), up=(2, 2, 2, 1)),
        StageSpec(((32, 16),)),
    ]
    return encoder, bottleneck, decoder


@dataclass
class PointHeadConfig:
    voxel_ch: int = 16
    point_ch: int = 16
    hidden: int = 32
    out: int = 3


@dataclass
class NetworkConfig:
    grid: GridConfig
    block_kind: str = "stdb_p"
    vfe_width: int = 16
    vfe_layers: int = 1
    raw_point_dim: int = 9
    point_hidden: int = 32
    encoder: list[StageSpec] = field(default_factory=list)
    bottleneck: StageSpec | None = None
    decoder: list[StageSpec] = field(default_factory=list)

    def __post_init__(self):
        if self.block_kind not in BLOCK_KINDS:
            raise ValueError(f"block_kind must be one of {BLOCK_KINDS}")
        if not self.encoder:
            self.encoder, self.bottleneck, self.decoder = default_stage_plan()
        if len(self.encoder) != len(self.decoder):
            raise ValueError("encoder and decoder must pair up stage for stage")
        for s in self.encoder:
            if s.pool is None or s.pool[3] != 1:
                raise ValueError("encoder stages must pool and never stride time")
        if self.bottleneck.up is None:
            raise ValueError("bottleneck must upsample")

    def stream_channels(self) -> list[int]:
        """Channel width entering each stage (encoder, bottleneck, decoder)."""
        chans = [self.vfe_width]
        c = self.vfe_width
        for s in self.encoder + [self.bottleneck] + self.decoder:
            for _, y in s.blocks:
                c = y
            chans.append(c)
        return chans

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "block_kind": self.block_kind,
            "vfe_width": self.vfe_width,
            "vfe_layers": self.vfe_layers,
            "raw_point_dim": self.raw_point_dim,
            "point_hidden": self.point_hidden,
            "encoder": [s.to_dict() for s in self.encoder],
            "bottleneck": self.bottleneck.to_dict(),
            "decoder": [s.to_dict() for s in self.decoder],
        }

    @staticmethod
    def from_dict(d: dict) -> "NetworkConfig":
        return NetworkConfig(
            grid=GridConfig.from_dict(d["grid"]),
            block_kind=d.get("block_kind", "stdb_p"),
            vfe_width=d.get("vfe_width", 16),
            vfe_layers=d.get("vfe_layers", 1),
            raw_point_dim=d.get("raw_point_dim", 9),
            point_hidden=d.get("point_hidden", 32),
            encoder=[StageSpec.from_dict(s) for s in d["encoder"]] if "encoder" in d else [],
            bottleneck=StageSpec.from_dict(d["bottleneck"]) if "bottleneck" in d else None,
            decoder=[StageSpec.from_dict(s) for s in d["decoder"]] if "decoder" in d else [],
        )


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ConvUnit:
    name: str
    kernel_shape: tuple[int, int, int, int]
    c_in: int
    c_out: int
    w: ad.Tensor
    b: ad.Tensor
    gamma: ad.Tensor
    beta: ad.Tensor
    bn: ad.BatchNormState


class _ParamBuilder:
    """Creates fresh seeded parameters, or binds to a loaded store."""

    def __init__(self, store: ad.ParamStore, rng, dtype, fresh: bool):
        self.store = store
        self.rng = rng
        self.dtype = dtype
        self.fresh = fresh

    def _param(self, name, shape, init_fn):
        if self.fresh:
            return self.store.create(name, init_fn().astype(self.dtype))
        t = self.store.params.get(name)
        if t is None or t.data.shape != tuple(shape):
            raise ValueError(f"store missing or mismatched parameter {name!r}")
        return t

    def weight(self, name, shape, fan_in):
        std = np.sqrt(2.0 / fan_in)
        return self._param(name, shape, lambda: self.rng.standard_normal(shape) * std)

    def zeros(self, name, shape):
        return self._param(name, shape, lambda: np.zeros(shape))

    def ones(self, name, shape):
        return self._param(name, shape, lambda: np.ones(shape))

    def bn_state(self, prefix, ch) -> ad.BatchNormState:
        mean_name, var_name = f"{prefix}.running_mean", f"{prefix}.running_var"
        if self.fresh:
            mean = self.store.create_buffer(mean_name, np.zeros(ch, dtype=self.dtype))
            var = self.store.create_buffer(var_name, np.ones(ch, dtype=self.dtype))
        else:
            mean, var = self.store.buffers[mean_name], self.store.buffers[var_name]
        return ad.BatchNormState(running_mean=mean, running_var=var)

    def conv_unit(self, name, kernel_shape, c_in, c_out) -> ConvUnit:
        k = int(np.prod(kernel_shape))
        return ConvUnit(
            name,
            tuple(kernel_shape),
            c_in,
            c_out,
            w=self.weight(f"{name}.w", (k, c_in, c_out), fan_in=k * c_in),
            b=self.zeros(f"{name}.b", (c_out,)),
            gamma=self.ones(f"{name}.gamma", (c_out,)),
            beta=self.zeros(f"{name}.beta", (c_out,)),
            bn=self.bn_state(f"{name}.bn", c_out),
        )


@dataclass
class BlockParams:
    name: str
    kind: str
    in_ch: int
    x: int
    y: int
    units: dict[str, ConvUnit]

    @property
    def proj(self) -> ConvUnit | None:
        return self.units.get("proj")


def _build_block(builder: _ParamBuilder, prefix: str, kind: str, in_ch: int, x: int, y: int) -> BlockParams:
    units = {
        spec.role: builder.conv_unit(f"{prefix}.{spec.role}", spec.kernel_shape, spec.c_in, spec.c_out)
        for spec in block_unit_specs(kind, in_ch, x, y)
    }
    return BlockParams(prefix, kind, in_ch, x, y, units)


# ---------------------------------------------------------------------------
# per-scene structure


class NetworkPlan:
    """Coordinate sets, kernel maps and resampling indices for one scene."""

    def __init__(self, levels: list[SparseTensor4D], pools, ups):
        self.levels = levels
        self.pools = pools
        self.ups = ups
        self._kmaps: dict[tuple[int, tuple], KernelMap] = {}

    def kmap(self, level: int, kernel_shape) -> KernelMap:
        key = (level, tuple(kernel_shape))
        if key not in self._kmaps:
            self._kmaps[key] = build_kernel_map_subm(self.levels[level], kernel_shape)
        return self._kmaps[key]


# ---------------------------------------------------------------------------
# the network


class Network:
    """Hourglass over a sparse 4D grid plus point encoder and point head."""

    def __init__(self, cfg: NetworkConfig, store: ad.ParamStore | None = None, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        fresh = store is None
        self.store = ad.ParamStore() if fresh else store
        b = _ParamBuilder(self.store, np.random.default_rng(seed), dtype, fresh)

        self.vfe: list[VfeLayer] = []
        c = cfg.raw_point_dim
        for i in range(cfg.vfe_layers):
            name = f"vfe.{i}"
            self.vfe.append(
                VfeLayer(
                    w=b.weight(f"{name}.w", (c, cfg.vfe_width), fan_in=c),
                    b=b.zeros(f"{name}.b", (cfg.vfe_width,)),
                    gamma=b.ones(f"{name}.gamma", (cfg.vfe_width,)),
                    beta=b.zeros(f"{name}.beta", (cfg.vfe_width,)),
                    bn=b.bn_state(f"{name}.bn", cfg.vfe_width),
                )
            )
            c = cfg.vfe_width

        kind = cfg.block_kind
        c = cfg.vfe_width
        self.enc_blocks: list[list[BlockParams]] = []
        for si, stage in enumerate(cfg.encoder):
            blocks = []
            for bi, (x, y) in enumerate(stage.blocks):
                blocks.append(_build_block(b, f"enc{si + 1}.b{bi}", kind, c, x, y))
                c = y
            self.enc_blocks.append(blocks)

        self.mid_blocks: list[BlockParams] = []
        for bi, (x, y) in enumerate(self.cfg.bottleneck.blocks):
            self.mid_blocks.append(_build_block(b, f"mid.b{bi}", kind, c, x, y))
            c = y

        self.dec_blocks: list[list[BlockParams]] = []
        self.skip_projs: list[ConvUnit | None] = []
        n_enc = len(cfg.encoder)
        for di, stage in enumerate(cfg.decoder):
            skip_ch = cfg.encoder[n_enc - 1 - di].blocks[-1][1]
            if skip_ch != c:
                self.skip_projs.append(b.conv_unit(f"dec{n_enc + 1 + di}.skip", K_POINT, skip_ch, c))
            else:
                self.skip_projs.append(None)
            blocks = []
            for bi, (x, y) in enumerate(stage.blocks):
                blocks.append(_build_block(b, f"dec{n_enc + 1 + di}.b{bi}", kind, c, x, y))
                c = y
            self.dec_blocks.append(blocks)
        self.out_channels = c

        hid, out = cfg.point_hidden, 3
        in_dim = cfg.vfe_width + self.out_channels
        self.head_w1 = b.weight("head.l1.w", (in_dim, hid), fan_in=in_dim)
        self.head_b1 = b.zeros("head.l1.b", (hid,))
        self.head_w2 = b.weight("head.l2.w", (hid, out), fan_in=hid)
        self.head_b2 = b.zeros("head.l2.b", (out,))

    # -- structure ---------------------------------------------------------

    def build_plan(self, coords0: np.ndarray, dims4=None) -> NetworkPlan:
        """Derive every coordinate-dependent structure from the input set."""
        dims4 = self.cfg.grid.dims4 if dims4 is None else tuple(dims4)
        zero = lambda n: ad.Tensor(np.zeros((n, 0), dtype=np.float32))
        level = SparseTensor4D(np.asarray(coords0, dtype=np.int64), zero(len(coords0)), dims4)
        levels = [level]
        pools = []
        for stage in self.cfg.encoder:
            plan = plan_pool(levels[-1], stage.pool)
            pools.append(plan)
            levels.append(SparseTensor4D(plan.coords, zero(len(plan.coords)), plan.dims, keys=plan.keys))
        ups = []
        for i in range(len(self.cfg.encoder)):
            coarse, fine = levels[-1 - i], levels[-2 - i]
            ups.append(plan_up(coarse, fine.coords, fine.dims))
        return NetworkPlan(levels, pools, ups)

    # -- numerics ----------------------------------------------------------

    def _conv_bn_relu(self, t: SparseTensor4D, unit: ConvUnit, level: int, plan: NetworkPlan, training, counter, relu=True):
        km = plan.kmap(level, unit.kernel_shape)
        y = conv_subm(t, unit.w, unit.b, km)
        f = ad.batch_norm(y.features, unit.gamma, unit.beta, unit.bn, training)
        if relu:
            f = ad.relu(f)
        if counter is not None:
            counter.conv(unit.name, km, t.num_active, unit.c_in, unit.c_out, bn=True, relu=relu)
        return y.with_features(f)

    def _run_block(self, t: SparseTensor4D, bp: BlockParams, level: int, plan: NetworkPlan, training, counter):
        cbr = lambda x, role: self._conv_bn_relu(x, bp.units[role], level, plan, training, counter)
        if bp.kind == "conv4d":
            h = cbr(cbr(t, "c1"), "c2")
        elif bp.kind == "stdb_b":
            h = cbr(cbr(t, "sp"), "tp")
        elif bp.kind == "stdb_p":
            a1 = cbr(t, "s1_sp")
            b1 = cbr(t, "s1_tp")
            s1 = cbr(a1.with_features(ad.add(a1.features, b1.features)), "s1_fuse")
            a2 = cbr(s1, "s2_sp")
            b2 = cbr(s1, "s2_tp")
            h = cbr(a2.with_features(ad.add(a2.features, b2.features)), "s2_fuse")
        elif bp.kind == "stdb_d":
            a = cbr(cbr(t, "a_sp"), "a_tp")
            bb = cbr(cbr(t, "b_tp"), "b_sp")
            summed = a.with_features(ad.add(a.features, bb.features))
            h = cbr(summed, "fuse")
        else:
            raise ValueError(bp.kind)
        return self._finish_block(t, h, bp, level, plan, training, counter)

    def _finish_block(self, t, h, bp, level, plan, training, counter):
        if bp.proj is not None:
            short = self._conv_bn_relu(t, bp.proj, level, plan, training, counter, relu=False)
        else:
            short = t
        out = ad.relu(ad.add(h.features, short.features))
        if counter is not None:
            counter.relu(f"{bp.name}.res_relu", out.data.size)
        return h.with_features(out)

    def forward(
        self,
        f4d: SparseTensor4D,
        plan: NetworkPlan | None = None,
        training: bool = True,
        counter=None,
        stage_hook=None,
    ) -> SparseTensor4D:
        """Run the hourglass; output has ``out_channels`` on f4d's coords.

        ``stage_hook(label, tensor)`` fires once for the input and once per
        stage at the tensor each stage hands onward (post-pool for encoder
        stages, pre-resample elsewhere).
        """
        if f4d.num_channels != self.cfg.vfe_width:
            raise ValueError(f"expected {self.cfg.vfe_width} input channels, got {f4d.num_channels}")
        if plan is None:
            plan = self.build_plan(f4d.coords, f4d.dims)
        x = f4d
        if stage_hook is not None:
            stage_hook("input", x)
        enc_outs = []
        for si, blocks in enumerate(self.enc_blocks):
            for bp in blocks:
                x = self._run_block(x, bp, si, plan, training, counter)
            enc_outs.append(x)
            x = apply_pool(x, plan.pools[si])
            if stage_hook is not None:
                stage_hook(f"stage{si + 1}", x)
        mid_level = len(self.enc_blocks)
        for bp in self.mid_blocks:
            x = self._run_block(x, bp, mid_level, plan, training, counter)
        if stage_hook is not None:
            stage_hook(f"stage{mid_level + 1}", x)
        for di, blocks in enumerate(self.dec_blocks):
            level = mid_level - 1 - di
            x = apply_up(x, plan.ups[di])
            skip = enc_outs[level]
            proj = self.skip_projs[di]
            if proj is not None:
                skip = self._conv_bn_relu(skip, proj, level, plan, training, counter, relu=False)
            assert skip.keys is x.keys or np.array_equal(skip.coords, x.coords)
            x = x.with_features(ad.add(x.features, skip.features))
            for bp in blocks:
                x = self._run_block(x, bp, level, plan, training, counter)
            if stage_hook is not None:
                stage_hook(f"stage{mid_level + 2 + di}", x)
        return x

    def encode_points(self, raw: ad.Tensor, training: bool = True, counter=None) -> ad.Tensor:
        if counter is not None:
            rows = raw.data.shape[0]
            for i, layer in enumerate(self.vfe):
                counter.linear(f"vfe.{i}", rows, layer.w.data.shape[0], layer.w.data.shape[1], bn=True, relu=True)
        return encode_vfe(raw, self.vfe, training)

    def point_head(
        self,
        voxel_slice: SparseTensor3D,
        point_feats: ad.Tensor,
        pvmap: PointVoxelMap,
        training: bool = True,
        counter=None,
    ) -> ad.Tensor:
        """Per-point motion vectors for one sweep.

        Gathers each point's voxel feature from the sliced network output,
        concatenates its initial point feature, and applies the two-layer MLP.
        """
        if not np.array_equal(voxel_slice.coords, pvmap.coords):
            raise AssertionError("network slice does not cover the sweep's active voxels")
        per_point = ad.gather_rows(voxel_slice.features, pvmap.voxel_of_kept)
        h = ad.concat_cols(per_point, point_feats)
        h = ad.relu(ad.linear(h, self.head_w1, self.head_b1))
        out = ad.linear(h, self.head_w2, self.head_b2)
        if counter is not None:
            rows = out.data.shape[0]
            counter.linear("head.l1", rows, self.head_w1.data.shape[0], self.head_w1.data.shape[1], bn=False, relu=True)
            counter.linear("head.l2", rows, self.head_w2.data.shape[0], self.head_w2.data.shape[1], bn=False, relu=False)
        return out

    def current_slice(self, out4d: SparseTensor4D) -> SparseTensor3D:
        """Features of the sweep the head predicts for (time index T-2)."""
        t_index = self.cfg.grid.num_timesteps - 2 if self.cfg.grid.num_timesteps > 1 else 0
        return slice_time(out4d, t_index)
