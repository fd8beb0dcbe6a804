"""Block wiring, the hourglass forward pass, and the point head."""

import numpy as np
import pytest

import sceneflow4d.autodiff as ad
from sceneflow4d.nn import (
    BLOCK_KINDS,
    K_FULL,
    K_POINT,
    K_SPATIAL,
    K_TEMPORAL,
    Network,
    NetworkConfig,
    StageSpec,
    block_unit_specs,
)
from sceneflow4d.oracle import DenseTensor4D, dense_bn, dense_conv4d, dense_relu, to_dense
from sceneflow4d.sparse import SparseTensor3D, SparseTensor4D, pack4
from sceneflow4d.voxelize import GridConfig, assign_voxels


def tiny_grid(dims=(8, 8, 4), t=3):
    return GridConfig(origin=(0.0, 0.0, 0.0), voxel_size=(1.0, 1.0, 1.0), dims=dims, num_timesteps=t)


def tiny_config(kind="stdb_p", width=4):
    """Two encoder stages so both the aligned and projected skips appear."""
    return NetworkConfig(
        grid=tiny_grid(),
        block_kind=kind,
        vfe_width=width,
        encoder=[
            StageSpec(((width, width), (width, width)), pool=(2, 2, 2, 1)),
            StageSpec(((width, 2 * width),), pool=(2, 2, 1, 1)),
        ],
        bottleneck=StageSpec(((2 * width, 2 * width),), up=(2, 2, 1, 1)),
        decoder=[
            StageSpec(((2 * width, 2 * width),)),
            StageSpec(((2 * width, width),)),
        ],
    )


def random_sparse(rng, dims4, n, c, dtype=np.float64):
    cells = np.stack(np.meshgrid(*[np.arange(d) for d in dims4], indexing="ij"), axis=-1).reshape(-1, 4)
    coords = cells[rng.choice(len(cells), size=n, replace=False)]
    coords = coords[np.argsort(pack4(coords))]
    feats = rng.standard_normal((n, c)).astype(dtype)
    return SparseTensor4D(coords, ad.Tensor(feats), tuple(dims4))


# ---------------------------------------------------------------------------
# unit inventories


def spec_rows(kind, in_ch, x, y):
    return [(u.role, u.kernel_shape, u.c_in, u.c_out, u.relu) for u in block_unit_specs(kind, in_ch, x, y)]


def test_conv4d_unit_wiring():
    assert spec_rows("conv4d", 8, 16, 24) == [
        ("c1", K_FULL, 8, 16, True),
        ("c2", K_FULL, 16, 24, True),
        ("proj", K_POINT, 8, 24, False),
    ]


def test_stdb_b_unit_wiring():
    assert spec_rows("stdb_b", 8, 16, 24) == [
        ("sp", K_SPATIAL, 8, 16, True),
        ("tp", K_TEMPORAL, 16, 24, True),
        ("proj", K_POINT, 8, 24, False),
    ]


def test_stdb_p_unit_wiring():
    assert spec_rows("stdb_p", 8, 16, 24) == [
        ("s1_sp", K_SPATIAL, 8, 16, True),
        ("s1_tp", K_TEMPORAL, 8, 16, True),
        ("s1_fuse", K_POINT, 16, 16, True),
        ("s2_sp", K_SPATIAL, 16, 24, True),
        ("s2_tp", K_TEMPORAL, 16, 24, True),
        ("s2_fuse", K_POINT, 24, 24, True),
        ("proj", K_POINT, 8, 24, False),
    ]


def test_stdb_d_unit_wiring():
    assert spec_rows("stdb_d", 8, 16, 24) == [
        ("a_sp", K_SPATIAL, 8, 16, True),
        ("a_tp", K_TEMPORAL, 16, 24, True),
        ("b_tp", K_TEMPORAL, 8, 16, True),
        ("b_sp", K_SPATIAL, 16, 24, True),
        ("fuse", K_POINT, 24, 24, True),
        ("proj", K_POINT, 8, 24, False),
    ]


@pytest.mark.parametrize("kind", BLOCK_KINDS)
def test_projection_appears_only_on_channel_change(kind):
    assert "proj" not in [u.role for u in block_unit_specs(kind, 16, 16, 16)]
    assert [u.role for u in block_unit_specs(kind, 16, 16, 32)][-1] == "proj"


def test_unknown_block_kind_rejected():
    with pytest.raises(ValueError):
        block_unit_specs("dense", 8, 8, 8)


# ---------------------------------------------------------------------------
# configuration


def test_default_plan_channel_stream():
    cfg = NetworkConfig(grid=GridConfig.default_full())
    assert cfg.stream_channels() == [16, 32, 64, 64, 64, 64, 64, 64, 64, 16]
    assert [s.pool for s in cfg.encoder] == [(2, 2, 2, 1)] * 3 + [(2, 2, 1, 1)]
    assert cfg.bottleneck.up == (2, 2, 1, 1)
    assert [s.up for s in cfg.decoder] == [(2, 2, 2, 1)] * 3 + [None]


def test_config_validation():
    grid = tiny_grid()
    enc = [StageSpec(((4, 4),), pool=(2, 2, 2, 1))]
    mid = StageSpec(((4, 4),), up=(2, 2, 2, 1))
    dec = [StageSpec(((4, 4),))]
    with pytest.raises(ValueError):
        NetworkConfig(grid=grid, block_kind="dense")
    with pytest.raises(ValueError):
        NetworkConfig(grid=grid, encoder=enc, bottleneck=mid, decoder=[])
    with pytest.raises(ValueError):
        NetworkConfig(grid=grid, encoder=[StageSpec(((4, 4),), pool=(2, 2, 2, 2))], bottleneck=mid, decoder=dec)
    with pytest.raises(ValueError):
        NetworkConfig(grid=grid, encoder=[StageSpec(((4, 4),))], bottleneck=mid, decoder=dec)
    with pytest.raises(ValueError):
        NetworkConfig(grid=grid, encoder=enc, bottleneck=StageSpec(((4, 4),)), decoder=dec)


def test_config_dict_roundtrip():
    cfg = tiny_config(kind="stdb_d")
    d = cfg.to_dict()
    back = NetworkConfig.from_dict(d)
    assert back.to_dict() == d
    assert [s.blocks for s in back.encoder] == [s.blocks for s in cfg.encoder]
    assert back.bottleneck.up == cfg.bottleneck.up


# ---------------------------------------------------------------------------
# parameters


def test_seeded_init_is_reproducible():
    cfg = tiny_config()
    a, b = Network(cfg, seed=3), Network(cfg, seed=3)
    assert a.store.params.keys() == b.store.params.keys()
    for name, t in a.store.params.items():
        assert np.array_equal(t.data, b.store.params[name].data)
    c = Network(cfg, seed=4)
    assert any(not np.array_equal(t.data, c.store.params[n].data) for n, t in a.store.params.items())


def test_network_binds_to_existing_store():
    cfg = tiny_config()
    net = Network(cfg, seed=0)
    rebound = Network(cfg, store=net.store)
    assert rebound.head_w1 is net.head_w1
    assert rebound.enc_blocks[0][0].units["s1_sp"].w is net.enc_blocks[0][0].units["s1_sp"].w
    with pytest.raises(ValueError):
        Network(tiny_config(width=8), store=net.store)


def test_skip_projection_only_where_channels_differ():
    net = Network(tiny_config(), seed=0)
    # decoder stage 1 meets an encoder output of equal width, stage 2 does not
    assert net.skip_projs[0] is None
    assert net.skip_projs[1] is not None
    assert net.skip_projs[1].kernel_shape == K_POINT
    assert (net.skip_projs[1].c_in, net.skip_projs[1].c_out) == (4, 8)


# ---------------------------------------------------------------------------
# block behavior


@pytest.mark.parametrize("kind", BLOCK_KINDS)
def test_zeroed_block_reduces_to_relu_of_input(kind):
    """With every conv weight zeroed the residual body and biases vanish,
    so a width-preserving block is exactly ReLU(identity shortcut)."""
    cfg = tiny_config(kind=kind)
    net = Network(cfg, seed=0, dtype=np.float64)
    bp = net.enc_blocks[0][0]
    assert bp.proj is None
    for unit in bp.units.values():
        unit.w.data[:] = 0.0
    rng = np.random.default_rng(5)
    t = random_sparse(rng, (6, 6, 4, 3), n=17, c=4)
    plan = net.build_plan(t.coords, t.dims)
    out = net._run_block(t, bp, 0, plan, training=True, counter=None)
    np.testing.assert_array_equal(out.coords, t.coords)
    np.testing.assert_allclose(out.features.data, np.maximum(t.features.data, 0.0))


@pytest.mark.parametrize("kind", BLOCK_KINDS)
def test_block_matches_dense_composition(kind):
    """One block with a channel change, replayed with the dense oracle ops."""
    cfg = NetworkConfig(
        grid=tiny_grid(dims=(6, 6, 4), t=3),
        block_kind=kind,
        vfe_width=4,
        encoder=[StageSpec(((3, 5),), pool=(2, 2, 2, 1))],
        bottleneck=StageSpec(((5, 5),), up=(2, 2, 2, 1)),
        decoder=[StageSpec(((5, 4),))],
    )
    net = Network(cfg, seed=1, dtype=np.float64)
    bp = net.enc_blocks[0][0]
    assert bp.proj is not None

    rng = np.random.default_rng(7)
    t = random_sparse(rng, (6, 6, 4, 3), n=15, c=4)
    plan = net.build_plan(t.coords, t.dims)
    out = net._run_block(t, bp, 0, plan, training=True, counter=None)

    def cbr(dd, role):
        u = bp.units[role]
        dd = dense_conv4d(dd, u.w.data, u.b.data, u.kernel_shape)
        return dense_relu(dense_bn(dd, u.gamma.data, u.beta.data))

    def add(a, b):
        return DenseTensor4D(a.values + b.values, a.mask.copy())

    d = to_dense(t)
    if kind == "conv4d":
        h = cbr(cbr(d, "c1"), "c2")
    elif kind == "stdb_b":
        h = cbr(cbr(d, "sp"), "tp")
    elif kind == "stdb_p":
        s1 = cbr(add(cbr(d, "s1_sp"), cbr(d, "s1_tp")), "s1_fuse")
        h = cbr(add(cbr(s1, "s2_sp"), cbr(s1, "s2_tp")), "s2_fuse")
    else:
        h = cbr(add(cbr(cbr(d, "a_sp"), "a_tp"), cbr(cbr(d, "b_tp"), "b_sp")), "fuse")
    u = bp.proj
    short = dense_bn(dense_conv4d(d, u.w.data, u.b.data, u.kernel_shape), u.gamma.data, u.beta.data)
    expect = dense_relu(add(h, short))

    w, l, hh, tt = t.coords.T
    np.testing.assert_allclose(out.features.data, expect.values[w, l, hh, tt], rtol=1e-9, atol=1e-11)


# ---------------------------------------------------------------------------
# full forward


def test_forward_trace_shapes_and_coords():
    cfg = tiny_config()
    net = Network(cfg, seed=2)
    rng = np.random.default_rng(3)
    t = random_sparse(rng, cfg.grid.dims4, n=40, c=4, dtype=np.float32)

    seen = []
    out = net.forward(t, stage_hook=lambda label, x: seen.append((label, x.dims, x.num_channels)))
    assert [s[0] for s in seen] == ["input", "stage1", "stage2", "stage3", "stage4", "stage5"]
    assert [s[1] for s in seen] == [
        (8, 8, 4, 3),
        (4, 4, 2, 3),
        (2, 2, 2, 3),
        (2, 2, 2, 3),
        (4, 4, 2, 3),
        (8, 8, 4, 3),
    ]
    assert [s[2] for s in seen] == [4, 4, 8, 8, 8, 4]
    np.testing.assert_array_equal(out.coords, t.coords)
    assert out.num_channels == net.out_channels == 4


def test_forward_rejects_wrong_width():
    cfg = tiny_config()
    net = Network(cfg, seed=0)
    rng = np.random.default_rng(0)
    t = random_sparse(rng, cfg.grid.dims4, n=10, c=5, dtype=np.float32)
    with pytest.raises(ValueError):
        net.forward(t)


def test_forward_handles_empty_input():
    cfg = tiny_config()
    net = Network(cfg, seed=0)
    t = SparseTensor4D(np.zeros((0, 4), np.int64), ad.Tensor(np.zeros((0, 4), np.float32)), cfg.grid.dims4)
    out = net.forward(t)
    assert out.num_active == 0
    assert out.num_channels == 4


def test_plan_caches_kernel_maps():
    cfg = tiny_config()
    net = Network(cfg, seed=0)
    rng = np.random.default_rng(1)
    t = random_sparse(rng, cfg.grid.dims4, n=12, c=4, dtype=np.float32)
    plan = net.build_plan(t.coords)
    assert plan.kmap(0, K_SPATIAL) is plan.kmap(0, K_SPATIAL)
    assert plan.kmap(0, K_SPATIAL) is not plan.kmap(1, K_SPATIAL)


# ---------------------------------------------------------------------------
# point head and slicing


def test_point_head_gathers_voxels_and_applies_mlp():
    cfg = tiny_config()
    net = Network(cfg, seed=4, dtype=np.float64)
    rng = np.random.default_rng(9)
    pts = rng.uniform(0.2, 3.8, size=(25, 3))
    pv = assign_voxels(pts, cfg.grid)
    vox = rng.standard_normal((len(pv.coords), net.out_channels))
    point_feats = rng.standard_normal((len(pv.kept), cfg.vfe_width))
    sl = SparseTensor3D(pv.coords, ad.Tensor(vox), cfg.grid.dims)

    out = net.point_head(sl, ad.Tensor(point_feats), pv, training=True)
    h = np.concatenate([vox[pv.voxel_of_kept], point_feats], axis=1)
    h = np.maximum(h @ net.head_w1.data + net.head_b1.data, 0.0)
    np.testing.assert_allclose(out.data, h @ net.head_w2.data + net.head_b2.data, rtol=1e-12)
    assert out.data.shape == (len(pv.kept), 3)


def test_point_head_rejects_mismatched_slice():
    cfg = tiny_config()
    net = Network(cfg, seed=4)
    rng = np.random.default_rng(9)
    pts = rng.uniform(0.2, 3.8, size=(10, 3))
    pv = assign_voxels(pts, cfg.grid)
    sl = SparseTensor3D(pv.coords[:-1], ad.Tensor(np.zeros((len(pv.coords) - 1, 4), np.float32)), cfg.grid.dims)
    with pytest.raises(AssertionError):
        net.point_head(sl, ad.Tensor(np.zeros((len(pv.kept), 4), np.float32)), pv)


def test_current_slice_targets_second_newest_sweep():
    cfg = tiny_config()  # three sweeps, so the slice sits at t=1
    net = Network(cfg, seed=0)
    coords = np.array([[1, 0, 0, 0], [2, 1, 0, 1], [3, 1, 1, 1], [0, 0, 0, 2]], np.int64)
    feats = np.arange(8, dtype=np.float32).reshape(4, 2)
    x = SparseTensor4D(coords, ad.Tensor(feats), (8, 8, 4, 3))
    sl = net.current_slice(x)
    np.testing.assert_array_equal(sl.coords, [[2, 1, 0], [3, 1, 1]])
    np.testing.assert_array_equal(sl.features.data, [[2, 3], [4, 5]])
