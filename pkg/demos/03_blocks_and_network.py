"""
Residual blocks and the hourglass network
=========================================

The backbone is an encoder-decoder over sparse 4D tensors. Its unit of
work is a residual block that comes in four kinds: a dense 4D convolution
(conv4d) and three factorizations that split it into a 3x3x3x1 spatial
conv, a 1x1x1x3 temporal conv, and a 1x1x1x1 fusion, wired sequentially
(stdb_b), in parallel (stdb_p), or as a dual path (stdb_d). This script
runs each kind on the same input, then walks the full-scale network
stage by stage to show the shape ladder.
"""

import numpy as np

from sceneflow4d import autodiff as ad
from sceneflow4d.nn import Network, NetworkConfig, StageSpec
from sceneflow4d.sparse import SparseTensor4D, pack4
from sceneflow4d.voxelize import GridConfig

rng = np.random.default_rng(11)

# One-block networks, identical except for the block kind. Same input,
# same plan; the factorized kinds carry fewer weights.
grid = GridConfig(origin=(0, 0, 0), voxel_size=(1, 1, 1), dims=(12, 12, 6), num_timesteps=5)
cells = np.stack(np.meshgrid(*[np.arange(d) for d in grid.dims4], indexing="ij"), -1).reshape(-1, 4)
cells = cells[rng.random(len(cells)) < 0.1]
coords = cells[np.argsort(pack4(cells))]
feats = rng.standard_normal((coords.shape[0], 8)).astype(np.float32)

for kind in ("conv4d", "stdb_b", "stdb_p", "stdb_d"):
    cfg = NetworkConfig(
        grid=grid, block_kind=kind, vfe_width=8,
        encoder=[StageSpec(((8, 16),), pool=(2, 2, 2, 1))],
        bottleneck=StageSpec(((16, 16),), up=(2, 2, 2, 1)),
        decoder=[StageSpec(((16, 8),))],
    )
    net = Network(cfg, seed=0)
    x = SparseTensor4D(coords, ad.Tensor(feats.copy()), grid.dims4)
    y = net.forward(x, training=False)
    n_params = sum(p.data.size for p in net.store.params.values())
    print(f"{kind:7s}: out {y.features.data.shape}, {n_params} parameters")

# The full-scale configuration: four encoder stages halving W and L (and H
# for the first three), a bottleneck, and four decoder stages mirroring
# them with additive skip connections. Time is never strided.
print("\nfull-scale stage ladder:")
cfg = NetworkConfig(grid=GridConfig.default_full())
net = Network(cfg, seed=0)

cells = np.column_stack([
    rng.integers(0, 512, 400), rng.integers(0, 512, 400),
    rng.integers(0, 32, 400), rng.integers(0, 5, 400),
]).astype(np.int64)
_, idx = np.unique(pack4(cells), return_index=True)
coords = cells[idx]
x = SparseTensor4D(coords, ad.Tensor(rng.standard_normal((len(coords), 16)).astype(np.float32)),
                   cfg.grid.dims4)

net.forward(x, training=False, stage_hook=lambda label, t: print(
    f"  {label:7s} {'x'.join(str(d) for d in t.dims):>15s} x {t.num_channels:2d} "
    f"({t.num_active} active sites)"))
