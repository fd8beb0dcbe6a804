"""Trajectory probe for the frame-count comparison: val dynamic EPE vs steps."""

import sys
import time

import numpy as np

from sceneflow4d.metrics import dynamic_static_epe
from sceneflow4d.nn import Network, NetworkConfig
from sceneflow4d.pipeline import forward_scene, prepare_scene
from sceneflow4d.scenes import SceneSpec, generate_scene, truncate_scene
from sceneflow4d.train import TrainConfig, Trainer
from sceneflow4d.voxelize import GridConfig

MODE = sys.argv[1] if len(sys.argv) > 1 else "a"
SEED = int(sys.argv[2]) if len(sys.argv) > 2 else 0

if MODE == "a":
    SPEC = SceneSpec(extent=3.0, min_range=0.4, n_ground=400, n_movers=3,
                     points_per_mover=30, mover_speed=(1.2, 2.2), n_sweeps=5)
else:
    SPEC = SceneSpec(extent=3.0, min_range=0.4, n_ground=400, n_movers=3,
                     points_per_mover=40, mover_speed=(0.7, 1.2), n_sweeps=5)

TRAIN = [generate_scene(300 + i, SPEC) for i in range(4)]
VAL = [generate_scene(310 + i, SPEC) for i in range(2)]
CHUNK, N_CHUNKS = 300, 8


def grid(t):
    return GridConfig(origin=(-3.2, -3.2, -0.8), voxel_size=(0.2, 0.2, 0.2),
                      dims=(32, 32, 8), num_timesteps=t)


def val_epe(net, scenes):
    vals = []
    for s in scenes:
        prep = prepare_scene(net, s)
        d, _ = dynamic_static_epe(forward_scene(net, prep, training=False).data,
                                  prep.gt_motion, prep.gt_speed)
        if d is not None:
            vals.append(d)
    return float(np.mean(vals))


t0 = time.time()
for T in (5, 2):
    cut = (lambda ss: ss) if T == 5 else (lambda ss: [truncate_scene(s, T) for s in ss])
    net = Network(NetworkConfig(grid=grid(T), block_kind="stdb_p"), seed=SEED)
    tr = Trainer(net, cut(TRAIN), TrainConfig(lr=1e-3, seed=SEED))
    for c in range(N_CHUNKS):
        losses = tr.run_steps(CHUNK)
        ve = val_epe(net, cut(VAL))
        te = tr.eval_epe()[0]
        print(f"mode={MODE} seed={SEED} T={T} step={(c+1)*CHUNK} loss={np.mean(losses[-50:]):.4f} "
              f"train_dyn={te:.4f} val_dyn={ve:.4f} elapsed={(time.time()-t0)/60:.1f}min", flush=True)
