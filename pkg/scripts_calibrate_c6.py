"""Temporary calibration for the frame-count trend check (delete before commit)."""

import time

import numpy as np

from sceneflow4d.metrics import dynamic_static_epe
from sceneflow4d.nn import Network, NetworkConfig
from sceneflow4d.pipeline import forward_scene, prepare_scene
from sceneflow4d.scenes import SceneSpec, generate_scene, truncate_scene
from sceneflow4d.train import TrainConfig, Trainer
from sceneflow4d.voxelize import GridConfig

SPEC = SceneSpec(extent=3.0, min_range=0.4, n_ground=400, n_movers=3,
                 points_per_mover=30, mover_speed=(1.2, 2.2), n_sweeps=5)
TRAIN = [generate_scene(300 + i, SPEC) for i in range(4)]
VAL = [generate_scene(310 + i, SPEC) for i in range(2)]
STEPS = 600


def grid(T):
    return GridConfig(origin=(-3.2, -3.2, -0.8), voxel_size=(0.2, 0.2, 0.2),
                      dims=(32, 32, 8), num_timesteps=T)


def run(T, seed):
    scenes = TRAIN if T == 5 else [truncate_scene(s, 2) for s in TRAIN]
    vals = VAL if T == 5 else [truncate_scene(s, 2) for s in VAL]
    net = Network(NetworkConfig(grid=grid(T), block_kind="stdb_p"), seed=seed)
    trainer = Trainer(net, scenes, TrainConfig(lr=1e-3, seed=seed))
    trainer.run_steps(STEPS)
    dyn = []
    for s in vals:
        prep = prepare_scene(net, s)
        pred = forward_scene(net, prep, training=False)
        d, _ = dynamic_static_epe(pred.data, prep.gt_motion, prep.gt_speed)
        if d is not None:
            dyn.append(d)
    return float(np.mean(dyn))


t0 = time.perf_counter()
wins = 0
for seed in (0, 1, 2):
    e5 = run(5, seed)
    e2 = run(2, seed)
    win = e5 <= e2
    wins += win
    print(f"seed={seed} T5={e5:.4f} T2={e2:.4f} T5_wins={win} "
          f"elapsed={(time.perf_counter() - t0) / 60:.1f}min", flush=True)
print(f"wins={wins}/3 total={(time.perf_counter() - t0) / 60:.1f}min")
