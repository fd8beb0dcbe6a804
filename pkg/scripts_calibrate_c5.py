"""Calibration for the overfit-convergence acceptance run (temporary script)."""
import json
import time

import numpy as np

from sceneflow4d.metrics import DYNAMIC_SPEED, dynamic_iou
from sceneflow4d.nn import Network, NetworkConfig
from sceneflow4d.pipeline import forward_scene
from sceneflow4d.scenes import SWEEP_INTERVAL, SceneSpec, generate_scene
from sceneflow4d.train import TrainConfig, Trainer
from sceneflow4d.voxelize import GridConfig

grid = GridConfig(origin=(-6.4, -6.4, -0.8), voxel_size=(0.2, 0.2, 0.2), dims=(64, 64, 8), num_timesteps=5)
spec = SceneSpec(extent=3.0, n_ground=700, points_per_mover=90, mover_speed=(1.2, 2.2))
scenes = [generate_scene(100 + i, spec) for i in range(5)]
net = Network(NetworkConfig(grid=grid, block_kind="stdb_p"), seed=0)
tr = Trainer(net, scenes, TrainConfig(lr=1e-3, seed=0))
print("active L0 sites per scene:", [p.coords4.shape[0] for p in tr.preps], flush=True)

t0 = time.perf_counter()
losses = []
for chunk in range(20):
    losses.extend(tr.run_steps(100))
    el = time.perf_counter() - t0
    print(f"step {len(losses):4d} loss {losses[-1]:.4f} elapsed {el/60:.1f} min", flush=True)

preds, gts, speeds = [], [], []
for prep in tr.preps:
    pred = forward_scene(net, prep, training=False)
    preds.append(pred.data)
    gts.append(prep.gt_motion)
    speeds.append(prep.gt_speed)
pred = np.concatenate(preds)
gt = np.concatenate(gts)
speed = np.concatenate(speeds)
dyn, stat = tr.eval_epe()
iou = dynamic_iou(pred, gt, gt_speed=speed)
err = np.linalg.norm(pred - gt, axis=1)
pred_speed = np.linalg.norm(pred, axis=1) / SWEEP_INTERVAL
gt_dyn = speed >= DYNAMIC_SPEED
pd_dyn = pred_speed >= DYNAMIC_SPEED
static_err = err[~gt_dyn]
out = {
    "step0_loss": losses[0],
    "final_loss": losses[-1],
    "last10_mean": float(np.mean(losses[-10:])),
    "ratio_final": losses[-1] / losses[0],
    "dyn_epe_scene_mean": dyn,
    "static_epe_scene_mean": stat,
    "dyn_epe_pooled": float(err[gt_dyn].mean()),
    "dynamic_iou": iou,
    "tp": int(np.sum(gt_dyn & pd_dyn)),
    "fp": int(np.sum(~gt_dyn & pd_dyn)),
    "fn": int(np.sum(gt_dyn & ~pd_dyn)),
    "n_static": int(np.sum(~gt_dyn)),
    "n_dynamic": int(np.sum(gt_dyn)),
    "static_err_q50_90_95_99": [float(q) for q in np.quantile(static_err, [0.5, 0.9, 0.95, 0.99])],
    "dyn_pred_speed_min": float(pred_speed[gt_dyn].min()),
    "minutes": (time.perf_counter() - t0) / 60,
}
print(json.dumps(out, indent=2))
with open("/root/pkg/c5_calibration.json", "w") as f:
    json.dump(out, f, indent=2)
