"""Calibration for the FLOP-ratio acceptance check (temporary script)."""
import json
import sys
import time

from sceneflow4d.flops import count_flops
from sceneflow4d.nn import NetworkConfig
from sceneflow4d.pipeline import scene_active_coords
from sceneflow4d.scenes import SceneSpec, generate_scene
from sceneflow4d.voxelize import GridConfig
from dataclasses import replace

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 400
n_ground = int(sys.argv[2]) if len(sys.argv) > 2 else 40000
ego = float(sys.argv[3]) if len(sys.argv) > 3 else 1.0

grid = GridConfig.default_full()
spec = SceneSpec(
    extent=50.0,
    min_range=1.0,
    n_ground=n_ground,
    n_movers=10,
    points_per_mover=200,
    mover_speed=(1.0, 8.0),
    ego_speed=(ego, ego),
)
t0 = time.perf_counter()
scene = generate_scene(seed, spec)
coords4, n_points, n_current = scene_active_coords(scene, grid)
t1 = time.perf_counter()
print(f"sites {coords4.shape[0]} points {n_points} gen+assign {t1-t0:.1f}s", flush=True)

cfg = NetworkConfig(grid=grid, block_kind="stdb_p")
totals = {}
for kind in ("stdb_b", "stdb_d", "stdb_p", "conv4d"):
    tk = time.perf_counter()
    totals[kind] = count_flops(replace(cfg, block_kind=kind), coords4, n_points=n_points, n_current_points=n_current).total
    print(f"{kind}: {totals[kind]/1e9:.2f} GFLOPs ({time.perf_counter()-tk:.1f}s)", flush=True)

ratio = totals["stdb_b"] / totals["conv4d"]
ordered = totals["stdb_b"] < totals["stdb_d"] < totals["stdb_p"] < totals["conv4d"]
out = {"seed": seed, "n_ground": n_ground, "ego": ego, "sites": int(coords4.shape[0]),
       "ratio": ratio, "ordered": ordered, "minutes": (time.perf_counter() - t0) / 60}
print(json.dumps(out, indent=1))
