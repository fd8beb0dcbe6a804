"""Command-line entry point.

Subcommands: gen (synthetic scenes), train, infer, eval, flops, bench.
All binary artifacts are little-endian f32 with JSON sidecars; every
command is deterministic given its seed flags. Exit code 0 on success,
1 with a message on any error.

numpy is imported lazily inside handlers so the global ``--threads`` flag
can pin BLAS/OpenMP pools before the first numeric import.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="sceneflow4d", description="Sparse 4D voxel scene-flow pipeline")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP thread pools")
    sub = p.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate synthetic scene directories")
    gen.add_argument("--out", required=True)
    gen.add_argument("--scenes", type=int, required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--movers", type=int, default=None)
    gen.add_argument("--extent", type=float, default=None)

    tr = sub.add_parser("train", help="train on a directory of scenes")
    tr.add_argument("--config", required=True)
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--seed", type=int, required=True)
    tr.add_argument("--epochs", type=int, default=15)

    inf = sub.add_parser("infer", help="predict motion flow for one scene")
    inf.add_argument("--ckpt", required=True)
    inf.add_argument("--scene", required=True)
    inf.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="score a prediction file against a scene")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--scene", required=True)
    ev.add_argument("--out", required=True)

    fl = sub.add_parser("flops", help="analytic per-layer FLOP report")
    fl.add_argument("--config", required=True)
    fl.add_argument("--scene", required=True)
    fl.add_argument("--block", choices=["conv4d", "stdb_b", "stdb_p", "stdb_d"], default=None)
    fl.add_argument("--out", default=None)

    be = sub.add_parser("bench", help="wall-clock per pipeline stage")
    be.add_argument("--config", required=True)
    be.add_argument("--scene", required=True)
    be.add_argument("--repeat", type=int, default=3)
    return p


def _set_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _load_net_config(path):
    from .nn import NetworkConfig

    with open(path) as f:
        return NetworkConfig.from_dict(json.load(f))


def _scene_dirs(root) -> list[Path]:
    root = Path(root)
    if (root / "manifest.json").exists():
        return [root]
    dirs = sorted(d for d in root.iterdir() if (d / "manifest.json").exists())
    if not dirs:
        raise CliError(f"no scene directories under {root}")
    return dirs


def _cmd_gen(args) -> int:
    import numpy as np

    from .scenes import SceneSpec, generate_scene, save_scene

    spec = SceneSpec()
    if args.movers is not None:
        spec.n_movers = args.movers
    if args.extent is not None:
        spec.extent = args.extent
    root = Path(args.out)
    children = np.random.SeedSequence(args.seed).spawn(args.scenes)
    for i, child in enumerate(children):
        scene = generate_scene(child, spec)
        save_scene(root / f"scene_{i:03d}", scene)
    print(f"wrote {args.scenes} scenes to {root}")
    return 0


def _cmd_train(args) -> int:
    from .scenes import load_scene
    from .train import TrainConfig, train_loop

    net_cfg = _load_net_config(args.config)
    scenes = [load_scene(d) for d in _scene_dirs(args.data)]
    cfg = TrainConfig(epochs=args.epochs, seed=args.seed)
    history_path = f"{args.out}.history.csv"
    _, history = train_loop(
        scenes,
        net_cfg,
        cfg,
        ckpt_path=args.out,
        history_path=history_path,
        progress=lambda row: print(
            f"epoch {row['epoch']}: loss {row['loss']:.4f} "
            f"dyn_epe {row['dynamic_epe']:.4f} stat_epe {row['static_epe']:.4f}"
        ),
    )
    print(f"checkpoint: {args.out}\nhistory: {history_path}")
    return 0


def _cmd_infer(args) -> int:
    import numpy as np

    from .pipeline import predict_scene
    from .scenes import load_scene
    from .train import load_network

    net, header = load_network(args.ckpt)
    scene = load_scene(args.scene)
    pred = predict_scene(net, scene)
    np.ascontiguousarray(pred, dtype="<f4").tofile(args.out)
    sidecar = {
        "format": "sceneflow4d-prediction",
        "schema_version": 1,
        "rows": int(pred.shape[0]),
        "dtype": "<f4",
        "grid": net.cfg.grid.to_dict(),
        "checkpoint_step": header["step"],
    }
    Path(f"{args.out}.json").write_text(json.dumps(sidecar, indent=1))
    print(f"wrote {pred.shape[0]} motion vectors to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    import numpy as np

    from .metrics import bucket_normalized_epe, dynamic_iou, three_way_epe
    from .scenes import load_scene
    from .voxelize import GridConfig, assign_voxels
    from .geom import warp_points

    sidecar_path = Path(f"{args.pred}.json")
    if not sidecar_path.exists():
        raise CliError(f"missing prediction sidecar {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    scene = load_scene(args.scene)
    pred = np.fromfile(args.pred, dtype="<f4").reshape(-1, 3)
    if pred.shape[0] != scene.current_points.shape[0]:
        raise CliError(
            f"prediction has {pred.shape[0]} rows, scene's current sweep has {scene.current_points.shape[0]}"
        )
    grid = GridConfig.from_dict(sidecar["grid"])
    warped = warp_points(scene.current_points, scene.poses[scene.current_index], scene.poses[-1])
    kept = assign_voxels(warped, grid).kept
    report = {
        "three_way": three_way_epe(pred[kept], scene.gt_motion[kept], scene.class_id[kept], scene.gt_speed[kept]).to_dict(),
        "bucketed": bucket_normalized_epe(
            pred[kept], scene.gt_motion[kept], scene.class_id[kept], scene.gt_speed[kept]
        ).to_dict(),
        "dynamic_iou": dynamic_iou(pred[kept], scene.gt_motion[kept], scene.gt_speed[kept]),
        "n_points": int(pred.shape[0]),
        "n_in_range": int(kept.shape[0]),
    }
    Path(args.out).write_text(json.dumps(report, indent=1))
    print(json.dumps(report, indent=1))
    return 0


def _cmd_flops(args) -> int:
    from .flops import count_flops
    from .pipeline import scene_active_coords
    from .scenes import load_scene

    net_cfg = _load_net_config(args.config)
    if args.block is not None:
        net_cfg.block_kind = args.block
    scene = load_scene(args.scene)
    coords4, n_points, n_current = scene_active_coords(scene, net_cfg.grid)
    report = count_flops(net_cfg, coords4, n_points=n_points, n_current_points=n_current)
    if args.out:
        with open(args.out, "w", newline="") as f:
            report.write_csv(f)
        print(f"total {report.total} FLOPs ({net_cfg.block_kind}); csv: {args.out}")
    else:
        report.write_csv(sys.stdout)
    return 0


def _cmd_bench(args) -> int:
    import time

    from . import autodiff as ad
    from .geom import warp_points
    from .nn import Network
    from .pipeline import prepare_scene
    from .scenes import load_scene
    from .sparse import SparseTensor4D
    from .voxelize import pool_to_voxels

    net_cfg = _load_net_config(args.config)
    scene = load_scene(args.scene)
    net = Network(net_cfg, seed=0)
    prep = prepare_scene(net, scene)
    cur = scene.current_index

    def grid_input():
        f_p = net.encode_points(ad.Tensor(prep.raw_feats), training=False)
        per_sweep = [
            pool_to_voxels(ad.slice_rows(f_p, a, b), m)
            for m, (a, b) in zip(prep.sweep_maps, prep.feat_slices)
        ]
        return f_p, SparseTensor4D(prep.coords4, ad.concat_rows(per_sweep), net.cfg.grid.dims4, keys=prep.keys4)

    f_p, f4d = grid_input()
    out4d = net.forward(f4d, prep.plan, training=False)

    def run_head():
        a, b = prep.feat_slices[cur]
        net.point_head(net.current_slice(out4d), ad.slice_rows(f_p, a, b), prep.sweep_maps[cur], training=False)

    def timed(fn):
        times = []
        for _ in range(max(1, args.repeat)):
            t0 = time.perf_counter()
            fn()
            times.append((time.perf_counter() - t0) * 1e3)
        return min(times)

    stages = [
        ("warping", timed(lambda: [warp_points(p, scene.poses[i], scene.poses[-1]) for i, p in enumerate(scene.sweeps)])),
        ("voxelization", timed(lambda: prepare_scene(net, scene))),
        ("network", timed(lambda: net.forward(grid_input()[1], prep.plan, training=False))),
        ("head", timed(run_head)),
    ]
    print("stage,ms")
    for name, ms in stages:
        print(f"{name},{ms:.3f}")
    return 0


_HANDLERS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "flops": _cmd_flops,
    "bench": _cmd_bench,
}


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads is not None:
            if args.threads < 1:
                raise CliError("--threads must be >= 1")
            _set_threads(args.threads)
        return _HANDLERS[args.command](args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> int:
    return run()


if __name__ == "__main__":
    sys.exit(main())
