"""Sparse 4D voxel scene flow: engine, network, trainer, metrics, tooling."""

from .autodiff import AdamConfig, ParamStore, Tape, Tensor, adam_step, backward
from .flops import FlopReport, compare_block_kinds, count_flops
from .metrics import BucketConfig, bucket_normalized_epe, dynamic_iou, three_way_epe
from .nn import Network, NetworkConfig
from .pipeline import forward_scene, predict_scene, prepare_scene
from .scenes import Scene, SceneSpec, generate_scene, load_scene, save_scene
from .sparse import SparseTensor4D, build_kernel_map_subm, conv_subm, pool_down, slice_time, up_sample
from .train import LossConfig, TrainConfig, Trainer, flow_loss, train_loop
from .voxelize import GridConfig

__version__ = "0.1.0"

__all__ = [
    "AdamConfig",
    "BucketConfig",
    "FlopReport",
    "GridConfig",
    "LossConfig",
    "Network",
    "NetworkConfig",
    "ParamStore",
    "Scene",
    "SceneSpec",
    "SparseTensor4D",
    "Tape",
    "Tensor",
    "TrainConfig",
    "Trainer",
    "adam_step",
    "backward",
    "build_kernel_map_subm",
    "bucket_normalized_epe",
    "compare_block_kinds",
    "conv_subm",
    "count_flops",
    "dynamic_iou",
    "flow_loss",
    "forward_scene",
    "generate_scene",
    "load_scene",
    "pool_down",
    "predict_scene",
    "prepare_scene",
    "save_scene",
    "slice_time",
    "three_way_epe",
    "train_loop",
    "up_sample",
]
