"""Loss and training loop for desk-scale runs on synthetic scenes.

The loss is a speed-binned mean endpoint error: points are partitioned by
ground-truth speed (static / slow / fast by default), each non-empty bin
contributes its mean error times a weight, and the sum is normalized by
the participating weights. Binning keeps the few dynamic points from being
drowned out by the static majority.

Training is batch-of-one-scene Adam with optional gradient accumulation;
given a seed and thread count, runs are bitwise reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .metrics import dynamic_static_epe
from .nn import Network, NetworkConfig
from .pipeline import ScenePrep, forward_scene, prepare_scene
from .scenes import Scene


@dataclass
class LossConfig:
    speed_bin_edges: tuple[float, ...] = (0.05, 0.5)  # m/s
    bin_weights: tuple[float, ...] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        edges = self.speed_bin_edges
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("speed_bin_edges must be strictly increasing")
        if len(self.bin_weights) != len(edges) + 1:
            raise ValueError("need one weight per bin (edges + 1)")
        if any(w <= 0 for w in self.bin_weights):
            raise ValueError("bin weights must be positive")


def flow_loss(pred: ad.Tensor, gt: np.ndarray, gt_speed: np.ndarray, cfg: LossConfig | None = None) -> ad.Tensor:
    """Weighted mean-EPE over speed bins, normalized by non-empty weights."""
    cfg = cfg or LossConfig()
    n = pred.data.shape[0]
    if n == 0:
        return ad.Tensor(np.zeros((), dtype=pred.data.dtype))
    err = ad.l2norm_rows(ad.sub(pred, ad.Tensor(np.asarray(gt, dtype=pred.data.dtype))))
    speed = np.asarray(gt_speed)
    bin_of = np.digitize(speed, cfg.speed_bin_edges)
    terms = []
    weights = []
    for b, w in enumerate(cfg.bin_weights):
        mask = bin_of == b
        if mask.any():
            terms.append(ad.masked_mean(err, mask))
            weights.append(w)
    total = sum(weights)
    loss = ad.scale(terms[0], weights[0] / total)
    for term, w in zip(terms[1:], weights[1:]):
        loss = ad.add(loss, ad.scale(term, w / total))
    return loss


@dataclass
class TrainConfig:
    epochs: int = 15
    lr: float = 1e-3
    seed: int = 0
    grad_accum: int = 1
    eval_every: int = 1  # epochs between history rows; 0 disables
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.grad_accum < 1:
            raise ValueError("grad_accum must be >= 1")


class Trainer:
    """Seeded scene-order shuffling, Adam steps, and history collection."""

    def __init__(self, net: Network, scenes: list[Scene], cfg: TrainConfig):
        if not scenes:
            raise ValueError("need at least one scene")
        self.net = net
        self.cfg = cfg
        self.adam = ad.AdamConfig(lr=cfg.lr)
        self.preps: list[ScenePrep] = [prepare_scene(net, s) for s in scenes]
        self.shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        self.steps_done = 0

    def _loss_for(self, prep: ScenePrep) -> ad.Tensor:
        pred = forward_scene(self.net, prep, training=True)
        return flow_loss(pred, prep.gt_motion, prep.gt_speed, self.cfg.loss)

    def step(self, preps: list[ScenePrep]) -> float:
        """One Adam update over a micro-batch of scenes; returns mean loss."""
        total = 0.0
        inv = 1.0 / len(preps)
        for prep in preps:
            with ad.Tape() as tape:
                loss = ad.scale(self._loss_for(prep), inv)
            value = float(loss.data)
            if not np.isfinite(value):
                raise RuntimeError(f"non-finite loss {value} at step {self.steps_done}")
            ad.backward(tape, loss)
            total += value
        ad.adam_step(self.net.store, self.adam)
        self.steps_done += 1
        return total

    def run_steps(self, n_steps: int) -> list[float]:
        """n Adam steps cycling scenes in seeded shuffled epochs."""
        losses = []
        queue: list[int] = []
        while len(losses) < n_steps:
            if len(queue) < self.cfg.grad_accum:
                queue.extend(self.shuffle_rng.permutation(len(self.preps)).tolist())
            batch = [self.preps[queue.pop(0)] for _ in range(self.cfg.grad_accum)]
            losses.append(self.step(batch))
        return losses

    def run_epoch(self) -> float:
        order = self.shuffle_rng.permutation(len(self.preps)).tolist()
        losses = []
        for i in range(0, len(order), self.cfg.grad_accum):
            batch = [self.preps[j] for j in order[i : i + self.cfg.grad_accum]]
            losses.append(self.step(batch))
        return float(np.mean(losses))

    def eval_epe(self) -> tuple[float, float]:
        """Mean dynamic / static EPE over the training scenes (eval mode)."""
        dyn, stat = [], []
        for prep in self.preps:
            pred = forward_scene(self.net, prep, training=False)
            d, s = dynamic_static_epe(pred.data, prep.gt_motion, prep.gt_speed)
            if d is not None:
                dyn.append(d)
            if s is not None:
                stat.append(s)
        return (
            float(np.mean(dyn)) if dyn else float("nan"),
            float(np.mean(stat)) if stat else float("nan"),
        )


def train_loop(
    scenes: list[Scene],
    net_cfg: NetworkConfig,
    cfg: TrainConfig,
    ckpt_path=None,
    history_path=None,
    progress=None,
) -> tuple[Network, list[dict]]:
    """Train for cfg.epochs over the scene list; optionally write artifacts.

    History rows carry (epoch, loss, mean dynamic EPE, mean static EPE).
    """
    net = Network(net_cfg, seed=cfg.seed)
    trainer = Trainer(net, scenes, cfg)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        mean_loss = trainer.run_epoch()
        if cfg.eval_every and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            dyn, stat = trainer.eval_epe()
            row = {"epoch": epoch, "loss": mean_loss, "dynamic_epe": dyn, "static_epe": stat}
            history.append(row)
            if progress is not None:
                progress(row)
    if ckpt_path is not None:
        ad.save_checkpoint(ckpt_path, net.store, adam=trainer.adam, extra={"network": net_cfg.to_dict()})
    if history_path is not None:
        write_history_csv(history_path, history)
    return net, history


def write_history_csv(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss", "dynamic_epe", "static_epe"])
        for row in history:
            writer.writerow([row["epoch"], f"{row['loss']:.6f}", f"{row['dynamic_epe']:.6f}", f"{row['static_epe']:.6f}"])


def load_network(ckpt_path) -> tuple[Network, dict]:
    """Rebuild a network (eval-ready) from a checkpoint file."""
    store, header = ad.load_checkpoint(ckpt_path)
    net_cfg = NetworkConfig.from_dict(header["extra"]["network"])
    return Network(net_cfg, store=store), header
