"""Speed-binned flow loss and the Adam training loop."""

import csv

import numpy as np
import pytest

import sceneflow4d.autodiff as ad
from sceneflow4d.nn import Network, NetworkConfig, StageSpec
from sceneflow4d.pipeline import predict_scene
from sceneflow4d.scenes import SceneSpec, generate_scene
from sceneflow4d.train import LossConfig, TrainConfig, Trainer, flow_loss, load_network, train_loop, write_history_csv
from sceneflow4d.voxelize import GridConfig

SPEC = SceneSpec(extent=2.0, min_range=0.3, n_ground=60, n_movers=2, points_per_mover=15, n_sweeps=3)


def small_cfg():
    grid = GridConfig(origin=(-2.4, -2.4, -0.8), voxel_size=(0.3, 0.3, 0.3), dims=(16, 16, 4), num_timesteps=3)
    return NetworkConfig(
        grid=grid,
        block_kind="stdb_p",
        vfe_width=4,
        encoder=[StageSpec(((4, 4),), pool=(2, 2, 2, 1)), StageSpec(((4, 8),), pool=(2, 2, 1, 1))],
        bottleneck=StageSpec(((8, 8),), up=(2, 2, 1, 1)),
        decoder=[StageSpec(((8, 8),)), StageSpec(((8, 4),))],
    )


# ---------------------------------------------------------------------------
# loss


def test_loss_zero_on_perfect_prediction():
    rng = np.random.default_rng(0)
    gt = rng.standard_normal((20, 3))
    speed = rng.uniform(0.0, 2.0, 20)
    loss = flow_loss(ad.Tensor(gt.copy()), gt, speed)
    assert float(loss.data) == 0.0


def test_loss_uniform_static_error():
    gt = np.zeros((10, 3))
    pred = np.zeros((10, 3))
    pred[:, 0] = 0.1
    loss = flow_loss(ad.Tensor(pred), gt, np.zeros(10))
    assert np.isclose(float(loss.data), 0.1, rtol=1e-12)


def test_loss_averages_two_equal_weight_bins():
    # static points are exact, dynamic points are off by 0.2: mean of 0 and 0.2
    gt = np.zeros((8, 3))
    speed = np.array([0.0] * 4 + [1.0] * 4)
    pred = np.zeros((8, 3))
    pred[4:, 1] = 0.2
    loss = flow_loss(ad.Tensor(pred), gt, speed)
    assert np.isclose(float(loss.data), 0.1, rtol=1e-12)


def test_loss_weights_and_bin_edges():
    gt = np.zeros((6, 3))
    speed = np.array([0.0, 0.0, 0.2, 0.2, 1.0, 1.0])
    pred = np.zeros((6, 3))
    pred[:2, 0] = 0.1
    pred[2:4, 0] = 0.2
    pred[4:, 0] = 0.4
    loss = flow_loss(ad.Tensor(pred), gt, speed, LossConfig(bin_weights=(1.0, 2.0, 1.0)))
    assert np.isclose(float(loss.data), (0.1 + 2 * 0.2 + 0.4) / 4, rtol=1e-12)


def test_loss_skips_empty_bins_in_normalizer():
    # nothing in the slow bin: its weight must not dilute the others
    gt = np.zeros((4, 3))
    speed = np.array([0.0, 0.0, 1.0, 1.0])
    pred = np.zeros((4, 3))
    pred[2:, 0] = 0.3
    loss = flow_loss(ad.Tensor(pred), gt, speed, LossConfig(bin_weights=(1.0, 5.0, 1.0)))
    assert np.isclose(float(loss.data), 0.15, rtol=1e-12)


def test_loss_empty_input_is_zero():
    loss = flow_loss(ad.Tensor(np.zeros((0, 3))), np.zeros((0, 3)), np.zeros(0))
    assert float(loss.data) == 0.0


def test_loss_permutation_invariant():
    rng = np.random.default_rng(3)
    gt = rng.standard_normal((40, 3))
    pred = gt + 0.2 * rng.standard_normal((40, 3))
    speed = rng.uniform(0.0, 2.0, 40)
    perm = rng.permutation(40)
    a = float(flow_loss(ad.Tensor(pred), gt, speed).data)
    b = float(flow_loss(ad.Tensor(pred[perm]), gt[perm], speed[perm]).data)
    assert np.isclose(a, b, rtol=1e-12)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(speed_bin_edges=(0.5, 0.5))
    with pytest.raises(ValueError):
        LossConfig(bin_weights=(1.0, 1.0))
    with pytest.raises(ValueError):
        LossConfig(bin_weights=(1.0, 0.0, 1.0))


def test_loss_gradient():
    rng = np.random.default_rng(5)
    gt = rng.standard_normal((12, 3))
    speed = rng.uniform(0.0, 2.0, 12)
    pred = ad.Tensor(gt + 0.3 + 0.1 * rng.standard_normal((12, 3)))
    report = ad.grad_check(lambda: flow_loss(pred, gt, speed), [pred], tol=1e-6)
    assert report.passed, report.max_rel_err


# ---------------------------------------------------------------------------
# trainer


def make_scenes(n, base_seed=20):
    return [generate_scene(base_seed + i, SPEC) for i in range(n)]


def test_training_is_deterministic():
    cfg = TrainConfig(lr=1e-3, seed=1)
    runs = []
    for _ in range(2):
        net = Network(small_cfg(), seed=1)
        tr = Trainer(net, make_scenes(2), cfg)
        losses = tr.run_steps(4)
        runs.append((losses, {k: v.data.copy() for k, v in net.store.params.items()}))
    assert runs[0][0] == runs[1][0]
    for name, arr in runs[0][1].items():
        assert np.array_equal(arr, runs[1][1][name])


def test_zero_lr_keeps_parameters():
    net = Network(small_cfg(), seed=0)
    before = {k: v.data.copy() for k, v in net.store.params.items()}
    tr = Trainer(net, make_scenes(1), TrainConfig(lr=0.0, seed=0))
    losses = tr.run_steps(2)
    assert losses[0] == losses[1]
    for name, arr in before.items():
        assert np.array_equal(arr, net.store.params[name].data)


def test_short_overfit_reduces_loss():
    net = Network(small_cfg(), seed=0)
    tr = Trainer(net, make_scenes(1), TrainConfig(lr=1e-3, seed=0))
    losses = tr.run_steps(40)
    assert np.mean(losses[-5:]) < 0.5 * losses[0]


def test_epoch_and_accumulation_step_counts():
    scenes = make_scenes(3)
    net = Network(small_cfg(), seed=0)
    tr = Trainer(net, scenes, TrainConfig(seed=0))
    tr.run_epoch()
    assert tr.steps_done == 3

    net2 = Network(small_cfg(), seed=0)
    tr2 = Trainer(net2, scenes, TrainConfig(seed=0, grad_accum=3))
    tr2.run_epoch()
    assert tr2.steps_done == 1


def test_non_finite_loss_raises():
    net = Network(small_cfg(), seed=0)
    tr = Trainer(net, make_scenes(1), TrainConfig(seed=0))
    net.head_w2.data[:] = np.nan
    with pytest.raises(RuntimeError):
        tr.run_steps(1)


def test_trainer_requires_scenes():
    with pytest.raises(ValueError):
        Trainer(Network(small_cfg(), seed=0), [], TrainConfig())


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(grad_accum=0)


def test_train_loop_artifacts_roundtrip(tmp_path):
    scenes = make_scenes(2)
    ckpt = tmp_path / "model.ckpt"
    hist = tmp_path / "history.csv"
    net, history = train_loop(scenes, small_cfg(), TrainConfig(epochs=2, lr=1e-3, seed=0), ckpt, hist)

    assert [row["epoch"] for row in history] == [1, 2]
    loaded, header = load_network(ckpt)
    assert header["extra"]["network"] == net.cfg.to_dict()
    for name, t in net.store.params.items():
        assert np.array_equal(t.data, loaded.store.params[name].data)
    np.testing.assert_array_equal(predict_scene(net, scenes[0]), predict_scene(loaded, scenes[0]))

    with open(hist) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["epoch", "loss", "dynamic_epe", "static_epe"]
    assert len(rows) == 3
    assert float(rows[1][1]) == pytest.approx(history[0]["loss"], abs=1e-6)


def test_history_csv_format(tmp_path):
    path = tmp_path / "h.csv"
    write_history_csv(path, [{"epoch": 1, "loss": 0.5, "dynamic_epe": 0.25, "static_epe": 0.125}])
    lines = path.read_text().strip().splitlines()
    assert lines[1] == "1,0.500000,0.250000,0.125000"
