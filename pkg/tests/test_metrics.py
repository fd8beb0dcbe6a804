"""Metric definitions pinned by hand-worked examples and property tests."""

import numpy as np
import pytest

from sceneflow4d.metrics import (
    BucketConfig,
    bucket_normalized_epe,
    dynamic_iou,
    dynamic_static_epe,
    endpoint_errors,
    three_way_epe,
)


def test_endpoint_errors_345_triangle():
    pred = np.array([[3.0, 4.0, 0.0], [1.0, 1.0, 1.0]])
    gt = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    np.testing.assert_allclose(endpoint_errors(pred, gt), [5.0, 0.0])
    with pytest.raises(ValueError):
        endpoint_errors(pred, gt[:1])


# -- three-way EPE -------------------------------------------------------------


def test_three_way_hand_example():
    # FD: foreground moving, error 0.5 (3-4-5 scaled); BS: background static,
    # error 0.1; FS: foreground static, error 0.2
    pred = np.array([[0.3, 0.4, 0.0], [0.1, 0.0, 0.0], [0.0, 0.2, 0.0]])
    gt = np.zeros((3, 3))
    class_id = np.array([1, 0, 2])
    gt_speed = np.array([1.0, 0.0, 0.0])
    r = three_way_epe(pred, gt, class_id, gt_speed)
    np.testing.assert_allclose([r.fd, r.bs, r.fs], [0.5, 0.1, 0.2])
    np.testing.assert_allclose(r.avg, (0.5 + 0.1 + 0.2) / 3)
    assert r.missing == ()


def test_three_way_empty_categories_are_none():
    pred = np.array([[0.3, 0.4, 0.0]])
    gt = np.zeros((1, 3))
    r = three_way_epe(pred, gt, np.array([1]), np.array([2.0]))
    assert r.fd == 0.5 and r.bs is None and r.fs is None
    assert r.avg == 0.5
    assert set(r.missing) == {"bs", "fs"}
    d = r.to_dict()
    assert d["fd"] == 0.5 and d["avg"] == 0.5


def test_three_way_dynamic_threshold_is_half_meter_per_second():
    pred = np.array([[0.1, 0.0, 0.0], [0.1, 0.0, 0.0]])
    gt = np.zeros((2, 3))
    class_id = np.array([1, 1])
    r = three_way_epe(pred, gt, class_id, np.array([0.499, 0.5]))
    assert r.fs == pytest.approx(0.1)  # 0.499 m/s is static
    assert r.fd == pytest.approx(0.1)  # 0.5 m/s is dynamic


def test_three_way_permutation_invariant():
    rng = np.random.default_rng(0)
    n = 200
    pred = rng.standard_normal((n, 3))
    gt = rng.standard_normal((n, 3))
    class_id = rng.integers(0, 5, n)
    speed = rng.random(n) * 2
    a = three_way_epe(pred, gt, class_id, speed)
    p = rng.permutation(n)
    b = three_way_epe(pred[p], gt[p], class_id[p], speed[p])
    np.testing.assert_allclose([a.fd, a.bs, a.fs], [b.fd, b.bs, b.fs], rtol=1e-12)


# -- bucketed EPE ---------------------------------------------------------------


def test_bucket_normalized_car_example():
    # one car point at 1.0 m/s with EPE 0.01: normalized = 0.01 / (1.0 * 0.1)
    pred = np.array([[0.01, 0.0, 0.0]])
    gt = np.zeros((1, 3))
    r = bucket_normalized_epe(pred, gt, np.array([1]), np.array([1.0]))
    assert r.per_class["car"] == pytest.approx(0.1)
    assert r.mean_static is None
    assert r.mean_dynamic == pytest.approx(0.1)


def test_bucket_boundaries_and_class_average():
    cfg = BucketConfig(min_speed=0.4, width=0.4, dt=0.1)
    # two car points in different buckets: speeds 0.5 (bucket 0) and 1.5
    # (bucket 2), errors 0.05 and 0.15
    pred = np.array([[0.05, 0.0, 0.0], [0.15, 0.0, 0.0], [0.02, 0.0, 0.0]])
    gt = np.zeros((3, 3))
    class_id = np.array([1, 1, 0])
    speed = np.array([0.5, 1.5, 0.0])
    r = bucket_normalized_epe(pred, gt, class_id, speed, cfg)
    # bucket scores: 0.05/(0.5*0.1) = 1.0 and 0.15/(1.5*0.1) = 1.0
    assert r.per_class["car"] == pytest.approx(1.0)
    assert r.mean_static == pytest.approx(0.02)


def test_bucket_scores_scale_with_error_ratio():
    rng = np.random.default_rng(1)
    n = 100
    gt = rng.standard_normal((n, 3)) * 0.1
    err = rng.standard_normal((n, 3)) * 0.05
    class_id = rng.integers(1, 3, n)
    speed = 0.4 + rng.random(n) * 2
    r1 = bucket_normalized_epe(gt + err, gt, class_id, speed)
    r2 = bucket_normalized_epe(gt + 2 * err, gt, class_id, speed)
    for name, v in r1.per_class.items():
        if v is not None:
            assert r2.per_class[name] == pytest.approx(2 * v, rel=1e-9)


def test_bucket_static_points_average_plain_epe():
    pred = np.array([[0.1, 0.0, 0.0], [0.3, 0.0, 0.0]])
    gt = np.zeros((2, 3))
    r = bucket_normalized_epe(pred, gt, np.array([0, 1]), np.array([0.0, 0.39]))
    assert r.mean_static == pytest.approx(0.2)
    assert r.mean_dynamic is None


# -- dynamic IoU ------------------------------------------------------------------


def test_dynamic_iou_set_arithmetic():
    # displacement threshold is DYNAMIC_SPEED * dt = 0.05 m
    # rows: pred-dyn/gt-dyn (TP), pred-dyn/gt-static (FP),
    #       pred-static/gt-dyn (FN), pred-static/gt-static (TN), TP again
    pred = np.array([[0.2, 0, 0], [0.1, 0, 0], [0.0, 0, 0], [0.01, 0, 0], [0.3, 0, 0]])
    gt = np.array([[0.2, 0, 0], [0.0, 0, 0], [0.2, 0, 0], [0.0, 0, 0], [0.3, 0, 0]])
    # IoU = TP / (TP + FP + FN) = 2 / 4
    assert dynamic_iou(pred, gt, dt=0.1) == pytest.approx(0.5)


def test_dynamic_iou_uses_gt_speed_when_given():
    pred = np.array([[0.06, 0.0, 0.0]])
    gt = np.array([[0.04, 0.0, 0.0]])  # displacement below threshold
    # without gt_speed the gt side is static -> IoU 0
    assert dynamic_iou(pred, gt) == pytest.approx(0.0)
    # an explicit speed label overrides the displacement-derived class
    assert dynamic_iou(pred, gt, gt_speed=np.array([0.7])) == pytest.approx(1.0)


def test_dynamic_iou_empty_union_is_one():
    pred = np.zeros((3, 3))
    gt = np.zeros((3, 3))
    assert dynamic_iou(pred, gt) == 1.0


def test_dynamic_iou_perfect_prediction_is_one():
    rng = np.random.default_rng(2)
    gt = rng.standard_normal((50, 3)) * 0.2
    assert dynamic_iou(gt.copy(), gt) == 1.0


# -- helpers ----------------------------------------------------------------------


def test_dynamic_static_epe_split():
    pred = np.array([[0.1, 0.0, 0.0], [0.2, 0.0, 0.0], [0.3, 0.0, 0.0]])
    gt = np.zeros((3, 3))
    speed = np.array([1.0, 0.0, 2.0])
    dyn, stat = dynamic_static_epe(pred, gt, speed)
    assert dyn == pytest.approx(0.2)
    assert stat == pytest.approx(0.2)
    dyn2, stat2 = dynamic_static_epe(pred[:1], gt[:1], speed[:1])
    assert stat2 is None and dyn2 == pytest.approx(0.1)


def test_perfect_predictions_zero_all_metrics():
    rng = np.random.default_rng(3)
    n = 120
    gt = rng.standard_normal((n, 3)) * 0.3
    class_id = rng.integers(0, 5, n)
    speed = np.linalg.norm(gt, axis=1) / 0.1
    r3 = three_way_epe(gt.copy(), gt, class_id, speed)
    assert r3.avg == 0.0
    rb = bucket_normalized_epe(gt.copy(), gt, class_id, speed)
    for v in rb.per_class.values():
        assert v is None or v == 0.0
    assert rb.mean_static in (None, 0.0)
    assert dynamic_iou(gt.copy(), gt, gt_speed=speed) == 1.0
