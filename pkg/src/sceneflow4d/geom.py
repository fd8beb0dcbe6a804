"""Rigid-motion helpers for multi-sweep point clouds.

Poses are 4x4 row-major matrices mapping sensor (ego) coordinates into a
fixed world frame. All point arrays are N x 3.
"""

from __future__ import annotations

import numpy as np


def yaw_matrix(yaw: float) -> np.ndarray:
    """3x3 rotation about +z."""
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def make_se3(rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    rotation = np.asarray(rotation, dtype=np.float64)
    translation = np.asarray(translation, dtype=np.float64)
    assert rotation.shape == (3, 3) and translation.shape == (3,)
    T = np.eye(4)
    T[:3, :3] = rotation
    T[:3, 3] = translation
    return T


def se3_inverse(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    t = T[:3, 3]
    return make_se3(R.T, -R.T @ t)


def se3_apply(T: np.ndarray, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points)
    assert points.ndim == 2 and points.shape[1] == 3
    return points @ T[:3, :3].T + T[:3, 3]


def relative_se3(pose_src: np.ndarray, pose_dst: np.ndarray) -> np.ndarray:
    """Transform taking points from the src ego frame into the dst ego frame."""
    return se3_inverse(pose_dst) @ pose_src


def warp_points(points: np.ndarray, pose_src: np.ndarray, pose_dst: np.ndarray) -> np.ndarray:
    """Express a sweep captured at pose_src in the ego frame of pose_dst."""
    return se3_apply(relative_se3(pose_src, pose_dst), points)


def rigid_flow(points: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Per-point displacement T(p) - p induced by a rigid transform."""
    return se3_apply(T, points) - np.asarray(points)


def world_vectors_to_frame(vectors: np.ndarray, pose: np.ndarray) -> np.ndarray:
    """Rotate free vectors given in world coordinates into an ego frame."""
    vectors = np.asarray(vectors)
    assert vectors.ndim == 2 and vectors.shape[1] == 3
    return vectors @ pose[:3, :3]
