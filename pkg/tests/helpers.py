"""Shared utilities for the test suite."""

import numpy as np

from sceneflow4d import autodiff as ad


def mul(t: ad.Tensor, arr: np.ndarray) -> ad.Tensor:
    """Elementwise product with a constant array, recorded on the tape.

    Tests use this to project multi-output ops down to a scalar that weights
    every entry differently, which makes gradient checks sensitive to
    row/column mixups that a plain sum would hide.
    """
    out = ad.Tensor(t.data * arr)
    if ad.active_tape() is not None:
        ad.record(out, (t,), lambda g: (g * arr,))
    return out


def weighted_sum(t: ad.Tensor, arr: np.ndarray) -> ad.Tensor:
    return ad.sum_all(mul(t, arr))
