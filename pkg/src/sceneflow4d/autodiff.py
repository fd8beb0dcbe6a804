"""Minimal reverse-mode differentiation on numpy arrays.

Values are wrapped in :class:`Tensor`; operations record their backward
closures on the currently active :class:`Tape`. Tapes are single-use and
rebuilt every step. Parameters live in a :class:`ParamStore` together with
their Adam moments and non-differentiable buffers (batch-norm statistics).

Storage dtype follows the inputs: training code uses float32, gradient
checks build float64 parameters and every op propagates the wider dtype.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class Tensor:
    """A numpy array plus a gradient slot."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of executed ops; replayed once, in reverse."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self):
        return len(self.nodes)


def active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(out: Tensor, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Attach a custom op node to the active tape (no-op when none is active).

    ``backward_fn(grad_out)`` must return one gradient array (or None) per
    entry of ``inputs``, each shaped like the corresponding input.
    """
    tape = active_tape()
    if tape is not None:
        tape.nodes.append(_Node(out, tuple(inputs), backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(x) into ``.grad`` of every tensor on the tape.

    The loss must be scalar. A tape can be walked exactly once.
    """
    if tape.consumed:
        raise RuntimeError("tape already consumed; tapes are single-use")
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    tape.consumed = True
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g_out = node.out.grad
        if g_out is None:
            continue  # not on a path to the loss
        grads = node.backward_fn(g_out)
        for inp, g in zip(node.inputs, grads):
            if g is None:
                continue
            if inp.grad is None:
                inp.grad = np.zeros_like(inp.data)
            inp.grad += g


# ---------------------------------------------------------------------------
# primitive ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    if active_tape() is not None:
        record(out, (a, b), lambda g: (g, g))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    if active_tape() is not None:
        record(out, (a, b), lambda g: (g, -g))
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)
    if active_tape() is not None:
        record(out, (a,), lambda g: (g * c,))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data @ b.data)
    if active_tape() is not None:
        a_data, b_data = a.data, b.data
        record(out, (a, b), lambda g: (g @ b_data.T, a_data.T @ g))
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``x @ w + b`` for row-major feature matrices."""
    if x.data.shape[1] != w.data.shape[0]:
        raise ValueError(
            f"linear: input has {x.data.shape[1]} columns, weight expects {w.data.shape[0]}"
        )
    out = Tensor(x.data @ w.data + b.data)
    if active_tape() is not None:
        x_data, w_data = x.data, w.data
        record(
            out,
            (x, w, b),
            lambda g: (g @ w_data.T, x_data.T @ g, g.sum(axis=0)),
        )
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    if active_tape() is not None:
        mask = x.data > 0
        record(out, (x,), lambda g: (g * mask,))
    return out


def gather_rows(x: Tensor, rows: np.ndarray) -> Tensor:
    """Select ``x[rows]``; rows may repeat."""
    out = Tensor(x.data[rows])
    if active_tape() is not None:
        n = x.data.shape[0]

        def bwd(g):
            gx = np.zeros((n,) + g.shape[1:], dtype=g.dtype)
            np.add.at(gx, rows, g)
            return (gx,)

        record(out, (x,), bwd)
    return out


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row slice ``x[start:stop]``."""
    out = Tensor(x.data[start:stop].copy())
    if active_tape() is not None:
        shape = x.data.shape

        def bwd(g):
            gx = np.zeros(shape, dtype=g.dtype)
            gx[start:stop] = g
            return (gx,)

        record(out, (x,), bwd)
    return out


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    if active_tape() is not None:
        sizes = [p.data.shape[0] for p in parts]
        splits = np.cumsum(sizes)[:-1]
        record(out, tuple(parts), lambda g: tuple(np.split(g, splits, axis=0)))
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(np.concatenate([a.data, b.data], axis=1))
    if active_tape() is not None:
        na = a.data.shape[1]
        record(out, (a, b), lambda g: (g[:, :na], g[:, na:]))
    return out


def segment_mean(x: Tensor, order: np.ndarray, starts: np.ndarray, counts: np.ndarray) -> Tensor:
    """Mean of the rows of ``x`` within contiguous groups.

    ``order`` permutes rows so that group members are contiguous, ``starts``
    indexes the first member of each group inside the permuted array and
    ``counts`` gives group sizes. Summation order is fixed by ``order``.
    """
    gathered = x.data[order]
    if gathered.shape[0] == 0:
        out = Tensor(np.zeros((len(starts),) + x.data.shape[1:], dtype=x.data.dtype))
    else:
        sums = np.add.reduceat(gathered, starts, axis=0)
        out = Tensor(sums / counts.reshape(-1, *([1] * (x.data.ndim - 1))))
    if active_tape() is not None:
        n = x.data.shape[0]
        group_of_row = np.empty(n, dtype=np.int64)
        group_of_row[order] = np.repeat(np.arange(len(starts)), counts)

        def bwd(g):
            per_group = g / counts.reshape(-1, *([1] * (g.ndim - 1)))
            return (per_group[group_of_row],)

        record(out, (x,), bwd)
    return out


def l2norm_rows(x: Tensor) -> Tensor:
    """Row-wise Euclidean norm; gradient at an exactly-zero row is zero."""
    norms = np.sqrt(np.sum(x.data * x.data, axis=1))
    out = Tensor(norms)
    if active_tape() is not None:
        safe = np.where(norms > 0, norms, 1.0)
        unit = x.data / safe[:, None]

        def bwd(g):
            return (g[:, None] * unit,)

        record(out, (x,), bwd)
    return out


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of the entries of a vector selected by a boolean mask (non-empty)."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("masked_mean over an empty mask")
    out = Tensor(x.data[idx].mean())
    if active_tape() is not None:
        n = x.data.shape[0]
        inv = 1.0 / idx.size

        def bwd(g):
            gx = np.zeros(n, dtype=x.data.dtype)
            gx[idx] = g * inv
            return (gx,)

        record(out, (x,), bwd)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum()))
    if active_tape() is not None:
        record(out, (x,), lambda g: (np.broadcast_to(g, x.data.shape).copy(),))
    return out


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.data.size)


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BatchNormState:
    """Running statistics for one BN layer; not differentiated."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @staticmethod
    def create(channels: int, dtype=np.float32) -> "BatchNormState":
        return BatchNormState(
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Per-channel normalization over all rows of ``x`` (N x C).

    Training mode normalizes with batch statistics and updates the running
    averages; eval mode applies the stored statistics as a fixed affine map.
    """
    n = x.data.shape[0]
    if n == 0:
        out = Tensor(x.data.copy())
        if active_tape() is not None:
            record(out, (x, gamma, beta), lambda g: (g, None, None))
        return out
    if training:
        mu = x.data.mean(axis=0)
        x_hat = x.data - mu
        var = (x_hat * x_hat).mean(axis=0)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        x_hat *= inv_std
        if n > 1:
            m = state.momentum
            state.running_mean[...] = (1 - m) * state.running_mean + m * mu
            state.running_var[...] = (1 - m) * state.running_var + m * var * n / (n - 1)
        out = Tensor(x_hat * gamma.data + beta.data)
        if active_tape() is not None:
            g_data = gamma.data

            def bwd(g):
                # gamma is per-channel, so it factors out of the usual BN
                # gradient: dx = gamma*inv_std * (g - mean(g) - x_hat*mean(g*x_hat)).
                dbeta = g.sum(axis=0)
                dgamma = (g * x_hat).sum(axis=0)
                dx = g - dbeta / n
                dx -= x_hat * (dgamma / n)
                dx *= g_data * inv_std
                return (dx, dgamma, dbeta)

            record(out, (x, gamma, beta), bwd)
        return out
    inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
    x_hat = (x.data - state.running_mean) * inv_std
    out = Tensor(x_hat * gamma.data + beta.data)
    if active_tape() is not None:
        g_data = gamma.data

        def bwd(g):
            return (g * g_data * inv_std, (g * x_hat).sum(axis=0), g.sum(axis=0))

        record(out, (x, gamma, beta), bwd)
    return out


# ---------------------------------------------------------------------------
# parameters and Adam


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        assert 0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0

    def to_dict(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


class ParamStore:
    """Named parameter tensors plus Adam moments and BN buffers."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step = 0

    def create(self, name: str, array: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(array))
        self.params[name] = t
        return t

    def create_buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        if name in self.buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        self.buffers[name] = np.asarray(array)
        return self.buffers[name]

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    def gradient(self, name: str) -> np.ndarray:
        """Gradient of a parameter; parameters the loss never reached get zeros."""
        t = self.params[name]
        return t.grad if t.grad is not None else np.zeros_like(t.data)

    def n_scalars(self) -> int:
        return sum(int(t.data.size) for t in self.params.values())


def adam_step(store: ParamStore, cfg: AdamConfig) -> None:
    """Bias-corrected Adam update over every parameter; zeroes gradients."""
    store.step += 1
    t = store.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in store.params.items():
        g = store.gradient(name)
        if name not in store.adam_m:
            store.adam_m[name] = np.zeros_like(p.data, dtype=np.float64)
            store.adam_v[name] = np.zeros_like(p.data, dtype=np.float64)
        m = store.adam_m[name]
        v = store.adam_v[name]
        m += (1.0 - cfg.beta1) * (g - m)
        v += (1.0 - cfg.beta2) * (g * g - v)
        update = cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        p.data -= update.astype(p.data.dtype)
    store.zero_grads()


# ---------------------------------------------------------------------------
# checkpoint I/O: one-line JSON header, then little-endian f32 blobs in
# header order


CHECKPOINT_FORMAT = "sceneflow4d-checkpoint"


def save_checkpoint(path, store: ParamStore, adam: AdamConfig | None = None, extra: dict | None = None) -> None:
    entries = []
    blobs = []

    def push(name, kind, arr):
        entries.append({"name": name, "kind": kind, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr, dtype="<f4"))

    for name, p in store.params.items():
        push(name, "param", p.data)
    for name, buf in store.buffers.items():
        push(name, "buffer", buf)
    for name in store.adam_m:
        push(name, "adam_m", store.adam_m[name])
        push(name, "adam_v", store.adam_v[name])
    header = {
        "format": CHECKPOINT_FORMAT,
        "schema_version": 1,
        "step": store.step,
        "adam": adam.to_dict() if adam is not None else None,
        "dtype": "<f4",
        "entries": entries,
        "extra": extra or {},
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8"))
        f.write(b"\n")
        for blob in blobs:
            f.write(blob.tobytes())


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    """Rebuild a ParamStore from disk; returns (store, header)."""
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
        store = ParamStore()
        store.step = header["step"]
        for entry in header["entries"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.fromfile(f, dtype="<f4", count=count).reshape(shape)
            kind = entry["kind"]
            if kind == "param":
                store.create(entry["name"], arr.astype(np.float32))
            elif kind == "buffer":
                store.create_buffer(entry["name"], arr.astype(np.float32))
            elif kind == "adam_m":
                store.adam_m[entry["name"]] = arr.astype(np.float64)
            elif kind == "adam_v":
                store.adam_v[entry["name"]] = arr.astype(np.float64)
            else:
                raise ValueError(f"unknown checkpoint entry kind {kind!r}")
    return store, header


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    per_param: dict = field(default_factory=dict)


def _rel_err(a: float, b: float) -> float:
    scale_ = max(abs(a), abs(b), 1e-6)
    return abs(a - b) / scale_


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    tol: float = 1e-4,
    h: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of a scalar function against central differences.

    Checks every entry of every parameter (or a seeded subsample of
    ``max_entries`` per parameter). ReLU kinks are the caller's problem:
    nudge inputs away from zero before calling.
    """
    params = list(params)
    with Tape() as tape:
        loss = f()
    backward(tape, loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    for p in params:
        p.grad = None

    rng = np.random.default_rng(seed)
    report = GradCheckReport(max_rel_err=0.0, passed=True)
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for j in idx:
            orig = flat[j]
            flat[j] = orig + h
            f_plus = float(f().data)
            flat[j] = orig - h
            f_minus = float(f().data)
            flat[j] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError("non-finite value during finite differencing")
            fd = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, _rel_err(fd, float(analytic[pi].reshape(-1)[j])))
        report.per_param[pi] = worst
        report.max_rel_err = max(report.max_rel_err, worst)
    report.passed = report.max_rel_err <= tol
    return report


def grad_check_directional(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    tol: float = 1e-3,
    h: float = 1e-4,
    n_directions: int = 5,
    seed: int = 0,
) -> GradCheckReport:
    """Directional-derivative variant for large parameter sets.

    For seeded unit directions v, compares the analytic dot product grad.v
    with the central difference of f along v.
    """
    params = list(params)
    with Tape() as tape:
        loss = f()
    backward(tape, loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    for p in params:
        p.grad = None

    rng = np.random.default_rng(seed)
    report = GradCheckReport(max_rel_err=0.0, passed=True)
    for d in range(n_directions):
        vs = [rng.standard_normal(p.data.shape) for p in params]
        norm = np.sqrt(sum(float((v * v).sum()) for v in vs))
        vs = [v / norm for v in vs]
        an = sum(float((a * v).sum()) for a, v in zip(analytic, vs))
        for p, v in zip(params, vs):
            p.data += h * v
        f_plus = float(f().data)
        for p, v in zip(params, vs):
            p.data -= 2.0 * h * v
        f_minus = float(f().data)
        for p, v in zip(params, vs):
            p.data += h * v
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError("non-finite value during finite differencing")
        fd = (f_plus - f_minus) / (2.0 * h)
        report.per_param[d] = _rel_err(fd, an)
        report.max_rel_err = max(report.max_rel_err, report.per_param[d])
    report.passed = report.max_rel_err <= tol
    return report
