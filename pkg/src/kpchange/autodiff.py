"""Minimal reverse-mode autodiff over dense 2D arrays.

One tape per training step records backward closures in execution order;
``backward`` replays them once in reverse. Tensors are (rows, cols) float
arrays; point-cloud sparsity is expressed through explicit gather /
segment / pooling ops rather than sparse formats, which keeps every
adjoint an ordinary dense scatter that finite differences can check.
"""

from __future__ import annotations

import numpy as np

from kpchange import kernels


class Tape:
    """Append-only record of backward closures for one forward pass."""

    _active: "Tape | None" = None

    def __init__(self):
        self._ops: list = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise RuntimeError("a tape is already active; tapes do not nest")
        Tape._active = self
        return self

    def __exit__(self, *exc):
        Tape._active = None
        return False

    @property
    def n_ops(self) -> int:
        return len(self._ops)

    def record(self, backward_fn) -> None:
        self._ops.append(backward_fn)

    def backward(self, loss: "Tensor") -> None:
        """Accumulate gradients of a 1x1 loss into all requires_grad leaves."""
        if loss.data.shape != (1, 1):
            raise ValueError(f"loss must be 1x1, got {loss.data.shape}")
        if self._consumed:
            raise RuntimeError("tape already replayed; build a new tape")
        self._consumed = True
        loss._accumulate(np.ones((1, 1), dtype=loss.data.dtype))
        for fn in reversed(self._ops):
            fn()


def _active_tape() -> Tape | None:
    return Tape._active


class Tensor:
    """Dense 2D value with an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"tensors are 2D, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _binary_setup(a: Tensor, b: Tensor):
    tape = _active_tape()
    track = tape is not None and (a.requires_grad or b.requires_grad)
    return tape, track


def _unary_setup(a: Tensor):
    tape = _active_tape()
    return tape, tape is not None and a.requires_grad


def _unbroadcast_rows(g: np.ndarray, shape) -> np.ndarray:
    if shape[0] == 1 and g.shape[0] > 1:
        return g.sum(axis=0, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a (1, c) operand broadcasts across rows (bias add)."""
    if a.shape[1] != b.shape[1] or (a.shape[0] != b.shape[0] and 1 not in (a.shape[0], b.shape[0])):
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    tape, track = _binary_setup(a, b)
    out = Tensor(a.data + b.data, requires_grad=track)
    if track:
        def bwd():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_unbroadcast_rows(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast_rows(g, b.shape))
        tape.record(bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[1] or (a.shape[0] != b.shape[0] and 1 not in (a.shape[0], b.shape[0])):
        raise ValueError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    tape, track = _binary_setup(a, b)
    out = Tensor(a.data - b.data, requires_grad=track)
    if track:
        def bwd():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_unbroadcast_rows(g, a.shape))
            if b.requires_grad:
                b._accumulate(-_unbroadcast_rows(g, b.shape))
        tape.record(bwd)
    return out


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product with a tensor of equal shape or a python scalar."""
    if isinstance(b, (int, float)):
        tape, track = _unary_setup(a)
        s = float(b)
        out = Tensor(a.data * s, requires_grad=track)
        if track:
            def bwd():
                a._accumulate(out.grad * s)
            tape.record(bwd)
        return out
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    tape, track = _binary_setup(a, b)
    out = Tensor(a.data * b.data, requires_grad=track)
    if track:
        a_data, b_data = a.data, b.data
        def bwd():
            g = out.grad
            if a.requires_grad:
                a._accumulate(g * b_data)
            if b.requires_grad:
                b._accumulate(g * a_data)
        tape.record(bwd)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} vs {b.shape}")
    tape, track = _binary_setup(a, b)
    out = Tensor(a.data @ b.data, requires_grad=track)
    if track:
        a_data, b_data = a.data, b.data
        def bwd():
            g = out.grad
            if a.requires_grad:
                a._accumulate(g @ b_data.T)
            if b.requires_grad:
                b._accumulate(a_data.T @ g)
        tape.record(bwd)
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"concat_cols row mismatch: {a.shape} vs {b.shape}")
    tape, track = _binary_setup(a, b)
    out = Tensor(np.concatenate([a.data, b.data], axis=1), requires_grad=track)
    if track:
        ca = a.shape[1]
        def bwd():
            g = out.grad
            if a.requires_grad:
                a._accumulate(g[:, :ca])
            if b.requires_grad:
                b._accumulate(g[:, ca:])
        tape.record(bwd)
    return out


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Row gather; the adjoint scatter-adds gradients back into ``a``."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError(f"gather index must be 1D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ValueError("gather index out of range")
    tape, track = _unary_setup(a)
    out = Tensor(a.data[idx], requires_grad=track)
    if track:
        n = a.shape[0]
        def bwd():
            g_in = np.zeros((n, a.shape[1]), dtype=out.grad.dtype)
            np.add.at(g_in, idx, out.grad)
            a._accumulate(g_in)
        tape.record(bwd)
    return out


def segment_sum(a: Tensor, seg_ids: np.ndarray, n_segments: int) -> Tensor:
    """Sum row groups: out[s] = sum of rows with seg_ids == s."""
    seg_ids = np.asarray(seg_ids, dtype=np.int64)
    if seg_ids.shape != (a.shape[0],):
        raise ValueError(f"segment ids must have shape ({a.shape[0]},), got {seg_ids.shape}")
    if seg_ids.size and (seg_ids.min() < 0 or seg_ids.max() >= n_segments):
        raise ValueError("segment id out of range")
    tape, track = _unary_setup(a)
    data = np.zeros((n_segments, a.shape[1]), dtype=a.data.dtype)
    np.add.at(data, seg_ids, a.data)
    out = Tensor(data, requires_grad=track)
    if track:
        def bwd():
            a._accumulate(out.grad[seg_ids])
        tape.record(bwd)
    return out


def neighborhood_pool(a: Tensor, neigh: np.ndarray, infl: np.ndarray) -> Tensor:
    """Influence-weighted pooling used by the point convolutions.

    out[q, k*C + c] = sum_h infl[q, h, k] * a[neigh[q, h], c], with -1
    padding neighbors carrying zero influence.
    """
    tape, track = _unary_setup(a)
    out = Tensor(kernels.kpconv_pool(a.data, neigh, infl), requires_grad=track)
    if track:
        n_support = a.shape[0]
        def bwd():
            a._accumulate(kernels.kpconv_pool_backward(out.grad, neigh, infl, n_support))
        tape.record(bwd)
    return out


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    tape, track = _unary_setup(a)
    mask = a.data > 0.0
    out = Tensor(np.where(mask, a.data, slope * a.data), requires_grad=track)
    if track:
        def bwd():
            a._accumulate(np.where(mask, out.grad, slope * out.grad))
        tape.record(bwd)
    return out


def log_softmax(a: Tensor) -> Tensor:
    """Rowwise log-softmax, numerically stabilized by the row max."""
    x = a.data
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - lse
    tape, track = _unary_setup(a)
    out = Tensor(y, requires_grad=track)
    if track:
        def bwd():
            g = out.grad
            a._accumulate(g - np.exp(y) * g.sum(axis=1, keepdims=True))
        tape.record(bwd)
    return out


def nll_loss(log_probs: Tensor, labels: np.ndarray, class_weights: np.ndarray) -> Tensor:
    """Mean over rows of -w[label] * log_prob[row, label]."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (log_probs.shape[0],):
        raise ValueError(f"labels must have shape ({log_probs.shape[0]},), got {labels.shape}")
    w = np.asarray(class_weights, dtype=np.float64)
    if w.shape != (log_probs.shape[1],):
        raise ValueError(f"class weights must have shape ({log_probs.shape[1]},), got {w.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= log_probs.shape[1]):
        raise ValueError("label out of range")
    n = labels.shape[0]
    rows = np.arange(n)
    picked_w = w[labels]
    value = -(picked_w * log_probs.data[rows, labels]).sum() / n
    tape, track = _unary_setup(log_probs)
    out = Tensor(np.array([[value]], dtype=log_probs.data.dtype), requires_grad=track)
    if track:
        def bwd():
            g = np.zeros_like(log_probs.data)
            g[rows, labels] = -picked_w / n * out.grad[0, 0]
            log_probs._accumulate(g)
        tape.record(bwd)
    return out


def sum_all(a: Tensor) -> Tensor:
    tape, track = _unary_setup(a)
    out = Tensor(np.array([[a.data.sum()]], dtype=a.data.dtype), requires_grad=track)
    if track:
        def bwd():
            a._accumulate(np.full_like(a.data, out.grad[0, 0]))
        tape.record(bwd)
    return out


def mean_all(a: Tensor) -> Tensor:
    return mul(sum_all(a), 1.0 / a.data.size)


class BatchNormState:
    """Running statistics for one normalization layer."""

    def __init__(self, n_channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(n_channels)
        self.running_var = np.ones(n_channels)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Column-wise normalization: batch statistics while training, running
    averages in eval. The running buffers update as a side effect of
    training-mode forwards and are excluded from differentiation."""
    if gamma.shape != (1, x.shape[1]) or beta.shape != (1, x.shape[1]):
        raise ValueError(f"gamma/beta must be (1, {x.shape[1]})")
    eps = state.eps
    if training:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mu
        state.running_var = (1 - state.momentum) * state.running_var + state.momentum * var
    else:
        mu = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    tape = _active_tape()
    track = tape is not None and (x.requires_grad or gamma.requires_grad or beta.requires_grad)
    out = Tensor(xhat * gamma.data + beta.data, requires_grad=track)
    if track:
        n = x.shape[0]
        def bwd():
            g = out.grad
            if gamma.requires_grad:
                gamma._accumulate((g * xhat).sum(axis=0, keepdims=True))
            if beta.requires_grad:
                beta._accumulate(g.sum(axis=0, keepdims=True))
            if x.requires_grad:
                gx = g * gamma.data
                if training:
                    # gradient through the batch statistics
                    dxhat_sum = gx.sum(axis=0)
                    dxhat_dot = (gx * xhat).sum(axis=0)
                    x._accumulate(inv_std * (gx - dxhat_sum / n - xhat * dxhat_dot / n))
                else:
                    x._accumulate(gx * inv_std)
        tape.record(bwd)
    return out


class GradCheckReport:
    """Outcome of a finite-difference comparison."""

    def __init__(self, max_rel_error: float, tol: float, per_input: list[float]):
        self.max_rel_error = max_rel_error
        self.tol = tol
        self.per_input = per_input
        self.passed = max_rel_error < tol

    def __repr__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"GradCheckReport({status}, max_rel_error={self.max_rel_error:.3e}, tol={self.tol:.1e})"


def grad_check(f, inputs: list[Tensor], eps: float = 1e-6, tol: float = 1e-5,
               max_elements_per_input: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of a scalar-valued ``f`` against central
    differences, element by element (optionally a seeded sample per input).

    ``f`` must be deterministic; two baseline evaluations that differ
    bitwise are rejected.
    """
    with Tape() as tape:
        out = f(inputs)
        base = out.data.copy()
        tape.backward(out)
    check = f(inputs)
    if not np.array_equal(base, check.data):
        raise ValueError("f is not deterministic: two forward passes differ")
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    for t in inputs:
        t.zero_grad()

    rng = np.random.default_rng(seed)
    per_input = []
    max_rel = 0.0
    for t, ana in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_elements_per_input is not None and n > max_elements_per_input:
            elems = rng.choice(n, size=max_elements_per_input, replace=False)
        else:
            elems = range(n)
        worst = 0.0
        for e in elems:
            orig = flat[e]
            flat[e] = orig + eps
            hi = f(inputs).item()
            flat[e] = orig - eps
            lo = f(inputs).item()
            flat[e] = orig
            numeric = (hi - lo) / (2.0 * eps)
            a = ana.reshape(-1)[e]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            if rel > worst:
                worst = rel
        per_input.append(worst)
        max_rel = max(max_rel, worst)
    return GradCheckReport(max_rel, tol, per_input)
