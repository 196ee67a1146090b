"""Minimal dense-tensor reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays. Every operation records its parents and
a local-gradient closure; ``backward`` on a scalar loss topologically sorts
the recorded graph and visits each node exactly once, accumulating
gradients across fan-out. Only tensors created with ``requires_grad`` (or
depending on one) participate.

Elementwise binary ops follow numpy broadcasting; gradients are summed
back down to each operand's shape.
"""

from __future__ import annotations

import numpy as np

from .errors import AutodiffError, DimensionError


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "_grad_buf")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._grad_buf = None

    @property
    def shape(self):
        return self.values.shape

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(values, parents, backward_fn) -> Tensor:
    out = Tensor(values)
    tracked = tuple(p for p in parents if p.requires_grad)
    if tracked:
        out.requires_grad = True
        out._parents = tracked
        out._backward = backward_fn
    return out


def _grad_buffer(t: Tensor) -> np.ndarray:
    """Persistent gradient storage, reused across backward passes."""
    if t._grad_buf is None or t._grad_buf.shape != t.values.shape:
        t._grad_buf = np.empty_like(t.values)
    return t._grad_buf


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if t.grad is None:
        # Copy into owned storage: the incoming array may alias other nodes.
        t.grad = _grad_buffer(t)
        np.copyto(t.grad, grad)
    else:
        t.grad += grad


def _accumulate_matmul(t: Tensor, lhs: np.ndarray, rhs: np.ndarray) -> None:
    """t.grad += lhs @ rhs without a temporary on the first accumulation."""
    if t.grad is None:
        t.grad = np.matmul(lhs, rhs, out=_grad_buffer(t))
    else:
        t.grad += lhs @ rhs


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        values = a.values + b.values
    except ValueError:
        raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def backward_fn(out):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(out.grad, b.shape))

    return _node(values, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        values = a.values - b.values
    except ValueError:
        raise DimensionError(f"sub: incompatible shapes {a.shape} and {b.shape}") from None

    def backward_fn(out):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-out.grad, b.shape))

    return _node(values, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        values = a.values * b.values
    except ValueError:
        raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward_fn(out):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(out.grad * b.values, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(out.grad * a.values, b.shape))

    return _node(values, (a, b), backward_fn)


def scale(a, factor: float) -> Tensor:
    a = _wrap(a)
    factor = float(factor)

    def backward_fn(out):
        if a.requires_grad:
            _accumulate(a, out.grad * factor)

    return _node(a.values * factor, (a,), backward_fn)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    values = a.values @ b.values

    def backward_fn(out):
        if a.requires_grad:
            _accumulate_matmul(a, out.grad, b.values.T)
        if b.requires_grad:
            _accumulate_matmul(b, a.values.T, out.grad)

    return _node(values, (a, b), backward_fn)


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.values > 0

    def backward_fn(out):
        if a.requires_grad:
            _accumulate(a, out.grad * mask)

    return _node(np.where(mask, a.values, 0.0), (a,), backward_fn)


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    v = a.values
    values = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    def backward_fn(out):
        if a.requires_grad:
            _accumulate(a, out.grad * values * (1.0 - values))

    return _node(values, (a,), backward_fn)


def log(a) -> Tensor:
    a = _wrap(a)
    if (a.values <= 0).any():
        raise AutodiffError("log: input must be strictly positive")

    def backward_fn(out):
        if a.requires_grad:
            _accumulate(a, out.grad / a.values)

    return _node(np.log(a.values), (a,), backward_fn)


def reciprocal(a) -> Tensor:
    a = _wrap(a)
    if (a.values == 0).any():
        raise AutodiffError("reciprocal: input contains zeros")
    values = 1.0 / a.values

    def backward_fn(out):
        if a.requires_grad:
            _accumulate(a, -out.grad * values * values)

    return _node(values, (a,), backward_fn)


def sum_all(a) -> Tensor:
    a = _wrap(a)

    def backward_fn(out):
        if a.requires_grad:
            _accumulate(a, np.full_like(a.values, float(out.grad)))

    return _node(a.values.sum(), (a,), backward_fn)


def row_mean(a) -> Tensor:
    """Mean across rows of a 2-D tensor, keeping a single output row."""
    a = _wrap(a)
    if a.values.ndim != 2:
        raise DimensionError(f"row_mean: expected a 2-D tensor, got shape {a.shape}")
    n = a.shape[0]

    def backward_fn(out):
        if a.requires_grad:
            _accumulate(a, np.repeat(out.grad, n, axis=0) / n)

    return _node(a.values.mean(axis=0, keepdims=True), (a,), backward_fn)


def concat_rows(parts) -> Tensor:
    """Stack 2-D tensors with equal column counts along the row axis."""
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise DimensionError("concat_rows: no tensors given")
    widths = {p.shape[1] if p.values.ndim == 2 else None for p in parts}
    if None in widths or len(widths) != 1:
        raise DimensionError(
            f"concat_rows: expected 2-D tensors with equal column counts, got {[p.shape for p in parts]}"
        )
    values = np.vstack([p.values for p in parts])
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward_fn(out):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                _accumulate(p, out.grad[lo:hi])

    return _node(values, tuple(parts), backward_fn)


def dropout(a, p: float, rng: np.random.Generator = None, train: bool = False) -> Tensor:
    """Inverted dropout; the identity when ``p`` is 0 or not training."""
    a = _wrap(a)
    if not 0.0 <= p < 1.0:
        raise AutodiffError(f"dropout: p must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    if rng is None:
        raise AutodiffError("dropout: training mode needs a random generator")
    mask = (rng.random(a.shape) >= p) / (1.0 - p)

    def backward_fn(out):
        if a.requires_grad:
            _accumulate(a, out.grad * mask)

    return _node(a.values * mask, (a,), backward_fn)


def softmax_cross_entropy(logits, target: int) -> Tensor:
    """Cross-entropy (natural log) of softmax(logits) against a class index."""
    logits = _wrap(logits)
    flat = logits.values.reshape(-1)
    if not 0 <= int(target) < flat.size:
        raise DimensionError(f"target {target} out of range for {flat.size} logits")
    target = int(target)
    shifted = flat - flat.max()
    log_z = np.log(np.exp(shifted).sum()) + flat.max()
    loss = log_z - flat[target]

    def backward_fn(out):
        if logits.requires_grad:
            softmax = np.exp(flat - log_z)
            softmax[target] -= 1.0
            _accumulate(logits, float(out.grad) * softmax.reshape(logits.shape))

    return _node(loss, (logits,), backward_fn)


def backward(loss: Tensor) -> None:
    """Populate gradients of every tracked tensor the scalar loss depends on."""
    if loss.values.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    ordered = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            ordered.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.values)
    for node in reversed(ordered):
        if node._backward is not None:
            node._backward(node)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


class Adam:
    """Adam optimizer with bias correction; gradients are cleared after a step."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]
        self._scratch = [np.empty_like(p.values) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise AutodiffError("adam step: a parameter has no gradient; run backward first")
        self.step_count += 1
        correction1 = 1.0 - self.beta1**self.step_count
        correction2 = 1.0 - self.beta2**self.step_count
        # Fold the bias corrections into scalars so the update
        #   p -= lr * (m / c1) / (sqrt(v / c2) + eps)
        # runs in-place without per-parameter temporaries.
        root_c2 = np.sqrt(correction2)
        step_scale = self.lr * root_c2 / correction1
        eps_scaled = self.eps * root_c2
        for i, p in enumerate(self.params):
            g, m, v, scratch = p.grad, self.m[i], self.v[i], self._scratch[i]
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=scratch)
            m += scratch
            np.multiply(g, g, out=g)
            v *= self.beta2
            g *= 1.0 - self.beta2
            v += g
            np.sqrt(v, out=scratch)
            scratch += eps_scaled
            np.divide(m, scratch, out=scratch)
            scratch *= step_scale
            p.values -= scratch
            p.grad = None

    def state_arrays(self) -> dict:
        """Optimizer state keyed for checkpointing."""
        out = {"adam_step": np.array([self.step_count], dtype=np.int64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"adam_m_{i}"] = m
            out[f"adam_v_{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        self.step_count = int(arrays["adam_step"][0])
        for i in range(len(self.params)):
            self.m[i] = np.asarray(arrays[f"adam_m_{i}"], dtype=np.float64)
            self.v[i] = np.asarray(arrays[f"adam_v_{i}"], dtype=np.float64)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Symmetric uniform init with variance scaled to the layer fan."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
