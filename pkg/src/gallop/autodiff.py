"""Minimal reverse-mode tape over float64 numpy arrays.

Every operation the loss path needs is a primitive with a hand-written
vector-Jacobian product; ``backward`` walks the tape in reverse topological
order. Top-k selection masks are frozen per evaluation, so the gradient of a
top-k average flows only through the selected rows (the standard subgradient
away from ties). Correctness is pinned by central finite differences in the
test suite.
"""

import numpy as np

from . import _kernels

_EPS_NORM = 1e-8


class Tensor:
    """Array node on the tape. Leaves with ``requires_grad`` collect gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def item(self):
        return float(self.data)


def constant(data):
    return Tensor(data, requires_grad=False)


def parameter(data):
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data, parents, vjp):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _from_op(data, (a, b), vjp)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _from_op(data, (a, b), vjp)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data @ b.data
    an, bn = a.data.ndim, b.data.ndim

    def vjp(g):
        g = np.asarray(g)
        if an == 2 and bn == 2:
            return g @ b.data.T, a.data.T @ g
        if an == 1 and bn == 2:
            return b.data @ g, np.outer(a.data, g)
        if an == 2 and bn == 1:
            return np.outer(g, b.data), a.data.T @ g
        # vector dot product -> scalar
        return g * b.data, g * a.data

    return _from_op(data, (a, b), vjp)


def transpose(a):
    a = _as_tensor(a)

    def vjp(g):
        return (g.T,)

    return _from_op(a.data.T, (a,), vjp)


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.data.shape

    def vjp(g):
        return (g.reshape(old),)

    return _from_op(a.data.reshape(shape), (a,), vjp)


def tanh(a):
    a = _as_tensor(a)
    data = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - data * data),)

    return _from_op(data, (a,), vjp)


def absolute(a):
    a = _as_tensor(a)

    def vjp(g):
        return (g * np.sign(a.data),)

    return _from_op(np.abs(a.data), (a,), vjp)


def tsum(a):
    a = _as_tensor(a)

    def vjp(g):
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _from_op(a.data.sum(), (a,), vjp)


def stack_rows(tensors):
    """Stack 1-D tensors of equal length into a matrix, one per row."""
    tensors = [_as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=0)

    def vjp(g):
        return tuple(g[i] for i in range(len(tensors)))

    return _from_op(data, tensors, vjp)


def normalize_vec(a):
    """L2-normalize a vector; inputs with norm < 1e-8 map to the first basis
    vector with zero gradient."""
    a = _as_tensor(a)
    norm = float(np.linalg.norm(a.data))
    if norm < _EPS_NORM:
        out = np.zeros_like(a.data)
        out[0] = 1.0
        return constant(out)
    u = a.data / norm

    def vjp(g):
        return ((g - u * float(u @ g)) / norm,)

    return _from_op(u, (a,), vjp)


def normalize_rows(a):
    """Row-wise L2 normalization with the same degenerate-row guard."""
    a = _as_tensor(a)
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    degenerate = norms[:, 0] < _EPS_NORM
    safe = np.where(norms < _EPS_NORM, 1.0, norms)
    u = a.data / safe
    if degenerate.any():
        u = u.copy()
        u[degenerate] = 0.0
        u[degenerate, 0] = 1.0

    def vjp(g):
        dot = (u * g).sum(axis=1, keepdims=True)
        out = (g - u * dot) / safe
        if degenerate.any():
            out = out.copy()
            out[degenerate] = 0.0
        return (out,)

    return _from_op(u, (a,), vjp)


def topk_block_mean(s, block, k):
    """Per-block, per-column mean of the k largest entries.

    ``s`` has shape (B*block, C); each contiguous run of ``block`` rows is one
    record. Returns (B, C). The selection mask is frozen for the backward
    pass, which scatters grad/k onto the selected entries.
    """
    s = _as_tensor(s)
    rows, C = s.data.shape
    B = rows // block
    blocks = s.data.reshape(B, block, C)
    mask = _kernels.topk_block_mask(blocks, k)
    data = (blocks * mask).sum(axis=1) / k

    def vjp(g):
        return ((mask * (g[:, None, :] / k)).reshape(rows, C),)

    return _from_op(data, (s,), vjp)


def cross_entropy_mean(logits, labels):
    """Mean cross-entropy of (B, C) logits against integer labels.

    Computed in log space (log-sum-exp with max subtraction), never through
    explicit probabilities, so exactly-zero probabilities cannot produce
    log(0).
    """
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    loss, probs = _kernels.ce_mean(logits.data, labels)
    B = logits.data.shape[0]

    def vjp(g):
        grad = probs.copy()
        grad[np.arange(B), labels] -= 1.0
        return (grad * (float(g) / B),)

    return _from_op(np.float64(loss), (logits,), vjp)


def backward(root):
    """Accumulate gradients of a scalar ``root`` into every reachable leaf."""
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
