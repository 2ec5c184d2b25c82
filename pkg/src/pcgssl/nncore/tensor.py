"""Reverse-mode autodiff over numpy arrays.

A ``Tensor`` records the op that produced it and a closure that pushes its
gradient to its parents.  ``backward()`` walks the graph in reverse
topological order.  Only the ops the pipeline needs are provided; the heavy
ones (conv, pooling) delegate to :mod:`pcgssl.kernels`.
"""
import numpy as np

from .. import kernels
from ..errors import DegenerateEmbedding, ShapeMismatch


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), op=""):
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op!r})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        g = np.asarray(g, dtype=self.data.dtype)
        if g.shape != self.data.shape:
            g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior gradients are not needed after propagation
                node.grad = None

    # arithmetic used by tests and small losses
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _result(data, parents, op, backward):
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), _parents=parents, op=op)
    if out.requires_grad:
        out._backward = backward
    return out


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)

    return _result(a.data + b.data, (a, b), "add", backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    return _result(a.data * b.data, (a, b), "mul", backward)


def power(a, exponent):
    def backward(g):
        a._accumulate(g * exponent * a.data ** (exponent - 1))

    return _result(a.data ** exponent, (a,), f"pow{exponent}", backward)


def sum_all(a):
    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return _result(np.asarray(a.data.sum()), (a,), "sum", backward)


def mean_all(a):
    n = a.data.size

    def backward(g):
        a._accumulate(np.broadcast_to(g / n, a.shape))

    return _result(np.asarray(a.data.mean()), (a,), "mean", backward)


def matmul(a, b):
    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _result(a.data @ b.data, (a, b), "matmul", backward)


def linear(x, w, b):
    """``x @ w.T + b`` with ``w`` shaped ``[out, in]``."""
    if x.shape[-1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeMismatch(f"linear: x {x.shape}, w {w.shape}, b {b.shape}")

    def backward(g):
        x._accumulate(g @ w.data)
        w._accumulate(g.T @ x.data)
        b._accumulate(g.sum(axis=0))

    return _result(x.data @ w.data.T + b.data, (x, w, b), "linear", backward)


class PieceLock:
    """Pin the non-smooth choices of a forward pass.

    Inside ``record()`` every ReLU sign mask and pooling winner is stored in
    call order; inside ``replay()`` the same choices are reused, so the graph
    evaluates the smooth piece that contains the recorded point.  Used for
    finite-difference checks across kinks.
    """

    _active = None

    def __init__(self):
        self.choices = []
        self._mode = None
        self._pos = 0

    def _enter(self, mode):
        if PieceLock._active is not None:
            raise RuntimeError("PieceLock contexts do not nest")
        self._mode, self._pos = mode, 0
        if mode == "record":
            self.choices = []
        PieceLock._active = self
        return self

    def record(self):
        return _LockContext(self, "record")

    def replay(self):
        return _LockContext(self, "replay")

    def choose(self, compute):
        if self._mode == "record":
            value = compute()
            self.choices.append(value)
            return value
        if self._pos >= len(self.choices):
            raise RuntimeError("replayed graph differs from the recorded one")
        value = self.choices[self._pos]
        self._pos += 1
        return value


class _LockContext:
    def __init__(self, lock, mode):
        self.lock, self.mode = lock, mode

    def __enter__(self):
        return self.lock._enter(self.mode)

    def __exit__(self, *exc):
        if exc[0] is None and self.mode == "replay" and self.lock._pos != len(self.lock.choices):
            PieceLock._active = None
            raise RuntimeError("replayed graph differs from the recorded one")
        PieceLock._active = None


def _choose(compute):
    lock = PieceLock._active
    return compute() if lock is None else lock.choose(compute)


def relu(x):
    mask = _choose(lambda: x.data > 0)

    def backward(g):
        x._accumulate(g * mask)

    return _result(x.data * mask, (x,), "relu", backward)


def conv1d(x, w, b):
    if x.data.ndim != 3 or w.data.ndim != 3 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeMismatch(f"conv1d: x {x.shape}, w {w.shape}, b {b.shape}")
    y = kernels.conv1d_forward(x.data, w.data, b.data)

    def backward(g):
        gx, gw, gb = kernels.conv1d_backward(x.data, w.data, g, need_gx=x.requires_grad)
        if gx is not None:
            x._accumulate(gx)
        w._accumulate(gw)
        b._accumulate(gb)

    return _result(y, (x, w, b), "conv1d", backward)


def max_pool1d(x, pool):
    length = x.shape[2]
    if length // pool == 0:
        raise ShapeMismatch(f"max_pool1d: length {length} shorter than pool {pool}")
    if PieceLock._active is None:
        y, arg = kernels.maxpool1d_forward(x.data, pool)
    else:
        n = length // pool
        blocks = x.data[:, :, :n * pool].reshape(x.shape[0], x.shape[1], n, pool)
        arg = _choose(lambda: blocks.argmax(axis=3))
        y = np.take_along_axis(blocks, arg[..., None], axis=3)[..., 0]

    def backward(g):
        x._accumulate(kernels.maxpool1d_backward(g, arg, pool, length))

    return _result(y, (x,), "maxpool", backward)


def global_max_pool(x):
    """``[batch, ch, time] -> [batch, ch]`` max over time."""
    arg = _choose(lambda: x.data.argmax(axis=2))
    y = np.take_along_axis(x.data, arg[..., None], axis=2)[..., 0]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, arg[..., None], g[..., None], axis=2)
        x._accumulate(gx)

    return _result(y, (x,), "globalmax", backward)


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(np.asarray(logits)))


def cross_entropy(logits, labels):
    """Mean categorical cross-entropy of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    logp = log_softmax(logits.data)
    loss = -logp[np.arange(n), labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[np.arange(n), labels] -= 1.0
        logits._accumulate(g * d / n)

    return _result(np.asarray(loss), (logits,), "xent", backward)


def nt_xent(z, temperature):
    """Normalized temperature-scaled cross-entropy over ``2N`` embeddings.

    Rows ``i`` and ``N + i`` are positives of each other; every other row in
    the batch is a negative.  Returns the mean over all ``2N`` anchors.
    """
    data = z.data
    rows = data.shape[0]
    if data.ndim != 2 or rows % 2 or rows == 0:
        raise ShapeMismatch(f"nt_xent needs [2N, d] embeddings, got {data.shape}")
    norms = np.linalg.norm(data, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise DegenerateEmbedding("embedding row with norm < 1e-12")
    n = rows // 2
    u = data / norms
    sim = (u @ u.T) / temperature
    np.fill_diagonal(sim, -np.inf)
    pos = np.concatenate([np.arange(n, rows), np.arange(n)])
    logp = log_softmax(sim)
    loss = -logp[np.arange(rows), pos].mean()

    def backward(g):
        gs = np.exp(logp)
        gs[np.arange(rows), pos] -= 1.0
        gs *= g / rows
        gu = (gs + gs.T) @ u / temperature
        gz = (gu - u * (u * gu).sum(axis=1, keepdims=True)) / norms
        z._accumulate(gz)

    return _result(np.asarray(loss), (z,), "nt_xent", backward)
