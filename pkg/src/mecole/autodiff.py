"""Minimal reverse-mode autodiff over dense 2-D arrays.

Tensors record their parents on construction; ``backward`` topologically
sorts the implicit tape and accumulates gradients exactly once per node.
Sparse adjacency matrices enter only as constants via ``spmm``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import NumericError

__all__ = [
    "Tensor",
    "constant",
    "parameter",
    "matmul",
    "spmm",
    "add",
    "sub",
    "mul",
    "div",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "log",
    "sqrt",
    "absolute",
    "clip",
    "take_rows",
    "softmax_rows",
    "tsum",
    "tmean",
    "row_max",
    "row_norm2",
    "Adam",
    "normalize_adjacency",
    "gcn_layer",
    "save_checkpoint",
    "load_checkpoint",
]


def _check_finite(values, op):
    if not np.all(np.isfinite(values)):
        raise NumericError(f"non-finite values produced by '{op}'")


class Tensor:
    """Dense array node on the computation tape."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, values, requires_grad=False, _parents=(), _backward=None,
                 _op="leaf"):
        self.values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        _check_finite(self.values, _op)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.values.shape

    def item(self):
        return float(self.values.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.values.size != 1:
            raise ValueError("backward() requires a scalar output")
        order = []
        seen = set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            order.append(t)

        visit(self)
        grads = {id(self): np.ones_like(self.values)}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad and t._backward is None:
                t.grad = g if t.grad is None else t.grad + g
            if t._backward is not None:
                for parent, pg in t._backward(g):
                    if not _needs_grad(parent):
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg

    # operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _needs_grad(t):
    return t.requires_grad or t._backward is not None or any(
        _needs_grad(p) for p in t._parents)


def constant(values):
    return Tensor(values, requires_grad=False)


def parameter(values):
    return Tensor(values, requires_grad=True)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _make(values, parents, backward, op):
    out = Tensor(values, _parents=parents, _backward=backward, _op=op)
    return out


# binary ------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    def bwd(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))
    return _make(a.values + b.values, (a, b), bwd, "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    def bwd(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))
    return _make(a.values - b.values, (a, b), bwd, "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    def bwd(g):
        return ((a, _unbroadcast(g * b.values, a.shape)),
                (b, _unbroadcast(g * a.values, b.shape)))
    return _make(a.values * b.values, (a, b), bwd, "mul")


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    def bwd(g):
        return ((a, _unbroadcast(g / b.values, a.shape)),
                (b, _unbroadcast(-g * a.values / b.values ** 2, b.shape)))
    return _make(a.values / b.values, (a, b), bwd, "div")


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    def bwd(g):
        return ((a, g @ b.values.T), (b, a.values.T @ g))
    return _make(a.values @ b.values, (a, b), bwd, "matmul")


def spmm(a_sparse, x):
    """Sparse-constant @ dense-tensor product."""
    x = _as_tensor(x)
    a = sp.csr_matrix(a_sparse)
    def bwd(g):
        return ((x, a.T @ g),)
    return _make(a @ x.values, (x,), bwd, "spmm")


# elementwise -------------------------------------------------------

def sigmoid(x):
    x = _as_tensor(x)
    out_vals = np.where(x.values >= 0,
                        1.0 / (1.0 + np.exp(-np.clip(x.values, -500, 500))),
                        np.exp(np.clip(x.values, -500, 500)) /
                        (1.0 + np.exp(np.clip(x.values, -500, 500))))
    def bwd(g):
        return ((x, g * out_vals * (1.0 - out_vals)),)
    return _make(out_vals, (x,), bwd, "sigmoid")


def tanh(x):
    x = _as_tensor(x)
    out_vals = np.tanh(x.values)
    def bwd(g):
        return ((x, g * (1.0 - out_vals ** 2)),)
    return _make(out_vals, (x,), bwd, "tanh")


def relu(x):
    x = _as_tensor(x)
    def bwd(g):
        return ((x, g * (x.values > 0)),)
    return _make(np.maximum(x.values, 0.0), (x,), bwd, "relu")


def exp(x):
    x = _as_tensor(x)
    out_vals = np.exp(x.values)
    def bwd(g):
        return ((x, g * out_vals),)
    return _make(out_vals, (x,), bwd, "exp")


def log(x):
    x = _as_tensor(x)
    def bwd(g):
        return ((x, g / x.values),)
    return _make(np.log(x.values), (x,), bwd, "log")


def sqrt(x):
    x = _as_tensor(x)
    out_vals = np.sqrt(x.values)
    def bwd(g):
        return ((x, g * 0.5 / out_vals),)
    return _make(out_vals, (x,), bwd, "sqrt")


def absolute(x):
    x = _as_tensor(x)
    def bwd(g):
        return ((x, g * np.sign(x.values)),)
    return _make(np.abs(x.values), (x,), bwd, "abs")


def clip(x, lo, hi):
    """Clamp values; gradient passes only through the interior."""
    x = _as_tensor(x)
    mask = (x.values > lo) & (x.values < hi)
    def bwd(g):
        return ((x, g * mask),)
    return _make(np.clip(x.values, lo, hi), (x,), bwd, "clip")


# structural --------------------------------------------------------

def take_rows(x, idx):
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    def bwd(g):
        gx = np.zeros_like(x.values)
        np.add.at(gx, idx, g)
        return ((x, gx),)
    return _make(x.values[idx], (x,), bwd, "take_rows")


def softmax_rows(x):
    x = _as_tensor(x)
    shifted = x.values - x.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_vals = e / e.sum(axis=1, keepdims=True)
    def bwd(g):
        dot = (g * out_vals).sum(axis=1, keepdims=True)
        return ((x, out_vals * (g - dot)),)
    return _make(out_vals, (x,), bwd, "softmax_rows")


# reductions --------------------------------------------------------

def tsum(x, axis=None, keepdims=True):
    x = _as_tensor(x)
    out_vals = x.values.sum(axis=axis, keepdims=True)
    if not keepdims and axis is None:
        out_vals = out_vals.reshape(1, 1)
    def bwd(g):
        return ((x, np.broadcast_to(g, x.shape).copy()),)
    return _make(out_vals, (x,), bwd, "sum")


def tmean(x, axis=None):
    x = _as_tensor(x)
    out_vals = x.values.mean(axis=axis, keepdims=True)
    count = x.values.size if axis is None else x.shape[axis]
    def bwd(g):
        return ((x, np.broadcast_to(g / count, x.shape).copy()),)
    return _make(out_vals, (x,), bwd, "mean")


def row_max(x):
    """Max over each row; ties route gradient to the first maximizer."""
    x = _as_tensor(x)
    arg = x.values.argmax(axis=1)
    out_vals = x.values[np.arange(x.shape[0]), arg][:, None]
    def bwd(g):
        gx = np.zeros_like(x.values)
        gx[np.arange(x.shape[0]), arg] = g[:, 0]
        return ((x, gx),)
    return _make(out_vals, (x,), bwd, "row_max")


def row_norm2(x):
    """Euclidean norm of each row, with a zero-safe gradient at 0."""
    x = _as_tensor(x)
    out_vals = np.sqrt((x.values ** 2).sum(axis=1, keepdims=True))
    def bwd(g):
        denom = np.where(out_vals > 0, out_vals, 1.0)
        return ((x, g * x.values / denom),)
    return _make(out_vals, (x,), bwd, "row_norm2")


# GCN building blocks -----------------------------------------------

def normalize_adjacency(graph_or_adj):
    """Symmetric normalization with self-loops: D^-1/2 (A + I) D^-1/2."""
    adj = graph_or_adj if sp.issparse(graph_or_adj) else graph_or_adj.adjacency
    n = adj.shape[0]
    a_hat = sp.csr_matrix(adj, dtype=np.float64) + sp.identity(n, format="csr")
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    d_inv_sqrt = 1.0 / np.sqrt(deg)
    d_mat = sp.diags(d_inv_sqrt)
    return sp.csr_matrix(d_mat @ a_hat @ d_mat)


_ACTIVATIONS = {
    "identity": lambda t: t,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
}


def gcn_layer(a_hat, h, w, activation="identity"):
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation '{activation}'")
    return _ACTIVATIONS[activation](matmul(spmm(a_hat, h), w))


# optimizer ---------------------------------------------------------

class Adam:
    """Adam with bias correction and a global gradient-norm clip."""

    def __init__(self, params, lr=0.01, betas=(0.9, 0.999), eps=1e-8,
                 clip_norm=5.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p in self.params:
            if p.grad is None:
                raise NumericError("parameter registered with Adam has no gradient")
        grads = [p.grad for p in self.params]
        if self.clip_norm is not None:
            total = np.sqrt(sum(float((g ** 2).sum()) for g in grads))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                grads = [g * scale for g in grads]
        self.step_count += 1
        t = self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g ** 2
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            _check_finite(p.values, "adam_step")


# checkpoints -------------------------------------------------------

_CKPT_MAGIC = "MECOLE-CKPT-1"


def save_checkpoint(path, arrays):
    """Write named arrays as a text container with shape headers."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_CKPT_MAGIC + "\n")
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            shape = " ".join(str(s) for s in arr.shape)
            fh.write(f"{name} {shape}\n")
            fh.write(" ".join(repr(float(x)) for x in arr.reshape(-1)) + "\n")


def load_checkpoint(path):
    from .errors import DataError

    arrays = {}
    with open(path, "r", encoding="utf-8") as fh:
        magic = fh.readline().rstrip("\n")
        if magic != _CKPT_MAGIC:
            raise DataError(f"{path}: bad checkpoint magic '{magic}'")
        while True:
            header = fh.readline()
            if not header:
                break
            parts = header.split()
            name, shape = parts[0], tuple(int(s) for s in parts[1:])
            flat = np.array([float(tok) for tok in fh.readline().split()])
            arrays[name] = flat.reshape(shape)
    return arrays
