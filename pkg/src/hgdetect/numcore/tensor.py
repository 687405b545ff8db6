"""Reverse-mode tape over a fixed operator set.

Every value is a rank<=2 float64 array; scalars are (1, 1).  Each op records
its parents and an adjoint closure; `backward` traverses the tape in reverse
topological order.  Gradients accumulate across calls until cleared.
"""

import numpy as np
import scipy.sparse as sp


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjps")

    def __init__(self, data, requires_grad=False, parents=(), vjps=()):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim > 2:
            raise ValueError(f"rank {arr.ndim} tensors unsupported (max 2)")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjps = vjps

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(())[()])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"


def constant(data) -> Tensor:
    return Tensor(data)


def _node(data, parents, vjps) -> Tensor:
    return Tensor(data, parents=tuple(parents), vjps=tuple(vjps))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


_OP_SET = frozenset({
    "matmul", "spmm", "transpose", "add", "add_bias", "neg", "scale", "scale_by",
    "mul", "mul_cols", "div_safe_cols", "tanh", "elu", "exp", "log",
    "softmax_rows", "row_normalize", "cosine", "cosine_matrix", "concat",
    "slice_cols", "gather_rows", "take_pairs", "mean_rows", "mean_all",
    "layer_norm", "dropout", "frobenius_sq",
})


def op_set() -> frozenset:
    """Names of the supported differentiable operations."""
    return _OP_SET


# -- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out_data = a.data @ b.data
    return _node(out_data, (a, b), (
        lambda g, b=b: g @ b.data.T,
        lambda g, a=a: a.data.T @ g,
    ))


def spmm(s, b: Tensor) -> Tensor:
    """Constant sparse CSR times dense tensor."""
    if not sp.issparse(s):
        raise ValueError("spmm expects a scipy sparse matrix on the left")
    if s.shape[1] != b.shape[0]:
        raise ValueError(f"spmm shape mismatch {s.shape} @ {b.shape}")
    return _node(np.asarray(s @ b.data), (b,), (lambda g, s=s: np.asarray(s.T @ g),))


def transpose(a: Tensor) -> Tensor:
    return _node(a.data.T.copy(), (a,), (lambda g: g.T,))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")
    return _node(a.data + b.data, (a, b), (lambda g: g, lambda g: g))


def add_bias(m: Tensor, bias: Tensor) -> Tensor:
    """Add a (1, d) row vector to every row of an (n, d) matrix."""
    if bias.shape != (1, m.shape[1]):
        raise ValueError(f"bias shape {bias.shape} incompatible with {m.shape}")
    return _node(m.data + bias.data, (m, bias), (
        lambda g: g,
        lambda g: g.sum(axis=0, keepdims=True),
    ))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), (lambda g: -g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(a.data * c, (a,), (lambda g: g * c,))


def scale_by(a: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a (1, 1) scalar tensor."""
    if s.shape != (1, 1):
        raise ValueError(f"scale_by expects a scalar tensor, got {s.shape}")
    return _node(a.data * s.data, (a, s), (
        lambda g, s=s: g * s.data,
        lambda g, a=a: np.array([[float((g * a.data).sum())]]),
    ))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch {a.shape} vs {b.shape}")
    return _node(a.data * b.data, (a, b), (
        lambda g, b=b: g * b.data,
        lambda g, a=a: g * a.data,
    ))


def mul_cols(m: Tensor, col: Tensor) -> Tensor:
    """Multiply each row of (n, d) by the matching entry of an (n, 1) column."""
    if col.shape != (m.shape[0], 1):
        raise ValueError(f"column shape {col.shape} incompatible with {m.shape}")
    return _node(m.data * col.data, (m, col), (
        lambda g, col=col: g * col.data,
        lambda g, m=m: (g * m.data).sum(axis=1, keepdims=True),
    ))


def div_safe_cols(m: Tensor, col: Tensor) -> Tensor:
    """Divide each row of (n, d) by an (n, 1) column; rows with a zero
    denominator yield zeros (used as the empty-neighborhood fallback)."""
    if col.shape != (m.shape[0], 1):
        raise ValueError(f"column shape {col.shape} incompatible with {m.shape}")
    nz = col.data != 0.0
    denom = np.where(nz, col.data, 1.0)
    out = np.where(nz, m.data / denom, 0.0)
    return _node(out, (m, col), (
        lambda g: np.where(nz, g / denom, 0.0),
        lambda g, out=out: np.where(nz, -(g * out).sum(axis=1, keepdims=True) / denom, 0.0),
    ))


# -- elementwise ------------------------------------------------------------

def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), (lambda g: g * (1.0 - y * y),))


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    y = np.where(a.data > 0, a.data, alpha * np.expm1(a.data))
    return _node(y, (a,), (lambda g: g * np.where(a.data > 0, 1.0, y + alpha),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _node(y, (a,), (lambda g: g * y,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log requires strictly positive input")
    return _node(np.log(a.data), (a,), (lambda g: g / a.data,))


# -- reductions and row ops -------------------------------------------------

def softmax_rows(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    return _node(y, (a,), (lambda g: y * (g - (g * y).sum(axis=1, keepdims=True)),))


def row_normalize(a: Tensor) -> Tensor:
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("row_normalize: zero-norm row")
    y = a.data / norms
    return _node(y, (a,), (lambda g: (g - y * (g * y).sum(axis=1, keepdims=True)) / norms,))


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity between two (1, d) vectors, as a scalar tensor."""
    return matmul(row_normalize(u), transpose(row_normalize(v)))


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """(n, m) matrix of cosine similarities between rows of a and rows of b."""
    return matmul(row_normalize(a), transpose(row_normalize(b)))


def concat(parts, axis: int = 1) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ValueError("concat of empty list")
    if axis not in (0, 1):
        raise ValueError("concat axis must be 0 or 1")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)
    vjps = []
    for i in range(len(parts)):
        lo, hi = offsets[i], offsets[i + 1]
        if axis == 1:
            vjps.append(lambda g, lo=lo, hi=hi: g[:, lo:hi])
        else:
            vjps.append(lambda g, lo=lo, hi=hi: g[lo:hi, :])
    return _node(out, parts, vjps)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    if not (0 <= lo < hi <= a.shape[1]):
        raise ValueError(f"slice_cols [{lo}:{hi}] out of range for {a.shape}")

    def vjp(g):
        full = np.zeros_like(a.data)
        full[:, lo:hi] = g
        return full

    return _node(a.data[:, lo:hi].copy(), (a,), (vjp,))


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return full

    return _node(a.data[idx], (a,), (vjp,))


def take_pairs(a: Tensor, rows, cols) -> Tensor:
    """Elements a[rows[i], cols[i]] as an (n, 1) column."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if rows.shape != cols.shape:
        raise ValueError("take_pairs index length mismatch")

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, cols), g[:, 0])
        return full

    return _node(a.data[rows, cols].reshape(-1, 1), (a,), (vjp,))


def mean_rows(a: Tensor) -> Tensor:
    """Mean over rows (a set of vectors), as a (1, d) tensor."""
    n = a.shape[0]
    return _node(a.data.mean(axis=0, keepdims=True), (a,),
                 (lambda g: np.repeat(g, n, axis=0) / n,))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return _node(np.array([[a.data.mean()]]), (a,),
                 (lambda g: np.full_like(a.data, float(g[0, 0]) / n),))


def frobenius_sq(a: Tensor) -> Tensor:
    return _node(np.array([[float((a.data * a.data).sum())]]), (a,),
                 (lambda g: 2.0 * float(g[0, 0]) * a.data,))


def layer_norm(x: Tensor, gain: Tensor = None, bias: Tensor = None, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization with optional learnable gain/bias."""
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    d = x.shape[1]

    def vjp_x(g):
        gh = g if gain is None else g * gain.data
        return inv * (gh - gh.mean(axis=1, keepdims=True)
                      - xhat * (gh * xhat).mean(axis=1, keepdims=True))

    if gain is None and bias is None:
        return _node(xhat, (x,), (vjp_x,))
    if gain is None or bias is None:
        raise ValueError("layer_norm gain and bias must be given together")
    if gain.shape != (1, d) or bias.shape != (1, d):
        raise ValueError(f"layer_norm gain/bias must be (1, {d})")
    out = xhat * gain.data + bias.data
    return _node(out, (x, gain, bias), (
        vjp_x,
        lambda g: (g * xhat).sum(axis=0, keepdims=True),
        lambda g: g.sum(axis=0, keepdims=True),
    ))


def dropout(x: Tensor, rate: float, key: int, training: bool) -> Tensor:
    """Train-mode inverted dropout with a counter-based (Philox) mask so runs
    replay bitwise given the same key.  Identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return _node(x.data.copy(), (x,), (lambda g: g,))
    rng = np.random.Generator(np.random.Philox(key=int(key) % (1 << 64)))
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _node(x.data * mask, (x,), (lambda g: g * mask,))


# -- backward ---------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate gradients of everything reachable from a scalar loss.

    Repeated calls without clearing grads accumulate.
    """
    if loss.data.shape != (1, 1):
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    seed_grads = {id(loss): np.ones((1, 1))}
    for node in reversed(order):
        g = seed_grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad or not node._parents:
            _accumulate(node, g)
        for parent, vjp in zip(node._parents, node._vjps):
            pg = vjp(g)
            if id(parent) in seed_grads:
                seed_grads[id(parent)] += pg
            else:
                seed_grads[id(parent)] = pg
