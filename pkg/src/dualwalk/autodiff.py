"""Minimal reverse-mode autodiff over dense rank<=2 numpy arrays.

Covers exactly what the two policy networks need: matrix products,
concatenation/slicing, ReLU/tanh/sigmoid, embedding lookups, masked
softmax (for padded action lists), categorical log-probs and entropies,
an LSTM cell, and Adam with global-norm gradient clipping.

Forward ops never mutate inputs; parameters change only in
``AdamOptimizer.step``. Each op records its parents and a backward
closure, and ``backward`` walks the recorded graph once in reverse
topological order, so per-episode tapes are freed simply by dropping
references to the episode's tensors.
"""

from __future__ import annotations

import json
import struct

import numpy as np

DEFAULT_DTYPE = np.float32


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "_backward", "name")

    def __init__(self, value, requires_grad=False, parents=(), backward=None, name=None):
        self.value = np.asarray(value)
        if self.value.ndim > 2:
            raise ValueError(f"rank {self.value.ndim} > 2 not supported")
        self.requires_grad = requires_grad
        self.grad = None
        self.parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g):
        if self.grad is None:
            self.grad = g.astype(self.value.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        tag = self.name or "tensor"
        return f"<{tag} {self.value.shape} {self.value.dtype}>"


def parameter(value, name=None, dtype=DEFAULT_DTYPE):
    return Tensor(np.asarray(value, dtype=dtype), requires_grad=True, name=name)


def constant(value, dtype=DEFAULT_DTYPE):
    return Tensor(np.asarray(value, dtype=dtype), requires_grad=False)


def _make(value, parents, backward):
    if any(p.requires_grad or p.parents for p in parents):
        return Tensor(value, parents=parents, backward=backward)
    return Tensor(value)


# -- arithmetic ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; b may be a vector bias broadcast over rows of a."""
    out = a.value + b.value

    def backward(g, a=a, b=b):
        ga = g
        if a.value.shape != g.shape:
            raise ValueError("add: shape mismatch in backward")
        a.accumulate(ga)
        if b.value.shape == g.shape:
            b.accumulate(g)
        elif b.value.ndim == 1 and g.ndim == 2 and b.value.shape[0] == g.shape[1]:
            b.accumulate(g.sum(axis=0))
        else:
            raise ValueError(f"add: cannot reduce grad {g.shape} to {b.value.shape}")

    return _make(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.value - b.value

    def backward(g, a=a, b=b):
        a.accumulate(g)
        b.accumulate(-g)

    return _make(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.value.shape != b.value.shape:
        raise ValueError(f"mul: {a.value.shape} vs {b.value.shape}")
    out = a.value * b.value

    def backward(g, a=a, b=b):
        a.accumulate(g * b.value)
        b.accumulate(g * a.value)

    return _make(out, (a, b), backward)


def scale(a: Tensor, k: float) -> Tensor:
    out = a.value * a.value.dtype.type(k)

    def backward(g, a=a, k=k):
        a.accumulate(g * a.value.dtype.type(k))

    return _make(out, (a,), backward)


def matmul(a: Tensor, w: Tensor) -> Tensor:
    """(B, n) @ (n, m) -> (B, m); also handles (n,) @ (n, m)."""
    out = a.value @ w.value

    def backward(g, a=a, w=w):
        if a.value.ndim == 1:
            a.accumulate(g @ w.value.T)
            w.accumulate(np.outer(a.value, g))
        else:
            a.accumulate(g @ w.value.T)
            w.accumulate(a.value.T @ g)

    return _make(out, (a, w), backward)


# -- shape ops ----------------------------------------------------------------


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g, parts=parts, offsets=offsets, axis=axis):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if axis == 0:
                p.accumulate(g[lo:hi])
            else:
                p.accumulate(g[:, lo:hi])

    return _make(out, tuple(parts), backward)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    out = a.value[:, lo:hi] if a.value.ndim == 2 else a.value[lo:hi]

    def backward(g, a=a, lo=lo, hi=hi):
        full = np.zeros_like(a.value)
        if a.value.ndim == 2:
            full[:, lo:hi] = g
        else:
            full[lo:hi] = g
        a.accumulate(full)

    return _make(out, (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.value.reshape(shape)

    def backward(g, a=a):
        a.accumulate(g.reshape(a.value.shape))

    return _make(out, (a,), backward)


def repeat_rows(a: Tensor, k: int) -> Tensor:
    """Repeat each row k times: (B, m) -> (B*k, m). Grad sums over groups."""
    out = np.repeat(a.value, k, axis=0)

    def backward(g, a=a, k=k):
        a.accumulate(g.reshape(a.value.shape[0], k, -1).sum(axis=1))

    return _make(out, (a,), backward)


def row_sum(a: Tensor) -> Tensor:
    """Sum along the last axis: (B, m) -> (B,)."""
    out = a.value.sum(axis=1, dtype=np.float64).astype(a.value.dtype)

    def backward(g, a=a):
        a.accumulate(np.broadcast_to(g[:, None], a.value.shape))

    return _make(out, (a,), backward)


def gather(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup: (V, d)[idx] -> (len(idx), d). Grad scatter-adds."""
    idx = np.asarray(idx, dtype=np.int64)
    out = table.value[idx]

    def backward(g, table=table, idx=idx):
        # scatter-add straight into the buffer; tables are large
        if table.grad is None:
            table.grad = np.zeros_like(table.value)
        np.add.at(table.grad, idx, g)

    return _make(out, (table,), backward)


def pick(a: Tensor, idx: np.ndarray) -> Tensor:
    """Per-row element selection: (B, A), idx (B,) -> (B,)."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.value.shape[0])
    out = a.value[rows, idx]

    def backward(g, a=a, idx=idx, rows=rows):
        ga = np.zeros_like(a.value)
        ga[rows, idx] = g
        a.accumulate(ga)

    return _make(out, (a,), backward)


# -- nonlinearities -----------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.value, 0)

    def backward(g, a=a):
        a.accumulate(g * (a.value > 0))

    return _make(out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)

    def backward(g, a=a, out=out):
        a.accumulate(g * (1.0 - out * out))

    return _make(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.value))

    def backward(g, a=a, out=out):
        a.accumulate(g * out * (1.0 - out))

    return _make(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    out = np.log(a.value)

    def backward(g, a=a):
        a.accumulate(g / a.value)

    return _make(out, (a,), backward)


# -- softmax / entropy ---------------------------------------------------------


def masked_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Probabilities over unmasked entries per row; masked entries get 0.

    ``mask`` is a boolean array (True = legal). Every row needs at least
    one legal entry.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != scores.value.shape:
        raise ValueError(f"mask {mask.shape} vs scores {scores.value.shape}")
    if not mask.any(axis=-1).all():
        raise ValueError("masked_softmax: a row has no legal entry")

    neg = np.finfo(scores.value.dtype).min
    s = np.where(mask, scores.value, neg)
    m = s.max(axis=-1, keepdims=True)
    z = np.exp(s - m)
    z = np.where(mask, z, 0.0)
    out = z / z.sum(axis=-1, keepdims=True)

    def backward(g, scores=scores, out=out, mask=mask):
        dot = (g * out).sum(axis=-1, keepdims=True)
        gs = out * (g - dot)
        scores.accumulate(np.where(mask, gs, 0.0))

    return _make(out, (scores,), backward)


def masked_entropy(probs: Tensor, mask: np.ndarray) -> Tensor:
    """Shannon entropy per row of a masked probability matrix: (B, A) -> (B,)."""
    mask = np.asarray(mask, dtype=bool)
    p = probs.value
    safe = np.where(mask & (p > 0), p, 1.0)
    logp = np.log(safe)
    ent = -(np.where(mask, p * logp, 0.0)).sum(axis=-1)

    def backward(g, probs=probs, mask=mask, logp=logp, p=p):
        gp = np.where(mask & (p > 0), -(logp + 1.0), 0.0)
        probs.accumulate(gp * g[:, None])

    return _make(ent, (probs,), backward)


# -- reductions -----------------------------------------------------------------


def tsum(a: Tensor) -> Tensor:
    out = np.asarray(a.value.sum(dtype=np.float64), dtype=a.value.dtype)

    def backward(g, a=a):
        a.accumulate(np.broadcast_to(g, a.value.shape).astype(a.value.dtype))

    return _make(out, (a,), backward)


def tmean(a: Tensor) -> Tensor:
    n = a.value.size
    out = np.asarray(a.value.sum(dtype=np.float64) / n, dtype=a.value.dtype)

    def backward(g, a=a, n=n):
        a.accumulate(np.broadcast_to(g / n, a.value.shape).astype(a.value.dtype))

    return _make(out, (a,), backward)


# -- backward -------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate gradients for every reachable tensor with requires_grad."""
    if loss.value.ndim != 0:
        raise ValueError("backward expects a scalar loss")
    if loss._backward is None and not loss.requires_grad:
        raise ValueError("backward: no recorded graph on this tensor")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    # interior grads are per-pass scratch; only leaves accumulate across calls
    for node in order:
        if node.parents:
            node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# -- composite layers -------------------------------------------------------------


class LstmParams:
    """Single-cell LSTM weights, gates ordered [input, forget, cell, output]."""

    def __init__(self, input_dim, hidden_dim, rng, name, dtype=DEFAULT_DTYPE,
                 forget_bias=1.0):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.w_x = parameter(
            xavier_uniform(rng, input_dim, 4 * hidden_dim), f"{name}.w_x", dtype
        )
        self.w_h = parameter(
            xavier_uniform(rng, hidden_dim, 4 * hidden_dim), f"{name}.w_h", dtype
        )
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim : 2 * hidden_dim] = forget_bias
        self.b = parameter(b, f"{name}.b", dtype)

    def tensors(self):
        return [self.w_x, self.w_h, self.b]


def lstm_cell(params: LstmParams, h: Tensor, c: Tensor, x: Tensor) -> tuple[Tensor, Tensor]:
    """Standard LSTM gate equations on (B, H) state and (B, in) input rows."""
    H = params.hidden_dim
    pre = add(add(matmul(x, params.w_x), matmul(h, params.w_h)), params.b)
    i = sigmoid(slice_cols(pre, 0, H))
    f = sigmoid(slice_cols(pre, H, 2 * H))
    g = tanh(slice_cols(pre, 2 * H, 3 * H))
    o = sigmoid(slice_cols(pre, 3 * H, 4 * H))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


def mlp2_relu(x: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    """Two-layer feedforward with ReLU: x @ w1, relu, @ w2."""
    return matmul(relu(matmul(x, w1)), w2)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# -- optimizer ---------------------------------------------------------------------


class AdamOptimizer:
    """Adam with bias correction and global-norm gradient clipping."""

    def __init__(self, params: list[Tensor], lr=0.001, beta1=0.9, beta2=0.999,
                 eps=1e-8, clip_norm=5.0):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self) -> None:
        """Apply one update from accumulated grads, then clear them."""
        grads = [
            p.grad if p.grad is not None else np.zeros_like(p.value)
            for p in self.params
        ]
        if self.clip_norm:
            total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
            if total > self.clip_norm:
                k = self.clip_norm / total
                grads = [g * g.dtype.type(k) for g in grads]
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.value.dtype)
            p.value = p.value - update
            p.zero_grad()


# -- checkpoint container ------------------------------------------------------------

_CKPT_MAGIC = b"DWCKPT1\n"
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def save_tensors(path, named: dict[str, np.ndarray], manifest: dict) -> None:
    """Named-tensor container with a JSON manifest; byte-stable across saves."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(mbytes)))
        fh.write(mbytes)
        fh.write(struct.pack("<I", len(named)))
        for name in sorted(named):
            arr = np.ascontiguousarray(named[name])
            nbytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nbytes)))
            fh.write(nbytes)
            fh.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if fh.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint container")
        (mlen,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        named = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            code, ndim = struct.unpack("<BB", fh.read(2))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            dtype = _CODE_DTYPES[code].newbyteorder("<")
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(n * dtype.itemsize), dtype=dtype).reshape(shape)
            named[name] = arr.astype(_CODE_DTYPES[code])
        return named, manifest
