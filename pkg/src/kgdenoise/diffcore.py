"""Dense tensors over numpy with taped reverse-mode differentiation.

Every primitive records itself on a Tape during the forward pass; backward()
replays the tape once, in reverse execution order, applying each primitive's
vector-Jacobian product. Reductions happen in numpy's fixed row-major order,
so outputs and gradients are bitwise reproducible for identical inputs.

Gradient checks should run on float64 tapes; float32 sits below the
finite-difference noise floor and is meant for training only.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class Tensor:
    """Array value bound to the tape that produced it. grad is filled by backward()."""

    __slots__ = ("data", "tape", "grad")

    def __init__(self, data, tape=None):
        self.data = np.asarray(data)
        self.tape = tape
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # light operator sugar; everything routes through the recorded primitives
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter:
    """Named trainable array with a persistent gradient buffer.

    Gradients accumulate across backward() calls until zero_grad().
    """

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value):
        self.name = name
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Tape:
    """Ordered record of executed primitives for one forward pass.

    Execution order is a valid topological order, so the reverse walk visits
    each operation exactly once with its output gradient already complete.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._ops = []      # (output, inputs, vjp)
        self._leaves = []   # (leaf tensor, Parameter)

    def leaf(self, param: Parameter) -> Tensor:
        t = Tensor(param.value.astype(self.dtype, copy=False), self)
        self._leaves.append((t, param))
        return t

    def constant(self, value) -> Tensor:
        return Tensor(np.asarray(value, dtype=self.dtype), self)

    def _record(self, out, inputs, vjp):
        self._ops.append((out, inputs, vjp))

    def __len__(self):
        return len(self._ops)


def backward(tape: Tape, output: Tensor) -> None:
    """Accumulate d(output)/d(param) into every leaf parameter's grad buffer."""
    if not isinstance(output, Tensor) or output.tape is not tape:
        raise ValueError("backward: output tensor was not produced on this tape")
    if output.data.size != 1:
        raise ShapeError("backward: output must be a single-element tensor")
    for out, inputs, _ in tape._ops:
        out.grad = None
        for t in inputs:
            t.grad = None
    for t, _ in tape._leaves:
        t.grad = None
    output.grad = np.ones_like(output.data)
    for out, inputs, vjp in reversed(tape._ops):
        if out.grad is None:
            continue
        grads = vjp(out.grad)
        for t, g in zip(inputs, grads):
            if g is None:
                continue
            # never mutate g in place: vjps may hand back views of out.grad
            t.grad = g if t.grad is None else t.grad + g
    for leaf, param in tape._leaves:
        if leaf.grad is not None:
            param.grad += leaf.grad.astype(param.value.dtype, copy=False)


def _tape_of(*args) -> Tape:
    for a in args:
        if isinstance(a, Tensor) and a.tape is not None:
            return a.tape
    raise ValueError("no tape found among operands; wrap constants via Tape.constant")


def _wrap(x, tape: Tape) -> Tensor:
    if isinstance(x, Tensor):
        if x.tape is not None and x.tape is not tape:
            raise ValueError("operands belong to different tapes")
        return x
    return tape.constant(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _wrap(a, tape), _wrap(b, tape)
    av, bv = a.data, b.data
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} x {bv.shape}")
    out = Tensor(av @ bv, tape)

    def vjp(g):
        return g @ bv.T, av.T @ g

    tape._record(out, (a, b), vjp)
    return out


def _binary(name, fwd, vjp_a, vjp_b):
    def op(a, b):
        tape = _tape_of(a, b)
        a_, b_ = _wrap(a, tape), _wrap(b, tape)
        av, bv = a_.data, b_.data
        try:
            val = fwd(av, bv)
        except ValueError as exc:
            raise ShapeError(f"{name}: {exc}") from exc
        out = Tensor(val, tape)

        def vjp(g):
            return (
                _unbroadcast(vjp_a(g, av, bv), av.shape),
                _unbroadcast(vjp_b(g, av, bv), bv.shape),
            )

        tape._record(out, (a_, b_), vjp)
        return out

    op.__name__ = name
    return op


add = _binary("add", lambda a, b: a + b, lambda g, a, b: g, lambda g, a, b: g)
sub = _binary("sub", lambda a, b: a - b, lambda g, a, b: g, lambda g, a, b: -g)
mul = _binary("mul", lambda a, b: a * b, lambda g, a, b: g * b, lambda g, a, b: g * a)
div = _binary(
    "div",
    lambda a, b: a / b,
    lambda g, a, b: g / b,
    lambda g, a, b: -g * a / (b * b),
)


def concat(parts, axis: int = 0) -> Tensor:
    parts = list(parts)
    tape = _tape_of(*parts)
    parts = [_wrap(p, tape) for p in parts]
    vals = [p.data for p in parts]
    try:
        val = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from exc
    out = Tensor(val, tape)
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    tape._record(out, tuple(parts), vjp)
    return out


def reshape(x, shape) -> Tensor:
    tape = _tape_of(x)
    x = _wrap(x, tape)
    old = x.data.shape
    out = Tensor(x.data.reshape(shape), tape)

    def vjp(g):
        return (g.reshape(old),)

    tape._record(out, (x,), vjp)
    return out


def transpose(x) -> Tensor:
    tape = _tape_of(x)
    x = _wrap(x, tape)
    if x.data.ndim != 2:
        raise ShapeError("transpose: expects a 2-d tensor")
    out = Tensor(x.data.T, tape)

    def vjp(g):
        return (g.T,)

    tape._record(out, (x,), vjp)
    return out


def take_rows(x, indices) -> Tensor:
    """Gather rows (axis 0). Duplicate indices accumulate on the way back."""
    tape = _tape_of(x)
    x = _wrap(x, tape)
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(x.data[idx], tape)
    shape = x.data.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, idx, g)
        return (gx,)

    tape._record(out, (x,), vjp)
    return out


def segment_sum(x, segment_ids, num_segments: int) -> Tensor:
    """Scatter-add rows of x into num_segments buckets."""
    tape = _tape_of(x)
    x = _wrap(x, tape)
    ids = np.asarray(segment_ids, dtype=np.intp)
    if ids.shape[0] != x.data.shape[0]:
        raise ShapeError("segment_sum: one segment id per row required")
    val = np.zeros((num_segments,) + x.data.shape[1:], dtype=x.data.dtype)
    np.add.at(val, ids, x.data)
    out = Tensor(val, tape)

    def vjp(g):
        return (g[ids],)

    tape._record(out, (x,), vjp)
    return out


def even_cols(x) -> Tensor:
    tape = _tape_of(x)
    x = _wrap(x, tape)
    out = Tensor(np.ascontiguousarray(x.data[:, 0::2]), tape)
    shape = x.data.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[:, 0::2] = g
        return (gx,)

    tape._record(out, (x,), vjp)
    return out


def odd_cols(x) -> Tensor:
    tape = _tape_of(x)
    x = _wrap(x, tape)
    out = Tensor(np.ascontiguousarray(x.data[:, 1::2]), tape)
    shape = x.data.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[:, 1::2] = g
        return (gx,)

    tape._record(out, (x,), vjp)
    return out


def interleave_cols(a, b) -> Tensor:
    """Zip two (n, d) tensors into (n, 2d): columns a0 b0 a1 b1 ..."""
    tape = _tape_of(a, b)
    a, b = _wrap(a, tape), _wrap(b, tape)
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise ShapeError("interleave_cols: expects two equal-shape 2-d tensors")
    n, d = a.data.shape
    val = np.empty((n, 2 * d), dtype=a.data.dtype)
    val[:, 0::2] = a.data
    val[:, 1::2] = b.data
    out = Tensor(val, tape)

    def vjp(g):
        return np.ascontiguousarray(g[:, 0::2]), np.ascontiguousarray(g[:, 1::2])

    tape._record(out, (a, b), vjp)
    return out


def sum_axis(x, axis=None, keepdims: bool = False) -> Tensor:
    tape = _tape_of(x)
    x = _wrap(x, tape)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), tape)
    shape = x.data.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    tape._record(out, (x,), vjp)
    return out


def mean_axis(x, axis=None, keepdims: bool = False) -> Tensor:
    tape = _tape_of(x)
    x = _wrap(x, tape)
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims), tape)
    shape = x.data.shape
    count = x.data.size if axis is None else shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    tape._record(out, (x,), vjp)
    return out


def _unary(name, fwd, bwd):
    def op(x):
        tape = _tape_of(x)
        x_ = _wrap(x, tape)
        val = fwd(x_.data)
        out = Tensor(val, tape)

        def vjp(g):
            return (bwd(g, x_.data, val),)

        tape._record(out, (x_,), vjp)
        return out

    op.__name__ = name
    return op


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


sigmoid = _unary("sigmoid", _stable_sigmoid, lambda g, x, v: g * v * (1.0 - v))
relu = _unary("relu", lambda x: np.maximum(x, 0.0), lambda g, x, v: g * (x > 0))
log = _unary("log", np.log, lambda g, x, v: g / x)
exp = _unary("exp", np.exp, lambda g, x, v: g * v)
sin = _unary("sin", np.sin, lambda g, x, v: g * np.cos(x))
cos = _unary("cos", np.cos, lambda g, x, v: -g * np.sin(x))


def powc(x, exponent: float) -> Tensor:
    """Elementwise power with a constant exponent."""
    tape = _tape_of(x)
    x = _wrap(x, tape)
    val = np.power(x.data, exponent)
    out = Tensor(val, tape)

    def vjp(g):
        return (g * exponent * np.power(x.data, exponent - 1.0),)

    tape._record(out, (x,), vjp)
    return out


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient passes through inside the bounds."""
    tape = _tape_of(x)
    x = _wrap(x, tape)
    out = Tensor(np.clip(x.data, lo, hi), tape)
    mask = (x.data >= lo) & (x.data <= hi)

    def vjp(g):
        return (g * mask,)

    tape._record(out, (x,), vjp)
    return out


def softmax(x) -> Tensor:
    """Row softmax over the last axis, shift-stabilized."""
    tape = _tape_of(x)
    x = _wrap(x, tape)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    val = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(val, tape)

    def vjp(g):
        dot = (g * val).sum(axis=-1, keepdims=True)
        return (val * (g - dot),)

    tape._record(out, (x,), vjp)
    return out


def softmax_cross_entropy(logits, target_indices) -> Tensor:
    """Fused log-sum-exp cross-entropy; returns one loss per row.

    Stays finite for logits up to magnitude ~1e4 because the shift removes
    the overflow before exponentiation.
    """
    tape = _tape_of(logits)
    logits = _wrap(logits, tape)
    targets = np.asarray(target_indices, dtype=np.intp)
    lv = logits.data
    if lv.ndim != 2:
        raise ShapeError("softmax_cross_entropy: logits must be (rows, classes)")
    if targets.shape != (lv.shape[0],):
        raise ShapeError("softmax_cross_entropy: one target index per row required")
    shifted = lv - lv.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + lv.max(axis=1)
    rows = np.arange(lv.shape[0])
    out = Tensor(lse - lv[rows, targets], tape)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        gl = probs * g[:, None]
        gl[rows, targets] -= g
        return (gl,)

    tape._record(out, (logits,), vjp)
    return out


def l2norm_axis(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    tape = _tape_of(x)
    x = _wrap(x, tape)
    val = np.sqrt(np.square(x.data).sum(axis=axis, keepdims=keepdims))
    out = Tensor(val, tape)

    def vjp(g):
        n = val if keepdims else np.expand_dims(val, axis)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (ge * x.data / np.maximum(n, 1e-300),)

    tape._record(out, (x,), vjp)
    return out


def cosine_similarity(a, b) -> Tensor:
    """Row-wise cosine similarity of two (n, d) tensors -> (n,)."""
    tape = _tape_of(a, b)
    a, b = _wrap(a, tape), _wrap(b, tape)
    av, bv = a.data, b.data
    if av.shape != bv.shape or av.ndim != 2:
        raise ShapeError("cosine_similarity: expects two equal-shape 2-d tensors")
    na = np.sqrt(np.square(av).sum(axis=1))
    nb = np.sqrt(np.square(bv).sum(axis=1))
    if (na == 0.0).any() or (nb == 0.0).any():
        raise DomainError("cosine_similarity: zero-norm row")
    val = (av * bv).sum(axis=1) / (na * nb)
    out = Tensor(val, tape)

    def vjp(g):
        ga = g[:, None] * (bv / (na * nb)[:, None] - av * (val / (na * na))[:, None])
        gb = g[:, None] * (av / (na * nb)[:, None] - bv * (val / (nb * nb))[:, None])
        return ga, gb

    tape._record(out, (a, b), vjp)
    return out


def cosine_matrix(a, b) -> Tensor:
    """All-pairs cosine similarity: (n, d) x (m, d) -> (n, m)."""
    tape = _tape_of(a, b)
    a, b = _wrap(a, tape), _wrap(b, tape)
    if (np.square(a.data).sum(axis=1) == 0.0).any() or (
        np.square(b.data).sum(axis=1) == 0.0
    ).any():
        raise DomainError("cosine_matrix: zero-norm row")
    an = div(a, l2norm_axis(a, axis=1, keepdims=True))
    bn = div(b, l2norm_axis(b, axis=1, keepdims=True))
    return matmul(an, transpose(bn))


def symmetric_adjacency(weights, rows, cols, n_nodes: int) -> Tensor:
    """Dense symmetric adjacency from weighted unordered pairs."""
    tape = _tape_of(weights)
    w = _wrap(weights, tape)
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)
    if w.data.ndim != 1 or r.shape != w.data.shape or c.shape != w.data.shape:
        raise ShapeError("symmetric_adjacency: weights, rows, cols must align 1-d")
    val = np.zeros((n_nodes, n_nodes), dtype=w.data.dtype)
    np.add.at(val, (r, c), w.data)
    np.add.at(val, (c, r), w.data)
    out = Tensor(val, tape)

    def vjp(g):
        return (g[r, c] + g[c, r],)

    tape._record(out, (w,), vjp)
    return out


# ---------------------------------------------------------------------------
# optimizers


class SGD:
    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self):
        for p in self.params:
            p.value -= self.lr * p.grad

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class Adam:
    """Adaptive-moment gradient descent with bias correction."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    n_checked: int
    per_param: dict = field(default_factory=dict)


def grad_check(loss_fn, params, epsilon: float = 1e-5) -> GradCheckReport:
    """Compare taped gradients against central finite differences.

    loss_fn must rebuild the forward pass from scratch on each call (fresh
    tape, any noise pre-drawn and held fixed) and return a scalar Tensor.
    Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = loss_fn()
    base = float(out.data)
    if not np.isfinite(base):
        raise DomainError("grad_check: non-finite loss")
    backward(out.tape, out)
    analytic = {p.name: p.grad.astype(np.float64).copy() for p in params}

    worst = 0.0
    worst_param = ""
    per_param = {}
    checked = 0
    for p in params:
        flat = p.value.reshape(-1)
        ana = analytic[p.name].reshape(-1)
        pmax = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = float(loss_fn().data)
            flat[i] = orig - epsilon
            f_minus = float(loss_fn().data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise DomainError(f"grad_check: non-finite loss near {p.name}[{i}]")
            num = (f_plus - f_minus) / (2.0 * epsilon)
            denom = max(abs(num), abs(ana[i]), 1e-8)
            rel = abs(num - ana[i]) / denom
            if rel > pmax:
                pmax = rel
            checked += 1
        per_param[p.name] = pmax
        if pmax > worst:
            worst = pmax
            worst_param = p.name
    return GradCheckReport(worst, worst_param, checked, per_param)


# ---------------------------------------------------------------------------
# checkpoint container

CHECKPOINT_MAGIC = b"DLPCKPT1\n"
_PRECISIONS = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def save_checkpoint(path, arrays: dict) -> None:
    """Write named float arrays: versioned header, manifest, raw LE values."""
    manifest = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype == np.float32:
            precision = "f32"
        elif arr.dtype == np.float64:
            precision = "f64"
        else:
            raise ValueError(f"checkpoint: unsupported dtype {arr.dtype} for {name}")
        raw = arr.astype(_PRECISIONS[precision], copy=False).tobytes(order="C")
        manifest.append({
            "name": name,
            "shape": list(arr.shape),
            "precision": precision,
            "offset": offset,
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("checkpoint: bad magic; not a recognized checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(hlen).decode("utf-8"))
        blob = fh.read()
    out = {}
    for entry in manifest:
        dt = _PRECISIONS[entry["precision"]]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=start)
        out[entry["name"]] = arr.reshape(shape).astype(dt.newbyteorder("="))
    return out
