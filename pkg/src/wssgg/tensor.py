"""Dense matrices, a reverse-mode tape, Adam, and the checkpoint container.

Every operation accepts either plain 2-D ``numpy`` arrays or tape
:class:`Node` objects. When no input is tracked the result is a plain
array, so inference code runs the same functions without bookkeeping.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

LOG_FLOOR = 1e-12
MAGIC = b"WSG1"


class ShapeError(ValueError):
    pass


class ContractError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


def as_matrix(x, name="matrix"):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


class Node:
    __slots__ = ("tape", "value", "inputs", "vjp", "name", "trainable", "index")

    def __init__(self, tape, value, inputs=(), vjp=None, name=None, trainable=False):
        self.tape = tape
        self.value = value
        self.inputs = inputs
        self.vjp = vjp
        self.name = name
        self.trainable = trainable
        self.index = len(tape.nodes)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"<Node{tag} #{self.index} {self.value.shape}>"


class Tape:
    """Records operations in creation order; ``backward`` walks them in reverse."""

    def __init__(self):
        self.nodes = []

    def param(self, value, name):
        node = Node(self, as_matrix(value, name), name=name, trainable=True)
        self.nodes.append(node)
        return node

    def const(self, value):
        node = Node(self, as_matrix(value))
        self.nodes.append(node)
        return node

    def record(self, value, inputs, vjp):
        node = Node(self, value, tuple(inputs), vjp)
        self.nodes.append(node)
        return node

    def backward(self, loss):
        """Return ``{name: gradient}`` for every trainable node on the tape."""
        if not isinstance(loss, Node) or loss.tape is not self:
            raise ContractError("loss must be a node recorded on this tape")
        if loss.value.shape != (1, 1):
            raise ContractError(f"loss must be scalar (1x1), got {loss.value.shape}")
        grads = {loss.index: np.ones((1, 1))}
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads.pop(node.index, None) if not node.trainable else grads.get(node.index)
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.inputs, node.vjp(g)):
                if not isinstance(parent, Node) or pg is None:
                    continue
                if parent.index in grads:
                    grads[parent.index] = grads[parent.index] + pg
                else:
                    grads[parent.index] = pg
        out = {}
        for node in self.nodes:
            if node.trainable:
                g = grads.get(node.index)
                if g is None:
                    g = np.zeros_like(node.value)
                if not np.all(np.isfinite(g)):
                    raise NumericError(f"non-finite gradient for {node.name}")
                out[node.name] = g
        return out


def value(x):
    return x.value if isinstance(x, Node) else x


def _tape(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    return None


def _op(result, inputs, vjp):
    tape = _tape(*inputs)
    if tape is None:
        return result
    return tape.record(result, inputs, vjp)


# -- linear algebra ---------------------------------------------------------

def matmul(a, b):
    av, bv = value(a), value(b)
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {av.shape} x {bv.shape}")
    return _op(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a):
    return _op(value(a).T.copy(), (a,), lambda g: (g.T,))


def add(a, b):
    """Elementwise sum; ``b`` may also be a single row broadcast over ``a``."""
    av, bv = value(a), value(b)
    if av.shape == bv.shape:
        return _op(av + bv, (a, b), lambda g: (g, g))
    if bv.shape == (1, av.shape[1]):
        return _op(av + bv, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise ShapeError(f"add shape mismatch: {av.shape} + {bv.shape}")


def mul(a, b):
    av, bv = value(a), value(b)
    if av.shape != bv.shape:
        raise ShapeError(f"mul shape mismatch: {av.shape} * {bv.shape}")
    return _op(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c):
    c = float(c)
    return _op(value(a) * c, (a,), lambda g: (g * c,))


def sum_all(a):
    av = value(a)
    return _op(np.array([[av.sum()]]), (a,), lambda g: (np.full_like(av, g[0, 0]),))


def add_scalars(terms):
    terms = list(terms)
    if not terms:
        return np.zeros((1, 1))
    vals = [value(t) for t in terms]
    for v in vals:
        if v.shape != (1, 1):
            raise ShapeError(f"add_scalars expects 1x1 terms, got {v.shape}")
    total = np.array([[sum(float(v[0, 0]) for v in vals)]])
    return _op(total, terms, lambda g: tuple(g for _ in terms))


# -- nonlinearities ---------------------------------------------------------

def sigmoid(a):
    s = 1.0 / (1.0 + np.exp(-np.clip(value(a), -500, 500)))
    return _op(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a):
    t = np.tanh(value(a))
    return _op(t, (a,), lambda g: (g * (1.0 - t * t),))


def softmax_rows(m):
    mv = value(m)
    e = np.exp(mv - mv.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)
    return _op(s, (m,), lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),))


def cross_entropy_rows(p, y):
    """``-sum(y * log p)`` with the log clamped at ``log(1e-12)``."""
    pv, yv = value(p), value(y)
    if pv.shape != yv.shape:
        raise ShapeError(f"cross-entropy shape mismatch: {pv.shape} vs {yv.shape}")
    safe = np.maximum(pv, LOG_FLOOR)
    loss = -float((yv * np.log(safe)).sum())

    def vjp(g):
        gp = np.where(pv > LOG_FLOOR, -yv / safe, 0.0) * g[0, 0]
        return gp, None

    return _op(np.array([[loss]]), (p, y), vjp)


# -- indexing and assembly --------------------------------------------------

def take_rows(a, idx):
    av = value(a)
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return (out,)

    return _op(av[idx], (a,), vjp)


def slice_cols(a, start, stop):
    av = value(a)

    def vjp(g):
        out = np.zeros_like(av)
        out[:, start:stop] = g
        return (out,)

    return _op(av[:, start:stop].copy(), (a,), vjp)


def concat_cols(parts):
    parts = list(parts)
    vals = [value(p) for p in parts]
    rows = {v.shape[0] for v in vals}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols row mismatch: {[v.shape for v in vals]}")
    bounds = np.cumsum([0] + [v.shape[1] for v in vals])
    return _op(
        np.concatenate(vals, axis=1),
        parts,
        lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts))),
    )


def concat_rows(parts):
    parts = list(parts)
    vals = [value(p) for p in parts]
    cols = {v.shape[1] for v in vals}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows column mismatch: {[v.shape for v in vals]}")
    bounds = np.cumsum([0] + [v.shape[0] for v in vals])
    return _op(
        np.concatenate(vals, axis=0),
        parts,
        lambda g: tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts))),
    )


def where_rows(mask, a, b):
    """Row ``i`` from ``a`` where ``mask[i]`` else from ``b``."""
    av, bv = value(a), value(b)
    if av.shape != bv.shape:
        raise ShapeError(f"where_rows shape mismatch: {av.shape} vs {bv.shape}")
    m = np.asarray(mask, dtype=bool).reshape(-1, 1)
    return _op(np.where(m, av, bv), (a, b), lambda g: (g * m, g * ~m))


def segment_softmax(scores, segments, n_segments):
    """Softmax of a column of scores within each segment.

    Returns an ``n_segments x n`` weight matrix ``w`` with ``w[s, j]`` the
    normalized weight of item ``j`` inside segment ``s`` (zero elsewhere).
    """
    sv = value(scores)
    n = sv.shape[0]
    if sv.shape != (n, 1):
        raise ShapeError(f"segment_softmax expects an n x 1 column, got {sv.shape}")
    seg = np.asarray(segments, dtype=np.int64)
    w = np.zeros((n_segments, n))
    for s in np.unique(seg):
        members = np.flatnonzero(seg == s)
        x = sv[members, 0]
        e = np.exp(x - x.max())
        w[s, members] = e / e.sum()

    def vjp(g):
        # d/dx_j of sum_k g[s,k] w[s,k] = w[s,j] * (g[s,j] - sum_k g[s,k] w[s,k])
        inner = (g * w).sum(axis=1, keepdims=True)
        gs = (w * (g - inner)).sum(axis=0)
        return (gs.reshape(n, 1),)

    return _op(w, (scores,), vjp)


def dropout(a, rate, rng):
    if rate <= 0.0:
        return a
    keep = (rng.random(value(a).shape) >= rate) / (1.0 - rate)
    return mul(a, keep)


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr, weight_decay=0.0, decay=None):
    """One Adam update, in place on ``params``.

    ``decay`` names the parameters that receive decoupled weight decay; by
    default every parameter does.
    """
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        if m.shape != p.shape:
            raise ShapeError(f"optimizer state shape {m.shape} != parameter shape {p.shape} for {name}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        if weight_decay and (decay is None or name in decay):
            p -= lr * weight_decay * p
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


# -- gradient checking ------------------------------------------------------

def analytic_gradients(f, params):
    tape = Tape()
    nodes = {k: tape.param(v, k) for k, v in params.items()}
    loss = f(nodes)
    return tape.backward(loss)


def _scalar(x):
    v = float(np.asarray(value(x)).reshape(-1)[0])
    if not np.isfinite(v):
        raise NumericError(f"objective evaluated to {v}")
    return v


def gradient_errors(f, params, eps=1e-4):
    """Per-parameter max relative error between tape and central differences."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    params = {k: as_matrix(v, k).copy() for k, v in params.items()}
    analytic = analytic_gradients(f, params)
    errors = {}
    for name, p in params.items():
        worst = 0.0
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + eps
            up = _scalar(f(params))
            p[idx] = orig - eps
            down = _scalar(f(params))
            p[idx] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic[name][idx]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
        errors[name] = worst
    return errors


def finite_diff_check(f, params, eps=1e-4):
    """Max relative error of ``backward`` against central finite differences.

    ``f`` maps a dict of parameters to a scalar; it is called once with tape
    nodes (analytic route) and repeatedly with plain arrays (numeric route).
    """
    errors = gradient_errors(f, params, eps)
    return max(errors.values(), default=0.0)


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(path, params):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name in sorted(params):
            arr = as_matrix(params[name], name)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic {blob[:4]!r})")
    pos, out = 4, {}
    while pos < len(blob):
        (n,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + n].decode("utf-8")
        pos += n
        rows, cols = struct.unpack_from("<II", blob, pos)
        pos += 8
        size = rows * cols * 8
        if pos + size > len(blob):
            raise ValueError(f"{path}: truncated entry {name!r}")
        out[name] = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).astype(np.float64)
        pos += size
    return out


def normal_init(rng, shape, std=0.01):
    return rng.normal(0.0, std, size=shape)
