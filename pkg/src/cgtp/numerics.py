"""Dense float64 arrays on a reverse-mode tape, the small set of neural
kernels the prediction networks need (affine/layer-norm, GRU cell, scaled
dot-product attention), an Adam optimizer with per-parameter state, and a
central-difference gradient checker.

Everything is deterministic: same inputs and parameters give bit-identical
outputs. Arrays are plain numpy float64; batching is 2-D (rows = batch).
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray

# Flipped on by tests: every op output is scanned for inf/nan.
CHECK_FINITE = False


class DimensionError(ValueError):
    """Operand shapes do not match the kernel's contract."""


class ContractError(ValueError):
    """A kernel precondition was violated (non-scalar loss, empty mask, ...)."""


class ConfigError(ValueError):
    """Bad optimizer or kernel configuration value."""


def _f64(x) -> Array:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(g: Array, shape: tuple) -> Array:
    """Sum gradient over axes that were broadcast in the forward op."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Node:
    """One value in a taped computation: data array plus a gradient slot."""

    __slots__ = ("data", "grad", "needs_grad", "tape")

    def __init__(self, data: Array, needs_grad: bool, tape: "Tape | None"):
        self.data = data
        self.grad: Array | None = None
        self.needs_grad = needs_grad
        self.tape = tape

    @property
    def shape(self):
        return self.data.shape

    def add_grad(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g


@dataclass
class ParamEntry:
    value: Array
    grad: Array
    m: Array
    v: Array
    steps: int = 0


class ParameterStore:
    """Named trainable arrays with gradient slots and Adam moment state.

    Initialization is derived from (seed, name) so parameter values do not
    depend on creation order.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.entries: dict[str, ParamEntry] = {}
        self.step_count = 0

    def _rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode())])

    def create(self, name: str, shape: tuple, init: str = "auto") -> None:
        """Create a parameter. init: 'auto' (uniform +-sqrt(6/(fan_in+fan_out))
        for matrices, zeros for vectors), 'zeros', or 'glorot'."""
        if name in self.entries:
            raise ConfigError(f"parameter {name!r} already exists")
        shape = tuple(int(s) for s in shape)
        if init == "auto":
            init = "glorot" if len(shape) >= 2 else "zeros"
        if init == "zeros":
            value = np.zeros(shape)
        elif init == "glorot":
            fan_out, fan_in = shape[0], int(np.prod(shape[1:]))
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            value = self._rng(name).uniform(-limit, limit, size=shape)
        else:
            raise ConfigError(f"unknown init {init!r}")
        self.entries[name] = ParamEntry(
            value=value,
            grad=np.zeros(shape),
            m=np.zeros(shape),
            v=np.zeros(shape),
        )

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def names(self) -> list[str]:
        return sorted(self.entries)

    def value(self, name: str) -> Array:
        return self.entries[name].value

    def grad(self, name: str) -> Array:
        return self.entries[name].grad

    def zero_grads(self, names=None) -> None:
        for name in names if names is not None else self.entries:
            self.entries[name].grad[...] = 0.0

    def grad_norm(self, names=None) -> float:
        total = 0.0
        for name in names if names is not None else self.entries:
            g = self.entries[name].grad
            total += float(np.dot(g.ravel(), g.ravel()))
        return math.sqrt(total)

    def state_dict(self) -> dict:
        out = {"step_count": self.step_count, "seed": self.seed, "entries": {}}
        for name, e in self.entries.items():
            out["entries"][name] = {
                "value": e.value.copy(), "m": e.m.copy(), "v": e.v.copy(),
                "steps": e.steps,
            }
        return out

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step_count"])
        self.seed = int(state["seed"])
        for name, blob in state["entries"].items():
            if name not in self.entries:
                raise ConfigError(f"unknown parameter {name!r} in state")
            e = self.entries[name]
            if e.value.shape != blob["value"].shape:
                raise DimensionError(
                    f"shape mismatch for {name!r}: store {e.value.shape} "
                    f"vs state {blob['value'].shape}")
            e.value[...] = blob["value"]
            e.m[...] = blob["m"]
            e.v[...] = blob["v"]
            e.steps = int(blob["steps"])


class Tape:
    """Ordered record of primitive ops; replayed in reverse for gradients."""

    def __init__(self, store: ParameterStore | None = None):
        self.store = store
        self.records: list[tuple[Node, object]] = []
        self.nodes: list[Node] = []
        self._params: dict[str, Node] = {}

    def const(self, data) -> Node:
        node = Node(_f64(data), needs_grad=False, tape=self)
        self.nodes.append(node)
        return node

    def param(self, name: str) -> Node:
        node = self._params.get(name)
        if node is None:
            if self.store is None or name not in self.store:
                raise ContractError(f"no parameter named {name!r}")
            node = Node(self.store.value(name), needs_grad=True, tape=self)
            self._params[name] = node
            self.nodes.append(node)
        return node

    def make(self, data: Array, *inputs: Node) -> Node:
        if CHECK_FINITE and not np.all(np.isfinite(data)):
            raise ContractError("non-finite value produced by a kernel op")
        node = Node(data, any(i.needs_grad for i in inputs), self)
        self.nodes.append(node)
        return node

    def push(self, out: Node, backward) -> None:
        if out.needs_grad:
            self.records.append((out, backward))

    def backward(self, loss: Node, accum: dict | None = None) -> None:
        """Accumulate d(loss)/d(theta) into the store's gradient slots (or
        into `accum`, name -> array). Resets node gradients first, so repeated
        calls on one tape from different losses stay independent."""
        if loss.data.shape != ():
            raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones(())
        for out, backward in reversed(self.records):
            if out.grad is not None:
                backward(out.grad)
        for name, node in self._params.items():
            if node.grad is None:
                continue
            if accum is not None:
                if name in accum:
                    accum[name] += node.grad
                else:
                    accum[name] = node.grad.copy()
            else:
                self.store.entries[name].grad += node.grad


def backward_gradients(loss: Node, accum: dict | None = None) -> None:
    """Reverse pass from a scalar loss node over its tape."""
    if loss.tape is None:
        raise ContractError("loss node is not attached to a tape")
    loss.tape.backward(loss, accum=accum)


# ---------------------------------------------------------------------------
# Primitive ops
# ---------------------------------------------------------------------------

def add(tape: Tape, a: Node, b: Node) -> Node:
    out = tape.make(a.data + b.data, a, b)

    def bwd(g):
        if a.needs_grad:
            a.add_grad(_unbroadcast(g, a.data.shape))
        if b.needs_grad:
            b.add_grad(_unbroadcast(g, b.data.shape))
    tape.push(out, bwd)
    return out


def sub(tape: Tape, a: Node, b: Node) -> Node:
    out = tape.make(a.data - b.data, a, b)

    def bwd(g):
        if a.needs_grad:
            a.add_grad(_unbroadcast(g, a.data.shape))
        if b.needs_grad:
            b.add_grad(-_unbroadcast(g, b.data.shape))
    tape.push(out, bwd)
    return out


def mul(tape: Tape, a: Node, b: Node) -> Node:
    out = tape.make(a.data * b.data, a, b)

    def bwd(g):
        if a.needs_grad:
            a.add_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.needs_grad:
            b.add_grad(_unbroadcast(g * a.data, b.data.shape))
    tape.push(out, bwd)
    return out


def neg(tape: Tape, a: Node) -> Node:
    out = tape.make(-a.data, a)
    tape.push(out, lambda g: a.add_grad(-g))
    return out


def scale(tape: Tape, a: Node, c: float) -> Node:
    c = float(c)
    out = tape.make(a.data * c, a)
    tape.push(out, lambda g: a.add_grad(g * c))
    return out


def add_const(tape: Tape, a: Node, c) -> Node:
    out = tape.make(a.data + c, a)
    tape.push(out, lambda g: a.add_grad(g))
    return out


def cmul(tape: Tape, a: Node, arr) -> Node:
    """Multiply by a non-differentiable constant array (masks, indicators)."""
    arr = _f64(arr)
    out = tape.make(a.data * arr, a)
    tape.push(out, lambda g: a.add_grad(_unbroadcast(g * arr, a.data.shape)))
    return out


def matmul(tape: Tape, a: Node, b: Node) -> Node:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: {a.data.shape} @ {b.data.shape}")
    out = tape.make(a.data @ b.data, a, b)

    def bwd(g):
        if a.needs_grad:
            a.add_grad(g @ b.data.T)
        if b.needs_grad:
            b.add_grad(a.data.T @ g)
    tape.push(out, bwd)
    return out


def transpose(tape: Tape, a: Node) -> Node:
    out = tape.make(a.data.T.copy(), a)
    tape.push(out, lambda g: a.add_grad(g.T))
    return out


def affine(tape: Tape, x: Node, w: Node, b: Node | None = None) -> Node:
    """y = x @ W^T + b for x of shape (in,) or (n, in); W is (out, in)."""
    if w.data.ndim != 2 or x.data.shape[-1] != w.data.shape[1]:
        raise DimensionError(
            f"affine: x {x.data.shape} incompatible with W {w.data.shape}")
    y = x.data @ w.data.T
    if b is not None:
        if b.data.shape != (w.data.shape[0],):
            raise DimensionError(
                f"affine: bias {b.data.shape} vs W {w.data.shape}")
        y = y + b.data
    out = tape.make(y, x, w, *( [b] if b is not None else [] ))

    def bwd(g):
        if x.needs_grad:
            x.add_grad(g @ w.data)
        if w.needs_grad:
            if x.data.ndim == 1:
                w.add_grad(np.outer(g, x.data))
            else:
                w.add_grad(g.T @ x.data)
        if b is not None and b.needs_grad:
            b.add_grad(g if g.ndim == 1 else g.sum(axis=0))
    tape.push(out, bwd)
    return out


def relu(tape: Tape, a: Node) -> Node:
    out = tape.make(np.maximum(a.data, 0.0), a)
    tape.push(out, lambda g: a.add_grad(g * (a.data > 0.0)))
    return out


def tanh(tape: Tape, a: Node) -> Node:
    y = np.tanh(a.data)
    out = tape.make(y, a)
    tape.push(out, lambda g: a.add_grad(g * (1.0 - y * y)))
    return out


def sigmoid(tape: Tape, a: Node) -> Node:
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = tape.make(y, a)
    tape.push(out, lambda g: a.add_grad(g * y * (1.0 - y)))
    return out


def log(tape: Tape, a: Node) -> Node:
    out = tape.make(np.log(a.data), a)
    tape.push(out, lambda g: a.add_grad(g / a.data))
    return out


def clamp(tape: Tape, a: Node, lo: float, hi: float) -> Node:
    y = np.clip(a.data, lo, hi)
    out = tape.make(y, a)
    inside = (a.data > lo) & (a.data < hi)
    tape.push(out, lambda g: a.add_grad(g * inside))
    return out


def sum_all(tape: Tape, a: Node) -> Node:
    out = tape.make(np.asarray(a.data.sum()), a)
    tape.push(out, lambda g: a.add_grad(np.broadcast_to(g, a.data.shape)))
    return out


def mean_all(tape: Tape, a: Node) -> Node:
    n = a.data.size
    out = tape.make(np.asarray(a.data.mean()), a)
    tape.push(out, lambda g: a.add_grad(np.broadcast_to(g / n, a.data.shape)))
    return out


def softmax(tape: Tape, a: Node, mask: Array | None = None) -> Node:
    """Softmax over the last axis with max-subtraction; masked entries get
    probability exactly 0. mask is boolean, broadcastable to a's shape."""
    x = a.data
    if mask is None:
        valid = np.ones_like(x, dtype=bool)
    else:
        valid = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not valid.any(axis=-1).all():
        raise ContractError("softmax: a row has no unmasked entries")
    shifted = np.where(valid, x, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted, where=valid, out=np.zeros_like(x))
    y = e / e.sum(axis=-1, keepdims=True)
    out = tape.make(y, a)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        a.add_grad(np.where(valid, y * (g - dot), 0.0))
    tape.push(out, bwd)
    return out


def maxpool_rows(tape: Tape, a: Node, mask: Array | None = None) -> Node:
    """Columnwise max over the rows of a 2-D array; gradient flows to the
    first attaining row."""
    if a.data.ndim != 2:
        raise DimensionError(f"maxpool_rows: need 2-D, got {a.data.shape}")
    x = a.data
    if mask is not None:
        rows = np.flatnonzero(np.asarray(mask, dtype=bool))
        if rows.size == 0:
            raise ContractError("maxpool_rows: all rows masked")
        x = x[rows]
    else:
        rows = np.arange(x.shape[0])
    arg = x.argmax(axis=0)
    out = tape.make(x[arg, np.arange(x.shape[1])].copy(), a)

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[rows[arg], np.arange(x.shape[1])] = g
        a.add_grad(ga)
    tape.push(out, bwd)
    return out


def segment_maxpool(tape: Tape, a: Node, seg: Array, n_seg: int) -> Node:
    """Per-segment columnwise max: (n, d) rows grouped by seg -> (n_seg, d).
    Empty segments yield zero rows."""
    seg = np.asarray(seg)
    x = a.data
    y = np.zeros((n_seg, x.shape[1]))
    argrows = np.full((n_seg, x.shape[1]), -1, dtype=np.int64)
    for s in range(n_seg):
        rows = np.flatnonzero(seg == s)
        if rows.size == 0:
            continue
        arg = x[rows].argmax(axis=0)
        argrows[s] = rows[arg]
        y[s] = x[rows[arg], np.arange(x.shape[1])]
    out = tape.make(y, a)

    def bwd(g):
        ga = np.zeros_like(x)
        cols = np.arange(x.shape[1])
        for s in range(n_seg):
            if argrows[s, 0] >= 0:
                np.add.at(ga, (argrows[s], cols), g[s])
        a.add_grad(ga)
    tape.push(out, bwd)
    return out


def segment_maxpool_exclude_self(tape: Tape, a: Node, seg: Array) -> Node:
    """For each row i, columnwise max over the *other* rows of i's segment.
    A singleton segment pools over the row itself."""
    seg = np.asarray(seg)
    x = a.data
    n, d = x.shape
    y = np.empty_like(x)
    src = np.empty((n, d), dtype=np.int64)
    cols = np.arange(d)
    for s in np.unique(seg):
        rows = np.flatnonzero(seg == s)
        xs = x[rows]
        if rows.size == 1:
            y[rows[0]] = xs[0]
            src[rows[0]] = rows[0]
            continue
        a1 = xs.argmax(axis=0)
        v1 = xs[a1, cols]
        masked = xs.copy()
        masked[a1, cols] = -np.inf
        a2 = masked.argmax(axis=0)
        v2 = masked[a2, cols]
        for j, r in enumerate(rows):
            take_second = a1 == j
            y[r] = np.where(take_second, v2, v1)
            src[r] = rows[np.where(take_second, a2, a1)]
    out = tape.make(y.copy(), a)

    def bwd(g):
        ga = np.zeros_like(x)
        np.add.at(ga, (src.ravel(), np.tile(cols, n)), g.ravel())
        a.add_grad(ga)
    tape.push(out, bwd)
    return out


def concat(tape: Tape, nodes: list[Node], axis: int = -1) -> Node:
    datas = [n.data for n in nodes]
    out = tape.make(np.concatenate(datas, axis=axis), *nodes)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for node, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            if node.needs_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                node.add_grad(g[tuple(idx)])
    tape.push(out, bwd)
    return out


def stack_rows(tape: Tape, nodes: list[Node]) -> Node:
    out = tape.make(np.stack([n.data for n in nodes], axis=0), *nodes)

    def bwd(g):
        for i, node in enumerate(nodes):
            if node.needs_grad:
                node.add_grad(g[i])
    tape.push(out, bwd)
    return out


def narrow(tape: Tape, a: Node, axis: int, start: int, length: int) -> Node:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = tape.make(a.data[idx].copy(), a)

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[idx] = g
        a.add_grad(ga)
    tape.push(out, bwd)
    return out


def reshape(tape: Tape, a: Node, shape) -> Node:
    out = tape.make(a.data.reshape(shape).copy(), a)
    tape.push(out, lambda g: a.add_grad(g.reshape(a.data.shape)))
    return out


def gather_rows(tape: Tape, a: Node, idx) -> Node:
    """Select rows (2-D input) or elements (1-D input); repeats allowed."""
    idx = np.asarray(idx, dtype=np.int64)
    out = tape.make(a.data[idx].copy(), a)

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        a.add_grad(ga)
    tape.push(out, bwd)
    return out


def tile_rows(tape: Tape, a: Node, n: int) -> Node:
    """Repeat a vector (d,) as n identical rows -> (n, d)."""
    out = tape.make(np.broadcast_to(a.data, (n, a.data.shape[0])).copy(), a)
    tape.push(out, lambda g: a.add_grad(g.sum(axis=0)))
    return out


def layer_norm(tape: Tape, a: Node, eps: float = 1e-12) -> Node:
    """Normalize the last axis to mean 0, variance 1 (no learned affine)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = tape.make(xhat, a)
    d = x.shape[-1]

    def bwd(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        a.add_grad(inv * (g - gm - xhat * gx))
    tape.push(out, bwd)
    return out


# ---------------------------------------------------------------------------
# Neural kernels
# ---------------------------------------------------------------------------

def linear(tape: Tape, x: Node, name: str, norm_relu: bool = False) -> Node:
    """Affine layer with parameters `<name>.w` / `<name>.b`; optionally
    followed by layer normalization and ReLU."""
    y = affine(tape, x, tape.param(name + ".w"), tape.param(name + ".b"))
    if norm_relu:
        y = relu(tape, layer_norm(tape, y))
    return y


def linear_params(store: ParameterStore, name: str, in_dim: int, out_dim: int) -> None:
    store.create(name + ".w", (out_dim, in_dim))
    store.create(name + ".b", (out_dim,))


def mlp3(tape: Tape, x: Node, name: str) -> Node:
    """Three affine layers with ReLU between them (heads use hidden=128)."""
    h = relu(tape, linear(tape, x, name + ".l1"))
    h = relu(tape, linear(tape, h, name + ".l2"))
    return linear(tape, h, name + ".l3")


def mlp3_params(store: ParameterStore, name: str, in_dim: int, hidden: int,
                out_dim: int) -> None:
    linear_params(store, name + ".l1", in_dim, hidden)
    linear_params(store, name + ".l2", hidden, hidden)
    linear_params(store, name + ".l3", hidden, out_dim)


def gru_cell(tape: Tape, x: Node, h_prev: Node, name: str) -> Node:
    """One GRU step as a fused primitive with analytic backward. Gate layout
    [reset, update, candidate]; the update gate interpolates toward the
    previous hidden state. x and h_prev may be 1-D vectors or row batches."""
    w_ih, w_hh = tape.param(name + ".w_ih"), tape.param(name + ".w_hh")
    b_ih, b_hh = tape.param(name + ".b_ih"), tape.param(name + ".b_hh")
    dh = h_prev.data.shape[-1]
    if w_ih.data.shape != (3 * dh, x.data.shape[-1]) or w_hh.data.shape != (3 * dh, dh):
        raise DimensionError(
            f"gru_cell {name!r}: x {x.data.shape}, h {h_prev.data.shape}, "
            f"w_ih {w_ih.data.shape}, w_hh {w_hh.data.shape}")
    xd, hd = x.data, h_prev.data
    gi = xd @ w_ih.data.T + b_ih.data
    gh = hd @ w_hh.data.T + b_hh.data
    sl_r, sl_z, sl_n = (slice(k * dh, (k + 1) * dh) for k in range(3))
    r = 1.0 / (1.0 + np.exp(-(gi[..., sl_r] + gh[..., sl_r])))
    z = 1.0 / (1.0 + np.exp(-(gi[..., sl_z] + gh[..., sl_z])))
    gh_n = gh[..., sl_n]
    n = np.tanh(gi[..., sl_n] + r * gh_n)
    out = tape.make((1.0 - z) * n + z * hd, x, h_prev, w_ih, w_hh, b_ih, b_hh)

    def bwd(g):
        d_an = g * (1.0 - z) * (1.0 - n * n)
        d_ar = d_an * gh_n * r * (1.0 - r)
        d_az = g * (hd - n) * z * (1.0 - z)
        d_gi = np.concatenate([d_ar, d_az, d_an], axis=-1)
        d_gh = np.concatenate([d_ar, d_az, d_an * r], axis=-1)
        if x.needs_grad:
            x.add_grad(d_gi @ w_ih.data)
        if h_prev.needs_grad:
            h_prev.add_grad(d_gh @ w_hh.data + g * z)
        if d_gi.ndim == 1:
            w_ih.add_grad(np.outer(d_gi, xd))
            w_hh.add_grad(np.outer(d_gh, hd))
            b_ih.add_grad(d_gi)
            b_hh.add_grad(d_gh)
        else:
            w_ih.add_grad(d_gi.T @ xd)
            w_hh.add_grad(d_gh.T @ hd)
            b_ih.add_grad(d_gi.sum(axis=0))
            b_hh.add_grad(d_gh.sum(axis=0))
    tape.push(out, bwd)
    return out


def gru_params(store: ParameterStore, name: str, in_dim: int, hidden: int) -> None:
    store.create(name + ".w_ih", (3 * hidden, in_dim))
    store.create(name + ".w_hh", (3 * hidden, hidden))
    store.create(name + ".b_ih", (3 * hidden,))
    store.create(name + ".b_hh", (3 * hidden,))


def scaled_dot_attention(tape: Tape, q: Node, k: Node, v: Node,
                         mask: Array | None = None) -> Node:
    """softmax(Q K^T / sqrt(d_k)) V. mask marks valid rows of K/V; masked
    columns get zero attention weight."""
    if q.data.shape[0] != k.data.shape[0] or k.data.shape[0] != v.data.shape[0]:
        raise DimensionError(
            f"attention: rows differ Q{q.data.shape} K{k.data.shape} V{v.data.shape}")
    d_k = q.data.shape[1]
    if d_k <= 0:
        raise DimensionError("attention: d_k must be positive")
    scores = scale(tape, matmul(tape, q, transpose(tape, k)), 1.0 / math.sqrt(d_k))
    weights = softmax(tape, scores, mask=None if mask is None else np.asarray(mask, bool))
    return matmul(tape, weights, v)


# ---------------------------------------------------------------------------
# Losses built from primitives
# ---------------------------------------------------------------------------

BCE_EPS = 1e-7


def bce_terms(tape: Tape, p: Node, targets: Array) -> Node:
    """Elementwise binary cross entropy against constant 0/1 targets, with
    probabilities clamped to [eps, 1-eps]."""
    t = _f64(targets)
    pc = clamp(tape, p, BCE_EPS, 1.0 - BCE_EPS)
    pos = cmul(tape, log(tape, pc), t)
    qc = add_const(tape, neg(tape, pc), 1.0)
    negt = cmul(tape, log(tape, qc), 1.0 - t)
    return neg(tape, add(tape, pos, negt))


def squared_error(tape: Tape, a: Node, b: Node) -> Node:
    d = sub(tape, a, b)
    return mul(tape, d, d)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def adam_update(store: ParameterStore, lr: float, betas=(0.9, 0.999),
                eps: float = 1e-8, names=None) -> None:
    """Bias-corrected Adam step on the named parameters (all by default);
    consumed gradients are zeroed. Per-entry step counters keep the bias
    correction right when different groups update at different cadences."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    b1, b2 = betas
    for name in names if names is not None else store.entries:
        e = store.entries[name]
        g = e.grad
        e.steps += 1
        e.m *= b1
        e.m += (1 - b1) * g
        e.v *= b2
        e.v += (1 - b2) * g * g
        m_hat = e.m / (1 - b1 ** e.steps)
        v_hat = e.v / (1 - b2 ** e.steps)
        e.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        g[...] = 0.0
    store.step_count += 1


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class FdReport:
    max_rel_err: float = 0.0
    worst_param: str = ""
    checked: int = 0
    tol: float = 0.0
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] finite-difference check: max rel err "
                f"{self.max_rel_err:.3e} (tol {self.tol:.1e}, "
                f"{self.checked} elements, worst {self.worst_param!r})")


def finite_difference_check(f, store: ParameterStore, eps: float = 1e-5,
                            tol: float = 1e-4, max_per_param: int = 256,
                            names=None, seed: int = 0) -> FdReport:
    """Compare analytic gradients of f against central differences.

    f is a zero-argument callable that rebuilds the computation and returns
    the scalar loss Node. Parameters larger than max_per_param are checked on
    a seeded random subset of elements. Relative error uses a small floor so
    near-zero gradients are compared absolutely.
    """
    if eps <= 0:
        raise ConfigError("eps must be positive")
    names = list(names) if names is not None else store.names()
    store.zero_grads()
    loss = f()
    backward_gradients(loss)
    analytic = {n: store.grad(n).copy() for n in names}
    store.zero_grads()

    rng = np.random.default_rng(seed)
    report = FdReport(tol=tol)
    for name in names:
        value = store.value(name)
        flat = value.ravel()
        if flat.size <= max_per_param:
            idxs = np.arange(flat.size)
        else:
            idxs = rng.choice(flat.size, size=max_per_param, replace=False)
        worst = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f().data)
            flat[i] = orig - eps
            f_minus = float(f().data)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2 * eps)
            an = analytic[name].ravel()[i]
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-4)
            worst = max(worst, rel)
            report.checked += 1
        report.per_param[name] = worst
        if worst > report.max_rel_err:
            report.max_rel_err = worst
            report.worst_param = name
    return report
