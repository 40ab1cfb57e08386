"""Dense matrices with reverse-mode differentiation.

A `Matrix` wraps a 2-D float64 array and, when created through an op whose
inputs are tracked, a node id on a `Tape`. The tape is a flat record of
primitive operations; `backprop` replays it in exact reverse creation order
and accumulates gradients for every registered parameter. Shapes are always
explicit 2-D; the only broadcasting anywhere is row-wise application of a
1-row vector (bias add, layer-norm affine).

`grad_check_central_diff` is the verification oracle: it compares the tape's
gradients against central finite differences and is deliberately independent
of the backward implementations it checks.
"""
from __future__ import annotations

import math

import numpy as np

from bevrope import kernels


class ConfigurationError(ValueError):
    """Raised for shape mismatches, bad indices, and invalid settings."""


class Matrix:
    """2-D float64 array, optionally tracked on a gradient tape."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape=None, node=None):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ConfigurationError(f"Matrix must be 2-D, got shape {arr.shape}")
        self.data = arr
        self.tape = tape
        self.node = node

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ConfigurationError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        tracked = "tracked" if self.node is not None else "constant"
        return f"Matrix({self.rows}x{self.cols}, {tracked})"


def constant(data) -> Matrix:
    return Matrix(data)


class Tape:
    """Flat operation record for reverse-mode differentiation."""

    def __init__(self):
        self._ops = []  # (out_node, in_nodes, backward_fn)
        self._params: dict[str, Matrix] = {}
        self._next_node = 0

    def _new_node(self) -> int:
        n = self._next_node
        self._next_node = n + 1
        return n

    def track(self, data) -> Matrix:
        return Matrix(data, tape=self, node=self._new_node())

    def param(self, name: str, array: np.ndarray) -> Matrix:
        """Register a named trainable array (not copied) and track it."""
        if name in self._params:
            raise ConfigurationError(f"parameter {name!r} registered twice")
        m = Matrix(array, tape=self, node=self._new_node())
        self._params[name] = m
        return m

    def record(self, out_node, in_nodes, backward_fn):
        self._ops.append((out_node, in_nodes, backward_fn))

    def backprop(self, loss: Matrix) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss for every registered parameter."""
        if loss.node is None or loss.tape is not self:
            raise ConfigurationError("backprop needs a scalar tracked on this tape")
        if loss.data.shape != (1, 1):
            raise ConfigurationError(f"loss must be 1x1, got {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.node: np.ones((1, 1))}
        # backward fns may return views or the upstream array itself, so a
        # stored grad is only mutated in place once this tape owns it
        owned: set[int] = set()
        for out_node, in_nodes, backward_fn in reversed(self._ops):
            g = grads.get(out_node)
            if g is None:
                continue
            in_grads = backward_fn(g)
            for node, gi in zip(in_nodes, in_grads):
                if node is None or gi is None:
                    continue
                acc = grads.get(node)
                if acc is None:
                    grads[node] = gi
                elif node in owned:
                    acc += gi
                else:
                    grads[node] = acc + gi
                    owned.add(node)
        out = {}
        for name, p in self._params.items():
            g = grads.get(p.node)
            out[name] = np.zeros_like(p.data) if g is None else g
        return out


def backprop(loss: Matrix) -> dict[str, np.ndarray]:
    if loss.tape is None:
        raise ConfigurationError("backprop on an untracked value")
    return loss.tape.backprop(loss)


def _tape_of(*mats) -> Tape | None:
    tape = None
    for m in mats:
        if m.tape is not None:
            if tape is not None and m.tape is not tape:
                raise ConfigurationError("operands live on different tapes")
            tape = m.tape
    return tape


def _emit(tape, data, in_mats, backward_fn) -> Matrix:
    if tape is None:
        return Matrix(data)
    out = tape.track(data)
    tape.record(out.node, tuple(m.node for m in in_mats), backward_fn)
    return out


# ---------------------------------------------------------------------------
# primitive ops

def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.cols != b.rows:
        raise ConfigurationError(f"matmul mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return (g @ bd.T if a.node is not None else None,
                ad.T @ g if b.node is not None else None)

    return _emit(_tape_of(a, b), ad @ bd, (a, b), bwd)


def matmul_t(a: Matrix, b: Matrix) -> Matrix:
    """a @ b.T without materializing the transpose as a tape node."""
    if a.cols != b.cols:
        raise ConfigurationError(f"matmul_t mismatch: {a.shape} @ {b.shape}.T")
    ad, bd = a.data, b.data

    def bwd(g):
        return (g @ bd if a.node is not None else None,
                g.T @ ad if b.node is not None else None)

    return _emit(_tape_of(a, b), ad @ bd.T, (a, b), bwd)


def add(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ConfigurationError(f"add mismatch: {a.shape} vs {b.shape}")

    def bwd(g):
        return (g if a.node is not None else None,
                g if b.node is not None else None)

    return _emit(_tape_of(a, b), a.data + b.data, (a, b), bwd)


def sub(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ConfigurationError(f"sub mismatch: {a.shape} vs {b.shape}")

    def bwd(g):
        return (g if a.node is not None else None,
                -g if b.node is not None else None)

    return _emit(_tape_of(a, b), a.data - b.data, (a, b), bwd)


def scale(a: Matrix, s: float) -> Matrix:
    s = float(s)

    def bwd(g):
        return (g * s,)

    return _emit(_tape_of(a), a.data * s, (a,), bwd)


def mul(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ConfigurationError(f"mul mismatch: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return (g * bd if a.node is not None else None,
                g * ad if b.node is not None else None)

    return _emit(_tape_of(a, b), ad * bd, (a, b), bwd)


def add_bias(a: Matrix, bias: Matrix) -> Matrix:
    """Row-wise vector add; bias is 1 x cols."""
    if bias.rows != 1 or bias.cols != a.cols:
        raise ConfigurationError(f"bias shape {bias.shape} vs matrix {a.shape}")

    def bwd(g):
        return (g if a.node is not None else None,
                g.sum(axis=0, keepdims=True) if bias.node is not None else None)

    return _emit(_tape_of(a, bias), a.data + bias.data, (a, bias), bwd)


def affine(a: Matrix, mult: float, shift: float) -> Matrix:
    mult = float(mult)

    def bwd(g):
        return (g * mult,)

    return _emit(_tape_of(a), a.data * mult + shift, (a,), bwd)


def clip01(a: Matrix) -> Matrix:
    """Clamp to [0, 1]; subgradient zero outside the interval."""
    inside = (a.data > 0.0) & (a.data < 1.0)

    def bwd(g):
        return (g * inside,)

    return _emit(_tape_of(a), np.clip(a.data, 0.0, 1.0), (a,), bwd)


def slice_cols(a: Matrix, j0: int, j1: int) -> Matrix:
    if not 0 <= j0 < j1 <= a.cols:
        raise ConfigurationError(f"column slice [{j0}:{j1}] outside width {a.cols}")
    shape = a.shape

    def bwd(g):
        ga = np.zeros(shape)
        ga[:, j0:j1] = g
        return (ga,)

    return _emit(_tape_of(a), a.data[:, j0:j1].copy(), (a,), bwd)


def concat_cols(mats) -> Matrix:
    mats = list(mats)
    if not mats:
        raise ConfigurationError("concat_cols of nothing")
    rows = mats[0].rows
    for m in mats:
        if m.rows != rows:
            raise ConfigurationError("concat_cols with differing row counts")
    offsets = np.cumsum([0] + [m.cols for m in mats])
    tracked = [m.node is not None for m in mats]

    def bwd(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] if tracked[i] else None
                     for i in range(len(mats)))

    data = np.concatenate([m.data for m in mats], axis=1)
    return _emit(_tape_of(*mats), data, mats, bwd)


def concat_rows(mats) -> Matrix:
    mats = list(mats)
    if not mats:
        raise ConfigurationError("concat_rows of nothing")
    cols = mats[0].cols
    for m in mats:
        if m.cols != cols:
            raise ConfigurationError("concat_rows with differing column counts")
    offsets = np.cumsum([0] + [m.rows for m in mats])
    tracked = [m.node is not None for m in mats]

    def bwd(g):
        return tuple(g[offsets[i]:offsets[i + 1]] if tracked[i] else None
                     for i in range(len(mats)))

    data = np.concatenate([m.data for m in mats], axis=0)
    return _emit(_tape_of(*mats), data, mats, bwd)


def gather_rows(a: Matrix, indices) -> Matrix:
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ConfigurationError("gather_rows needs a flat index list")
    if idx.size and (idx.min() < 0 or idx.max() >= a.rows):
        raise ConfigurationError(f"row index out of range for {a.rows} rows")
    nrows, ncols = a.rows, a.cols
    unique = np.unique(idx).size == idx.size  # np.add.at is slow; dodge it

    def bwd(g):
        ga = np.zeros((nrows, ncols))
        if unique:
            ga[idx] = g
        else:
            np.add.at(ga, idx, g)
        return (ga,)

    return _emit(_tape_of(a), a.data[idx], (a,), bwd)


def sum_all(a: Matrix) -> Matrix:
    shape = a.shape

    def bwd(g):
        return (np.full(shape, g[0, 0]),)

    return _emit(_tape_of(a), np.array([[a.data.sum()]]), (a,), bwd)


def absval(a: Matrix) -> Matrix:
    sign = np.sign(a.data)

    def bwd(g):
        return (g * sign,)

    return _emit(_tape_of(a), np.abs(a.data), (a,), bwd)


def softmax_rows(m: Matrix) -> Matrix:
    p = kernels.softmax_rows(m.data)

    def bwd(g):
        return (kernels.softmax_rows_grad(p, g),)

    return _emit(_tape_of(m), p, (m,), bwd)


def layer_norm_affine(x: Matrix, gain: Matrix, bias: Matrix, eps: float = 1e-5) -> Matrix:
    if gain.shape != (1, x.cols) or bias.shape != (1, x.cols):
        raise ConfigurationError("layer_norm gain/bias must be 1 x cols")
    if eps <= 0:
        raise ConfigurationError("layer_norm eps must be positive")
    gvec = gain.data[0]
    y, xhat, inv_std = kernels.layer_norm(x.data, gvec, bias.data[0], eps)

    def bwd(g):
        gx, ggain, gbias = kernels.layer_norm_grad(xhat, inv_std, gvec, g)
        return (gx if x.node is not None else None,
                ggain[None, :] if gain.node is not None else None,
                gbias[None, :] if bias.node is not None else None)

    return _emit(_tape_of(x, gain, bias), y, (x, gain, bias), bwd)


def gelu(x: Matrix) -> Matrix:
    xd = x.data

    def bwd(g):
        return (kernels.gelu_grad(xd, g),)

    return _emit(_tape_of(x), kernels.gelu(xd), (x,), bwd)


def sigmoid(x: Matrix) -> Matrix:
    y = kernels.sigmoid(x.data)

    def bwd(g):
        return (kernels.sigmoid_grad(y, g),)

    return _emit(_tape_of(x), y, (x,), bwd)


def bce_with_logits(logits: Matrix, targets) -> Matrix:
    """Summed binary cross-entropy, numerically stable in the logits."""
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise ConfigurationError(f"targets shape {t.shape} vs logits {logits.shape}")
    z = logits.data
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))

    def bwd(g):
        return ((kernels.sigmoid(z) - t) * g[0, 0],)

    return _emit(_tape_of(logits), np.array([[loss.sum()]]), (logits,), bwd)


def rotate_pairs(x: Matrix, cos: np.ndarray, sin: np.ndarray) -> Matrix:
    """Rotate channel pairs of each row by fixed (non-trainable) angles."""
    if cos.shape != (x.rows, x.cols // 2) or x.cols % 2:
        raise ConfigurationError(f"rotation table {cos.shape} vs matrix {x.shape}")

    def bwd(g):
        return (kernels.rotate_pairs_grad(cos, sin, g),)

    return _emit(_tape_of(x), kernels.rotate_pairs(x.data, cos, sin), (x,), bwd)


def rotate_pairs_by_angles(x: Matrix, angles: Matrix) -> Matrix:
    """Channel-pair rotation where the angles are themselves differentiable
    (coordinates derived from earlier predictions)."""
    if angles.shape != (x.rows, x.cols // 2) or x.cols % 2:
        raise ConfigurationError(f"angles {angles.shape} vs matrix {x.shape}")
    cos = np.cos(angles.data)
    sin = np.sin(angles.data)
    out_data = kernels.rotate_pairs(x.data, cos, sin)

    def bwd(g):
        gx = kernels.rotate_pairs_grad(cos, sin, g) if x.node is not None else None
        if angles.node is not None:
            # d out_even / d theta = -out_odd, d out_odd / d theta = out_even
            gt = (g[:, 1::2] * out_data[:, 0::2] - g[:, 0::2] * out_data[:, 1::2])
        else:
            gt = None
        return (gx, gt)

    return _emit(_tape_of(x, angles), out_data, (x, angles), bwd)


def attention_core(q: Matrix, k: Matrix, v: Matrix, n_heads: int, collect_diag=False):
    """Multi-head scaled dot-product attention on pre-projected q/k/v.

    Columns are laid out head-major: head h owns columns [h*dh, (h+1)*dh).
    Returns (out, diag); diag holds per-head logits and probabilities when
    collect_diag is set, else None.
    """
    n, d = q.shape
    m = k.rows
    if k.cols != d or v.shape != (m, d):
        raise ConfigurationError(f"attention shapes q{q.shape} k{k.shape} v{v.shape}")
    if d % n_heads:
        raise ConfigurationError(f"width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    alpha = 1.0 / math.sqrt(dh)

    # contiguous head-major copies; batched matmul on strided views is slower
    q3 = np.ascontiguousarray(q.data.reshape(n, n_heads, dh).transpose(1, 0, 2))
    k3 = np.ascontiguousarray(k.data.reshape(m, n_heads, dh).transpose(1, 0, 2))
    v3 = np.ascontiguousarray(v.data.reshape(m, n_heads, dh).transpose(1, 0, 2))

    logits = np.matmul(q3, k3.transpose(0, 2, 1)) * alpha        # (H, n, m)
    probs = kernels.softmax_rows(
        np.ascontiguousarray(logits.reshape(n_heads * n, m))).reshape(n_heads, n, m)
    out3 = np.matmul(probs, v3)                                   # (H, n, dh)
    out_data = np.ascontiguousarray(out3.transpose(1, 0, 2).reshape(n, d))

    def bwd(g):
        g3 = np.ascontiguousarray(g.reshape(n, n_heads, dh).transpose(1, 0, 2))
        gp = np.matmul(g3, v3.transpose(0, 2, 1))
        gv3 = np.matmul(probs.transpose(0, 2, 1), g3)
        gs = kernels.softmax_rows_grad(
            probs.reshape(n_heads * n, m),
            np.ascontiguousarray(gp.reshape(n_heads * n, m))).reshape(n_heads, n, m)
        gs *= alpha
        gq3 = np.matmul(gs, k3)
        gk3 = np.matmul(gs.transpose(0, 2, 1), q3)
        gq = np.ascontiguousarray(gq3.transpose(1, 0, 2).reshape(n, d))
        gk = np.ascontiguousarray(gk3.transpose(1, 0, 2).reshape(m, d))
        gv = np.ascontiguousarray(gv3.transpose(1, 0, 2).reshape(m, d))
        return (gq if q.node is not None else None,
                gk if k.node is not None else None,
                gv if v.node is not None else None)

    out = _emit(_tape_of(q, k, v), out_data, (q, k, v), bwd)
    diag = {"logits": logits, "probs": probs} if collect_diag else None
    return out, diag


# ---------------------------------------------------------------------------
# finite-difference oracle

def grad_check_central_diff(loss_fn, params, h: float = 1e-5, analytic=None) -> float:
    """Max relative error between tape gradients and central differences.

    loss_fn(tape) must rebuild the loss from scratch, reading the arrays in
    `params` (name -> ndarray); with tape=None it runs untracked, which is how
    the numeric side stays independent of the backward pass. Error per element
    is |analytic - numeric| / max(1, |numeric|). A non-finite loss anywhere is
    reported as inf rather than raised.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ConfigurationError(f"step size h={h} outside [1e-7, 1e-3]")

    if analytic is None:
        tape = Tape()
        loss = loss_fn(tape)
        if not np.isfinite(loss.item()):
            return math.inf
        analytic = tape.backprop(loss)

    worst = 0.0
    for name, arr in params.items():
        an = analytic[name]
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn(None).item()
            flat[i] = orig - h
            down = loss_fn(None).item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                return math.inf
            numeric = (up - down) / (2.0 * h)
            err = abs(an.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst
