"""Minimal reverse-mode differentiation over the primitives the model needs.

Design rules:
  * 64-bit floats everywhere; the tolerances in the tests rely on it.
  * No implicit broadcasting between tracked operands: shapes are checked
    explicitly and a mismatch raises ShapeError naming the primitive.
  * A tape is an append-only list of recorded applications, so reverse
    iteration is a valid topological order and one backward pass visits
    each node exactly once.
  * relu's derivative at exactly 0 is 0.

Matrix products come in two flavours. `matmul(..., row_local=True)` computes
each output row with an expand-multiply-reduce kernel whose bits do not
depend on how many rows are stacked together; the per-sample prediction
path uses it so that structural identities (node reordering, role swap,
single-node graphs) hold exactly. The default BLAS path is much faster and
is used by the batched training loop, where only run-to-run determinism
matters.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    """Disable recording: primitives compute values but append no nodes."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


class Parameter:
    """Trainable array plus a same-shape gradient accumulator."""

    __slots__ = ("values", "grad", "name")

    def __init__(self, values, name: str = ""):
        # asarray with order="C" keeps 0-d shapes and shares memory when the
        # input already qualifies (the embedding table relies on that).
        self.values = np.asarray(values, dtype=np.float64, order="C")
        self.grad = np.zeros_like(self.values)
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name or 'unnamed'}, shape={self.values.shape})"


class _Node:
    __slots__ = ("parents", "pvjps", "param", "grad")

    def __init__(self, parents, pvjps, param=None):
        self.parents = parents  # tuple[_Node]
        self.pvjps = pvjps  # tuple[g -> array], aligned with parents
        self.param = param  # Parameter for leaves, else None
        self.grad = None


class Value:
    """An array tracked on a tape (node is None for constants)."""

    __slots__ = ("data", "node", "tape")

    def __init__(self, data, node=None, tape=None):
        self.data = data
        self.node = node
        self.tape = tape

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Value(shape={np.shape(self.data)}, tracked={self.node is not None})"


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """1/(1+exp(-x)) computed without overflow for any finite x."""
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# Row-local matmul: out[i, j] = sum_k a[i, k] * b[k, j], reduced over the
# contiguous last axis of the expanded temporary so that each output row's
# bits are independent of every other row. Chunked to bound the temporary.
_ROW_LOCAL_CHUNK_ELEMS = 1 << 21


def _mm_row_local(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    n = b.shape[1]
    bt = b.T  # (n, k) view; strides do not affect per-element bits
    chunk = max(1, _ROW_LOCAL_CHUNK_ELEMS // max(k * n, 1))
    if m <= chunk:
        return (a[:, None, :] * bt[None, :, :]).sum(axis=2)
    out = np.empty((m, n))
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        out[start:stop] = (a[start:stop, None, :] * bt[None, :, :]).sum(axis=2)
    return out


class Tape:
    """Recorded differentiable computation with parameter leaves."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaves: dict[int, Value] = {}

    # -- construction helpers -------------------------------------------------

    def constant(self, x) -> Value:
        return Value(_as_array(x), None, self)

    def param(self, p: Parameter) -> Value:
        """Leaf value for a Parameter; backward accumulates into p.grad."""
        if not grad_enabled():
            return Value(p.values, None, self)
        cached = self._leaves.get(id(p))
        if cached is not None:
            return cached
        node = _Node((), (), param=p)
        self.nodes.append(node)
        v = Value(p.values, node, self)
        self._leaves[id(p)] = v
        return v

    def _apply(self, data: np.ndarray, deps: Sequence[tuple[Value, Callable]]) -> Value:
        if not grad_enabled():
            return Value(data, None, self)
        tracked = [(v.node, fn) for v, fn in deps if v.node is not None]
        if not tracked:
            return Value(data, None, self)
        node = _Node(tuple(n for n, _ in tracked), tuple(fn for _, fn in tracked))
        self.nodes.append(node)
        return Value(data, node, self)

    # -- elementwise and scalar primitives ------------------------------------

    def add(self, a: Value, b: Value) -> Value:
        if a.data.shape != b.data.shape:
            raise ShapeError(f"add: shapes {a.data.shape} vs {b.data.shape}")
        return self._apply(a.data + b.data, [(a, lambda g: g), (b, lambda g: g)])

    def sub(self, a: Value, b: Value) -> Value:
        if a.data.shape != b.data.shape:
            raise ShapeError(f"sub: shapes {a.data.shape} vs {b.data.shape}")
        return self._apply(a.data - b.data, [(a, lambda g: g), (b, lambda g: -g)])

    def scale(self, a: Value, c: float) -> Value:
        c = float(c)
        return self._apply(a.data * c, [(a, lambda g: g * c)])

    def mul(self, a: Value, b: Value) -> Value:
        """Elementwise product of two same-shape arrays."""
        if a.data.shape != b.data.shape:
            raise ShapeError(f"elementwise-product: shapes {a.data.shape} vs {b.data.shape}")
        ad, bd = a.data, b.data
        return self._apply(ad * bd, [(a, lambda g: g * bd), (b, lambda g: g * ad)])

    def sigmoid(self, a: Value) -> Value:
        s = stable_sigmoid(a.data)
        return self._apply(s, [(a, lambda g: g * s * (1.0 - s))])

    def tanh(self, a: Value) -> Value:
        t = np.tanh(a.data)
        return self._apply(t, [(a, lambda g: g * (1.0 - t * t))])

    def relu(self, a: Value) -> Value:
        ad = a.data
        return self._apply(np.maximum(ad, 0.0), [(a, lambda g: g * (ad > 0.0))])

    def log(self, a: Value) -> Value:
        ad = a.data
        return self._apply(np.log(ad), [(a, lambda g: g / ad)])

    def softplus(self, a: Value) -> Value:
        """log(1 + exp(x)), computed stably; derivative is sigmoid(x)."""
        ad = a.data
        return self._apply(np.logaddexp(0.0, ad), [(a, lambda g: g * stable_sigmoid(ad))])

    # -- reductions and contractions -------------------------------------------

    def sum_reduce(self, a: Value) -> Value:
        ad = a.data
        return self._apply(np.asarray(ad.sum()), [(a, lambda g: np.full_like(ad, float(g)))])

    def row_sums(self, a: Value) -> Value:
        if a.data.ndim != 2:
            raise ShapeError(f"row-sums: expected matrix, got shape {a.data.shape}")
        ad = a.data
        return self._apply(ad.sum(axis=1), [(a, lambda g: np.broadcast_to(g[:, None], ad.shape))])

    def dot(self, a: Value, b: Value) -> Value:
        if a.data.ndim != 1 or a.data.shape != b.data.shape:
            raise ShapeError(f"dot: shapes {a.data.shape} vs {b.data.shape}")
        ad, bd = a.data, b.data
        return self._apply(
            np.asarray(np.dot(ad, bd)), [(a, lambda g: g * bd), (b, lambda g: g * ad)]
        )

    def rowdot(self, a: Value, b: Value) -> Value:
        """Per-row dot product of two equal-shape matrices."""
        if a.data.ndim != 2 or a.data.shape != b.data.shape:
            raise ShapeError(f"rowdot: shapes {a.data.shape} vs {b.data.shape}")
        ad, bd = a.data, b.data
        return self._apply(
            (ad * bd).sum(axis=1),
            [(a, lambda g: g[:, None] * bd), (b, lambda g: g[:, None] * ad)],
        )

    def matvec(self, w: Value, x: Value) -> Value:
        if w.data.ndim != 2 or x.data.ndim != 1 or w.data.shape[1] != x.data.shape[0]:
            raise ShapeError(f"matrix-vector-product: shapes {w.data.shape} vs {x.data.shape}")
        wd, xd = w.data, x.data
        return self._apply(
            (wd * xd).sum(axis=1),
            [(w, lambda g: g[:, None] * xd[None, :]), (x, lambda g: g @ wd)],
        )

    def matmul(self, a: Value, b: Value, row_local: bool = False) -> Value:
        if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
            raise ShapeError(f"matmul: shapes {a.data.shape} vs {b.data.shape}")
        ad, bd = a.data, b.data
        out = _mm_row_local(ad, bd) if row_local else ad @ bd
        return self._apply(out, [(a, lambda g: g @ bd.T), (b, lambda g: ad.T @ g)])

    # -- structure -------------------------------------------------------------

    def concat(self, a: Value, b: Value) -> Value:
        if a.data.ndim != 1 or b.data.ndim != 1:
            raise ShapeError(f"concatenate: expected vectors, got {a.data.shape}, {b.data.shape}")
        na = a.data.shape[0]
        return self._apply(
            np.concatenate([a.data, b.data]),
            [(a, lambda g: g[:na]), (b, lambda g: g[na:])],
        )

    def concat_cols(self, a: Value, b: Value) -> Value:
        if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
            raise ShapeError(f"concat-cols: shapes {a.data.shape} vs {b.data.shape}")
        na = a.data.shape[1]
        return self._apply(
            np.concatenate([a.data, b.data], axis=1),
            [(a, lambda g: g[:, :na]), (b, lambda g: g[:, na:])],
        )

    def gather_rows(self, m: Value, idx: np.ndarray, checked: bool = True) -> Value:
        """Select rows by a constant index array."""
        md = m.data
        if checked:
            if md.ndim != 2:
                raise ShapeError(f"gather-rows: expected matrix, got shape {md.shape}")
            idx = np.asarray(idx, dtype=np.intp)
            if idx.size and (idx.min() < 0 or idx.max() >= md.shape[0]):
                raise ShapeError(f"gather-rows: index out of range for {md.shape[0]} rows")

        def vjp(g):
            acc = np.zeros_like(md)
            np.add.at(acc, idx, g)
            return acc

        return self._apply(md[idx], [(m, vjp)])

    def scale_rows(self, m: Value, c: np.ndarray) -> Value:
        """Multiply row i by the constant scalar c[i]."""
        c = _as_array(c)
        if m.data.ndim != 2 or c.shape != (m.data.shape[0],):
            raise ShapeError(f"scale-rows: shapes {m.data.shape} vs {c.shape}")
        col = c[:, None]
        return self._apply(m.data * col, [(m, lambda g: g * col)])

    def add_rowvec(self, m: Value, v: Value) -> Value:
        """Add vector v to every row of m."""
        if m.data.ndim != 2 or v.data.shape != (m.data.shape[1],):
            raise ShapeError(f"add-rowvec: shapes {m.data.shape} vs {v.data.shape}")
        return self._apply(
            m.data + v.data[None, :],
            [(m, lambda g: g), (v, lambda g: g.sum(axis=0))],
        )

    def mul_rowvec(self, m: Value, v: Value) -> Value:
        """Multiply every row of m elementwise by vector v."""
        if m.data.ndim != 2 or v.data.shape != (m.data.shape[1],):
            raise ShapeError(f"mul-rowvec: shapes {m.data.shape} vs {v.data.shape}")
        md, vd = m.data, v.data
        return self._apply(
            md * vd[None, :],
            [(m, lambda g: g * vd[None, :]), (v, lambda g: (g * md).sum(axis=0))],
        )

    def segment_sum(self, m: Value, seg_ids: np.ndarray, n_segments: int) -> Value:
        """Sum rows of m into n_segments buckets; seg_ids must be sorted.

        Empty segments yield zero rows. Each segment's sum depends only on
        its own rows.
        """
        if m.data.ndim != 2:
            raise ShapeError(f"segment-sum: expected matrix, got shape {m.data.shape}")
        seg_ids = np.asarray(seg_ids, dtype=np.intp)
        if seg_ids.shape != (m.data.shape[0],):
            raise ShapeError(f"segment-sum: {seg_ids.shape[0]} ids for {m.data.shape[0]} rows")
        if seg_ids.size and np.any(np.diff(seg_ids) < 0):
            raise ShapeError("segment-sum: segment ids must be sorted ascending")
        starts, out_rows = segment_boundaries(seg_ids)
        return self.segment_sum_prepared(m, seg_ids, starts, out_rows, n_segments)

    def segment_sum_prepared(
        self,
        m: Value,
        seg_ids: np.ndarray,
        starts: np.ndarray,
        out_rows: np.ndarray,
        n_segments: int,
    ) -> Value:
        """segment_sum with precomputed boundaries (see segment_boundaries)."""
        md = m.data
        out = np.zeros((n_segments, md.shape[1]))
        if seg_ids.size:
            out[out_rows] = np.add.reduceat(md, starts, axis=0)
        return self._apply(out, [(m, lambda g: g[seg_ids])])

    # -- recording by primitive name -------------------------------------------

    _RECORD_DISPATCH = {
        "add": "add",
        "scale": "scale",
        "elementwise-product": "mul",
        "matrix-vector-product": "matvec",
        "concatenate": "concat",
        "sum-reduce": "sum_reduce",
        "dot": "dot",
        "sigmoid": "sigmoid",
        "tanh": "tanh",
        "relu": "relu",
    }

    def record(self, primitive: str, *inputs) -> Value:
        """Apply a primitive by name, wrapping raw arrays as constants."""
        try:
            method = getattr(self, self._RECORD_DISPATCH[primitive])
        except KeyError:
            raise ContractError(f"unknown primitive {primitive!r}") from None
        if primitive == "scale":  # second operand is a plain scalar factor
            a, c = inputs
            return self.scale(a if isinstance(a, Value) else self.constant(a), c)
        args = [x if isinstance(x, Value) else self.constant(x) for x in inputs]
        return method(*args)

    # -- reverse pass -----------------------------------------------------------

    def backward(self, output: Value) -> None:
        """Accumulate d(output)/d(parameter) into every Parameter's grad.

        Repeated calls without zeroing the parameters accumulate.
        """
        if np.ndim(output.data) != 0:
            raise ContractError(
                f"backward: output must be scalar, got shape {np.shape(output.data)}"
            )
        if output.node is None:
            raise ContractError("backward: output is not tracked on a tape")
        output.node.grad = np.asarray(1.0)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None:
                continue
            node.grad = None
            if node.param is not None:
                node.param.grad += g
                continue
            for parent, fn in zip(node.parents, node.pvjps):
                contribution = fn(g)
                parent.grad = contribution if parent.grad is None else parent.grad + contribution


def segment_boundaries(seg_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start offsets of each run in a sorted id array, and the run ids."""
    seg_ids = np.asarray(seg_ids, dtype=np.intp)
    if seg_ids.size == 0:
        empty = np.empty(0, dtype=np.intp)
        return empty, empty
    starts = np.concatenate(([0], np.flatnonzero(np.diff(seg_ids)) + 1))
    return starts, seg_ids[starts]


def backward(tape: Tape, output: Value) -> None:
    tape.backward(output)


def gradient_check(
    forward: Callable[[], Value],
    params: Sequence[Parameter],
    step: float = 1e-5,
    value_fn: Callable[[], float] | None = None,
) -> float:
    """Worst relative error between tape gradients and central differences.

    forward() must rebuild its computation from the parameters' current
    values and return a tracked scalar. For every parameter entry t the
    tape gradient is compared with (f(t+step) - f(t-step)) / (2 step).
    The relative error uses max(|analytic|, |numeric|, 1) as denominator,
    so a pair of zero gradients contributes 0.

    value_fn, when given, evaluates the same function as forward() but may
    take a faster untracked path; it is used for the difference quotients.
    """
    if step <= 0:
        raise ContractError("gradient_check: step must be positive")
    for p in params:
        p.zero_grad()
    out = forward()
    if not np.isfinite(out.data):
        raise NumericError("gradient_check: forward value is not finite")
    if out.node is None:
        # Constant forward: no parameter use, every gradient is zero.
        analytic = [np.zeros_like(p.values) for p in params]
    else:
        out.tape.backward(out)
        analytic = [p.grad.copy() for p in params]

    def f() -> float:
        if value_fn is not None:
            value = value_fn()
        else:
            with no_grad():
                value = forward().data
        if not np.isfinite(value):
            raise NumericError("gradient_check: perturbed forward value is not finite")
        return float(value)

    worst = 0.0
    for p, grads in zip(params, analytic):
        flat_values = p.values.reshape(-1)
        flat_grads = grads.reshape(-1)
        for k in range(flat_values.size):
            orig = flat_values[k]
            flat_values[k] = orig + step
            f_plus = f()
            flat_values[k] = orig - step
            f_minus = f()
            flat_values[k] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = flat_grads[k]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            if err > worst:
                worst = err
    return float(worst)
