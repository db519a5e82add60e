"""Minimal reverse-mode differentiation over dense float64 matrices.

Every value is a 2-D ``numpy`` array. Operations are plain functions; when any
input carries a gradient-tracked tensor the result is recorded on that
tensor's :class:`ExecutionTape`, otherwise nothing is recorded and the call is
just a numpy computation.

    tape = ExecutionTape()
    w = tape.watch(np.ones((3, 1)), "w")
    loss = sum_all(matmul(x, w))
    grads = backward(tape, loss)      # {"w": ndarray}
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericsError, SegmentError, ShapeError

__all__ = [
    "Tensor", "ExecutionTape", "constant", "backward", "grad_check", "GradCheckReport",
    "matmul", "add", "scale", "mul", "concat_cols", "leaky_relu", "elu", "sigmoid",
    "dropout", "gather_rows", "slice_rows", "index_add", "sum_all", "segment_softmax",
    "segment_normalize", "weighted_segment_sum", "bce_with_logits", "l2_norm_sq",
]


class Tensor:
    """A dense matrix, optionally attached to a tape."""

    __slots__ = ("value", "tape", "tape_id", "name")

    def __init__(self, value, tape=None, tape_id=None, name=None):
        self.value = value
        self.tape = tape
        self.tape_id = tape_id
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def tracked(self):
        return self.tape is not None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, tracked={self.tracked})"


def constant(value) -> Tensor:
    value = np.asarray(value, dtype=np.float64)
    if value.ndim == 0:
        value = value.reshape(1, 1)
    elif value.ndim == 1:
        value = value.reshape(-1, 1)
    if value.ndim != 2:
        raise ShapeError(f"tensors are 2-D, got shape {value.shape}")
    return Tensor(value)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


class ExecutionTape:
    """Ordered record of primitive ops; one tape per training step."""

    def __init__(self):
        self.ops = []       # (output tape_id, input tensors, vjp)
        self.params = {}    # name -> Tensor
        self._next_id = 0

    def watch(self, value, name) -> Tensor:
        if name in self.params:
            raise ContractError(f"parameter {name!r} watched twice")
        t = _as_tensor(np.array(value, dtype=np.float64, copy=True))
        t = Tensor(t.value, self, self._new_id(), name)
        self.params[name] = t
        return t

    def _new_id(self):
        self._next_id += 1
        return self._next_id

    def __len__(self):
        return len(self.ops)


def _result(value, inputs, vjp) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NumericsError("non-finite value produced")
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("inputs recorded on different tapes")
            tape = t.tape
    if tape is None:
        return Tensor(value)
    out = Tensor(value, tape, tape._new_id())
    tape.ops.append((out.tape_id, inputs, vjp))
    return out


def backward(tape: ExecutionTape, loss: Tensor) -> dict:
    """Gradients of scalar ``loss`` for every parameter watched on ``tape``."""
    if loss.shape != (1, 1):
        raise ContractError(f"loss must be a 1x1 scalar, got {loss.shape}")
    grads = {p.tape_id: np.zeros_like(p.value) for p in tape.params.values()}
    if loss.tape is not tape:
        return {name: grads[p.tape_id] for name, p in tape.params.items()}
    pending = {loss.tape_id: np.ones((1, 1))}
    for out_id, inputs, vjp in reversed(tape.ops):
        g = pending.pop(out_id, None)
        if g is None:
            continue
        for inp, gi in zip(inputs, vjp(g)):
            if gi is None or inp.tape is None:
                continue
            if inp.tape_id in grads:
                grads[inp.tape_id] = grads[inp.tape_id] + gi
            elif inp.tape_id in pending:
                pending[inp.tape_id] = pending[inp.tape_id] + gi
            else:
                pending[inp.tape_id] = gi
    return {name: grads[p.tape_id] for name, p in tape.params.items()}


# ---------------------------------------------------------------- primitives

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _result(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may be a single row broadcast over ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        return _result(a.value + b.value, (a, b), lambda g: (g, g))
    if b.shape == (1, a.shape[1]):
        return _result(a.value + b.value, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise ShapeError(f"add {a.shape} + {b.shape}")


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _result(a.value * c, (a,), lambda g: (g * c,))


def mul(a, b) -> Tensor:
    """Elementwise product; ``b`` may be one column broadcast across ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.value, b.value
    if a.shape == b.shape:
        return _result(av * bv, (a, b), lambda g: (g * bv, g * av))
    if b.shape == (a.shape[0], 1):
        return _result(av * bv, (a, b),
                       lambda g: (g * bv, (g * av).sum(axis=1, keepdims=True)))
    raise ShapeError(f"mul {a.shape} * {b.shape}")


def concat_cols(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols {a.shape} | {b.shape}")
    k = a.shape[1]
    return _result(np.concatenate([a.value, b.value], axis=1), (a, b),
                   lambda g: (g[:, :k], g[:, k:]))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    neg = a.value < 0
    d = np.where(neg, slope, 1.0)
    return _result(np.where(neg, a.value * slope, a.value), (a,), lambda g: (g * d,))


def elu(a) -> Tensor:
    a = _as_tensor(a)
    x = a.value
    em1 = np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, em1)
    d = np.where(x > 0, 1.0, em1 + 1.0)
    return _result(out, (a,), lambda g: (g * d,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid(a.value)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def dropout(a, rate: float, seed=None, training: bool = True, mask=None) -> Tensor:
    """Inverted dropout. ``mask`` (boolean keep-mask) overrides the seeded draw."""
    a = _as_tensor(a)
    if not training or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if mask is None:
        mask = np.random.default_rng(seed).random(a.shape) >= rate
    elif mask.shape != a.shape:
        raise ShapeError(f"dropout mask {mask.shape} vs {a.shape}")
    factor = mask / (1.0 - rate)
    return _result(a.value * factor, (a,), lambda g: (g * factor,))


def _scatter_add(index, rows, num_rows):
    """``out[index[e]] += rows[e]``; one bincount per column beats ``np.add.at``."""
    out = np.empty((num_rows, rows.shape[1]))
    for k in range(rows.shape[1]):
        out[:, k] = np.bincount(index, weights=rows[:, k], minlength=num_rows)
    return out


def gather_rows(a, index) -> Tensor:
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    n = a.shape[0]

    def vjp(g):
        return (_scatter_add(index, g, n),)

    return _result(a.value[index], (a,), vjp)


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)

    def vjp(g):
        out = np.zeros_like(a.value)
        out[start:stop] = g
        return (out,)

    return _result(a.value[start:stop], (a,), vjp)


def index_add(a, index, num_rows: int) -> Tensor:
    """Scatter-add rows of ``a`` into a ``num_rows`` matrix (adjoint of gather)."""
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    if index.shape != (a.shape[0],):
        raise ShapeError(f"index_add index {index.shape} for {a.shape}")
    return _result(_scatter_add(index, a.value, num_rows), (a,), lambda g: (g[index],))


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    return _result(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def _segment_starts(segments, n):
    segments = np.asarray(segments, dtype=np.intp)
    if n == 0 or segments.shape != (n,):
        raise SegmentError(f"need {n} > 0 segment ids, got shape {segments.shape}")
    if n > 1 and np.any(segments[1:] < segments[:-1]):
        raise SegmentError("segment ids must be sorted")
    starts = np.flatnonzero(np.r_[True, segments[1:] != segments[:-1]])
    return segments, starts


def segment_softmax(scores, segments) -> Tensor:
    """Softmax within each run of equal segment ids, independently per column."""
    scores = _as_tensor(scores)
    segments, starts = _segment_starts(segments, scores.shape[0])
    counts = np.diff(np.r_[starts, scores.shape[0]])
    x = scores.value
    shifted = x - np.repeat(np.maximum.reduceat(x, starts, axis=0), counts, axis=0)
    e = np.exp(shifted)
    p = e / np.repeat(np.add.reduceat(e, starts, axis=0), counts, axis=0)

    def vjp(g):
        dot = np.repeat(np.add.reduceat(g * p, starts, axis=0), counts, axis=0)
        return (p * (g - dot),)

    return _result(p, (scores,), vjp)


def segment_normalize(values, segments) -> Tensor:
    """Divide each entry by its segment's column sum (all-zero segments stay zero)."""
    values = _as_tensor(values)
    segments, starts = _segment_starts(segments, values.shape[0])
    counts = np.diff(np.r_[starts, values.shape[0]])
    v = values.value
    tot = np.repeat(np.add.reduceat(v, starts, axis=0), counts, axis=0)
    tot = np.where(tot == 0.0, 1.0, tot)
    out = v / tot

    def vjp(g):
        dot = np.repeat(np.add.reduceat(g * out, starts, axis=0), counts, axis=0)
        return ((g - dot) / tot,)

    return _result(out, (values,), vjp)


def weighted_segment_sum(weights, values, segments, num_segments: int) -> Tensor:
    """Per segment s and weight column h: sum of w[e, h] * values[e] over e in s.

    Output is ``num_segments x (H * d)`` with the H column blocks concatenated;
    segments with no entries give zero rows.
    """
    weights, values = _as_tensor(weights), _as_tensor(values)
    if weights.shape[0] != values.shape[0]:
        raise ShapeError(f"weights {weights.shape} vs values {values.shape}")
    segments, starts = _segment_starts(segments, values.shape[0])
    if segments[-1] >= num_segments or segments[0] < 0:
        raise SegmentError("segment id out of range")
    w, v = weights.value, values.value
    n, h = w.shape
    d = v.shape[1]
    prod = (w[:, :, None] * v[:, None, :]).reshape(n, h * d)
    out = np.zeros((num_segments, h * d))
    out[segments[starts]] = np.add.reduceat(prod, starts, axis=0)

    def vjp(g):
        ge = g[segments].reshape(n, h, d)
        gw = np.einsum("ehk,ek->eh", ge, v)
        gv = np.einsum("eh,ehk->ek", w, ge)
        return (gw, gv)

    return _result(out, (weights, values), vjp)


def bce_with_logits(logits, targets, mask=None) -> Tensor:
    """Mean binary cross-entropy over masked rows, computed from logits."""
    logits = _as_tensor(logits)
    z = logits.value
    y = np.asarray(targets, dtype=np.float64).reshape(z.shape)
    m = np.ones(z.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(z.shape)
    b = int(m.sum())
    if b == 0:
        raise ContractError("bce mask selects no rows")
    per = np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))
    loss = np.array([[per[m].sum() / b]])
    grad = np.where(m, (_sigmoid(z) - y) / b, 0.0)
    return _result(loss, (logits,), lambda g: (g[0, 0] * grad,))


def l2_norm_sq(params) -> Tensor:
    params = [_as_tensor(p) for p in params]
    total = sum(float(np.sum(p.value * p.value)) for p in params)
    return _result(np.array([[total]]), tuple(params),
                   lambda g: tuple(2.0 * g[0, 0] * p.value for p in params))


# ---------------------------------------------------------------- checking

@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)   # name -> relative error array
    max_error: float = 0.0
    worst: tuple = ()
    passed: bool = True
    tol: float = 0.0


def grad_check(f, point: dict, step: float = 1e-5, tol: float = 1e-4,
               analytic=None, floor: float = 1e-6) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` maps a dict of named tensors to a 1x1 tensor and must be
    deterministic. ``analytic`` optionally replaces the tape gradient with a
    hand-written ``point -> {name: grad}``. Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    point = {k: np.array(v, dtype=np.float64) for k, v in point.items()}
    if analytic is None:
        tape = ExecutionTape()
        watched = {k: tape.watch(v, k) for k, v in point.items()}
        grads = backward(tape, f(watched))
    else:
        grads = analytic(point)

    def value_at(k, idx, delta):
        args = {n: constant(v) for n, v in point.items()}
        shifted = point[k].copy()
        shifted[idx] += delta
        args[k] = constant(shifted)
        return float(f(args).value[0, 0])

    report = GradCheckReport(tol=tol)
    for k, v in point.items():
        err = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            num = (value_at(k, idx, step) - value_at(k, idx, -step)) / (2.0 * step)
            ana = float(np.asarray(grads[k])[idx])
            err[idx] = abs(ana - num) / max(abs(ana), abs(num), floor)
            if err[idx] > report.max_error:
                report.max_error = float(err[idx])
                report.worst = (k, idx)
        report.errors[k] = err
    report.passed = report.max_error <= tol
    return report
