"""Dense float64 tensors with taped reverse-mode differentiation.

Only the operations the dialogue model actually needs are provided. Every
op runs on plain numpy arrays; while a tape is open, ops that touch a
gradient-bearing tensor append a backward rule to it, and ``backward``
replays the tape in reverse. Creation order is already topological, so no
sorting is needed and every rule fires at most once.
"""
from __future__ import annotations

import os
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

# Flip on (or set DIALOGLOW_DEBUG=1 before import) to assert that every op
# output is finite. Costs one isfinite pass per op, so off by default.
DEBUG_CHECK_FINITE = os.environ.get("DIALOGLOW_DEBUG", "") not in ("", "0")


class Tensor:
    """A dense float64 array plus a flag marking it as a trainable leaf."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


# One record per differentiable op: the output tensor, its input tensors,
# and a rule mapping d(loss)/d(output) to per-input gradient arrays.
_BackwardRule = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Ordered record of ops; used as ``with Tape() as tape: ...``."""

    __slots__ = ("_records", "_produced")

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], _BackwardRule]] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def _tracks(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._produced


_TAPE_STACK: list[Tape] = []


def _out(data: np.ndarray, parents: tuple[Tensor, ...], rule: _BackwardRule) -> Tensor:
    """Wrap an op result, recording it on the active tape when relevant."""
    if DEBUG_CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("op produced a non-finite value")
    out = Tensor(data)
    tape = _TAPE_STACK[-1] if _TAPE_STACK else None
    if tape is not None and any(tape._tracks(p) for p in parents):
        tape._records.append((out, parents, rule))
        tape._produced.add(id(out))
    return out


def _require_shape(name: str, got: tuple[int, ...], want_ndim: int) -> None:
    if len(got) != want_ndim:
        raise ValueError(f"{name}: expected a {want_ndim}-d tensor, got shape {got}")


# ---------------------------------------------------------------------------
# elementwise and linear-algebra primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shapes differ, {a.shape} vs {b.shape}")
    return _out(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul: shapes differ, {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _out(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _out(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for 2-d x 2-d or 2-d x 1-d operands."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ValueError(f"matmul: inner dims differ, {ad.shape} vs {bd.shape}")
        return _out(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))
    if ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise ValueError(f"matmul: inner dims differ, {ad.shape} vs {bd.shape}")
        return _out(ad @ bd, (a, b), lambda g: (np.outer(g, bd), ad.T @ g))
    raise ValueError(f"matmul: unsupported operand ranks, {ad.shape} vs {bd.shape}")


def transpose(a: Tensor) -> Tensor:
    _require_shape("transpose", a.shape, 2)
    return _out(a.data.T, (a,), lambda g: (g.T,))


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` with x either (rows, in) or (in,), w (in, out), b (out,)."""
    xd, wd, bd = x.data, w.data, b.data
    if wd.ndim != 2 or bd.ndim != 1 or wd.shape[1] != bd.shape[0]:
        raise ValueError(f"affine: weight {wd.shape} and bias {bd.shape} disagree")
    if xd.ndim == 2:
        if xd.shape[1] != wd.shape[0]:
            raise ValueError(f"affine: input {xd.shape} vs weight {wd.shape}")
        return _out(
            xd @ wd + bd,
            (x, w, b),
            lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)),
        )
    if xd.ndim == 1:
        if xd.shape[0] != wd.shape[0]:
            raise ValueError(f"affine: input {xd.shape} vs weight {wd.shape}")
        return _out(
            xd @ wd + bd,
            (x, w, b),
            lambda g: (wd @ g, np.outer(xd, g), g),
        )
    raise ValueError(f"affine: input must be 1-d or 2-d, got shape {xd.shape}")


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.data)
    return _out(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _out(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _out(a.data * mask, (a,), lambda g: (g * mask,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _out(np.sum(a.data), (a,), lambda g: (np.full(shape, float(g)),))


# ---------------------------------------------------------------------------
# structural primitives


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ValueError("concat: need at least one tensor")
    ndim = parts[0].ndim
    if any(p.ndim != ndim for p in parts):
        raise ValueError(
            "concat: rank mismatch, shapes " + ", ".join(str(p.shape) for p in parts)
        )
    if not 0 <= axis < ndim:
        raise ValueError(f"concat: bad axis {axis} for {ndim}-d tensors")
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, splits, axis=axis))

    return _out(np.concatenate([p.data for p in parts], axis=axis), parts, rule)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack k same-length vectors into a (k, n) matrix."""
    rows = tuple(rows)
    if not rows:
        raise ValueError("stack_rows: need at least one row")
    n = rows[0].shape
    if any(r.ndim != 1 or r.shape != n for r in rows):
        raise ValueError(
            "stack_rows: rows must be equal-length vectors, shapes "
            + ", ".join(str(r.shape) for r in rows)
        )
    return _out(
        np.stack([r.data for r in rows]),
        rows,
        lambda g: tuple(g[i] for i in range(len(rows))),
    )


def row(a: Tensor, i: int) -> Tensor:
    _require_shape("row", a.shape, 2)
    if not 0 <= i < a.shape[0]:
        raise ValueError(f"row: index {i} out of range for shape {a.shape}")
    shape = a.shape

    def rule(g):
        out = np.zeros(shape)
        out[i] = g
        return (out,)

    return _out(a.data[i].copy(), (a,), rule)


def narrow(a: Tensor, start: int, length: int, axis: int = 0) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    if axis not in (0, 1) or axis >= a.ndim:
        raise ValueError(f"narrow: bad axis {axis} for shape {a.shape}")
    if start < 0 or length < 1 or start + length > a.shape[axis]:
        raise ValueError(
            f"narrow: slice [{start}:{start + length}] out of range for shape {a.shape}"
        )
    shape = a.shape
    sl: tuple = (slice(start, start + length),) if axis == 0 else (
        slice(None),
        slice(start, start + length),
    )

    def rule(g):
        out = np.zeros(shape)
        out[sl] = g
        return (out,)

    return _out(a.data[sl].copy(), (a,), rule)


def pad_rows(a: Tensor, total_rows: int) -> Tensor:
    """Append all-zero rows below a matrix until it has ``total_rows`` rows."""
    _require_shape("pad_rows", a.shape, 2)
    n, k = a.shape
    if total_rows < n:
        raise ValueError(f"pad_rows: target {total_rows} smaller than {a.shape}")
    if total_rows == n:
        return _out(a.data.copy(), (a,), lambda g: (g,))
    padded = np.zeros((total_rows, k))
    padded[:n] = a.data
    return _out(padded, (a,), lambda g: (g[:n],))


def gather_rows(a: Tensor, ids: Sequence[int], stop_grad_rows: Iterable[int] = ()) -> Tensor:
    """Select rows ``ids`` from a matrix; gradient scatter-adds back.

    Rows listed in ``stop_grad_rows`` never receive gradient, which keeps
    reserved rows (like an all-zero padding row) fixed under training.
    """
    _require_shape("gather_rows", a.shape, 2)
    idx = np.asarray(ids, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ValueError("gather_rows: ids must be a non-empty 1-d index list")
    if idx.min() < 0 or idx.max() >= a.shape[0]:
        raise ValueError(f"gather_rows: ids out of range for shape {a.shape}")
    shape = a.shape
    frozen = tuple(stop_grad_rows)

    def rule(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        for r in frozen:
            out[r] = 0.0
        return (out,)

    return _out(a.data[idx], (a,), rule)


# ---------------------------------------------------------------------------
# model-specific primitives


def max_over_time(h: Tensor, valid_len: int) -> Tensor:
    """Columnwise max over the first ``valid_len`` rows of a (steps, k) matrix.

    Gradient flows to the first row attaining each column's max, matching
    numpy's argmax tie-breaking.
    """
    _require_shape("max_over_time", h.shape, 2)
    if valid_len < 1 or valid_len > h.shape[0]:
        raise ValueError(f"max_over_time: valid_len {valid_len} out of range for {h.shape}")
    sub = h.data[:valid_len]
    arg = np.argmax(sub, axis=0)
    cols = np.arange(h.shape[1])
    shape = h.shape

    def rule(g):
        out = np.zeros(shape)
        out[arg, cols] = g
        return (out,)

    return _out(sub[arg, cols].copy(), (h,), rule)


def masked_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over unmasked entries; masked entries are exactly zero.

    ``scores`` may be a vector with a same-length boolean mask, or a
    (rows, k) matrix with a (k,) mask applied to every row. The max of the
    unmasked scores is subtracted before exponentiation, so masked-out
    positions never enter the arithmetic at all.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 1:
        raise ValueError(f"masked_softmax: mask must be 1-d, got shape {mask.shape}")
    if not mask.any():
        raise ValueError("masked_softmax: mask excludes every position")
    if scores.ndim == 1:
        if scores.shape != mask.shape:
            raise ValueError(
                f"masked_softmax: scores {scores.shape} vs mask {mask.shape}"
            )
        sel = scores.data[mask]
        e = np.exp(sel - sel.max())
        p = e / e.sum()
        out = np.zeros(scores.shape)
        out[mask] = p
        shape = scores.shape

        def rule(g):
            gs = g[mask]
            grad = np.zeros(shape)
            grad[mask] = p * (gs - np.dot(gs, p))
            return (grad,)

        return _out(out, (scores,), rule)
    if scores.ndim == 2:
        if scores.shape[1] != mask.shape[0]:
            raise ValueError(
                f"masked_softmax: scores {scores.shape} vs mask {mask.shape}"
            )
        sub = scores.data[:, mask]
        e = np.exp(sub - sub.max(axis=1, keepdims=True))
        p = e / e.sum(axis=1, keepdims=True)
        out = np.zeros(scores.shape)
        out[:, mask] = p
        shape = scores.shape

        def rule(g):
            gs = g[:, mask]
            inner = np.sum(gs * p, axis=1, keepdims=True)
            grad = np.zeros(shape)
            grad[:, mask] = p * (gs - inner)
            return (grad,)

        return _out(out, (scores,), rule)
    raise ValueError(f"masked_softmax: scores must be 1-d or 2-d, got {scores.shape}")


def dropout(x: Tensor, p: float, train: bool, rng: "np.random.Generator | None" = None) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Outside training this is the identity, so evaluation is deterministic
    and consumes no randomness.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return _out(x.data.copy(), (x,), lambda g: (g,))
    if rng is None:
        raise ValueError("dropout: training mode needs an rng")
    keep = rng.random(x.shape) >= p
    factor = keep / (1.0 - p)
    return _out(x.data * factor, (x,), lambda g: (g * factor,))


def weighted_nll(logits: Tensor, gold: Sequence[int], weights: Sequence[float]) -> Tensor:
    """Weighted mean negative log-softmax-likelihood over rows.

    loss = sum_i w_i * (-log softmax(logits_i)[gold_i]) / sum_i w_i. When
    every weight is zero the loss is the constant 0.0 and contributes no
    gradient anywhere.
    """
    _require_shape("weighted_nll", logits.shape, 2)
    n, k = logits.shape
    gold = np.asarray(gold, dtype=np.intp)
    w = np.asarray(weights, dtype=np.float64)
    if gold.shape != (n,) or w.shape != (n,):
        raise ValueError(
            f"weighted_nll: logits {logits.shape} need {n} golds and weights, "
            f"got {gold.shape} and {w.shape}"
        )
    if gold.min() < 0 or gold.max() >= k:
        raise ValueError(f"weighted_nll: gold ids out of range for {k} classes")
    if np.any(w < 0.0):
        raise ValueError("weighted_nll: weights must be non-negative")
    wsum = w.sum()
    if wsum == 0.0:
        return Tensor(0.0)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    logsumexp = np.log(ez.sum(axis=1))
    nll = logsumexp - z[np.arange(n), gold]
    loss = float(np.dot(w, nll) / wsum)
    probs = ez / ez.sum(axis=1, keepdims=True)

    def rule(g):
        grad = probs.copy()
        grad[np.arange(n), gold] -= 1.0
        grad *= (w / wsum)[:, None]
        return (grad * float(g),)

    return _out(np.float64(loss), (logits,), rule)


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Replay ``tape`` in reverse from a scalar loss.

    Returns a map from every gradient-bearing tensor reached to its
    gradient. Fan-out accumulates additively; leaves without
    ``requires_grad`` are skipped.
    """
    if loss.shape != ():
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if id(loss) not in tape._produced:
        raise ValueError("backward: loss was not recorded on this tape")
    grads: dict[Tensor, np.ndarray] = {loss: np.ones(())}
    for out, parents, rule in reversed(tape._records):
        g = grads.get(out)
        if g is None:
            continue
        pgrads = rule(g)
        for parent, pg in zip(parents, pgrads):
            if pg is None or not tape._tracks(parent):
                continue
            acc = grads.get(parent)
            grads[parent] = pg if acc is None else acc + pg
    return grads


# Relative error is guarded below this scale so that finite-difference noise
# on true-zero gradients does not read as disagreement.
GRAD_CHECK_FLOOR = 1e-3


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
    max_coords_per_tensor: "int | None" = None,
    rng: "np.random.Generator | None" = None,
) -> float:
    """Compare taped gradients of ``f()`` against central finite differences.

    ``f`` must close over ``params`` and be deterministic (dropout in
    training mode is rejected). Large tensors can be spot-checked by
    sampling ``max_coords_per_tensor`` coordinates. Returns the worst
    relative error, guarded at GRAD_CHECK_FLOOR.
    """
    params = list(params)
    with Tape() as tape:
        loss = f()
    if loss.shape != ():
        raise ValueError("grad_check: f must return a scalar loss")
    if not np.isfinite(loss.data):
        raise FloatingPointError("grad_check: loss is not finite")
    if float(f().data) != float(loss.data):
        raise ValueError("grad_check: f is not deterministic; disable dropout first")
    grads = backward(tape, loss)
    worst = 0.0
    for p in params:
        g = grads.get(p)
        if g is None:
            g = np.zeros(p.shape)
        coords = list(np.ndindex(*p.shape)) if p.ndim else [()]
        if max_coords_per_tensor is not None and len(coords) > max_coords_per_tensor:
            if rng is None:
                raise ValueError("grad_check: sampling coordinates needs an rng")
            pick = rng.choice(len(coords), size=max_coords_per_tensor, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        for idx in coords:
            orig = p.data[idx]
            p.data[idx] = orig + eps
            lo_hi = float(f().data)
            p.data[idx] = orig - eps
            lo_lo = float(f().data)
            p.data[idx] = orig
            if not (np.isfinite(lo_hi) and np.isfinite(lo_lo)):
                raise FloatingPointError("grad_check: perturbed loss is not finite")
            fd = (lo_hi - lo_lo) / (2.0 * eps)
            num = abs(float(g[idx]) - fd)
            den = max(abs(float(g[idx])), abs(fd), GRAD_CHECK_FLOOR)
            worst = max(worst, num / den)
    return worst


def seeded_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based Philox generator; streams split by jumping."""
    bits = np.random.Philox(key=np.uint64(seed))
    if stream:
        bits = bits.jumped(stream)
    return np.random.Generator(bits)
