"""Dense 2-D tensors with define-by-run reverse-mode differentiation.

Operations executed inside an active :class:`Tape` are recorded in
execution order; :func:`backward` replays them in reverse and accumulates
``grad`` on every tracked tensor.  All values are float64.

Random numbers come from :func:`make_rng`, a NumPy ``Generator`` backed by
the Philox-4x64 counter-based bit generator, which produces the same stream
on every platform for a given seed.
"""
from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "resgae_active_tape", default=None
)


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared while checked mode was on."""


_checked = False


def set_checked(flag: bool) -> None:
    """Toggle NaN/Inf detection on every operation result."""
    global _checked
    _checked = bool(flag)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed on ``(seed, stream)``.

    Distinct ``stream`` values give statistically independent sequences for
    the same seed, so one run seed can feed several consumers.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


class Tensor:
    """A 2-D float64 array plus an optional gradient buffer."""

    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got ndim={arr.ndim}")
        self.value: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        if _checked:
            _check_finite(self.value, "construction")

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    # maps upstream gradient to one gradient (or None) per input
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations on tensors that require grad are
    appended while the tape is active.  A fresh tape per training step is the
    intended usage.
    """

    records: list[_Record] = field(default_factory=list)
    _token: contextvars.Token | None = field(default=None, repr=False)

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self.records)


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {where}")


def _record(out_value: np.ndarray, inputs: tuple[Tensor, ...], vjp, op: str) -> Tensor:
    if _checked:
        _check_finite(out_value, op)
    tape = _ACTIVE_TAPE.get()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.value = out_value
    out.grad = None
    out.requires_grad = track
    out.name = None
    if track:
        tape.records.append(_Record(out, inputs, vjp))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``grad`` of every tracked tensor with d(loss)/d(tensor).

    Gradients accumulate across calls on the same tape; call
    :meth:`Tensor.zero_grad` (or :func:`zero_grads`) to reset.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward() needs a scalar (1x1) loss, got {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss was not produced through the tape")
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for rec in reversed(tape.records):
        g = adjoint.pop(id(rec.out), None)
        if g is None:
            continue
        rec.out.grad = g if rec.out.grad is None else rec.out.grad + g
        grads = rec.vjp(g)
        for inp, gi in zip(rec.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in adjoint:
                adjoint[key] = adjoint[key] + gi
            else:
                adjoint[key] = gi
    # whatever remains belongs to leaves (parameters / inputs)
    leaves = {}
    for rec in tape.records:
        for inp in rec.inputs:
            if id(inp) in adjoint:
                leaves[id(inp)] = inp
    for key, t in leaves.items():
        g = adjoint[key]
        t.grad = g.copy() if t.grad is None else t.grad + g


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def spmm(s, d: Tensor) -> Tensor:
    """Sparse (constant) times dense.  Only the dense operand gets a gradient."""
    mat = s.matrix if hasattr(s, "matrix") else s
    if not sp.issparse(mat):
        mat = sp.csr_matrix(mat)
    if mat.shape[1] != d.rows:
        raise ShapeError(f"spmm: inner dimensions differ {mat.shape} @ {d.shape}")
    out = np.asarray(mat @ d.value)
    # the normalised adjacency is symmetric, so it is its own transpose
    symmetric = hasattr(s, "matrix")
    return _record(
        out, (d,), lambda g: (np.asarray((mat if symmetric else mat.T) @ g),), "spmm"
    )


def transpose(a: Tensor) -> Tensor:
    return _record(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _record(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _record(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product."""
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return _record(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.value * c, (a,), lambda g: (g * c,), "scale")


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.value + c, (a,), lambda g: (g,), "add_scalar")


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a 1x1 tensor."""
    shape = a.shape
    return _record(
        np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),), "sum"
    )


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.value)
    return _record(y, (a,), lambda g: (g * y,), "exp")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch-free stable form
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.value)
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return _record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def gaussian_sample(mu: Tensor, logvar: Tensor, rng=None, eps: np.ndarray | None = None) -> Tensor:
    """Reparameterised draw ``mu + exp(0.5 * logvar) * eps`` with eps ~ N(0, I).

    Pass ``eps`` to fix the noise (used by gradient checks); otherwise it is
    drawn from ``rng``.
    """
    _same_shape(mu, logvar, "gaussian_sample")
    if eps is None:
        if rng is None:
            raise ValueError("gaussian_sample needs rng or eps")
        eps = rng.standard_normal(mu.shape)
    else:
        eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), mu.shape).copy()
    std = np.exp(0.5 * logvar.value)
    out = mu.value + std * eps
    return _record(out, (mu, logvar), lambda g: (g, 0.5 * g * std * eps), "gaussian_sample")


def row_dot(z: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Column vector of inner products ``z[rows[k]] . z[cols[k]]``."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    n = z.rows
    if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n):
        raise IndexError(f"pair index out of range for {n} rows")
    zi, zj = z.value[rows], z.value[cols]
    out = np.einsum("ij,ij->i", zi, zj).reshape(-1, 1)

    def vjp(g):
        gz = np.zeros_like(z.value)
        np.add.at(gz, rows, g * zj)
        np.add.at(gz, cols, g * zi)
        return (gz,)

    return _record(out, (z,), vjp, "row_dot")


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def bce_with_logits(
    logits: Tensor, targets: np.ndarray, pos_weight: float = 1.0, factor: float = 1.0
) -> Tensor:
    """``factor * sum(pos_weight*t*softplus(-x) + (1-t)*softplus(x))`` as 1x1.

    ``targets`` is a constant 0/1 array of the logits' shape.
    """
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: targets {t.shape} vs logits {logits.shape}")
    x = logits.value
    sp_pos = _softplus(x)  # -log(1 - sigmoid(x))
    # softplus(-x) = softplus(x) - x
    per = pos_weight * t * (sp_pos - x) + (1.0 - t) * sp_pos
    val = factor * per.sum()

    def vjp(g):
        s = _sigmoid(x)
        dx = pos_weight * t * (s - 1.0) + (1.0 - t) * s
        return (g[0, 0] * factor * dx,)

    return _record(np.array([[val]]), (logits,), vjp, "bce_with_logits")


def gram_bce_with_logits(
    z: Tensor, targets, pos_weight: float = 1.0, factor: float = 1.0, block: int = 256
) -> Tensor:
    """``bce_with_logits(z @ z.T, targets, pos_weight, factor)`` without materialising N x N.

    ``targets`` is a sparse 0/1 matrix listing the positive pairs.  Rows are
    processed in blocks and the gradient is formed during the forward pass.
    """
    n, _ = z.shape
    tgt = sp.csr_matrix(targets)
    if tgt.shape != (n, n):
        raise ShapeError(f"gram_bce_with_logits: targets {tgt.shape} for {n} rows")
    zv = z.value
    grad = np.zeros_like(zv)
    val = 0.0
    buf_e = np.empty((block, n))
    buf_s = np.empty((block, n))
    indptr, indices = tgt.indptr, tgt.indices
    for r0 in range(0, n, block):
        r1 = min(n, r0 + block)
        b = r1 - r0
        x = zv[r0:r1] @ zv.T
        e, s = buf_e[:b], buf_s[:b]
        # negatives: softplus(x) = max(x, 0) + log1p(exp(-|x|))
        np.abs(x, out=e)
        val += 0.5 * (x.sum() + e.sum())
        np.negative(e, out=e)
        np.exp(e, out=e)
        np.log1p(e, out=s)
        val += s.sum()
        # sigmoid(x) from e = exp(-|x|)
        np.add(e, 1.0, out=s)
        np.divide(e, s, out=s)
        np.subtract(1.0, s, out=s, where=x >= 0)
        lo, hi = indptr[r0], indptr[r1]
        if hi > lo:
            prow = np.repeat(np.arange(b), np.diff(indptr[r0 : r1 + 1]))
            pcol = indices[lo:hi]
            xp = x[prow, pcol]
            sig = s[prow, pcol]
            softplus_p = np.maximum(xp, 0.0) + np.log1p(np.exp(-np.abs(xp)))
            # positives pay pos_weight * softplus(-x) instead of softplus(x)
            val += float(np.sum(pos_weight * (softplus_p - xp) - softplus_p))
            np.add.at(s, (prow, pcol), pos_weight * (sig - 1.0) - sig)
        grad[r0:r1] += s @ zv
        grad += s.T @ zv[r0:r1]
    val *= factor
    grad *= factor
    return _record(np.array([[val]]), (z,), lambda g: (g[0, 0] * grad,), "gram_bce_with_logits")
