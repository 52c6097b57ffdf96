"""Minimal reverse-mode autodiff over dense numpy arrays.

A Tape records tensors in creation order (which is a topological order), and
backward() replays it once in reverse, accumulating gradients additively at
fan-out. Vectors with an even last dimension double as complex views: the
first half of the last axis holds real parts, the second half imaginary parts.
"""

from __future__ import annotations

import os
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

Array = np.ndarray

# Checked-error mode: every new tensor is scanned for NaN/Inf.
DEBUG_FINITE = bool(int(os.environ.get("TRUSTGNN_DEBUG_FINITE", "0")))


class ShapeError(ValueError):
    pass


class NondeterministicFunctionError(RuntimeError):
    pass


class Tape:
    """Recording context for one forward/backward pass. Single-worker use."""

    __slots__ = ("_nodes", "_params")

    def __init__(self) -> None:
        self._nodes: list[Tensor] = []
        self._params: list[Tensor] = []

    def param(self, data: Array) -> "Tensor":
        t = Tensor(np.asarray(data), self)
        self._params.append(t)
        self._nodes.append(t)
        return t

    def constant(self, data: Array) -> "Tensor":
        t = Tensor(np.asarray(data), self)
        self._nodes.append(t)
        return t

    def _record(self, data: Array, parents: tuple["Tensor", ...], vjp) -> "Tensor":
        if DEBUG_FINITE and not np.all(np.isfinite(data)):
            raise FloatingPointError("non-finite value produced on tape")
        t = Tensor(np.asarray(data), self, parents, vjp)
        self._nodes.append(t)
        return t


class Tensor:
    """A dense array tracked on a tape. Do not mutate .data after creation."""

    __slots__ = ("data", "tape", "_parents", "_vjp")

    def __init__(self, data: Array, tape: Tape, parents=(), vjp=None):
        self.data = data
        self.tape = tape
        self._parents: tuple[Tensor, ...] = parents
        self._vjp = vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, Array]:
    """Gradient of a scalar loss w.r.t. every param on the tape.

    Params unreachable from the loss get a zero gradient of their own shape.
    """
    if loss.tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    if loss.data.shape != ():
        raise ShapeError(f"loss must be a scalar, got shape {loss.data.shape}")
    grads: dict[int, Array] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for node in reversed(tape._nodes):
        if not node._parents:
            continue  # leaves keep their accumulated gradient
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, contrib in zip(node._parents, node._vjp(g)):
            if contrib is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
    return {
        p: grads.get(id(p), np.zeros_like(p.data)) for p in tape._params
    }


def _same_tape(*tensors: Tensor) -> Tape:
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise ValueError("operands recorded on different tapes")
    return tape


# ---------------------------------------------------------------------------
# core primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(n,k)@(k,m), (n,k)@(k,), or (k,)@(k,m)."""
    tape = _same_tape(a, b)
    x, y = a.data, b.data
    if x.shape[-1] != y.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {x.shape} vs {y.shape}")
    out = x @ y

    def vjp(g: Array):
        if x.ndim == 2 and y.ndim == 2:
            return g @ y.T, x.T @ g
        if x.ndim == 2 and y.ndim == 1:
            return np.outer(g, y), x.T @ g
        if x.ndim == 1 and y.ndim == 2:
            return g @ y.T, np.outer(x, g)
        raise ShapeError(f"unsupported matmul ranks: {x.shape} vs {y.shape}")

    return tape._record(out, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also supports (n,d) + (d,) bias broadcast."""
    tape = _same_tape(a, b)
    x, y = a.data, b.data
    if x.shape == y.shape:
        vjp = lambda g: (g, g)
    elif x.ndim == 2 and y.ndim == 1 and x.shape[1] == y.shape[0]:
        vjp = lambda g: (g, g.sum(axis=0))
    elif y.ndim == 2 and x.ndim == 1 and y.shape[1] == x.shape[0]:
        vjp = lambda g: (g.sum(axis=0), g)
    else:
        raise ShapeError(f"add shapes incompatible: {x.shape} vs {y.shape}")
    return tape._record(x + y, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub shapes differ: {a.data.shape} vs {b.data.shape}")
    return tape._record(a.data - b.data, (a, b), lambda g: (g, -g))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return a.tape._record(a.data * c, (a,), lambda g: (g * c,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    tape = _same_tape(a, b)
    x, y = a.data, b.data
    if x.shape != y.shape:
        raise ShapeError(f"mul shapes differ: {x.shape} vs {y.shape}")
    return tape._record(x * y, (a, b), lambda g: (g * y, g * x))


def mul_scalar(a: Tensor, s: Tensor) -> Tensor:
    """Tensor scaled by a 0-d tensor (e.g. an attention weight)."""
    tape = _same_tape(a, s)
    if s.data.shape != ():
        raise ShapeError(f"expected scalar multiplier, got shape {s.data.shape}")
    x, c = a.data, s.data

    def vjp(g: Array):
        return g * c, np.sum(g * x)

    return tape._record(x * c, (a, s), vjp)


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis."""
    tape = _same_tape(a, b)
    x, y = a.data, b.data
    if x.shape[:-1] != y.shape[:-1]:
        raise ShapeError(f"concat leading dims differ: {x.shape} vs {y.shape}")
    k = x.shape[-1]
    out = np.concatenate([x, y], axis=-1)
    return tape._record(out, (a, b), lambda g: (g[..., :k], g[..., k:]))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.data.shape
    return a.tape._record(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def sum_rows(a: Tensor) -> Tensor:
    """Column sums of a matrix: (n,d) -> (d,)."""
    if a.data.ndim != 2:
        raise ShapeError(f"sum_rows expects a matrix, got shape {a.data.shape}")
    n = a.data.shape[0]
    return a.tape._record(
        a.data.sum(axis=0), (a,), lambda g: (np.broadcast_to(g, (n,) + g.shape).copy(),)
    )


def sum_all(a: Tensor) -> Tensor:
    shp = a.data.shape
    return a.tape._record(
        np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shp).copy(),)
    )


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    shp = a.data.shape
    return a.tape._record(
        np.asarray(a.data.mean()),
        (a,),
        lambda g: (np.broadcast_to(g / n, shp).copy(),),
    )


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return a.tape._record(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return a.tape._record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def gather_rows(a: Tensor, index: Array) -> Tensor:
    """Row gather X[index]; backward scatter-adds through a sparse selector
    (np.add.at is too slow for per-epoch use on tens of thousands of rows)."""
    index = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a matrix, got shape {a.data.shape}")
    if index.size and (index.min() < 0 or index.max() >= a.data.shape[0]):
        raise IndexError("gather index out of range")
    n = a.data.shape[0]
    m = index.shape[0]
    scatter = sp.csr_matrix(
        (np.ones(m, dtype=a.data.dtype), (index, np.arange(m))), shape=(n, m)
    )

    def vjp(g: Array):
        return (scatter @ g,)

    return a.tape._record(a.data[index], (a,), vjp)


def index_scalar(a: Tensor, i: int) -> Tensor:
    if a.data.ndim != 1:
        raise ShapeError(f"index_scalar expects a vector, got shape {a.data.shape}")
    i = int(i)

    def vjp(g: Array):
        out = np.zeros_like(a.data)
        out[i] = g
        return (out,)

    return a.tape._record(np.asarray(a.data[i]), (a,), vjp)


def stack_scalars(parts: Sequence[Tensor]) -> Tensor:
    """0-d tensors stacked into a vector (attention scores into one logit vector)."""
    tape = _same_tape(*parts)
    for p in parts:
        if p.data.shape != ():
            raise ShapeError(f"stack_scalars needs scalars, got shape {p.data.shape}")
    out = np.array([p.data for p in parts])
    return tape._record(out, tuple(parts), lambda g: tuple(g[j] for j in range(len(parts))))


def sparse_matmul(mat: sp.csr_matrix, mat_t: sp.csr_matrix, x: Tensor) -> Tensor:
    """Product of a constant sparse matrix with a tracked dense matrix.

    `mat_t` must be the transpose of `mat` (prebuilt in CSR so the backward
    pass is a fast row-major product too).
    """
    if mat.shape[1] != x.data.shape[0]:
        raise ShapeError(f"sparse_matmul dims differ: {mat.shape} vs {x.data.shape}")
    return x.tape._record(np.asarray(mat @ x.data), (x,), lambda g: (np.asarray(mat_t @ g),))


# ---------------------------------------------------------------------------
# complex-plane primitives (even last dimension: [real halves | imag halves])


def _split_complex(x: Array) -> tuple[Array, Array]:
    d = x.shape[-1]
    if d % 2 != 0:
        raise ShapeError(f"complex view needs an even last dimension, got {d}")
    h = d // 2
    return x[..., :h], x[..., h:]


def as_complex(x: Array) -> Array:
    """Plain-array helper: reinterpret the split layout as numpy complex."""
    re, im = _split_complex(np.asarray(x))
    return re + 1j * im


def from_complex(z: Array) -> Array:
    return np.concatenate([np.real(z), np.imag(z)], axis=-1)


def complex_hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Entrywise complex product; one operand may be a vector broadcast over rows."""
    tape = _same_tape(a, b)
    x, y = a.data, b.data
    if x.shape != y.shape and not (
        (x.ndim == 2 and y.ndim == 1 and x.shape[1] == y.shape[0])
        or (y.ndim == 2 and x.ndim == 1 and y.shape[1] == x.shape[0])
    ):
        raise ShapeError(f"complex_hadamard shapes incompatible: {x.shape} vs {y.shape}")
    xr, xi = _split_complex(x)
    yr, yi = _split_complex(y)
    out = np.concatenate([xr * yr - xi * yi, xr * yi + xi * yr], axis=-1)

    def vjp(g: Array):
        gr, gi = _split_complex(g)
        # dL/dx = g * conj(y), dL/dy = g * conj(x)
        gx = np.concatenate([gr * yr + gi * yi, gi * yr - gr * yi], axis=-1)
        gy = np.concatenate([gr * xr + gi * xi, gi * xr - gr * xi], axis=-1)
        if x.ndim < gx.ndim:
            gx = gx.sum(axis=0)
        if y.ndim < gy.ndim:
            gy = gy.sum(axis=0)
        return gx, gy

    return tape._record(out, (a, b), vjp)


def complex_conjugate(a: Tensor) -> Tensor:
    re, im = _split_complex(a.data)
    out = np.concatenate([re, -im], axis=-1)

    def vjp(g: Array):
        gr, gi = _split_complex(g)
        return (np.concatenate([gr, -gi], axis=-1),)

    return a.tape._record(out, (a,), vjp)


def complex_modulus(x: Array) -> Array:
    """Plain-array helper: per-entry modulus of the split complex layout."""
    re, im = _split_complex(np.asarray(x))
    return np.sqrt(re * re + im * im)


def complex_unit_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide each complex entry by max(modulus, eps) so outputs lie on the
    unit circle wherever the input modulus is at least eps."""
    x = a.data
    re, im = _split_complex(x)
    m = np.sqrt(re * re + im * im)
    denom = np.maximum(m, eps)
    out = np.concatenate([re / denom, im / denom], axis=-1)

    def vjp(g: Array):
        gr, gi = _split_complex(g)
        normal = m > eps
        # On the normalized branch the Jacobian of (a,b)/m is
        # [[b^2, -ab], [-ab, a^2]] / m^3; below eps the map is linear 1/eps.
        m3 = np.where(normal, denom**3, 1.0)
        da = np.where(normal, (gr * im * im - gi * re * im) / m3, gr / eps)
        db = np.where(normal, (gi * re * re - gr * re * im) / m3, gi / eps)
        return (np.concatenate([da, db], axis=-1),)

    return a.tape._record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# softmax and loss


def softmax(a: Tensor) -> Tensor:
    """Stable softmax of a vector (max-subtraction)."""
    if a.data.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got shape {a.data.shape}")
    z = a.data - a.data.max()
    e = np.exp(z)
    y = e / e.sum()

    def vjp(g: Array):
        return (y * (g - np.dot(g, y)),)

    return a.tape._record(y, (a,), vjp)


def softmax_rows(x: Array) -> Array:
    """Plain-array row softmax for evaluation-time probabilities."""
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: Tensor, labels: Array) -> Tensor:
    """Mean over rows of -log softmax(logits)[label], fused for stability."""
    labels = np.asarray(labels, dtype=np.int64)
    x = logits.data
    if x.ndim != 2:
        raise ShapeError(f"cross_entropy expects (n, C) logits, got {x.shape}")
    n, c = x.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label outside [0, {c})")
    z = x - x.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    loss = np.asarray((logsumexp - z[np.arange(n), labels]).mean())
    probs = np.exp(z - logsumexp[:, None])

    def vjp(g: Array):
        gx = probs.copy()
        gx[np.arange(n), labels] -= 1.0
        return (gx * (g / n),)

    return logits.tape._record(loss, (logits,), vjp)


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_check(
    forward: Callable[[Tape, dict[str, Tensor]], Tensor],
    params: dict[str, Array],
    eps: float = 1e-4,
    max_samples: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between backward() and central finite differences.

    `forward` must build the scalar loss from scratch on the given tape; it is
    run twice to verify determinism. Coordinates are sampled (at least
    `max_samples` per tensor) for large parameters; relative-error denominators
    are guarded at 1e-8. The default step keeps the subtraction-cancellation
    floor below the guard for losses of order one.
    """
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    def run(arrs: dict[str, Array]) -> tuple[float, dict[str, Array] | None, Tape, dict]:
        tape = Tape()
        tens = {k: tape.param(v) for k, v in arrs.items()}
        loss = forward(tape, tens)
        return float(loss.data), loss, tape, tens

    val1, loss, tape, tens = run(params)
    val2, _, _, _ = run(params)
    if val1 != val2:
        raise NondeterministicFunctionError(
            f"two forward passes disagree: {val1!r} vs {val2!r}"
        )
    grads = backward(tape, loss)
    analytic = {k: grads[t] for k, t in tens.items()}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, base in params.items():
        size = base.size
        if size <= max_samples:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=max_samples, replace=False)
        flat = base.reshape(-1)
        for c in coords:
            h = eps * max(1.0, abs(flat[c]))
            orig = flat[c]
            flat[c] = orig + h
            plus, _, _, _ = run(params)
            flat[c] = orig - h
            minus, _, _, _ = run(params)
            flat[c] = orig
            fd = (plus - minus) / (2.0 * h)
            an = analytic[name].reshape(-1)[c]
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            worst = max(worst, err)
    return worst
