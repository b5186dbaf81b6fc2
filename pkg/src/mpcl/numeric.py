"""Dense float64 arrays, a recorded-tape reverse mode, and a finite-difference checker.

Every differentiable op takes :class:`Tensor` or array-like inputs and returns a
:class:`Tensor`. When a :class:`GradientTape` is active and an input requires a
gradient, the op appends ``(name, output, inputs, backward)`` to the tape;
``GradientTape.backward`` replays those records in exact reverse order.

Leading axes broadcast like numpy's batched ``matmul`` so the same op handles a
single sample ``[K x D]`` and a batch ``[N x K x D]``.
"""
from __future__ import annotations

import contextlib
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DegenerateRowWarning, DimensionError, EvaluationError, ParameterError

DTYPE = np.float64

# op name -> factor applied to that op's input gradients; test hook for negative controls
_CORRUPT: dict[str, float] = {}
_ACTIVE: list["GradientTape"] = []


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; the stream for a given seed is identical on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed)))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        data = np.asarray(data)
        # extended precision is kept (finite-difference oracle); everything else becomes float64
        self.data = data if data.dtype == np.longdouble else data.astype(DTYPE, copy=False)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __float__(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class GradientTape:
    """Records differentiable ops while active (use as a context manager)."""

    def __init__(self):
        self.records: list[tuple[str, Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "GradientTape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    @staticmethod
    def watch(value, name: str | None = None) -> Tensor:
        return Tensor(np.array(value, dtype=DTYPE), requires_grad=True, name=name)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for op, out, inputs, fn in reversed(self.records):
            g = out.grad
            if g is None:
                continue
            factor = _CORRUPT.get(op)
            for t, gi in zip(inputs, fn(g)):
                if gi is None or not t.requires_grad:
                    continue
                if factor is not None:
                    gi = gi * factor
                t.grad = gi if t.grad is None else t.grad + gi


@contextlib.contextmanager
def corrupted_backward(op: str, factor: float = 1.01) -> Iterator[None]:
    """Scale the gradients an op propagates; only meant for negative-control tests."""
    _CORRUPT[op] = factor
    try:
        yield
    finally:
        _CORRUPT.pop(op, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """A gradient-free copy of ``x`` (stop-gradient)."""
    return Tensor(np.array(as_tensor(x).data))


def _emit(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = False
    if _ACTIVE and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE[-1].records.append((op, out, inputs, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise EvaluationError(f"non-finite values in {what}")


# --------------------------------------------------------------------------- ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g @ _swap(bd), ad.shape) if a.requires_grad else None,
                _unbroadcast(_swap(ad) @ g, bd.shape) if b.requires_grad else None)

    return _emit("matmul", ad @ bd, (a, b), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _emit("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def log(a, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(a, floor)``; no gradient flows where the floor is active."""
    a = as_tensor(a)
    ad = a.data
    live = ad > floor
    y = np.log(np.where(live, ad, floor if floor > 0 else ad))
    return _emit("log", y, (a,), lambda g: (np.where(live, g / np.where(live, ad, 1.0), 0.0),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _emit("transpose", _swap(a.data), (a,), lambda g: (_swap(g),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _emit("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise DimensionError("concat of an empty list")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat shape mismatch: {[t.shape for t in ts]}") from exc
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _emit("concat", data, ts, backward)


def slice_(a, key) -> Tensor:
    """``a[key]`` for any numpy index; duplicate indices accumulate in the backward pass."""
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, key, g)
        return (out,)

    return _emit("slice", a.data[key], (a,), backward)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _emit("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    n = a.data.size if axis is None else np.prod([shape[i] for i in np.atleast_1d(axis)])
    inv = 1.0 / float(n)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * inv, shape),)

    return _emit("mean", a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)


def softmax_rows(m, beta: float = 1.0) -> Tensor:
    """Row-wise (last axis) ``softmax(beta * m)`` with the max subtracted first."""
    if not beta > 0:
        raise ParameterError(f"softmax beta must be > 0, got {beta}")
    m = as_tensor(m)
    z = beta * m.data
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (beta * s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", s, (m,), backward)


def log_sum_exp(v, beta: float = 1.0, axis: int = -1, keepdims: bool = False, mask=None) -> Tensor:
    """``(1/beta) log sum exp(beta v)`` along ``axis``; entries where ``mask`` is False are left out."""
    if not beta > 0:
        raise ParameterError(f"log_sum_exp beta must be > 0, got {beta}")
    v = as_tensor(v)
    if v.data.size == 0 or v.shape[axis] == 0:
        raise DimensionError("log_sum_exp of an empty input")
    z = beta * v.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not np.all(mask.any(axis=axis)):
            raise DimensionError("log_sum_exp: a reduction has every entry masked out")
        z = np.where(mask, z, -np.inf)
    mx = z.max(axis=axis, keepdims=True)
    e = np.exp(z - mx)
    s = e.sum(axis=axis, keepdims=True)
    out = (mx + np.log(s)) / beta
    w = e / s
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * w,)

    return _emit("lse", out, (v,), backward)


def normalize_rows_l2(m, return_mask: bool = False):
    """Scale each row to unit L2 norm; zero rows pass through unchanged.

    With ``return_mask`` the boolean zero-row mask is returned alongside the
    result, otherwise a :class:`DegenerateRowWarning` is issued for zero rows.
    """
    m = as_tensor(m)
    # scale by the row max first so tiny rows do not underflow when squared
    peak = np.abs(m.data).max(axis=-1, keepdims=True)
    scaled = m.data / np.where(peak == 0.0, 1.0, peak)
    norms = peak * np.sqrt((scaled * scaled).sum(axis=-1, keepdims=True))
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    y = m.data / safe

    def backward(g):
        proj = g - y * (g * y).sum(axis=-1, keepdims=True)
        return (np.where(zero, g, proj / safe),)

    out = _emit("normalize", y, (m,), backward)
    zero_rows = zero[..., 0]
    if return_mask:
        return out, zero_rows
    if zero_rows.any():
        warnings.warn(f"{int(zero_rows.sum())} zero row(s) left unnormalized", DegenerateRowWarning,
                      stacklevel=2)
    return out


def kl_div(p, log_q, axis: int = -1) -> Tensor:
    """``sum p (ln p - log_q)`` along ``axis`` with ``0 ln 0 := 0``; ``p`` is a constant target."""
    p = np.asarray(p.data if isinstance(p, Tensor) else p, dtype=DTYPE)
    log_q = as_tensor(log_q)
    if p.shape != log_q.shape:
        raise DimensionError(f"kl_div shape mismatch: {p.shape} vs {log_q.shape}")
    plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    out = (plogp - p * log_q.data).sum(axis=axis)

    def backward(g):
        return (-p * np.expand_dims(g, axis),)

    return _emit("kl", out, (log_q,), backward)


def log_softmax_rows(m) -> Tensor:
    m = as_tensor(m)
    return sub(m, log_sum_exp(m, 1.0, axis=-1, keepdims=True))


# ------------------------------------------------------------------ grad check


@dataclass
class SlotCheck:
    name: str
    shape: tuple[int, ...]
    checked: int
    skipped: int
    max_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    slots: list[SlotCheck] = field(default_factory=list)
    tol: float = 1e-4
    eps: float = 1e-5
    oracle: str = "extended"

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.slots)

    def lines(self) -> list[str]:
        out = []
        for s in self.slots:
            status = "PASS" if s.passed else "FAIL"
            out.append(f"{status} {s.name:<28} shape={s.shape} checked={s.checked} "
                       f"skipped={s.skipped} max_rel_err={s.max_rel_err:.3e}")
        return out


def grad_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
    oracle: str = "extended",
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f`` against central differences.

    ``max_coords`` bounds the coordinates probed per slot (drawn from ``rng``).
    Coordinates where both the analytic and numeric derivatives are below
    ``floor`` in magnitude are counted as skipped.

    ``oracle="extended"`` evaluates the perturbed losses in ``np.longdouble``;
    with a loss of order 10 the float64 roundoff in ``f`` alone (about 1e-14)
    divided by ``2*eps`` swamps gradients near ``floor``. ``oracle="double"``
    keeps everything in float64. The analytic side is float64 either way.
    """
    if oracle not in ("extended", "double"):
        raise ParameterError(f"oracle must be 'extended' or 'double', got {oracle!r}")
    arrays = {k: np.array(v, dtype=DTYPE) for k, v in params.items()}
    with GradientTape() as tape:
        leaves = {k: Tensor(a.copy(), requires_grad=True, name=k) for k, a in arrays.items()}
        loss = f(leaves)
        if not np.all(np.isfinite(loss.data)):
            raise EvaluationError("loss is not finite at the base point")
        tape.backward(loss)
    odt = np.longdouble if oracle == "extended" else DTYPE
    consts = {k: Tensor(a.astype(odt)) for k, a in arrays.items()}
    rng = rng if rng is not None else make_rng(0)
    report = GradCheckReport(tol=tol, eps=eps, oracle=oracle)
    for name, arr in arrays.items():
        g = leaves[name].grad
        analytic = np.zeros(arr.shape) if g is None else np.asarray(g).reshape(arr.shape)
        flat = consts[name].data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst, checked, skipped = 0.0, 0, 0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(consts).data
            flat[i] = orig - eps
            fm = f(consts).data
            flat[i] = orig
            num = float((fp - fm) / (2 * eps))
            a = analytic.reshape(-1)[i]
            denom = max(abs(a), abs(num))
            if denom <= floor:
                skipped += 1
                continue
            checked += 1
            worst = max(worst, abs(a - num) / denom)
        report.slots.append(SlotCheck(name, arr.shape, checked, skipped, worst, worst <= tol))
    return report
