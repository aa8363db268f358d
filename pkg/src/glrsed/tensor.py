"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation on a :class:`Tensor` that requires gradients records its
inputs and a backward rule. :func:`backward` orders the recorded operations
into a :class:`Tape` (a topological order of the computation) and replays the
backward rules in reverse, summing gradients where a value feeds several
consumers.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "GradCheckError",
    "tensor",
    "matmul",
    "sigmoid",
    "tanh",
    "relu",
    "log",
    "hadamard",
    "add",
    "sub",
    "scale",
    "clip",
    "concat",
    "stack",
    "conv2d",
    "maxpool_freq",
    "backward",
    "grad_check",
    "corrupt_backward",
]

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

# op name -> multiplier applied to that op's input gradients; test hook only
_FAULTS: dict[str, float] = {}


class Tensor:
    """A real n-dimensional array with an optional differentiation record."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.op = "leaf"

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence[Tensor], fn: BackwardFn, op: str) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = fn
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op})"

    # operators
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return hadamard(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    @property
    def T(self) -> Tensor:
        return self.transpose()

    def sum(self, axis=None) -> Tensor:
        return _sum(self, axis)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data + b.data, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data - b.data, (a, b),
                          lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("hadamard", a, b)
    ad, bd = a.data, b.data
    return Tensor._result(ad * bd, (a, b),
                          lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
                          "hadamard")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._result(a.data * c, (a,), lambda g: (g * c,), "scale")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor._result(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return Tensor._result(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._result(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def log(a: Tensor) -> Tensor:
    x = a.data
    return Tensor._result(np.log(x), (a,), lambda g: (g / x,), "log")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient is zero where the clamp is active."""
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor._result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# ---------------------------------------------------------------------------
# shape manipulation and reductions
# ---------------------------------------------------------------------------


def _sum(a: Tensor, axis) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis)

    def fn(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor._result(np.asarray(out), (a,), fn, "sum")


def _reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def _transpose(a: Tensor, axes) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


class _SliceGrad:
    """Gradient that is nonzero only on ``index`` of an array of ``shape``."""

    __slots__ = ("index", "value", "shape")

    def __init__(self, index, value: np.ndarray, shape: tuple[int, ...]):
        self.index, self.value, self.shape = index, value, shape

    def __mul__(self, factor: float) -> _SliceGrad:
        return _SliceGrad(self.index, self.value * factor, self.shape)

    def add_into(self, buf: np.ndarray) -> None:
        if _is_advanced(self.index):
            np.add.at(buf, self.index, self.value)
        else:
            buf[self.index] += self.value


def _getitem(a: Tensor, index) -> Tensor:
    shape = a.shape
    return Tensor._result(a.data[index], (a,), lambda g: (_SliceGrad(index, g, shape),), "getitem")


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._result(data, tuple(tensors),
                          lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return Tensor._result(data, tuple(tensors),
                          lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack")


# ---------------------------------------------------------------------------
# linear algebra, convolution, pooling
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; ``a`` may carry leading batch axes, ``b`` is 2-D."""
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def fn(g):
        da = g @ bd.T
        a2 = ad.reshape(-1, ad.shape[-1])
        db = a2.T @ g.reshape(-1, g.shape[-1])
        return da, db

    return Tensor._result(ad @ bd, (a, b), fn, "matmul")


def _im2col(xp: np.ndarray, d: int, t: int) -> np.ndarray:
    # xp: (B, C, D+2, T+2) -> (B, C*9, D*T), column order (c, i, j)
    b, c = xp.shape[:2]
    cols = np.empty((b, c, 3, 3, d, t))
    for i in range(3):
        for j in range(3):
            cols[:, :, i, j] = xp[:, :, i:i + d, j:j + t]
    return cols.reshape(b, c * 9, d * t)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """3x3 cross-correlation with zero same-padding plus per-channel bias.

    ``x`` is ``(C_in, D, T)`` or batched ``(B, C_in, D, T)``; ``kernels`` is
    ``(C_out, C_in, 3, 3)``; the output keeps ``D`` and ``T``.
    """
    if kernels.ndim != 4 or kernels.shape[2:] != (3, 3):
        raise ValueError(f"conv2d: kernels must be (C_out, C_in, 3, 3), got {kernels.shape}")
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise ValueError(f"conv2d: input must be 3-D or 4-D, got {x.shape}")
    xd = x.data if batched else x.data[None]
    n, cin, d, t = xd.shape
    cout = kernels.shape[0]
    if kernels.shape[1] != cin:
        raise ValueError(f"conv2d: input has {cin} channels, kernels expect {kernels.shape[1]}")
    if bias.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {cout} output channels")

    xp = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _im2col(xp, d, t)
    kmat = kernels.data.reshape(cout, cin * 9)
    out = (kmat @ cols).reshape(n, cout, d, t) + bias.data[None, :, None, None]

    def fn(g):
        g = g if batched else g[None]
        g2 = g.reshape(n, cout, d * t)
        dk = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(kernels.shape)
        db = g.sum(axis=(0, 2, 3))
        dcols = (kmat.T @ g2).reshape(n, cin, 3, 3, d, t)
        dxp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                dxp[:, :, i:i + d, j:j + t] += dcols[:, :, i, j]
        dx = dxp[:, :, 1:-1, 1:-1]
        return (dx if batched else dx[0]), dk, db

    return Tensor._result(out if batched else out[0], (x, kernels, bias), fn, "conv2d")


def maxpool_freq(x: Tensor, pool: int = 3) -> Tensor:
    """Non-overlapping max pooling along the frequency axis (second to last).

    Trailing frequency rows that do not fill a window are dropped. Gradient
    goes to the first maximal element of each window.
    """
    d, t = x.shape[-2:]
    if pool < 1:
        raise ValueError(f"maxpool_freq: pool must be positive, got {pool}")
    if d < pool:
        raise ValueError(f"maxpool_freq: frequency extent {d} is smaller than pool {pool}")
    dout = d // pool
    lead = x.shape[:-2]
    win = x.data[..., :dout * pool, :].reshape(*lead, dout, pool, t)
    rows = [win[..., k, :] for k in range(pool)]
    out = rows[0]
    for r in rows[1:]:
        out = np.maximum(out, r)
    # first maximal row wins ties
    idx = np.full(out.shape, pool - 1, dtype=np.intp)
    for k in range(pool - 2, -1, -1):
        idx[rows[k] == out] = k

    def fn(g):
        dx = np.zeros(x.shape)
        dwin = dx[..., :dout * pool, :].reshape(*lead, dout, pool, t)
        for k in range(pool):
            dwin[..., k, :] = np.where(idx == k, g, 0.0)
        return (dx,)

    return Tensor._result(out, (x,), fn, "maxpool_freq")


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


class Tape:
    """Operations reachable from a root, in a valid topological order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def record(cls, root: Tensor) -> Tape:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack_: list[tuple[Tensor, bool]] = [(root, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack_.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.nodes)

    def replay(self, root: Tensor, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(root): seed}
        # buffers created here, safe to update in place; others may alias
        owned: set[int] = set()
        for node in reversed(self.nodes):
            key = id(node)
            g = grads.pop(key, None)
            owned.discard(key)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            factor = _FAULTS.get(node.op)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if factor is not None:
                    pg = pg * factor
                pkey = id(p)
                if isinstance(pg, _SliceGrad):
                    if pkey not in owned:
                        buf = np.zeros(pg.shape)
                        if pkey in grads:
                            buf += grads[pkey]
                        grads[pkey] = buf
                        owned.add(pkey)
                    pg.add_into(grads[pkey])
                elif pkey in owned:
                    grads[pkey] += pg
                elif pkey in grads:
                    grads[pkey] = grads[pkey] + pg
                    owned.add(pkey)
                else:
                    grads[pkey] = pg


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    Tape.record(loss).replay(loss, np.ones(loss.shape))


@contextlib.contextmanager
def corrupt_backward(op: str, factor: float = 1.01):
    """Scale the backward rule of ``op`` by ``factor`` inside the block."""
    previous = _FAULTS.get(op)
    _FAULTS[op] = factor
    try:
        yield
    finally:
        if previous is None:
            _FAULTS.pop(op, None)
        else:
            _FAULTS[op] = previous


class GradCheckError(ArithmeticError):
    pass


def grad_check(f: Callable[[], Tensor] | Callable[[Tensor], Tensor],
               x: Tensor | Mapping[str, Tensor],
               step: float = 1e-5) -> float | dict[str, float]:
    """Compare backward() against central differences.

    With a single tensor ``x``, ``f(x)`` must return a scalar and the result is
    the max over components of ``|analytic - numeric| / max(1, |analytic|)``.
    With a mapping of named tensors, ``f()`` is called with no arguments and
    a per-name maximum is returned.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    if isinstance(x, Tensor):
        return _grad_check_named(lambda: f(x), {"x": x}, step)["x"]
    return _grad_check_named(f, dict(x), step)


def _grad_check_named(f, params: dict[str, Tensor], step: float) -> dict[str, float]:
    for p in params.values():
        p.requires_grad = True
        p.grad = None
    out = f()
    if not np.isfinite(out.data).all():
        raise GradCheckError("grad_check: non-finite function value at the base point")
    backward(out)
    result = {}
    for name, p in params.items():
        analytic = np.zeros(p.shape) if p.grad is None else p.grad.copy()
        worst = 0.0
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            fp = f().item()
            flat[k] = orig - step
            fm = f().item()
            flat[k] = orig
            coord = np.unravel_index(k, p.shape)
            a = analytic[coord]
            if not (np.isfinite(fp) and np.isfinite(fm) and np.isfinite(a)):
                raise GradCheckError(f"grad_check: non-finite value for {name} at {tuple(map(int, coord))}")
            numeric = (fp - fm) / (2.0 * step)
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
        result[name] = float(worst)
    return result
