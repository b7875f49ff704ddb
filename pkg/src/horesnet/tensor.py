"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation evaluates eagerly and, when any input participates in
gradient tracking, records a node holding its parents and a closure that
pushes the output gradient back to them.  ``Tensor.backward`` orders the
recorded nodes topologically and runs each closure exactly once.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64

_grad_enabled = True


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(RuntimeError):
    """Raised when an operation's precondition is violated."""


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- backward ----------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Only scalar outputs are accepted unless an explicit seed gradient is
        supplied (used for vector-Jacobian probes).
        """
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(grad, dtype=DTYPE)
            if seed.shape != self.shape:
                raise DimensionError(f"seed gradient shape {seed.shape} != output shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("loss is not connected to any tensor that requires grad")

        order = topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: accumulate across calls
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __pow__(self, p):
        return power(self, float(p))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, each listed after all of its parents.

    Iterative DFS, since deep networks exceed Python's recursion limit.
    """
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from exc


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return _make(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


ACTIVATIONS = {"relu": relu, "tanh": tanh}


# -- reductions and shape ------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), back)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


# -- linear algebra ------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Fused ``x @ weight + bias`` (one tape node)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        out = out + bias.data

        def back(g):
            return g @ wd.T, xd.T @ g, g.sum(axis=0)

        return _make(out, (x, weight, bias), back)
    return _make(out, (x, weight), lambda g: (g @ wd.T, xd.T @ g))


def scale_add(base: Tensor, terms: Iterable[tuple[object, Tensor]], scale: Tensor | None = None) -> Tensor:
    """``base + scale * sum(c_i * t_i)`` as a single tape node.

    Coefficients may be Python floats or scalar tensors (learnable);
    ``scale`` is an optional scalar tensor multiplying the whole sum.
    """
    terms = [(c, as_tensor(t)) for c, t in terms]
    base = as_tensor(base)
    for _, t in terms:
        if t.shape != base.shape:
            raise DimensionError(f"scale_add: term shape {t.shape} != base shape {base.shape}")
    if not terms:
        return _make(base.data, (base,), lambda g: (g,))

    coeffs = [float(c.data.reshape(())) if isinstance(c, Tensor) else float(c) for c, _ in terms]
    acc = np.zeros_like(base.data)
    for c, (_, t) in zip(coeffs, terms):
        acc += c * t.data
    s = 1.0 if scale is None else float(scale.data.reshape(()))
    out = base.data + s * acc

    parents: list[Tensor] = [base]
    for _, t in terms:
        parents.append(t)
    coeff_tensors = [(i, c) for i, (c, _) in enumerate(terms) if isinstance(c, Tensor)]
    parents.extend(c for _, c in coeff_tensors)
    if scale is not None:
        parents.append(scale)
    term_data = [t.data for _, t in terms]

    def back(g):
        grads: list = [g]
        grads.extend(s * c * g for c in coeffs)
        for i, c in coeff_tensors:
            grads.append(np.asarray(s * np.vdot(g, term_data[i])).reshape(c.shape))
        if scale is not None:
            grads.append(np.asarray(np.vdot(g, acc)).reshape(scale.shape))
        return grads

    return _make(out, parents, back)


# -- normalisation -----------------------------------------------------------

def batch_norm(x: Tensor, mean: np.ndarray | None, var: np.ndarray | None, eps: float,
               gamma: Tensor | None = None, beta: Tensor | None = None,
               axes: tuple[int, ...] = (0,)) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Normalise ``x`` over ``axes``.

    With ``mean``/``var`` given, they are treated as constants (inference);
    otherwise batch statistics are computed and differentiated through.
    Returns the output together with the statistics used.
    """
    xd = x.data
    use_batch = mean is None
    if use_batch:
        mu = xd.mean(axis=axes, keepdims=True)
        v = xd.var(axis=axes, keepdims=True)
    else:
        mu, v = mean, var
    inv = 1.0 / np.sqrt(v + eps)
    xhat = (xd - mu) * inv
    out = xhat
    gd = None if gamma is None else gamma.data
    if gamma is not None:
        out = out * gd
    if beta is not None:
        out = out + beta.data
    m = float(np.prod([xd.shape[a] for a in axes]))
    parents = [x] + [p for p in (gamma, beta) if p is not None]

    def back(g):
        gx = g * gd if gd is not None else g
        if use_batch:
            dx = inv / m * (m * gx - gx.sum(axis=axes, keepdims=True)
                            - xhat * (gx * xhat).sum(axis=axes, keepdims=True))
        else:
            dx = gx * inv
        res = [dx]
        if gamma is not None:
            res.append((g * xhat).sum(axis=axes, keepdims=True).reshape(gamma.shape))
        if beta is not None:
            res.append(g.sum(axis=axes, keepdims=True).reshape(beta.shape))
        return res

    return _make(out, parents, back), mu, v


# -- convolution -------------------------------------------------------------

def conv2d_3x3(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """3x3, stride 1, zero 'same' padding.  x: (n, c, h, w); weight: (o, c, 3, 3)."""
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[2:] != (3, 3) or weight.shape[1] != x.shape[1]:
        raise DimensionError(f"conv2d_3x3: input {x.shape} incompatible with weight {weight.shape}")
    n, c, h, w = x.shape
    o = weight.shape[0]
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    # (n, c, h, w, 3, 3) -> (n, h, w, c*9)
    cols = sliding_window_view(xp, (3, 3), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)
    wmat = weight.data.reshape(o, c * 9)
    out = (cols @ wmat.T).reshape(n, h, w, o).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
    out = np.ascontiguousarray(out)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * h * w, o)
        gw = (g2.T @ cols).reshape(weight.shape)
        gcols = (g2 @ wmat).reshape(n, h, w, c, 3, 3)
        gxp = np.zeros_like(xp)
        for di in range(3):
            for dj in range(3):
                gxp[:, :, di:di + h, dj:dj + w] += gcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
        res = [gxp[:, :, 1:-1, 1:-1], gw]
        if bias is not None:
            res.append(g.sum(axis=(0, 2, 3)))
        return res

    parents = [x, weight] + ([bias] if bias is not None else [])
    return _make(out, parents, back)


# -- losses ----------------------------------------------------------------

def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray, reduction: str = "mean") -> Tensor:
    """Softmax cross-entropy of integer ``labels``; reduction 'mean', 'sum' or 'none'."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross-entropy: logits {logits.shape} vs labels {labels.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        lsm = log_softmax_np(logits.data)
    n = logits.shape[0]
    rows = np.arange(n)
    per = -lsm[rows, labels]

    def softmax_minus_onehot():
        with np.errstate(over="ignore", invalid="ignore"):
            p = np.exp(lsm)
        p[rows, labels] -= 1.0
        return p

    if reduction == "none":
        return _make(per, (logits,), lambda g: (softmax_minus_onehot() * g[:, None],))
    if reduction == "sum":
        return _make(np.asarray(per.sum()), (logits,), lambda g: (softmax_minus_onehot() * g,))
    if reduction == "mean":
        return _make(np.asarray(per.mean()), (logits,), lambda g: (softmax_minus_onehot() * (g / n),))
    raise ValueError(f"unknown reduction {reduction!r}")
