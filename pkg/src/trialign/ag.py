"""Minimal reverse-mode autodiff over dense float tensors.

Tensors are numpy arrays (float32 by default, float64 for oracle work);
ops record their inputs and an adjoint closure, and ``backward`` walks the
implicit tape in reverse topological order. Reductions accumulate in
float64 regardless of storage dtype.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "AgError",
    "UnknownOpError",
    "ShapeMismatchError",
    "NonScalarLossError",
    "NonFiniteGradError",
    "InvalidGradCheckError",
    "leaf",
    "forward",
    "backward",
    "zero_grads",
    "toposort",
    "matmul",
    "add",
    "subtract",
    "multiply",
    "relu",
    "max_over_axis",
    "mean_over_axis",
    "transpose",
    "concat_rows",
    "l2_normalize_rows",
    "scale_by_scalar",
    "exp_scalar",
    "log_softmax_rows",
    "nll_diagonal",
    "sum_all",
    "OP_CATALOG",
    "AdamState",
    "AdamHyper",
    "adam_step",
    "grad_check",
    "GradCheckReport",
]

_FLOAT_DTYPES = (np.float32, np.float64)

# An adjoint closure maps the node's output gradient to (input, grad)
# contributions; backward() owns all accumulation.
Adjoint = Callable[[np.ndarray], list]


class AgError(ValueError):
    """Base class for tensor-op failures."""


class UnknownOpError(AgError):
    pass


class ShapeMismatchError(AgError):
    pass


class NonScalarLossError(AgError):
    pass


class NonFiniteGradError(AgError):
    pass


class InvalidGradCheckError(AgError):
    pass


class Tensor:
    """A node of the computation graph.

    Leaves hold data (and a grad accumulator when ``requires_grad``);
    interior nodes additionally remember the op kind, input nodes, and the
    adjoint closure used by ``backward``. Data is treated as immutable once
    a node has been consumed by an op.
    """

    def __init__(self, data, requires_grad=False, op="leaf", inputs=()):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = (
            np.zeros_like(arr) if self.requires_grad else None
        )
        self.op = op
        self.inputs: tuple[Tensor, ...] = tuple(inputs)
        self._bwd: Adjoint | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, dtype={self.data.dtype})"


def leaf(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    """Wrap an array as a graph leaf."""
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


def _tracks(*ts: Tensor) -> bool:
    return any(t.requires_grad or t._bwd is not None for t in ts)


def _check_same_dtype(kind: str, *ts: Tensor) -> None:
    dtypes = {t.data.dtype for t in ts}
    if len(dtypes) != 1:
        raise ShapeMismatchError(
            f"{kind}: mixed dtypes {sorted(str(d) for d in dtypes)}"
        )


def _shape_err(kind: str, *shapes) -> ShapeMismatchError:
    return ShapeMismatchError(f"{kind}: incompatible shapes {list(shapes)}")


# Kink tracing used by grad_check: while a trace list is installed, relu
# records input signs and max-over-axis records argmax patterns, so a
# central-difference pair can detect subgradient crossings.
_kink_trace: list[np.ndarray] | None = None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_err("matmul", a.shape, b.shape)
    out = Tensor(a.data @ b.data, op="matmul", inputs=(a, b))
    if _tracks(a, b):
        out._bwd = lambda g: [(a, g @ b.data.T), (b, a.data.T @ g)]
    return out


def _row_broadcastable(a_shape, b_shape) -> bool:
    # bias-style broadcast: (m, n) + (n,) or (m, n) + (1, n)
    if len(a_shape) != 2:
        return False
    return b_shape in ((a_shape[1],), (1, a_shape[1]))


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("add", a, b)
    if a.shape != b.shape and not _row_broadcastable(a.shape, b.shape):
        raise _shape_err("add", a.shape, b.shape)
    out = Tensor(a.data + b.data, op="add", inputs=(a, b))
    if _tracks(a, b):
        def bwd(g):
            if b.shape == a.shape:
                return [(a, g), (b, g)]
            gb = np.sum(g, axis=0, dtype=np.float64).reshape(b.shape)
            return [(a, g), (b, gb)]
        out._bwd = bwd
    return out


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("subtract", a, b)
    if a.shape != b.shape:
        raise _shape_err("subtract", a.shape, b.shape)
    out = Tensor(a.data - b.data, op="subtract", inputs=(a, b))
    if _tracks(a, b):
        out._bwd = lambda g: [(a, g), (b, -g)]
    return out


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("elementwise-multiply", a, b)
    if a.shape != b.shape:
        raise _shape_err("elementwise-multiply", a.shape, b.shape)
    out = Tensor(a.data * b.data, op="elementwise-multiply", inputs=(a, b))
    if _tracks(a, b):
        out._bwd = lambda g: [(a, g * b.data), (b, g * a.data)]
    return out


def relu(x: Tensor) -> Tensor:
    if _kink_trace is not None:
        _kink_trace.append(np.sign(x.data))
    out = Tensor(np.maximum(x.data, x.data.dtype.type(0)), op="relu", inputs=(x,))
    if _tracks(x):
        mask = x.data > 0  # subgradient at 0 is defined as 0
        out._bwd = lambda g: [(x, g * mask)]
    return out


def max_over_axis(x: Tensor, axis: int) -> Tensor:
    if x.data.ndim != 2 or axis not in (0, 1):
        raise _shape_err(f"max-over-axis(axis={axis})", x.shape)
    if axis == 0:
        # argmax over rows walks column-strided memory; a transposed copy
        # is much faster for tall inputs and keeps first-occurrence ties
        xt = np.ascontiguousarray(x.data.T)
        idx = np.argmax(xt, axis=1)
        out_data = xt[np.arange(xt.shape[0]), idx][None, :]
    else:
        idx = np.argmax(x.data, axis=1)
        out_data = x.data[np.arange(x.shape[0]), idx][:, None]
    if _kink_trace is not None:
        _kink_trace.append(idx.astype(np.int64))
    out = Tensor(out_data, op="max-over-axis", inputs=(x,))
    if _tracks(x):
        def bwd(g):
            gx = np.zeros_like(x.data)
            if axis == 0:
                gx[idx, np.arange(x.shape[1])] = g[0, :]
            else:
                gx[np.arange(x.shape[0]), idx] = g[:, 0]
            return [(x, gx)]
        out._bwd = bwd
    return out


def mean_over_axis(x: Tensor, axis: int) -> Tensor:
    if x.data.ndim != 2 or axis not in (0, 1):
        raise _shape_err(f"mean-over-axis(axis={axis})", x.shape)
    n = x.shape[axis]
    out_data = (
        np.sum(x.data, axis=axis, keepdims=True, dtype=np.float64) / n
    ).astype(x.data.dtype)
    out = Tensor(out_data, op="mean-over-axis", inputs=(x,))
    if _tracks(x):
        out._bwd = lambda g: [(x, np.broadcast_to(g / n, x.shape).copy())]
    return out


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise _shape_err("transpose", x.shape)
    out = Tensor(x.data.T.copy(), op="transpose", inputs=(x,))
    if _tracks(x):
        out._bwd = lambda g: [(x, g.T)]
    return out


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ShapeMismatchError("concat-rows: empty input list")
    _check_same_dtype("concat-rows", *parts)
    widths = {p.shape[1] if p.data.ndim == 2 else None for p in parts}
    if None in widths or len(widths) != 1:
        raise _shape_err("concat-rows", *[p.shape for p in parts])
    out = Tensor(np.concatenate([p.data for p in parts], axis=0),
                 op="concat-rows", inputs=parts)
    if _tracks(*parts):
        offsets = np.cumsum([0] + [p.shape[0] for p in parts])
        out._bwd = lambda g: [
            (p, g[lo:hi]) for p, lo, hi in zip(parts, offsets[:-1], offsets[1:])
        ]
    return out


def l2_normalize_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise _shape_err("l2-normalize-rows", x.shape)
    sq = np.sum(x.data.astype(np.float64) ** 2, axis=1, keepdims=True)
    if np.any(sq < 1e-24):
        raise AgError("l2-normalize-rows: zero-norm row")
    norms = np.sqrt(sq)
    out_data = (x.data / norms).astype(x.data.dtype)
    out = Tensor(out_data, op="l2-normalize-rows", inputs=(x,))
    if _tracks(x):
        def bwd(g):
            y = out_data.astype(np.float64)
            dots = np.sum(g.astype(np.float64) * y, axis=1, keepdims=True)
            return [(x, (g - dots * y) / norms)]
        out._bwd = bwd
    return out


def scale_by_scalar(x: Tensor, c) -> Tensor:
    """Multiply a tensor by a scalar: a python float or a scalar Tensor."""
    if isinstance(c, Tensor):
        if c.data.shape != ():
            raise _shape_err("scale-by-scalar", x.shape, c.shape)
        _check_same_dtype("scale-by-scalar", x, c)
        out = Tensor(x.data * c.data, op="scale-by-scalar", inputs=(x, c))
        if _tracks(x, c):
            out._bwd = lambda g: [
                (x, g * c.data),
                (c, np.sum(g.astype(np.float64) * x.data.astype(np.float64))),
            ]
        return out
    cval = x.data.dtype.type(c)
    out = Tensor(x.data * cval, op="scale-by-scalar", inputs=(x,))
    if _tracks(x):
        out._bwd = lambda g: [(x, g * cval)]
    return out


def exp_scalar(s: Tensor) -> Tensor:
    if s.data.shape != ():
        raise _shape_err("exp-scalar", s.shape)
    out = Tensor(np.exp(s.data), op="exp-scalar", inputs=(s,))
    if _tracks(s):
        out._bwd = lambda g: [(s, g * out.data)]
    return out


def log_softmax_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise _shape_err("log-softmax-rows", x.shape)
    m = np.max(x.data, axis=1, keepdims=True)
    z = x.data - m
    lse = np.log(np.sum(np.exp(z.astype(np.float64)), axis=1, keepdims=True))
    out_data = (z - lse).astype(x.data.dtype)
    out = Tensor(out_data, op="log-softmax-rows", inputs=(x,))
    if _tracks(x):
        def bwd(g):
            soft = np.exp(out_data.astype(np.float64))
            gsum = np.sum(g.astype(np.float64), axis=1, keepdims=True)
            return [(x, g - soft * gsum)]
        out._bwd = bwd
    return out


def nll_diagonal(x: Tensor) -> Tensor:
    """Negative sum of the diagonal of a (log-softmax) square matrix."""
    if x.data.ndim != 2 or x.shape[0] != x.shape[1]:
        raise _shape_err("negative-log-likelihood-diagonal", x.shape)
    val = -np.trace(x.data.astype(np.float64))
    out = Tensor(np.asarray(val, dtype=x.data.dtype),
                 op="negative-log-likelihood-diagonal", inputs=(x,))
    if _tracks(x):
        def bwd(g):
            gx = np.zeros_like(x.data)
            np.fill_diagonal(gx, -g)
            return [(x, gx)]
        out._bwd = bwd
    return out


def sum_all(x: Tensor) -> Tensor:
    val = np.sum(x.data, dtype=np.float64)
    out = Tensor(np.asarray(val, dtype=x.data.dtype), op="sum-all", inputs=(x,))
    if _tracks(x):
        out._bwd = lambda g: [(x, np.full_like(x.data, g))]
    return out


OP_CATALOG: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "subtract": subtract,
    "elementwise-multiply": multiply,
    "relu": relu,
    "max-over-axis": max_over_axis,
    "mean-over-axis": mean_over_axis,
    "transpose": transpose,
    "concat-rows": concat_rows,
    "l2-normalize-rows": l2_normalize_rows,
    "scale-by-scalar": scale_by_scalar,
    "exp-scalar": exp_scalar,
    "log-softmax-rows": log_softmax_rows,
    "negative-log-likelihood-diagonal": nll_diagonal,
    "sum-all": sum_all,
}

_VARIADIC_OPS = {"concat-rows"}


def forward(kind: str, inputs: Sequence[Tensor], **kwargs) -> Tensor:
    """Dispatch an op by catalog name."""
    fn = OP_CATALOG.get(kind)
    if fn is None:
        raise UnknownOpError(f"unknown op kind {kind!r}")
    if kind in _VARIADIC_OPS:
        return fn(list(inputs), **kwargs)
    return fn(*inputs, **kwargs)


def toposort(root: Tensor) -> list[Tensor]:
    """Nodes of the graph under ``root`` in topological (inputs-first) order."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for inp in node.inputs:
            if id(inp) not in seen:
                stack.append((inp, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate grads of all requires_grad leaves reachable from ``loss``.

    Adjoints flow through a per-call table, so only requires_grad tensors
    retain gradients and repeated calls accumulate into them.
    """
    if loss.data.shape != ():
        raise NonScalarLossError(
            f"backward requires a scalar loss, got shape {loss.shape}"
        )
    order = toposort(loss)
    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad = node.grad + g.astype(node.data.dtype, copy=False)
        if node._bwd is None:
            continue
        for inp, gin in node._bwd(g):
            gin = np.asarray(gin, dtype=inp.data.dtype)
            key = id(inp)
            if key in flowing:
                flowing[key] = flowing[key] + gin
            else:
                flowing[key] = gin


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.zero_grad()


@dataclasses.dataclass
class AdamState:
    """First/second-moment accumulators and the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
            t=0,
        )


@dataclasses.dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    hyper: AdamHyper,
) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update, in place; rejects non-finite grads."""
    if state.t < 0:
        raise AgError(f"adam_step: negative step counter {state.t}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradError(f"non-finite gradient for parameter {name!r}")
        if params[name].data.shape != np.asarray(g).shape:
            raise _shape_err(f"adam_step({name})", params[name].shape,
                             np.asarray(g).shape)
    state.t += 1
    t = state.t
    b1, b2 = hyper.beta1, hyper.beta2
    for name, g in grads.items():
        p = params[name]
        g = np.asarray(g, dtype=p.data.dtype)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = state.m[name] / (1.0 - b1 ** t)
        v_hat = state.v[name] / (1.0 - b2 ** t)
        p.data = (p.data - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)).astype(
            p.data.dtype
        )
    return params, state


@dataclasses.dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    checked: int
    skipped: int


@dataclasses.dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    step: float
    tol: float

    @property
    def passed(self) -> bool:
        return all(e.max_rel_err < self.tol for e in self.entries)

    def summary(self) -> str:
        lines = []
        for e in self.entries:
            status = "ok" if e.max_rel_err < self.tol else "FAIL"
            lines.append(
                f"{e.name}: max_rel_err={e.max_rel_err:.3e} "
                f"checked={e.checked} skipped={e.skipped} [{status}]"
            )
        return "\n".join(lines)


def _run_traced(builder, params) -> tuple[float, list[np.ndarray]]:
    global _kink_trace
    _kink_trace = []
    try:
        loss = builder(params)
        trace = _kink_trace
    finally:
        _kink_trace = None
    if loss.data.shape != ():
        raise NonScalarLossError("grad_check builder must produce a scalar loss")
    return float(loss.data), trace


def _traces_differ(ta: list[np.ndarray], tb: list[np.ndarray]) -> bool:
    if len(ta) != len(tb):
        return True
    return any(a.shape != b.shape or not np.array_equal(a, b)
               for a, b in zip(ta, tb))


def grad_check(
    builder: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, Tensor],
    step: float = 1e-3,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic grads to central finite differences.

    ``builder`` must deterministically map the given parameter dict to a
    scalar loss. Coordinates whose perturbation flips a relu sign or a
    max-over-axis argmax are skipped (subgradient kink, central difference
    invalid there). Two identical forward passes are required up front; a
    disagreement flags the builder as non-deterministic.
    """
    f0, trace0 = _run_traced(builder, params)
    f1, trace1 = _run_traced(builder, params)
    if f0 != f1 or _traces_differ(trace0, trace1):
        raise InvalidGradCheckError(
            "builder is not deterministic: two forward passes disagree"
        )

    zero_grads(list(params.values()))
    loss = builder(params)
    backward(loss)
    analytic = {k: np.array(p.grad, dtype=np.float64) for k, p in params.items()}

    entries = []
    for name, p in params.items():
        base = p.data.copy()
        flat = p.data.reshape(-1)
        max_rel = 0.0
        checked = 0
        skipped = 0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp, tp = _run_traced(builder, params)
            flat[i] = orig - step
            fm, tm = _run_traced(builder, params)
            flat[i] = orig
            if _traces_differ(tp, tm):
                skipped += 1
                continue
            fd = (fp - fm) / (2.0 * step)
            a = analytic[name].reshape(-1)[i]
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-3)
            max_rel = max(max_rel, rel)
            checked += 1
        p.data = base
        entries.append(GradCheckEntry(name, max_rel, checked, skipped))
    return GradCheckReport(entries=entries, step=step, tol=tol)
