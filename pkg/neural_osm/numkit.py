"""
Dense float64 arrays with reverse-mode differentiation.

Every primitive takes and returns :class:`Tensor` objects. While gradient
recording is enabled, each result keeps a reference to its inputs and a
closure that pushes the incoming gradient back to them; ``Tensor.backward``
walks that tape in reverse topological order. Parameters are leaf tensors
with persistent ``grad`` buffers that :func:`sgd_step` consumes and zeroes.

Shapes follow the maths: vectors are 1-D, matrices are 2-D, scalars are 0-D.
There is no broadcasting; mismatched shapes raise :class:`ShapeError`.
"""

from __future__ import annotations

import contextlib
import contextvars
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .domain import INIT_SCALE
from .errors import ArgumentError, ContractError, ShapeError

logger = logging.getLogger(__name__)

_GRAD_ENABLED: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)


def grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run forward passes without recording a tape. The switch is per thread and per task."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        parents: Sequence["Tensor"] = (),
        backward: Optional[Callable[[np.ndarray], None]] = None,
    ) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        tracked = _GRAD_ENABLED.get() and backward is not None and any(p.requires_grad for p in parents)
        self.requires_grad = tracked
        self._parents: Tuple[Tensor, ...] = tuple(parents) if tracked else ()
        self._backward = backward if tracked else None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def value(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64).reshape(self.data.shape)
        else:
            self.grad += grad

    def backward(self) -> None:
        """Back-propagate from a scalar."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            return
        order = _topological_order(self)
        self.accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Named trainable leaf with a persistent gradient buffer."""

    __slots__ = ("name",)

    def __init__(self, name: str, value: np.ndarray) -> None:
        super().__init__(np.ascontiguousarray(value, dtype=np.float64))
        self.name = name
        self.requires_grad = True
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def constant(data) -> Tensor:
    return Tensor(data)


# ============================================================
# Deterministic generator
# ============================================================
class Rng:
    """PCG64 stream from numpy; one seed fixes initialization and shuffling."""

    algorithm = "numpy.random.PCG64"

    def __init__(self, seed: int) -> None:
        if not 0 <= int(seed) < 2**64:
            raise ArgumentError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self._generator = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, shape: Tuple[int, ...], scale: float = INIT_SCALE) -> np.ndarray:
        return self._generator.uniform(-scale, scale, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, n: int, size: int) -> np.ndarray:
        return np.sort(self._generator.choice(n, size=size, replace=False))


class ParameterStore:
    """Ordered, uniquely named collection of a model's parameters."""

    def __init__(self, rng: Rng) -> None:
        self.rng = rng
        self._params: Dict[str, Parameter] = {}

    def create(self, name: str, shape: Tuple[int, ...], init: str = "uniform") -> Parameter:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        if any(int(dim) <= 0 for dim in shape):
            raise ShapeError(f"parameter {name!r} needs positive dimensions, got {shape}")
        if init == "uniform":
            value = self.rng.uniform(tuple(shape))
        elif init == "zeros":
            value = np.zeros(shape)
        else:
            raise ArgumentError(f"unknown initializer {init!r}")
        param = Parameter(name, value)
        self._params[name] = param
        return param

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def parameters(self) -> List[Parameter]:
        return list(self._params.values())

    def num_values(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self) -> None:
        for param in self._params.values():
            param.zero_grad()

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def restore(self, snapshot: Dict[str, np.ndarray]) -> None:
        for name, value in snapshot.items():
            target = self._params[name]
            if target.data.shape != value.shape:
                raise ShapeError(f"{name}: snapshot shape {value.shape} != {target.data.shape}")
            target.data[...] = value


# ============================================================
# Elementwise primitives
# ============================================================
def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)

    def backward(g: np.ndarray) -> None:
        a.accumulate(g)
        b.accumulate(g)

    return Tensor(a.data + b.data, (a, b), backward)


def add_n(items: Sequence[Tensor]) -> Tensor:
    if not items:
        raise ArgumentError("add_n needs at least one tensor")
    for item in items[1:]:
        _same_shape("add_n", items[0], item)

    def backward(g: np.ndarray) -> None:
        for item in items:
            item.accumulate(g)

    return Tensor(np.sum([item.data for item in items], axis=0), items, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)

    def backward(g: np.ndarray) -> None:
        a.accumulate(g)
        b.accumulate(-g)

    return Tensor(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)

    def backward(g: np.ndarray) -> None:
        a.accumulate(g * b.data)
        b.accumulate(g * a.data)

    return Tensor(a.data * b.data, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    def backward(g: np.ndarray) -> None:
        a.accumulate(g * factor)

    return Tensor(a.data * factor, (a,), backward)


def one_minus(a: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        a.accumulate(-g)

    return Tensor(1.0 - a.data, (a,), backward)


def add_constant(a: Tensor, offset: np.ndarray) -> Tensor:
    offset = np.asarray(offset, dtype=np.float64)
    if offset.shape != a.shape:
        raise ShapeError(f"add_constant: shapes {a.shape} and {offset.shape} differ")

    def backward(g: np.ndarray) -> None:
        a.accumulate(g)

    return Tensor(a.data + offset, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g: np.ndarray) -> None:
        a.accumulate(g * (1.0 - out * out))

    return Tensor(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    # split form keeps exp() from overflowing for large |x|
    x = a.data
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)

    def backward(g: np.ndarray) -> None:
        a.accumulate(g * out * (1.0 - out))

    return Tensor(out, (a,), backward)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    _same_shape("maximum", a, b)
    take_a = a.data >= b.data

    def backward(g: np.ndarray) -> None:
        a.accumulate(np.where(take_a, g, 0.0))
        b.accumulate(np.where(take_a, 0.0, g))

    return Tensor(np.where(take_a, a.data, b.data), (a, b), backward)


def total(a: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        a.accumulate(np.full(a.shape, float(g)))

    return Tensor(a.data.sum(), (a,), backward)


# ============================================================
# Structural primitives
# ============================================================
def _vector(op: str, a: Tensor) -> None:
    if a.data.ndim != 1:
        raise ShapeError(f"{op}: expected a vector, got shape {a.shape}")


def concat(items: Sequence[Tensor]) -> Tensor:
    if not items:
        raise ArgumentError("concat needs at least one vector")
    for item in items:
        _vector("concat", item)
    sizes = [item.shape[0] for item in items]
    bounds = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for item, lo, hi in zip(items, bounds[:-1], bounds[1:]):
            item.accumulate(g[lo:hi])

    return Tensor(np.concatenate([item.data for item in items]), items, backward)


def take(a: Tensor, start: int, stop: int) -> Tensor:
    _vector("take", a)

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        full[start:stop] = g
        a.accumulate(full)

    return Tensor(a.data[start:stop].copy(), (a,), backward)


def stack(rows: Sequence[Tensor]) -> Tensor:
    """Stack vectors into the rows of a matrix."""
    if not rows:
        raise ArgumentError("stack needs at least one row")
    for item in rows:
        _vector("stack", item)
        _same_shape("stack", rows[0], item)

    def backward(g: np.ndarray) -> None:
        for index, item in enumerate(rows):
            item.accumulate(g[index])

    return Tensor(np.stack([item.data for item in rows]), rows, backward)


def row(matrix: Tensor, index: int) -> Tensor:
    if matrix.data.ndim != 2:
        raise ShapeError(f"row: expected a matrix, got shape {matrix.shape}")
    if not 0 <= index < matrix.shape[0]:
        raise ArgumentError(f"row index {index} outside 0..{matrix.shape[0] - 1}")

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(matrix.data)
        full[index] = g
        matrix.accumulate(full)

    return Tensor(matrix.data[index].copy(), (matrix,), backward)


def column(matrix: Tensor, index: int) -> Tensor:
    if matrix.data.ndim != 2:
        raise ShapeError(f"column: expected a matrix, got shape {matrix.shape}")
    if not 0 <= index < matrix.shape[1]:
        raise ArgumentError(f"column index {index} outside 0..{matrix.shape[1] - 1}")

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(matrix.data)
        full[:, index] = g
        matrix.accumulate(full)

    return Tensor(matrix.data[:, index].copy(), (matrix,), backward)


def columns(matrix: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather columns into a new matrix; repeated indices accumulate."""
    if matrix.data.ndim != 2:
        raise ShapeError(f"columns: expected a matrix, got shape {matrix.shape}")
    ids = np.asarray(indices, dtype=np.int64)

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(matrix.data)
        np.add.at(full, (slice(None), ids), g)
        matrix.accumulate(full)

    return Tensor(matrix.data[:, ids], (matrix,), backward)


def pick(a: Tensor, index: int) -> Tensor:
    _vector("pick", a)

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        full[index] = g
        a.accumulate(full)

    return Tensor(a.data[index], (a,), backward)


def max_over_columns(a: Tensor) -> Tensor:
    """Row-wise max of a matrix (max pooling over positions)."""
    if a.data.ndim != 2:
        raise ShapeError(f"max_over_columns: expected a matrix, got shape {a.shape}")
    where = np.argmax(a.data, axis=1)
    rows_ = np.arange(a.shape[0])

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        full[rows_, where] = g
        a.accumulate(full)

    return Tensor(a.data[rows_, where], (a,), backward)


# ============================================================
# Layer primitives
# ============================================================
def matvec(matrix: Tensor, x: Tensor) -> Tensor:
    if matrix.data.ndim != 2 or x.data.ndim != 1 or matrix.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec: matrix shape {matrix.shape} incompatible with vector shape {x.shape}")

    def backward(g: np.ndarray) -> None:
        matrix.accumulate(np.outer(g, x.data))
        x.accumulate(matrix.data.T @ g)

    return Tensor(matrix.data @ x.data, (matrix, x), backward)


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """W·x + b."""
    if weight.data.ndim != 2 or x.data.ndim != 1 or weight.shape[1] != x.shape[0]:
        raise ShapeError(f"affine: W shape {weight.shape} incompatible with x shape {x.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"affine: W shape {weight.shape} incompatible with b shape {bias.shape}")

    def backward(g: np.ndarray) -> None:
        weight.accumulate(np.outer(g, x.data))
        bias.accumulate(g)
        x.accumulate(weight.data.T @ g)

    return Tensor(weight.data @ x.data + bias.data, (x, weight, bias), backward)


def mlp_tanh(inputs: Sequence[Tensor], weight: Tensor, bias: Tensor) -> Tensor:
    """tanh(W·[x1; x2; …] + b)."""
    joined = inputs[0] if len(inputs) == 1 else concat(inputs)
    return tanh(affine(joined, weight, bias))


def softmax(v: Tensor) -> Tensor:
    _vector("softmax", v)
    if v.shape[0] == 0:
        raise ArgumentError("softmax of an empty vector")
    shifted = np.exp(v.data - v.data.max())
    out = shifted / shifted.sum()

    def backward(g: np.ndarray) -> None:
        v.accumulate(out * (g - np.dot(g, out)))

    return Tensor(out, (v,), backward)


def log_softmax(v: Tensor) -> Tensor:
    """logits − logsumexp(logits)."""
    _vector("log_softmax", v)
    if v.shape[0] == 0:
        raise ArgumentError("log_softmax of an empty vector")
    top = v.data.max()
    lse = top + np.log(np.exp(v.data - top).sum())
    out = v.data - lse
    probs = np.exp(out)

    def backward(g: np.ndarray) -> None:
        v.accumulate(g - probs * g.sum())

    return Tensor(out, (v,), backward)


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    return scale(pick(log_softmax(logits), target), -1.0)


def conv_feature_map(units: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """
    Narrow convolution of a unit matrix ``[E_u × n]`` with a kernel.

    ``kernel`` is either one filter ``[E_u × k]`` with a scalar bias, giving a
    feature map of length ``n − k + 1``, or a bank ``[F × E_u × k]`` with a
    bias vector ``[F]``, giving ``[F × (n − k + 1)]``. Entry j is
    tanh(<window_j, Q> + b), where window_j spans k consecutive units.
    """
    if units.data.ndim != 2:
        raise ShapeError(f"conv_feature_map: units must be a matrix, got shape {units.shape}")
    single = kernel.data.ndim == 2
    bank = kernel.data[None] if single else kernel.data
    if bank.ndim != 3:
        raise ShapeError(f"conv_feature_map: kernel shape {kernel.shape} is neither [E×k] nor [F×E×k]")
    filters, rows_, width = bank.shape
    unit_rows, length = units.shape
    if rows_ != unit_rows:
        raise ShapeError(f"conv_feature_map: units shape {units.shape} incompatible with kernel shape {kernel.shape}")
    if bias.data.size != filters:
        raise ShapeError(f"conv_feature_map: bias shape {bias.shape} does not match {filters} filter(s)")
    if length < width:
        raise ContractError(f"conv_feature_map: {length} unit(s) shorter than kernel width {width}")

    windows = sliding_window_view(units.data, width, axis=1)  # [E, L, k]
    positions = length - width + 1
    pre = np.einsum("ejk,fek->fj", windows, bank) + bias.data.reshape(filters, 1)
    out = np.tanh(pre)

    def backward(g: np.ndarray) -> None:
        dpre = (g[None] if single else g) * (1.0 - out * out)
        if kernel.requires_grad:
            d_bank = np.einsum("fj,ejk->fek", dpre, windows)
            kernel.accumulate(d_bank[0] if single else d_bank)
        if bias.requires_grad:
            bias.accumulate(dpre.sum(axis=1).reshape(bias.shape))
        if units.requires_grad:
            spread = np.einsum("fj,fek->ejk", dpre, bank)
            d_units = np.zeros_like(units.data)
            for offset in range(width):
                d_units[:, offset : offset + positions] += spread[:, :, offset]
            units.accumulate(d_units)

    return Tensor(out[0] if single else out, (units, kernel, bias), backward)


@dataclass(frozen=True)
class LstmParams:
    """Stacked gate weights, rows ordered input, forget, output, candidate."""

    weight: Tensor  # [4d × (e + d)] acting on [x; h]
    bias: Tensor  # [4d]

    @property
    def hidden(self) -> int:
        return self.weight.shape[0] // 4


def lstm_step(h: Tensor, c: Tensor, x: Tensor, params: LstmParams) -> Tuple[Tensor, Tensor]:
    d = h.shape[0]
    if c.shape != (d,) or params.weight.shape != (4 * d, x.shape[0] + d) or params.bias.shape != (4 * d,):
        raise ShapeError(
            f"lstm_step: h {h.shape}, c {c.shape}, x {x.shape} incompatible with "
            f"W {params.weight.shape}, b {params.bias.shape}"
        )
    z = affine(concat([x, h]), params.weight, params.bias)
    in_gate = sigmoid(take(z, 0, d))
    forget_gate = sigmoid(take(z, d, 2 * d))
    out_gate = sigmoid(take(z, 2 * d, 3 * d))
    candidate = tanh(take(z, 3 * d, 4 * d))
    c_next = add(mul(forget_gate, c), mul(in_gate, candidate))
    h_next = mul(out_gate, tanh(c_next))
    return h_next, c_next


# ============================================================
# Optimisation and verification
# ============================================================
def sgd_step(params: Iterable[Parameter], lr: float) -> None:
    """value ← value − lr·grad, then zero the gradients."""
    if lr < 0:
        raise ArgumentError(f"learning rate must be non-negative, got {lr}")
    for param in params:
        if lr != 0.0:
            param.data -= lr * param.grad
        param.zero_grad()


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    step: float = 1e-4,
    tolerance: float = 1e-3,
    max_entries: Optional[int] = None,
    rng: Optional[Rng] = None,
    roundoff_floor: bool = False,
) -> float:
    """
    Compare analytic gradients with central differences.

    Returns the maximum relative error over the checked entries, with the
    denominator floored at 1e-8. With ``max_entries`` set, at most that many
    entries per parameter are sampled using ``rng``. ``roundoff_floor``
    raises the floor to the roundoff level of the central difference,
    eps·|loss|·1e4 / step, for losses summed over many terms.
    """
    if step <= 0:
        raise ArgumentError(f"step must be positive, got {step}")
    params = list(params)
    for param in params:
        param.zero_grad()

    loss = loss_fn()
    base = float(loss.data)
    with no_grad():
        again = float(loss_fn().data)
    if base != again:
        raise ContractError(f"loss is not deterministic: {base!r} then {again!r}")
    loss.backward()
    analytic = {param.name: param.grad.copy() for param in params}
    floor = 1e-8
    if roundoff_floor:
        floor = max(floor, np.finfo(np.float64).eps * abs(base) * 1e4 / step)

    worst, worst_at = 0.0, None
    with no_grad():
        for param in params:
            flat = param.data.reshape(-1)
            grads = analytic[param.name].reshape(-1)
            if max_entries is not None and flat.size > max_entries:
                indices = (rng or Rng(0)).choice(flat.size, max_entries)
            else:
                indices = range(flat.size)
            for index in indices:
                original = flat[index]
                flat[index] = original + step
                plus = float(loss_fn().data)
                flat[index] = original - step
                minus = float(loss_fn().data)
                flat[index] = original
                numeric = (plus - minus) / (2.0 * step)
                error = relative_error(float(grads[index]), numeric, floor)
                if error > worst:
                    worst, worst_at = error, (param.name, int(index))
            param.zero_grad()

    level = logging.INFO if worst <= tolerance else logging.WARNING
    logger.log(level, "gradient check: max relative error %.3e at %s (tolerance %.1e)", worst, worst_at, tolerance)
    return worst
