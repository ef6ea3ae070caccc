"""Reverse-mode automatic differentiation over dense float64 arrays.

The graph is rebuilt on every forward pass (define-by-run): each operation
returns a node holding its value plus a closure that routes the incoming
gradient to the operation's inputs. ``backward`` topologically sorts the
graph below a scalar loss, accumulates gradients into every reachable
``Parameter``, and then drops the recorded closures so the graph can be
collected. A graph is single-use; rebuild it for the next step.

Everything runs in float64. The sampler network is small enough that
clarity and checkable gradients win over throughput.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

LAYER_NORM_EPS = 1e-5
# Any division by a norm/sum uses this floor to avoid 1/0.
NORM_FLOOR = 1e-12


class Tensor:
    """A node in the gradient graph: a float64 array plus backward plumbing."""

    __slots__ = ("value", "grad", "_parents", "_backprop")

    def __init__(self, value, parents=(), backprop=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(parents)
        self._backprop: Callable[[np.ndarray], None] | None = backprop

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def _accumulate(self, delta: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += delta

    # Operator sugar. Tensor-Tensor forms track gradients on both sides;
    # plain numbers/arrays are treated as constants.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_const(self, other)

    def __radd__(self, other):
        return add_const(self, other)

    def __neg__(self):
        return mul_const(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, mul_const(other, -1.0))
        return add_const(self, -np.asarray(other, dtype=np.float64))

    def __rsub__(self, other):
        return add_const(mul_const(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_const(self, other)

    def __rmul__(self, other):
        return mul_const(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def rows(self, start: int, stop: int) -> "Tensor":
        return slice_rows(self, start, stop)

    def cols(self, start: int, stop: int) -> "Tensor":
        return slice_cols(self, start, stop)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


class Parameter(Tensor):
    """A named leaf tensor whose gradient survives backward for the optimizer."""

    __slots__ = ("name",)

    def __init__(self, name: str, value):
        super().__init__(value)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def constant(value) -> Tensor:
    """Wrap an array as a gradient-less leaf."""
    return Tensor(value)


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """a + b for equal shapes, or matrix (M,N) + row bias (N,)."""
    if a.shape == b.shape:
        out = Tensor(a.value + b.value, (a, b))

        def backprop(g):
            a._accumulate(g)
            b._accumulate(g)

    elif a.value.ndim == 2 and b.value.ndim == 1 and a.shape[1] == b.shape[0]:
        out = Tensor(a.value + b.value, (a, b))

        def backprop(g):
            a._accumulate(g)
            b._accumulate(g.sum(axis=0))

    else:
        raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}")
    out._backprop = backprop
    return out


def add_const(a: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    out = Tensor(a.value + c, (a,))

    def backprop(g):
        if c.shape == () or c.shape == a.shape:
            a._accumulate(g)
        else:
            # constant broadcast against a: gradient of a is g summed back
            a._accumulate(np.broadcast_to(g, np.broadcast(a.value, c).shape).sum(
                axis=tuple(range(g.ndim - a.value.ndim))).reshape(a.shape))

    out._backprop = backprop
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.value * b.value, (a, b))

    def backprop(g):
        a._accumulate(g * b.value)
        b._accumulate(g * a.value)

    out._backprop = backprop
    return out


def mul_const(a: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    if not (c.shape == () or c.shape == a.shape):
        raise ValueError(f"mul_const: constant shape {c.shape} vs tensor {a.shape}")
    out = Tensor(a.value * c, (a,))

    def backprop(g):
        a._accumulate(g * c)

    out._backprop = backprop
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product with the standard transpose backward rules."""
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = Tensor(a.value @ b.value, (a, b))

    def backprop(g):
        a._accumulate(g @ b.value.T)
        b._accumulate(a.value.T @ g)

    out._backprop = backprop
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.value.T.copy(), (a,))

    def backprop(g):
        a._accumulate(g.T)

    out._backprop = backprop
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.value[start:stop].copy(), (a,))

    def backprop(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.value)
        a.grad[start:stop] += g

    out._backprop = backprop
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.value[:, start:stop].copy(), (a,))

    def backprop(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.value)
        a.grad[:, start:stop] += g

    out._backprop = backprop
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    widths = [p.shape[1] for p in parts]
    out = Tensor(np.concatenate([p.value for p in parts], axis=1), tuple(parts))

    def backprop(g):
        offset = 0
        for p, w in zip(parts, widths):
            p._accumulate(g[:, offset:offset + w])
            offset += w

    out._backprop = backprop
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.value.sum(), (a,))

    def backprop(g):
        a._accumulate(np.full_like(a.value, float(g)))

    out._backprop = backprop
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.value))
    out = Tensor(s, (a,))

    def backprop(g):
        a._accumulate(g * s * (1.0 - s))

    out._backprop = backprop
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.value, 0.0), (a,))

    def backprop(g):
        a._accumulate(g * (a.value > 0.0))

    out._backprop = backprop
    return out


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None,
            train: bool) -> Tensor:
    """Inverted dropout: surviving entries scaled by 1/(1-rate) at train time."""
    if not train or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul_const(a, mask)


# ---------------------------------------------------------------------------
# Normalizations and losses
# ---------------------------------------------------------------------------


def softmax_values(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Stable softmax on a plain array (max-subtracted)."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax_values(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    s = softmax_values(a.value, axis=axis)
    out = Tensor(s, (a,))

    def backprop(g):
        a._accumulate(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    out._backprop = backprop
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    y = log_softmax_values(a.value, axis=axis)
    s = np.exp(y)
    out = Tensor(y, (a,))

    def backprop(g):
        a._accumulate(g - s * g.sum(axis=axis, keepdims=True))

    out._backprop = backprop
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    """Per-row normalization (population variance) followed by affine."""
    if x.value.ndim != 2:
        raise ValueError(f"layer_norm expects a 2-D input, got shape {x.shape}")
    d = x.shape[1]
    if d < 2:
        raise ValueError("layer_norm needs at least 2 features per row")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(
            f"layer_norm: gain/bias shapes {gain.shape}/{bias.shape} vs width {d}")
    mean = x.value.mean(axis=1, keepdims=True)
    centered = x.value - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat * gain.value + bias.value, (x, gain, bias))

    def backprop(g):
        gain._accumulate((g * xhat).sum(axis=0))
        bias._accumulate(g.sum(axis=0))
        gxhat = g * gain.value
        # d/dx of (x - mean) * inv with mean/var both functions of the row
        term = gxhat - gxhat.mean(axis=1, keepdims=True) \
            - xhat * (gxhat * xhat).mean(axis=1, keepdims=True)
        x._accumulate(term * inv)

    out._backprop = backprop
    return out


def l1_normalize(a: Tensor, floor: float = NORM_FLOOR) -> Tensor:
    """a / sum(a), denominator floored; used for attention weights."""
    s = float(a.value.sum())
    denom = max(s, floor)
    out = Tensor(a.value / denom, (a,))

    def backprop(g):
        if s < floor:
            # denominator pinned to the floor constant
            a._accumulate(g / floor)
        else:
            a._accumulate(g / denom - float((g * a.value).sum()) / (denom * denom))

    out._backprop = backprop
    return out


def _check_distribution(target: np.ndarray, what: str) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    if target.min() < -1e-12:
        raise ValueError(f"{what}: negative entry {target.min()}")
    sums = target.sum(axis=-1)
    if np.max(np.abs(sums - 1.0)) > 1e-9:
        raise ValueError(f"{what}: entries must sum to 1, got {sums}")
    return target


def soft_cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """-sum(target * log softmax(logits)) for one distribution over N classes."""
    target = _check_distribution(target, "soft_cross_entropy target")
    if logits.value.ndim == 2 and logits.shape[0] == 1:
        target = target.reshape(logits.shape)
    if target.shape != logits.shape:
        raise ValueError(
            f"soft_cross_entropy: target shape {target.shape} vs logits {logits.shape}")
    return mul_const(sum_all(mul_const(log_softmax(logits, axis=-1), target)), -1.0)


def soft_cross_entropy_rows(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Sum of per-row soft cross entropies for (T,N) logits and (T,N) targets."""
    targets = _check_distribution(targets, "soft_cross_entropy_rows targets")
    if targets.shape != logits.shape:
        raise ValueError(
            f"soft_cross_entropy_rows: targets shape {targets.shape} vs logits {logits.shape}")
    return mul_const(sum_all(mul_const(log_softmax(logits, axis=-1), targets)), -1.0)


# ---------------------------------------------------------------------------
# Backward pass and optimizer
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate gradients of every parameter reachable from a scalar loss.

    The recorded closures are dropped afterwards, so the graph cannot be
    replayed; parameters keep their gradient arrays for the optimizer.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    for node in topo:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(topo):
        if node._backprop is not None and node.grad is not None:
            node._backprop(node.grad)
        node._parents = ()
        node._backprop = None


@dataclass
class SgdState:
    """Momentum-SGD state: one velocity buffer per parameter name."""

    learning_rate: float
    momentum: float = 0.9
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


def sgd_step(params: Iterable[Parameter], state: SgdState) -> None:
    """buffer <- momentum * buffer + grad; value <- value - lr * buffer.

    Gradients are zeroed after the update.
    """
    for p in params:
        if p.grad is None:
            raise ValueError(f"parameter {p.name!r} has no gradient; run backward first")
        buf = state.buffers.get(p.name)
        if buf is None:
            buf = state.buffers.setdefault(p.name, np.zeros_like(p.value))
        buf *= state.momentum
        buf += p.grad
        p.value -= state.learning_rate * buf
        p.grad = np.zeros_like(p.value)


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


@dataclass
class GradientCheckEntry:
    name: str
    max_rel_error: float
    mean_rel_error: float


@dataclass
class GradientCheckReport:
    entries: list[GradientCheckEntry]
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self):
        lines = [f"gradient check (tolerance {self.tolerance:g}):"]
        for e in sorted(self.entries, key=lambda e: -e.max_rel_error):
            lines.append(f"  {e.name:32s} max {e.max_rel_error:.3e}  mean {e.mean_rel_error:.3e}")
        lines.append(f"  => {'PASS' if self.passed else 'FAIL'} (max {self.max_rel_error:.3e})")
        return "\n".join(lines)


def finite_difference_check(parameters: Sequence[Parameter],
                            loss_fn: Callable[[], Tensor],
                            step: float = 1e-5,
                            tolerance: float = 1e-4,
                            floor: float = 1e-6) -> GradientCheckReport:
    """Compare backward gradients against central finite differences.

    ``loss_fn`` must rebuild the forward graph on every call and be
    deterministic (this is probed by evaluating it twice up front).
    Relative error per entry is |analytic - numeric| / max(|analytic|,
    |numeric|, floor); the report passes iff the max over all entries of
    all parameters is below ``tolerance``.

    The difference quotient carries roundoff of order eps * |loss| / step,
    so entries below that resolution (the zero-gradient directions a loss
    does not see) would divide oracle noise by ~0. The floor is therefore
    raised to resolution / tolerance when needed: such entries are compared
    on the absolute scale the oracle can actually certify, never relatively.
    """
    parameters = list(parameters)
    probe_a = float(loss_fn().value)
    probe_b = float(loss_fn().value)
    if probe_a != probe_b:
        raise ValueError(
            f"loss_fn is not deterministic ({probe_a!r} vs {probe_b!r}); "
            "disable dropout before gradient checking")
    resolution = 8.0 * np.finfo(np.float64).eps * max(1.0, abs(probe_a)) / step
    floor = max(floor, resolution / tolerance)

    loss = loss_fn()
    backward(loss)
    analytic = {p.name: (np.array(p.grad) if p.grad is not None
                         else np.zeros_like(p.value)) for p in parameters}

    entries = []
    for p in parameters:
        flat = p.value.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(loss_fn().value)
            flat[i] = orig - step
            down = float(loss_fn().value)
            flat[i] = orig
            num[i] = (up - down) / (2.0 * step)
        ana = analytic[p.name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), floor)
        rel = np.abs(ana - num) / denom
        entries.append(GradientCheckEntry(p.name, float(rel.max(initial=0.0)),
                                          float(rel.mean()) if rel.size else 0.0))
    return GradientCheckReport(entries, tolerance)
