"""Dense-tensor kernel with reverse-mode gradients.

Each operation returns a `Tensor` node that caches its numpy output and a
closure scattering the output gradient back onto its inputs; `backward`
walks the graph once in reverse topological order (iteratively, so very
deep recurrent chains are fine). Arithmetic runs in 32-bit floats by
default; gradient checking switches the whole graph to 64-bit via
``precision("float64")``.

Every forward and backward value is checked for NaN/Inf and raises
``FloatingPointError`` on the first non-finite entry.
"""

from __future__ import annotations

import zlib
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

_DTYPE = np.float32


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Named sub-stream of a top-level seed (shuffle, dropout, init, ...)."""
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def default_dtype() -> type:
    return _DTYPE


@contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily set the dtype used for newly created tensors.

    ``name`` is "float32" or "float64". Existing tensors keep their dtype;
    mixing modes inside one graph is the caller's mistake.
    """
    global _DTYPE
    table = {"float32": np.float32, "float64": np.float64}
    if name not in table:
        raise ValueError(f"unknown precision {name!r}")
    prev = _DTYPE
    _DTYPE = table[name]
    try:
        yield
    finally:
        _DTYPE = prev


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")


class Tensor:
    """A dense array plus its gradient slot and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        op: str = "leaf",
        backward: Callable[[np.ndarray], None] | None = None,
    ):
        arr = np.asarray(data, dtype=_DTYPE) if not isinstance(data, np.ndarray) else data
        _check_finite(arr, op)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"


def constant(value) -> Tensor:
    return Tensor(np.asarray(value, dtype=_DTYPE), op="const")


def parameter(value) -> Tensor:
    return Tensor(np.asarray(value, dtype=_DTYPE), requires_grad=True, op="param")


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    _check_finite(g, f"gradient flowing into {t.op}")
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _node(data: np.ndarray, parents: tuple[Tensor, ...], op: str,
          backward: Callable[[np.ndarray], None]) -> Tensor:
    tracked = any(p.requires_grad for p in parents)
    if not tracked:
        # prune: evaluation-only subgraphs keep no parents or closures
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, parents=parents, op=op, backward=backward)


def backward(loss: Tensor) -> None:
    """Run one reverse pass from a scalar loss, summing gradients at fan-outs."""
    if loss.shape != ():
        raise ValueError(f"backward requires a scalar node, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("graph has no trainable inputs")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# primitive operations


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")

    def back(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _node(a.data + b.data, (a, b), "add", back)


def addn(terms: Sequence[Tensor]) -> Tensor:
    """Sum of equally-shaped tensors; one node instead of a chain of adds."""
    if not terms:
        raise ValueError("addn: empty term list")
    shape = terms[0].shape
    for t in terms:
        if t.shape != shape:
            raise ValueError(f"addn: shape mismatch {t.shape} vs {shape}")

    def back(g):
        for t in terms:
            _accumulate(t, g)

    out = terms[0].data.copy()
    for t in terms[1:]:
        out += t.data
    return _node(out, tuple(terms), "addn", back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"sub: shape mismatch {a.shape} vs {b.shape}")

    def back(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _node(a.data - b.data, (a, b), "sub", back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equally-shaped tensors."""
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")

    def back(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _node(a.data * b.data, (a, b), "mul", back)


def scale(v: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a scalar node."""
    if s.shape != ():
        raise ValueError(f"scale: scalar expected, got shape {s.shape}")

    def back(g):
        _accumulate(v, g * s.data)
        _accumulate(s, np.asarray((g * v.data).sum(), dtype=v.data.dtype))

    return _node(v.data * s.data, (v, s), "scale", back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a (m,k) by b (k,n); backward is dA=g·Bᵀ, dB=Aᵀ·g."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul: both operands must be 2-d")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dims differ, {a.shape} x {b.shape}")

    def back(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), "matmul", back)


def matvec(w: Tensor, x: Tensor) -> Tensor:
    if w.data.ndim != 2 or x.data.ndim != 1:
        raise ValueError("matvec: expects a matrix and a vector")
    if w.shape[1] != x.shape[0]:
        raise ValueError(f"matvec: dims differ, {w.shape} x {x.shape}")

    def back(g):
        _accumulate(w, np.outer(g, x.data))
        _accumulate(x, w.data.T @ g)

    return _node(w.data @ x.data, (w, x), "matvec", back)


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"dot: need equal-length vectors, got {a.shape}, {b.shape}")

    def back(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _node(np.asarray(a.data @ b.data), (a, b), "dot", back)


def sum1d(v: Tensor) -> Tensor:
    if v.data.ndim != 1:
        raise ValueError("sum1d: vector expected")

    def back(g):
        _accumulate(v, np.full_like(v.data, g))

    return _node(np.asarray(v.data.sum()), (v,), "sum1d", back)


def stack(scalars: Sequence[Tensor]) -> Tensor:
    """Pack scalar nodes into a vector; backward scatters per position."""
    if not scalars:
        raise ValueError("stack: empty input")
    for s in scalars:
        if s.shape != ():
            raise ValueError(f"stack: scalar expected, got shape {s.shape}")

    def back(g):
        for i, s in enumerate(scalars):
            _accumulate(s, np.asarray(g[i], dtype=s.data.dtype))

    data = np.array([s.data for s in scalars], dtype=scalars[0].data.dtype)
    return _node(data, tuple(scalars), "stack", back)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate vectors; backward splits the gradient by offsets."""
    if not parts:
        raise ValueError("concat: empty input")
    for p in parts:
        if p.data.ndim != 1:
            raise ValueError("concat: all parts must be vectors")
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def back(g):
        for i, p in enumerate(parts):
            _accumulate(p, g[offsets[i]:offsets[i + 1]])

    return _node(np.concatenate([p.data for p in parts]), tuple(parts), "concat", back)


def slice1d(v: Tensor, start: int, length: int) -> Tensor:
    if v.data.ndim != 1:
        raise ValueError("slice1d: vector expected")
    if start < 0 or length <= 0 or start + length > v.shape[0]:
        raise ValueError(f"slice1d: [{start}, {start + length}) out of range {v.shape}")

    def back(g):
        full = np.zeros_like(v.data)
        full[start:start + length] = g
        _accumulate(v, full)

    return _node(v.data[start:start + length].copy(), (v,), "slice1d", back)


def row(m: Tensor, index: int) -> Tensor:
    """Embedding-style row lookup; backward scatters into the picked row."""
    if m.data.ndim != 2:
        raise ValueError("row: matrix expected")
    if not 0 <= index < m.shape[0]:
        raise ValueError(f"row: index {index} out of range {m.shape}")

    def back(g):
        full = np.zeros_like(m.data)
        full[index] = g
        _accumulate(m, full)

    return _node(m.data[index].copy(), (m,), "row", back)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)

    def back(g):
        _accumulate(x, g * out * (1.0 - out))

    return _node(out, (x,), "sigmoid", back)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def back(g):
        _accumulate(x, g * (1.0 - out * out))

    return _node(out, (x,), "tanh", back)


def relu(x: Tensor) -> Tensor:
    # subgradient at 0 is taken as 0
    out = np.maximum(x.data, 0)

    def back(g):
        _accumulate(x, g * (x.data > 0))

    return _node(out, (x,), "relu", back)


def softmax(v: Tensor) -> Tensor:
    """Stable softmax of a non-empty vector (max-subtraction)."""
    if v.data.ndim != 1 or v.shape[0] < 1:
        raise ValueError("softmax: non-empty vector expected")
    shifted = v.data - v.data.max()
    e = np.exp(shifted)
    out = e / e.sum()

    def back(g):
        _accumulate(v, out * (g - (g * out).sum()))

    return _node(out, (v,), "softmax", back)


def max1d(v: Tensor) -> Tensor:
    """Max over a vector; the gradient flows to the first argmax position."""
    if v.data.ndim != 1 or v.shape[0] < 1:
        raise ValueError("max1d: non-empty vector expected")
    idx = int(np.argmax(v.data))

    def back(g):
        full = np.zeros_like(v.data)
        full[idx] = g
        _accumulate(v, full)

    return _node(np.asarray(v.data[idx]), (v,), "max1d", back)


def weighted_sum(vectors: Sequence[Tensor], weights: Tensor) -> Tensor:
    """Σ w_i · v_i over equally-shaped vectors with a weight vector node."""
    if weights.data.ndim != 1 or len(vectors) != weights.shape[0]:
        raise ValueError("weighted_sum: need one weight per vector")
    shape = vectors[0].shape
    for v in vectors:
        if v.shape != shape:
            raise ValueError("weighted_sum: vectors must share a shape")

    def back(g):
        for i, v in enumerate(vectors):
            _accumulate(v, g * weights.data[i])
        wg = np.array([float(g @ v.data) for v in vectors], dtype=weights.data.dtype)
        _accumulate(weights, wg)

    out = np.zeros_like(vectors[0].data)
    for i, v in enumerate(vectors):
        out += weights.data[i] * v.data
    return _node(out, tuple(vectors) + (weights,), "weighted_sum", back)


def dropout(v: Tensor, keep_prob: float, training: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: train mode zeroes and rescales, eval mode is identity."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"dropout: keep_prob {keep_prob} outside (0, 1]")
    if not training or keep_prob == 1.0:
        return v
    if rng is None:
        raise ValueError("dropout: training mode needs an explicit rng")
    mask = (rng.random(v.shape) < keep_prob).astype(v.data.dtype) / keep_prob

    def back(g):
        _accumulate(v, g * mask)

    return _node(v.data * mask, (v,), "dropout", back)


def cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two vectors; zero-norm input yields constant 0."""
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"cosine: need equal-length vectors, got {a.shape}, {b.shape}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na == 0.0 or nb == 0.0:
        return constant(np.asarray(0.0, dtype=a.data.dtype))
    c = float(a.data @ b.data) / (na * nb)

    def back(g):
        _accumulate(a, g * (b.data / (na * nb) - c * a.data / (na * na)))
        _accumulate(b, g * (a.data / (na * nb) - c * b.data / (nb * nb)))

    return _node(np.asarray(c, dtype=a.data.dtype), (a, b), "cosine", back)


def affine(w: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """w @ x + b for a weight matrix, input vector and bias vector."""
    return add(matvec(w, x), b)


# ---------------------------------------------------------------------------
# LSTM cell


@dataclass
class LstmWeights:
    """Gate weights for one LSTM direction.

    `w_x` is (4h, d_in), `w_h` is (4h, h), `b` is (4h,); the 4h block is laid
    out as input gate, forget gate, candidate, output gate.
    """

    w_x: Tensor
    w_h: Tensor
    b: Tensor

    @property
    def hidden(self) -> int:
        return self.w_h.shape[1]


def init_lstm(d_in: int, hidden: int, rng: np.random.Generator) -> LstmWeights:
    return LstmWeights(
        w_x=parameter(glorot(rng, (4 * hidden, d_in))),
        w_h=parameter(glorot(rng, (4 * hidden, hidden))),
        b=parameter(np.zeros(4 * hidden)),
    )


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, w: LstmWeights) -> tuple[Tensor, Tensor]:
    """One LSTM step with sigmoid gates and tanh candidate."""
    h = w.hidden
    if w.w_x.shape != (4 * h, x.shape[0]) or w.w_h.shape != (4 * h, h) or w.b.shape != (4 * h,):
        raise ValueError(
            f"lstm_cell: weight dims {w.w_x.shape}/{w.w_h.shape}/{w.b.shape} "
            f"inconsistent with input {x.shape} and hidden {h}"
        )
    if h_prev.shape != (h,) or c_prev.shape != (h,):
        raise ValueError(f"lstm_cell: state dims {h_prev.shape}/{c_prev.shape} != ({h},)")
    pre = add(addn([matvec(w.w_x, x), matvec(w.w_h, h_prev)]), w.b)
    i = sigmoid(slice1d(pre, 0, h))
    f = sigmoid(slice1d(pre, h, h))
    g = tanh(slice1d(pre, 2 * h, h))
    o = sigmoid(slice1d(pre, 3 * h, h))
    c = add(mul(f, c_prev), mul(i, g))
    return mul(o, tanh(c)), c


def glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = shape[-1] if len(shape) > 1 else shape[0]
    fan_out = shape[0]
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


# ---------------------------------------------------------------------------
# parameters and optimization


class ParamStore:
    """Named trainable tensors with gradient slots, in insertion order."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if not t.requires_grad:
            raise ValueError(f"parameter {name!r} must require gradients")
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> Mapping[str, Tensor]:
        return self._params

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._params.items()
        }

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in state:
                raise KeyError(f"missing parameter {name!r} in state")
            arr = np.asarray(state[name], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(f"parameter {name!r}: shape {arr.shape} != {t.data.shape}")
            t.data = arr.copy()


@dataclass
class AdamState:
    """Adam moments per parameter plus the shared step counter."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Mapping[str, Tensor],
              grads: Mapping[str, np.ndarray]) -> Mapping[str, Tensor]:
    """Bias-corrected Adam update, in place; increments the step counter."""
    state.step += 1
    b1t = 1.0 - state.beta1 ** state.step
    b2t = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = np.asarray(grads[name])
        if g.shape != p.data.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != {p.data.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / b1t
        v_hat = v / b2t
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(build: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `build` must reconstruct the scalar graph from `param.data` on every
    call (dropout in evaluation mode, fixed inputs). Requires the graph to
    run in 64-bit; relative error per coordinate is
    |analytic − numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if param.data.dtype != np.float64:
        raise ValueError("grad_check requires float64 parameters")
    param.grad = None
    loss = build()
    if loss.requires_grad:
        backward(loss)
    analytic = param.grad if param.grad is not None else np.zeros_like(param.data)
    numeric = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(build().data)
        flat[i] = orig - h
        down = float(build().data)
        flat[i] = orig
        nflat[i] = (up - down) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
