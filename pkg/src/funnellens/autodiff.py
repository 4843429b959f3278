"""Dense-tensor engine with reverse-mode automatic differentiation.

Every value in a model forward pass is a Tensor: a numpy array plus the
bookkeeping needed to replay the computation backwards (producing op,
parent nodes, gradient accumulator). Graphs are rebuilt per example, so
basket and funnel lengths may vary freely from one example to the next.

Scalars are represented as shape-(1,) tensors so they can be concatenated
and averaged like any other value.

Also home to the RMSprop optimizer and global-norm gradient clipping,
which operate directly on the ``.grad`` arrays of parameter tensors.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Set the dtype newly created tensors use (float64 or float32)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"unsupported dtype {dtype}; use float64 or float32")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """A value in the computation graph.

    Leaf tensors (parameters, constants) have no parents. Non-leaf tensors
    carry a closure that adds their contribution to each parent's ``grad``.
    ``grad`` always has the same shape as ``data`` and starts at zero, so a
    node the loss never touches keeps a zero gradient.
    """

    __slots__ = ("data", "grad", "op", "parents", "_backward")

    def __init__(self, data, parents=(), op="leaf", backward_fn=None):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad = np.zeros_like(self.data)
        self.op = op
        self.parents = tuple(parents)
        self._backward = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def backward(self) -> None:
        """Reverse-accumulate gradients from this (scalar) node.

        Leaf gradients add into ``.grad`` without resetting, so running
        backward twice on the same graph accumulates exactly twice the
        gradient; interior nodes are scratch space and reset per pass.
        Traversal is iterative; recursion would overflow on long
        recurrent graphs.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        for node in order:
            if node.parents:
                node.grad[...] = 0.0
        self.grad += 1.0
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _topo_order(root: Tensor) -> list[Tensor]:
    # Iterative post-order DFS; cycles are impossible by construction
    # (parents exist before children), so no cycle check is needed.
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
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DEFAULT_DTYPE))


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# Differentiable operations
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    out = Tensor(a.data + b.data, (a, b), "add")

    def backward():
        a.grad += out.grad
        b.grad += out.grad

    out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data, (a, b), "sub")

    def backward():
        a.grad += out.grad
        b.grad -= out.grad

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data, (a, b), "mul")

    def backward():
        a.grad += b.data * out.grad
        b.grad += a.data * out.grad

    out._backward = backward
    return out


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a plain Python constant."""
    c = float(c)
    out = Tensor(a.data * c, (a,), "scale")

    def backward():
        a.grad += c * out.grad

    out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 1-D and 2-D operands, numpy semantics."""
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ShapeError(f"matmul: only 1-D/2-D supported, got {ad.shape} @ {bd.shape}")
    inner_a = ad.shape[-1]
    inner_b = bd.shape[0]
    if inner_a != inner_b:
        raise ShapeError(f"matmul: inner dimensions disagree for {ad.shape} @ {bd.shape}")
    out = Tensor(ad @ bd, (a, b), "matmul")

    def backward():
        g = out.grad
        if ad.ndim == 2 and bd.ndim == 2:
            a.grad += g @ bd.T
            b.grad += ad.T @ g
        elif ad.ndim == 2 and bd.ndim == 1:
            a.grad += np.outer(g, bd)
            b.grad += ad.T @ g
        elif ad.ndim == 1 and bd.ndim == 2:
            a.grad += bd @ g
            b.grad += np.outer(ad, g)
        else:  # 1-D @ 1-D -> scalar ()
            a.grad += g * bd
            b.grad += g * ad

    out._backward = backward
    return out


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _stable_sigmoid(a.data)
    out = Tensor(s, (a,), "sigmoid")

    def backward():
        a.grad += s * (1.0 - s) * out.grad

    out._backward = backward
    return out


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    out = Tensor(t, (a,), "tanh")

    def backward():
        a.grad += (1.0 - t * t) * out.grad

    out._backward = backward
    return out


def softplus(a: Tensor) -> Tensor:
    # log(1 + e^x) computed as logaddexp(0, x) to survive large |x|
    out = Tensor(np.logaddexp(0.0, a.data), (a,), "softplus")
    s = _stable_sigmoid(a.data)

    def backward():
        a.grad += s * out.grad

    out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), (a,), "relu")

    def backward():
        a.grad += (a.data > 0) * out.grad

    out._backward = backward
    return out


def abs_(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data), (a,), "abs")

    def backward():
        a.grad += np.sign(a.data) * out.grad

    out._backward = backward
    return out


def concat(parts: list[Tensor]) -> Tensor:
    """Concatenate 1-D tensors along their (last) axis."""
    if not parts:
        raise ShapeError("concat: need at least one operand")
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError(f"concat: 1-D operands only, got shape {p.data.shape}")
    out = Tensor(np.concatenate([p.data for p in parts]), tuple(parts), "concat")
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def backward():
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p.grad += out.grad[lo:hi]

    out._backward = backward
    return out


def mean(a: Tensor) -> Tensor:
    """Mean of all elements, as a shape-(1,) scalar."""
    n = a.data.size
    if n == 0:
        raise ShapeError("mean: empty tensor")
    out = Tensor(np.array([a.data.mean()]), (a,), "mean")

    def backward():
        a.grad += out.grad.reshape(-1)[0] / n

    out._backward = backward
    return out


def narrow(a: Tensor, start: int, length: int) -> Tensor:
    """Contiguous 1-D slice [start, start+length)."""
    if a.data.ndim != 1:
        raise ShapeError(f"narrow: 1-D tensors only, got shape {a.data.shape}")
    if start < 0 or start + length > a.data.shape[0]:
        raise ShapeError(f"narrow: [{start}, {start + length}) outside shape {a.data.shape}")
    out = Tensor(a.data[start:start + length].copy(), (a,), "narrow")

    def backward():
        a.grad[start:start + length] += out.grad

    out._backward = backward
    return out


def take_row(a: Tensor, index: int) -> Tensor:
    """Select one row of a 2-D tensor; the gradient flows only to that row."""
    if a.data.ndim != 2:
        raise ShapeError(f"take_row: 2-D tensors only, got shape {a.data.shape}")
    if not 0 <= index < a.data.shape[0]:
        raise IndexError(f"row {index} out of range for shape {a.data.shape}")
    out = Tensor(a.data[index].copy(), (a,), "take_row")

    def backward():
        a.grad[index] += out.grad

    out._backward = backward
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain-array softmax (no graph), shift-stable."""
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_cross_entropy(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target] as a shape-(1,) scalar.

    The max is subtracted before exponentiation, which makes the loss
    exactly invariant under a constant shift of the logits.
    """
    v = logits.data.shape[0]
    if logits.data.ndim != 1 or v < 2:
        raise ShapeError(f"softmax_cross_entropy: need a 1-D logit vector of >= 2 classes, got {logits.shape}")
    if not 0 <= target < v:
        raise IndexError(f"target {target} out of range for {v} classes")
    z = logits.data - logits.data.max()
    logsum = np.log(np.exp(z).sum())
    out = Tensor(np.array([logsum - z[target]]), (logits,), "softmax_cross_entropy")

    def backward():
        p = np.exp(z - logsum)  # softmax(logits)
        p[target] -= 1.0
        logits.grad += p * out.grad.reshape(-1)[0]

    out._backward = backward
    return out


# Registry of the elementwise family, mainly for sweep-style tests.
KINDS = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softplus": softplus,
    "relu": relu,
    "add": add,
    "mul": mul,
    "concat-last-axis": concat,
    "mean": mean,
}


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------

def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale grads in place so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = 0.0
    for g in grads:
        total += float((g * g).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads:
            g *= factor
    return norm


class RMSprop:
    """RMSprop over a fixed list of parameter tensors.

    Per step: s <- decay*s + (1-decay)*g^2 ; p <- p - lr*g/sqrt(s+eps).
    The squared-gradient accumulators mirror parameter shapes and never
    go negative.
    """

    def __init__(self, params: list[Tensor], learning_rate=0.001, decay=0.9, epsilon=1e-8):
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.decay = float(decay)
        self.epsilon = float(epsilon)
        self.accumulators = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, s in zip(self.params, self.accumulators):
            g = p.grad
            s *= self.decay
            s += (1.0 - self.decay) * g * g
            p.data -= self.learning_rate * g / np.sqrt(s + self.epsilon)

    def zero_grad(self) -> None:
        zero_grads(self.params)
