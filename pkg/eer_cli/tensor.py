"""Dense 2-D tensors with a define-by-run gradient tape.

Every value is a float64 matrix. Operations on tensors that live on a
``GradTape`` are recorded in execution order, so the tape is topologically
sorted by construction and ``backward`` is a single reverse sweep. A new tape
is created for every forward pass; nothing is cached between passes.
"""

import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DomainError, NonFiniteError, ShapeError

VJP = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

GELU_COEF = 0.044715
_GELU_SCALE = math.sqrt(2.0 / math.pi)


class _Node:
    """One recorded primitive: parent handles plus its vector-Jacobian product."""

    __slots__ = ("parents", "vjp")

    def __init__(self, parents: Tuple[Optional[int], ...], vjp: Optional[VJP]):
        self.parents = parents
        self.vjp = vjp


class GradTape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        """Initialize an empty tape."""
        self.nodes: List[_Node] = []
        self.leaves: Dict[int, "Tensor"] = {}

    def watch(self, data, name: Optional[str] = None) -> "Tensor":
        """Register a tracked leaf.

        Args:
            data: Matrix-like initial value
            name: Optional label, used in error reports

        Returns:
            Leaf tensor whose gradient is populated by ``backward``
        """
        leaf = Tensor(data, name=name)
        leaf.tape = self
        leaf.tape_id = len(self.nodes)
        self.nodes.append(_Node((), None))
        self.leaves[leaf.tape_id] = leaf
        return leaf

    def record(self, data: np.ndarray, inputs: Sequence["Tensor"], vjp: VJP) -> "Tensor":
        """Append a primitive result to the tape.

        Args:
            data: Output value
            inputs: Operands, in the order ``vjp`` returns their gradients
            vjp: Maps the output gradient to one gradient per operand

        Returns:
            Tracked output tensor
        """
        out = Tensor(data)
        out.tape = self
        out.tape_id = len(self.nodes)
        parents = tuple(t.tape_id if t.tape is self else None for t in inputs)
        self.nodes.append(_Node(parents, vjp))
        return out

    def __len__(self) -> int:
        return len(self.nodes)


class Tensor:
    """Immutable dense float64 matrix, optionally tracked on a tape."""

    __array_priority__ = 1000

    def __init__(self, data, name: Optional[str] = None):
        """Wrap a matrix-like value.

        Scalars become 1x1 and vectors become a single row.

        Raises:
            ShapeError: If the value has more than two dimensions
            NonFiniteError: If any entry is NaN or Inf
        """
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError("tensor", arr.shape)
        if not np.isfinite(arr).all():
            label = f" '{name}'" if name else ""
            raise NonFiniteError(f"tensor{label} has non-finite entries")
        self.data = arr
        self.name = name
        self.tape: Optional[GradTape] = None
        self.tape_id: Optional[int] = None
        self.grad: Optional[np.ndarray] = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        """Return the value of a 1x1 tensor as a float."""
        if self.shape != (1, 1):
            raise ShapeError("item", self.shape, (1, 1))
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", tracked" if self.tracked else ""
        return f"Tensor({self.rows}x{self.cols}{flag})"

    def __add__(self, other) -> "Tensor":
        return add(self, _lift(other))

    def __radd__(self, other) -> "Tensor":
        return add(_lift(other), self)

    def __sub__(self, other) -> "Tensor":
        return sub(self, _lift(other))

    def __rsub__(self, other) -> "Tensor":
        return sub(_lift(other), self)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _lift(other))

    def __rmul__(self, other) -> "Tensor":
        return self.__mul__(other)

    def __truediv__(self, other) -> "Tensor":
        if not isinstance(other, (int, float)):
            raise DomainError("tensor division is only defined by a scalar")
        return scale(self, 1.0 / float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, _lift(other))

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _shared_tape(inputs: Sequence[Tensor]) -> Optional[GradTape]:
    tape = None
    for t in inputs:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif t.tape is not tape:
            raise DomainError("operands are tracked on different tapes")
    return tape


def _apply(data: np.ndarray, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
    tape = _shared_tape(inputs)
    if tape is None:
        return Tensor(data)
    return tape.record(data, inputs, vjp)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, int]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def constant(data) -> Tensor:
    """Untracked tensor."""
    return Tensor(data)


def stop_gradient(a: Tensor) -> Tensor:
    """Same value, detached from any tape."""
    return Tensor(a.data)


# -- linear algebra -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product ``a @ b``.

    Raises:
        ShapeError: If ``a.cols != b.rows``
    """
    if a.cols != b.rows:
        raise ShapeError("matmul", a.shape, b.shape)
    a_data, b_data = a.data, b.data

    def vjp(g):
        return g @ b_data.T, a_data.T @ g

    return _apply(a_data @ b_data, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    return _apply(a.data.T.copy(), (a,), lambda g: (g.T,))


def _block_count(op: str, rows: int, block: int) -> int:
    if block <= 0 or rows % block:
        raise ShapeError(op, (rows,), (block,))
    return rows // block


def block_matmul_nt(a: Tensor, b: Tensor, block: int) -> Tensor:
    """Per-sequence ``a_s @ b_s.T`` for sequences stacked as ``block``-row slabs.

    With ``B`` stacked sequences of length ``block`` the inputs are
    ``(B*block) x k`` and the output is ``(B*block) x block``: row ``i`` of
    sequence ``s`` holds that row's scores against every row of the same
    sequence.
    """
    if a.shape != b.shape:
        raise ShapeError("block_matmul_nt", a.shape, b.shape)
    n, k = a.shape
    count = _block_count("block_matmul_nt", n, block)
    a3 = a.data.reshape(count, block, k)
    b3 = b.data.reshape(count, block, k)
    out = np.matmul(a3, b3.transpose(0, 2, 1)).reshape(n, block)

    def vjp(g):
        g3 = g.reshape(count, block, block)
        grad_a = np.matmul(g3, b3).reshape(n, k)
        grad_b = np.matmul(g3.transpose(0, 2, 1), a3).reshape(n, k)
        return grad_a, grad_b

    return _apply(out, (a, b), vjp)


def block_matmul(p: Tensor, v: Tensor, block: int) -> Tensor:
    """Per-sequence ``p_s @ v_s`` where ``p`` is ``(B*block) x block``."""
    n = p.rows
    if p.cols != block or v.rows != n:
        raise ShapeError("block_matmul", p.shape, v.shape)
    count = _block_count("block_matmul", n, block)
    m = v.cols
    p3 = p.data.reshape(count, block, block)
    v3 = v.data.reshape(count, block, m)
    out = np.matmul(p3, v3).reshape(n, m)

    def vjp(g):
        g3 = g.reshape(count, block, m)
        grad_p = np.matmul(g3, v3.transpose(0, 2, 1)).reshape(n, block)
        grad_v = np.matmul(p3.transpose(0, 2, 1), g3).reshape(n, m)
        return grad_p, grad_v

    return _apply(out, (p, v), vjp)


# -- elementwise ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Sum with row/column broadcasting."""
    _broadcast_shape("add", a, b)
    a_shape, b_shape = a.shape, b.shape
    return _apply(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)
    a_shape, b_shape = a.shape, b.shape
    return _apply(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with row/column broadcasting."""
    _broadcast_shape("mul", a, b)
    a_data, b_data = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * b_data, a_data.shape), _unbroadcast(g * a_data, b_data.shape)

    return _apply(a_data * b_data, (a, b), vjp)


def scale(a: Tensor, factor: float) -> Tensor:
    return _apply(a.data * factor, (a,), lambda g: (g * factor,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _apply(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if (a.data <= 0).any():
        raise DomainError("log of a non-positive entry")
    a_data = a.data
    return _apply(np.log(a_data), (a,), lambda g: (g / a_data,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _apply(out, (a,), lambda g: (g * (1.0 - out * out),))


def power(a: Tensor, exponent: float) -> Tensor:
    """Elementwise ``a ** exponent`` for a fixed real exponent."""
    a_data = a.data
    out = np.power(a_data, exponent)

    def vjp(g):
        return (g * exponent * np.power(a_data, exponent - 1.0),)

    return _apply(out, (a,), vjp)


def sqrt(a: Tensor) -> Tensor:
    if (a.data < 0).any():
        raise DomainError("sqrt of a negative entry")
    out = np.sqrt(a.data)
    return _apply(out, (a,), lambda g: (g * 0.5 / out,))


def absolute(a: Tensor) -> Tensor:
    """Elementwise ``|a|``; the subgradient at zero is zero."""
    sign = np.sign(a.data)
    return _apply(np.abs(a.data), (a,), lambda g: (g * sign,))


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh form: ``0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))``."""
    x = a.data
    t = np.tanh(_GELU_SCALE * (x + GELU_COEF * x ** 3))
    out = 0.5 * x * (1.0 + t)

    def vjp(g):
        du = _GELU_SCALE * (1.0 + 3.0 * GELU_COEF * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _apply(out, (a,), vjp)


# -- reductions -----------------------------------------------------------


def total(a: Tensor) -> Tensor:
    """Sum of all entries, as 1x1."""
    shape = a.shape
    return _apply(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def mean(a: Tensor) -> Tensor:
    """Mean of all entries, as 1x1."""
    shape = a.shape
    count = a.data.size
    return _apply(
        np.array([[a.data.mean()]]), (a,), lambda g: (np.full(shape, g[0, 0] / count),)
    )


def sum_rows(a: Tensor) -> Tensor:
    """Per-row sums, as an ``n x 1`` column."""
    cols = a.cols
    return _apply(
        a.data.sum(axis=1, keepdims=True), (a,), lambda g: (np.repeat(g, cols, axis=1),)
    )


def mean_rows(a: Tensor) -> Tensor:
    cols = a.cols
    return _apply(
        a.data.mean(axis=1, keepdims=True),
        (a,),
        lambda g: (np.repeat(g / cols, cols, axis=1),),
    )


def row_max(a: Tensor) -> Tensor:
    """Per-row maximum; the gradient flows to the first maximizing entry."""
    idx = a.data.argmax(axis=1)
    rows = np.arange(a.rows)
    shape = a.shape

    def vjp(g):
        grad = np.zeros(shape)
        grad[rows, idx] = g[:, 0]
        return (grad,)

    return _apply(a.data[rows, idx][:, None], (a,), vjp)


def row_norm(a: Tensor) -> Tensor:
    """Per-row Euclidean norm; rows of norm zero get a zero gradient."""
    a_data = a.data
    norms = np.sqrt((a_data * a_data).sum(axis=1, keepdims=True))

    def vjp(g):
        safe = np.where(norms > 0.0, norms, 1.0)
        return (np.where(norms > 0.0, g * a_data / safe, 0.0),)

    return _apply(norms, (a,), vjp)


# -- normalizers ----------------------------------------------------------


def row_softmax(logits: Tensor, temperature: float = 1.0) -> Tensor:
    """Row-wise softmax of ``logits / temperature`` with max subtraction.

    Raises:
        DomainError: If ``temperature <= 0``
    """
    if not temperature > 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    z = logits.data / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return ((p * (g - (g * p).sum(axis=1, keepdims=True))) / temperature,)

    return _apply(p, (logits,), vjp)


def log_softmax(logits: Tensor) -> Tensor:
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(out)

    def vjp(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _apply(out, (logits,), vjp)


# -- indexing -------------------------------------------------------------


def gather_rows(table: Tensor, indices: Sequence[int]) -> Tensor:
    """Stack ``table[indices]``; repeated indices accumulate gradient.

    Raises:
        DomainError: If any index is out of range
    """
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= table.rows):
        raise DomainError(f"row index out of range [0, {table.rows})")
    shape = table.shape

    def vjp(g):
        grad = np.zeros(shape)
        np.add.at(grad, idx, g)
        return (grad,)

    return _apply(table.data[idx], (table,), vjp)


def pick(a: Tensor, rows: Sequence[int], cols: Sequence[int]) -> Tensor:
    """Entries ``a[rows[i], cols[i]]`` as a ``k x 1`` column."""
    r = np.asarray(rows, dtype=np.int64).reshape(-1)
    c = np.asarray(cols, dtype=np.int64).reshape(-1)
    if r.shape != c.shape:
        raise ShapeError("pick", r.shape, c.shape)
    shape = a.shape

    def vjp(g):
        grad = np.zeros(shape)
        np.add.at(grad, (r, c), g[:, 0])
        return (grad,)

    return _apply(a.data[r, c][:, None], (a,), vjp)


# -- gradients ------------------------------------------------------------


def backward(root: Tensor) -> Dict[int, np.ndarray]:
    """Reverse sweep from a scalar root.

    Sets ``grad`` on every leaf of the root's tape. Leaves the root does not
    depend on get an exact zero gradient.

    Args:
        root: 1x1 tensor recorded on a tape

    Returns:
        Mapping from leaf ``tape_id`` to gradient array

    Raises:
        ShapeError: If the root is not 1x1
        DomainError: If the root is not tracked
    """
    if root.shape != (1, 1):
        raise ShapeError("backward", root.shape, (1, 1))
    if root.tape is None:
        raise DomainError("backward: root is not recorded on a tape")
    tape = root.tape
    grads: List[Optional[np.ndarray]] = [None] * (root.tape_id + 1)
    grads[root.tape_id] = np.ones((1, 1))
    for idx in range(root.tape_id, -1, -1):
        grad = grads[idx]
        node = tape.nodes[idx]
        if grad is None or node.vjp is None:
            continue
        for parent, parent_grad in zip(node.parents, node.vjp(grad)):
            if parent is None or parent_grad is None:
                continue
            current = grads[parent]
            grads[parent] = parent_grad if current is None else current + parent_grad
    result = {}
    for leaf_id, leaf in tape.leaves.items():
        grad = grads[leaf_id] if leaf_id <= root.tape_id else None
        leaf.grad = np.zeros(leaf.shape) if grad is None else grad
        result[leaf_id] = leaf.grad
    return result


def finite_diff_gradient(
    f: Callable[[np.ndarray], float], x, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient ``(f(x + h e) - f(x - h e)) / 2h`` per coordinate.

    Args:
        f: Scalar function of an array shaped like ``x``
        x: Evaluation point (array or Tensor)
        h: Step size

    Returns:
        Array shaped like ``x``
    """
    if not h > 0:
        raise DomainError(f"finite-difference step must be positive, got {h}")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        upper = float(f(base))
        flat[i] = saved - h
        lower = float(f(base))
        flat[i] = saved
        out[i] = (upper - lower) / (2.0 * h)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> float:
    """Largest ``|a - b| / max(|a|, |b|, floor)`` over all entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max()) if a.size else 0.0


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic random stream.

    Uses numpy's PCG64 bit generator seeded through ``SeedSequence``: the same
    seed always yields the same stream on any platform numpy supports.
    """
    return np.random.Generator(np.random.PCG64(seed))
