"""
Dense Matrix Arithmetic and Reverse-Mode Automatic Differentiation

Matrices are 2-D numpy arrays of dtype float64. The autodiff engine records a
graph of Node objects; every primitive is registered in PRIMITIVES together
with its local backward rule, and backward() walks the graph in reverse
topological order accumulating d(root)/d(node) for every node that requires a
gradient.

Supported primitives:
- matmul, add, sub, mul (row/column/scalar broadcasting), scale
- relu, exp, log
- sum_all, sum_rows, sum_cols, transpose
- pairwise_sq_dists, logsumexp_rows
- softmin_rows: the log-domain Sinkhorn half-step, fused so that the n x m
  logits are recomputed during backward instead of being kept per iteration

pairwise_sq_dists and logsumexp_rows accept either arrays or Nodes: with
arrays they return arrays, with at least one Node they extend the graph.

Example:
    >>> x = parameter([[3.0]])
    >>> root = sum_all(x * x)
    >>> grads = backward(root)
    >>> x.gradient
    array([[6.]])
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from ..exceptions import ContractError, EvaluationError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]
BackwardRule = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

# Registry of graph-building primitives, keyed by op name
PRIMITIVES: Dict[str, Callable[..., "Node"]] = {}


def primitive(name: str) -> Callable:
    """Register a graph-building function under `name`."""
    def register(fn: Callable) -> Callable:
        PRIMITIVES[name] = fn
        return fn
    return register


def as_matrix(values: ArrayLike) -> np.ndarray:
    """
    Convert input to a contiguous 2-D float64 array.

    Scalars become 1x1 and 1-D sequences become a single row.

    Raises:
        ShapeError: If the input has more than two dimensions
    """
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim == 0:
        matrix = matrix.reshape(1, 1)
    elif matrix.ndim == 1:
        matrix = matrix.reshape(1, -1)
    elif matrix.ndim != 2:
        raise ShapeError(f"Expected a 2-D matrix, got array with shape {matrix.shape}")
    return np.ascontiguousarray(matrix)


class Node:
    """
    A vertex of the autodiff graph.

    Attributes:
        value: Forward value (2-D float64 array)
        grad: Accumulated gradient of the last backward root, None until reached
        parents: Input nodes (empty for leaves and for nodes needing no gradient)
        backward_rule: Maps the output gradient to one gradient per parent
        op: Name of the primitive that produced this node ('leaf' for inputs)
        requires_grad: Whether gradients flow into this node
    """

    __slots__ = ("value", "grad", "parents", "backward_rule", "op", "requires_grad")

    def __init__(
        self,
        value: np.ndarray,
        parents: Tuple["Node", ...] = (),
        backward_rule: Optional[BackwardRule] = None,
        op: str = "leaf",
        requires_grad: bool = False
    ):
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.parents = parents
        self.backward_rule = backward_rule
        self.op = op
        self.requires_grad = requires_grad

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    @property
    def gradient(self) -> np.ndarray:
        """Gradient from the last backward pass, zeros if the pass never reached this node."""
        if self.grad is None:
            return np.zeros_like(self.value)
        return self.grad

    @property
    def T(self) -> "Node":
        return transpose(self)

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 node, got shape {self.value.shape}")
        return float(self.value[0, 0])

    def __add__(self, other) -> "Node":
        return add(self, other)

    def __radd__(self, other) -> "Node":
        return add(other, self)

    def __sub__(self, other) -> "Node":
        return sub(self, other)

    def __rsub__(self, other) -> "Node":
        return sub(other, self)

    def __mul__(self, other) -> "Node":
        if _is_scalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other) -> "Node":
        return self.__mul__(other)

    def __truediv__(self, other) -> "Node":
        if not _is_scalar(other):
            raise ContractError("Nodes can only be divided by a scalar")
        return scale(self, 1.0 / float(other))

    def __neg__(self) -> "Node":
        return scale(self, -1.0)

    def __matmul__(self, other) -> "Node":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"


def _is_scalar(value) -> bool:
    return isinstance(value, (int, float, np.floating, np.integer)) and not isinstance(value, bool)


def constant(values: ArrayLike) -> Node:
    """Wrap values as a leaf that receives no gradient."""
    return Node(as_matrix(values))


def parameter(values: ArrayLike) -> Node:
    """Wrap values as a leaf whose gradient is tracked."""
    return Node(as_matrix(values), requires_grad=True)


def _lift(value) -> Node:
    return value if isinstance(value, Node) else constant(value)


def _make(op: str, value: np.ndarray, parents: Tuple[Node, ...], rule: BackwardRule) -> Node:
    # Subgraphs without trainable inputs keep no references, so their
    # intermediates can be freed as soon as the forward pass moves on.
    if any(p.requires_grad for p in parents):
        return Node(value, parents, rule, op, True)
    return Node(value, op=op)


def _broadcast_shape(a: Node, b: Node, op: str) -> Tuple[int, int]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Sum the gradient over the axes that were broadcast from size 1."""
    if grad.shape == shape:
        return grad
    axes = tuple(ax for ax in (0, 1) if shape[ax] == 1 and grad.shape[ax] != 1)
    return grad.sum(axis=axes, keepdims=True).reshape(shape)


@primitive("add")
def add(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "add")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", a.value + b.value, (a, b), rule)


@primitive("sub")
def sub(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "sub")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", a.value - b.value, (a, b), rule)


@primitive("mul")
def mul(a, b) -> Node:
    """Elementwise (Hadamard) product."""
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "mul")

    def rule(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _make("mul", a.value * b.value, (a, b), rule)


@primitive("scale")
def scale(a, factor: float) -> Node:
    a = _lift(a)
    return _make("scale", a.value * factor, (a,), lambda g: (g * factor,))


@primitive("matmul")
def matmul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")

    def rule(g):
        return g @ b.value.T, a.value.T @ g

    return _make("matmul", a.value @ b.value, (a, b), rule)


@primitive("relu")
def relu(a) -> Node:
    a = _lift(a)
    active = a.value > 0
    return _make("relu", np.where(active, a.value, 0.0), (a,), lambda g: (g * active,))


@primitive("exp")
def exp(a) -> Node:
    a = _lift(a)
    value = np.exp(a.value)
    return _make("exp", value, (a,), lambda g: (g * value,))


@primitive("log")
def log(a) -> Node:
    a = _lift(a)
    if np.any(a.value <= 0):
        raise ContractError("log: input must be strictly positive")
    return _make("log", np.log(a.value), (a,), lambda g: (g / a.value,))


@primitive("sum_all")
def sum_all(a) -> Node:
    a = _lift(a)
    shape = a.shape
    return _make("sum_all", np.array([[a.value.sum()]]), (a,),
                 lambda g: (np.full(shape, g[0, 0]),))


@primitive("sum_rows")
def sum_rows(a) -> Node:
    """Sum across each row, giving an n x 1 column."""
    a = _lift(a)
    shape = a.shape
    return _make("sum_rows", a.value.sum(axis=1, keepdims=True), (a,),
                 lambda g: (np.broadcast_to(g, shape),))


@primitive("sum_cols")
def sum_cols(a) -> Node:
    """Sum down each column, giving a 1 x m row."""
    a = _lift(a)
    shape = a.shape
    return _make("sum_cols", a.value.sum(axis=0, keepdims=True), (a,),
                 lambda g: (np.broadcast_to(g, shape),))


@primitive("transpose")
def transpose(a) -> Node:
    a = _lift(a)
    return _make("transpose", np.ascontiguousarray(a.value.T), (a,), lambda g: (g.T,))


def pairwise_sq_dists(X, Y):
    """
    Squared Euclidean distances between the rows of X and the rows of Y.

    Computed directly as sum_t (x_t - y_t)^2 (no norm expansion) and clamped
    at zero, so X compared with itself has an exact zero diagonal.

    Args:
        X: n x d matrix (array or Node)
        Y: m x d matrix (array or Node)

    Returns:
        n x m array, or a Node when either input is a Node

    Raises:
        ShapeError: If the column counts differ
    """
    if isinstance(X, Node) or isinstance(Y, Node):
        return _pairwise_sq_dists_node(_lift(X), _lift(Y))
    return _sq_dists(as_matrix(X), as_matrix(Y))


def _sq_dists(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    if X.shape[1] != Y.shape[1]:
        raise ShapeError(f"pairwise_sq_dists: column counts differ ({X.shape[1]} vs {Y.shape[1]})")
    if X.shape[0] == 0 or Y.shape[0] == 0:
        return np.zeros((X.shape[0], Y.shape[0]))
    return np.maximum(cdist(X, Y, "sqeuclidean"), 0.0)


@primitive("pairwise_sq_dists")
def _pairwise_sq_dists_node(X: Node, Y: Node) -> Node:
    value = _sq_dists(X.value, Y.value)

    def rule(g):
        grad_x = 2.0 * (X.value * g.sum(axis=1, keepdims=True) - g @ Y.value)
        grad_y = 2.0 * (Y.value * g.sum(axis=0)[:, None] - g.T @ X.value)
        return grad_x, grad_y

    return _make("pairwise_sq_dists", value, (X, Y), rule)


def logsumexp_rows(M):
    """
    Row-wise log-sum-exp with max shifting.

    Args:
        M: Nonempty matrix (array or Node)

    Returns:
        Vector of length rows for arrays; an n x 1 Node for Nodes

    Raises:
        ShapeError: If M is empty
    """
    if isinstance(M, Node):
        return _logsumexp_rows_node(M)
    M = as_matrix(M)
    if M.size == 0:
        raise ShapeError("logsumexp_rows needs a nonempty matrix")
    return logsumexp(M, axis=1)


@primitive("logsumexp_rows")
def _logsumexp_rows_node(M: Node) -> Node:
    if M.value.size == 0:
        raise ShapeError("logsumexp_rows needs a nonempty matrix")
    value = logsumexp(M.value, axis=1, keepdims=True)

    def rule(g):
        return (g * np.exp(M.value - value),)

    return _make("logsumexp_rows", value, (M,), rule)


@primitive("softmin_rows")
def softmin_rows(C, h, eps: float) -> Node:
    """
    Soft-minimum of each row of C shifted by a column potential.

    out_i = -eps * log sum_j exp(h_j - C_ij / eps)

    Args:
        C: n x m cost matrix
        h: m x 1 column (log-weights plus scaled dual potential)
        eps: Temperature, > 0

    Returns:
        n x 1 Node
    """
    C, h = _lift(C), _lift(h)
    if h.shape != (C.shape[1], 1):
        raise ShapeError(f"softmin_rows: potential shape {h.shape} does not match cost {C.shape}")
    logits = h.value.T - C.value / eps
    value = -eps * logsumexp(logits, axis=1, keepdims=True)
    C_value, h_value = C.value, h.value

    def rule(g):
        weights = np.exp((h_value.T - C_value / eps) + value / eps)
        return g * weights, -eps * (weights.T @ g)

    return _make("softmin_rows", value, (C, h), rule)


def _topological_order(root: Node) -> List[Node]:
    """Parents-before-children order of every node reachable from root."""
    order: List[Node] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root: Node) -> Dict[Node, np.ndarray]:
    """
    Reverse-mode pass from a scalar root.

    Gradients left over from a previous pass on the same graph are cleared
    first, so repeated calls give identical results.

    Args:
        root: 1x1 node

    Returns:
        Mapping from every reached node that requires a gradient to d(root)/d(node)

    Raises:
        ContractError: If root is not 1x1
    """
    if root.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 root, got shape {root.shape}")

    order = _topological_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones((1, 1))

    for node in reversed(order):
        if node.grad is None or node.backward_rule is None:
            continue
        for parent, grad in zip(node.parents, node.backward_rule(node.grad)):
            if grad is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(grad, dtype=np.float64)
            else:
                parent.grad += grad

    return {node: node.grad for node in order if node.requires_grad and node.grad is not None}


def _evaluate(f: Callable[[Node], Node], x: np.ndarray) -> float:
    out = f(constant(x))
    value = _lift(out).item()
    if not np.isfinite(value):
        raise EvaluationError(f"grad_check: function returned non-finite value {value}")
    return value


def grad_check(f: Callable[[Node], Node], x: ArrayLike, h: float = 1e-5) -> float:
    """
    Compare the autodiff gradient of f at x with central differences.

    Args:
        f: Builds a scalar Node from a matrix Node
        x: Point of evaluation
        h: Finite-difference step

    Returns:
        max over entries of |analytic - numeric| / max(1, |analytic|)

    Raises:
        EvaluationError: If f is not finite at x or at a shifted point
    """
    x = as_matrix(x)
    point = parameter(x.copy())
    out = _lift(f(point))
    if not np.isfinite(out.item()):
        raise EvaluationError(f"grad_check: function returned non-finite value {out.item()}")
    backward(out)
    analytic = point.gradient

    worst = 0.0
    for idx in np.ndindex(*x.shape):
        shifted = x.copy()
        shifted[idx] = x[idx] + h
        f_plus = _evaluate(f, shifted)
        shifted[idx] = x[idx] - h
        f_minus = _evaluate(f, shifted)
        numeric = (f_plus - f_minus) / (2.0 * h)
        error = abs(analytic[idx] - numeric) / max(1.0, abs(analytic[idx]))
        worst = max(worst, error)

    logger.debug("grad_check on shape %s: max relative error %.3e", x.shape, worst)
    return worst
