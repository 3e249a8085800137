"""
Entropic Optimal Transport and the Debiased Sinkhorn Divergence

All solvers iterate on dual potentials in the log domain:

    f_i = -eps * log sum_j b_j exp((g_j - C_ij) / eps)
    g_j = -eps * log sum_i a_i exp((f_i - C_ij) / eps)

and rebuild the plan as F_ij = a_i b_j exp((f_i + g_j - C_ij) / eps). The
reported value is the primal objective <F, C> + eps * sum F log F, i.e. the
transport cost minus eps times the entropy of the plan.

With uniform weights the divergence

    S(X, Y) = OT(X, Y) - (OT(X, X) + OT(Y, Y)) / 2

is nonnegative, symmetric and zero at X == Y. Two flavours are provided:
sinkhorn_divergence works on plain arrays (evaluation), sinkhorn_loss_node
unrolls the iterations inside the autodiff graph (training).
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from ..exceptions import ContractError, ShapeError
from .tensor import Node, add, as_matrix, constant, exp, pairwise_sq_dists, softmin_rows, sum_all, transpose

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 1000
DEFAULT_UNROLL_ITERS = 200
DEFAULT_TOL = 1e-6
SIMPLEX_TOL = 1e-12


def _check_simplex(weights: np.ndarray, name: str) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.size == 0:
        raise ShapeError(f"{name}: weight vector is empty")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ContractError(f"{name}: weights must be finite and nonnegative")
    if abs(weights.sum() - 1.0) > SIMPLEX_TOL:
        raise ContractError(f"{name}: weights sum to {weights.sum():.15f}, expected 1")
    return weights


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise ContractError(f"eps must be positive, got {eps}")


@dataclass(frozen=True)
class DiscreteDistribution:
    """
    Weighted point cloud sum_i a_i delta_{x_i}.

    Attributes:
        support: n x d matrix of locations
        weights: Length-n vector on the probability simplex
    """
    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        support = as_matrix(self.support)
        weights = _check_simplex(self.weights, "DiscreteDistribution")
        if weights.size != support.shape[0]:
            raise ShapeError(
                f"DiscreteDistribution: {weights.size} weights for {support.shape[0]} points"
            )
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, support) -> "DiscreteDistribution":
        support = as_matrix(support)
        n = support.shape[0]
        if n == 0:
            raise ShapeError("DiscreteDistribution: empty support")
        return cls(support, np.full(n, 1.0 / n))


@dataclass(frozen=True)
class TransportPlan:
    """Coupling F with its target marginals a (rows) and b (columns)."""
    plan: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def marginal_violation(self) -> float:
        """Largest L1 deviation of the row or column sums from their targets."""
        rows = np.abs(self.plan.sum(axis=1) - self.row_marginal).sum()
        cols = np.abs(self.plan.sum(axis=0) - self.col_marginal).sum()
        return float(max(rows, cols))


@dataclass(frozen=True)
class SinkhornResult:
    value: float
    plan: TransportPlan
    dual_f: np.ndarray
    dual_g: np.ndarray
    iterations_used: int
    converged: bool


def _log_plan(log_a: np.ndarray, log_b: np.ndarray, f: np.ndarray, g: np.ndarray,
              C: np.ndarray, eps: float) -> np.ndarray:
    return log_a[:, None] + log_b[None, :] + (f[:, None] + g[None, :] - C) / eps


def _plan_objective(log_F: np.ndarray, C: np.ndarray, eps: float) -> float:
    F = np.exp(log_F)
    positive = F > 0
    entropy_term = np.sum(np.where(positive, F * np.where(positive, log_F, 0.0), 0.0))
    return float(np.sum(F * C) + eps * entropy_term)


def entropic_ot(
    a,
    b,
    C,
    eps: float,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL
) -> SinkhornResult:
    """
    Solve entropy-regularized optimal transport with log-domain Sinkhorn.

    Args:
        a: Row weights (length n, on the simplex)
        b: Column weights (length m, on the simplex)
        C: n x m nonnegative finite cost matrix
        eps: Entropic regularization, > 0
        max_iters: Maximum number of (f, g) update pairs
        tol: Convergence threshold on the L1 row-marginal violation
            (columns are exact after each g update)

    Returns:
        SinkhornResult with the primal value <F,C> + eps * sum F log F

    Raises:
        ContractError: Non-simplex weights, non-positive eps or an invalid cost
        ShapeError: If weight lengths do not match the cost matrix

    Example:
        >>> result = entropic_ot([1.0], [1.0], [[2.5]], eps=0.1)
        >>> round(result.value, 6)
        2.5
    """
    _check_eps(eps)
    a = _check_simplex(a, "entropic_ot(a)")
    b = _check_simplex(b, "entropic_ot(b)")
    C = as_matrix(C)
    if C.shape != (a.size, b.size):
        raise ShapeError(f"entropic_ot: cost shape {C.shape} does not match weights ({a.size}, {b.size})")
    if np.any(C < 0) or not np.all(np.isfinite(C)):
        raise ContractError("entropic_ot: cost matrix must be finite and nonnegative")

    with np.errstate(divide="ignore"):
        log_a = np.log(a)
        log_b = np.log(b)

    f = np.zeros(a.size)
    g = np.zeros(b.size)
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        f = -eps * logsumexp(log_b[None, :] + (g[None, :] - C) / eps, axis=1)
        g = -eps * logsumexp(log_a[:, None] + (f[:, None] - C) / eps, axis=0)
        row_sums = np.exp(_log_plan(log_a, log_b, f, g, C, eps)).sum(axis=1)
        if np.abs(row_sums - a).sum() < tol:
            converged = True
            break

    log_F = _log_plan(log_a, log_b, f, g, C, eps)
    plan = TransportPlan(np.exp(log_F), a, b)
    if not converged:
        logger.debug("entropic_ot: no convergence after %d iterations (violation %.3e)",
                     iterations, plan.marginal_violation())
    return SinkhornResult(
        value=_plan_objective(log_F, C, eps),
        plan=plan,
        dual_f=f,
        dual_g=g,
        iterations_used=iterations,
        converged=converged
    )


def _uniform_ot(X: np.ndarray, Y: np.ndarray, eps: float, max_iters: int, tol: float) -> SinkhornResult:
    n, m = X.shape[0], Y.shape[0]
    return entropic_ot(np.full(n, 1.0 / n), np.full(m, 1.0 / m),
                       pairwise_sq_dists(X, Y), eps, max_iters, tol)


def _check_clouds(X: np.ndarray, Y: np.ndarray, name: str) -> None:
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise ShapeError(f"{name}: point clouds must be nonempty")
    if X.shape[1] != Y.shape[1]:
        raise ShapeError(f"{name}: column counts differ ({X.shape[1]} vs {Y.shape[1]})")


def sinkhorn_divergence(
    X,
    Y,
    eps: float,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL
) -> float:
    """
    Debiased Sinkhorn divergence between two uniformly weighted point clouds.

    Args:
        X: n x d matrix
        Y: m x d matrix
        eps: Entropic regularization, > 0
        max_iters: Iteration cap for each of the three solves
        tol: Convergence threshold for each solve

    Returns:
        OT(X, Y) - (OT(X, X) + OT(Y, Y)) / 2 with squared Euclidean cost

    Example:
        >>> round(sinkhorn_divergence([[0.0, 0.0]], [[3.0, 4.0]], eps=0.01), 6)
        25.0
    """
    _check_eps(eps)
    X, Y = as_matrix(X), as_matrix(Y)
    _check_clouds(X, Y, "sinkhorn_divergence")

    # The cross solve always runs in the same argument order so that
    # S(X, Y) and S(Y, X) are bit-identical.
    if (Y.shape, Y.tobytes()) < (X.shape, X.tobytes()):
        first, second = Y, X
    else:
        first, second = X, Y

    cross = _uniform_ot(first, second, eps, max_iters, tol)
    self_x = _uniform_ot(X, X, eps, max_iters, tol)
    self_y = _uniform_ot(Y, Y, eps, max_iters, tol)
    if not (cross.converged and self_x.converged and self_y.converged):
        warnings.warn(
            f"sinkhorn_divergence: a Sinkhorn solve did not reach tol={tol} in {max_iters} iterations"
        )
    return cross.value - 0.5 * (self_x.value + self_y.value)


def _row_violation(log_a: np.ndarray, log_b: np.ndarray, f: np.ndarray, g: np.ndarray,
                   C: np.ndarray, eps: float) -> float:
    log_F = _log_plan(log_a.ravel(), log_b.ravel(), f.ravel(), g.ravel(), C, eps)
    return float(np.abs(np.exp(log_F).sum(axis=1) - np.exp(log_a.ravel())).sum())


def _unrolled_ot(
    C: Node,
    eps: float,
    unroll_iters: int,
    tol: Optional[float],
    check_every: int,
    symmetric: bool
) -> Tuple[Node, int]:
    """
    Unrolled log-domain Sinkhorn on a cost Node with uniform weights.

    Symmetric problems (a point cloud against itself) use the averaged update
    f <- (f + T(f)) / 2 on a single potential.
    """
    n, m = C.shape
    log_a = constant(np.full((n, 1), -np.log(n)))
    log_b = constant(np.full((m, 1), -np.log(m)))
    f = constant(np.zeros((n, 1)))
    g = f if symmetric else constant(np.zeros((m, 1)))
    C_t = None if symmetric else transpose(C)

    iterations = 0
    for iterations in range(1, unroll_iters + 1):
        if symmetric:
            f = (f + softmin_rows(C, log_a + f / eps, eps)) * 0.5
            g = f
        else:
            f = softmin_rows(C, log_b + g / eps, eps)
            g = softmin_rows(C_t, log_a + f / eps, eps)
        if tol is not None and iterations % check_every == 0:
            if _row_violation(log_a.value, log_b.value, f.value, g.value, C.value, eps) < tol:
                break

    log_F = add(add(log_a, transpose(log_b)), (add(f, transpose(g)) - C) / eps)
    F = exp(log_F)
    value = sum_all(F * C) + sum_all(F * log_F) * eps
    return value, iterations


def sinkhorn_loss_node(
    X: Node,
    Y: Node,
    eps: float,
    unroll_iters: int = DEFAULT_UNROLL_ITERS,
    tol: Optional[float] = None,
    check_every: int = 10
) -> Node:
    """
    Sinkhorn divergence as a differentiable 1x1 Node.

    Gradients flow through every unrolled iteration of the three solves.

    Args:
        X: n x d Node (typically the input batch)
        Y: m x d Node (typically the reconstruction)
        eps: Entropic regularization, > 0
        unroll_iters: Maximum number of unrolled iterations per solve
        tol: If given, stop unrolling once the row-marginal violation drops
            below tol (checked every `check_every` iterations); None unrolls
            all iterations
        check_every: Spacing of convergence checks

    Returns:
        1x1 Node holding OT(X, Y) - (OT(X, X) + OT(Y, Y)) / 2
    """
    _check_eps(eps)
    if unroll_iters < 1:
        raise ContractError(f"unroll_iters must be at least 1, got {unroll_iters}")
    if check_every < 1:
        raise ContractError(f"check_every must be at least 1, got {check_every}")
    X = X if isinstance(X, Node) else constant(X)
    Y = Y if isinstance(Y, Node) else constant(Y)
    _check_clouds(X.value, Y.value, "sinkhorn_loss_node")

    cross, used_xy = _unrolled_ot(pairwise_sq_dists(X, Y), eps, unroll_iters, tol, check_every, False)
    self_x, used_xx = _unrolled_ot(pairwise_sq_dists(X, X), eps, unroll_iters, tol, check_every, True)
    self_y, used_yy = _unrolled_ot(pairwise_sq_dists(Y, Y), eps, unroll_iters, tol, check_every, True)
    logger.debug("sinkhorn_loss_node iterations: cross=%d, self_x=%d, self_y=%d",
                 used_xy, used_xx, used_yy)
    return cross - (self_x + self_y) * 0.5
