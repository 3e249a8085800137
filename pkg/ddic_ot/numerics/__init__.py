"""
Numerical Core

- tensor: a small reverse-mode automatic differentiation engine over 2-D
  float64 matrices (the primitives the clustering model needs, plus
  pairwise distances, row log-sum-exp and the Sinkhorn soft-min)
- sinkhorn: entropic optimal transport in the log domain, the debiased
  Sinkhorn divergence and its differentiable unrolled form
"""

from .tensor import Node, backward, constant, grad_check, parameter, pairwise_sq_dists
from .sinkhorn import (
    DiscreteDistribution,
    SinkhornResult,
    TransportPlan,
    entropic_ot,
    sinkhorn_divergence,
    sinkhorn_loss_node,
)

__all__ = [
    'Node',
    'backward',
    'constant',
    'grad_check',
    'parameter',
    'pairwise_sq_dists',
    'DiscreteDistribution',
    'SinkhornResult',
    'TransportPlan',
    'entropic_ot',
    'sinkhorn_divergence',
    'sinkhorn_loss_node',
]
