"""
Module 2: Clustering Model

MLP encoder, mirrored decoder and cluster centroids, together with the
Student-t soft assignment P, the sharpened target distribution Q, the KL
clustering loss and the joint objective

    L = L_s + gamma * L_c

where L_s is the Sinkhorn divergence between a batch and its reconstruction
and L_c = KL(Q || P) with Q held constant during backpropagation.

INPUT STRUCTURE:
{
    'arch': ArchitectureSpec,       # d, hidden widths, embedding width, k
    'seed': int,                    # Weight initialization seed
    'X_batch': np.ndarray,          # Filled batch, shape (b, d)
    'eps': float,                   # Sinkhorn regularization
    'gamma': float,                 # Clustering-loss weight
}

OUTPUT STRUCTURE:
ModelParams(
    arch=ArchitectureSpec,
    tensors={
        'encoder.{i}.weight': np.ndarray,   # Shape (fan_in, fan_out)
        'encoder.{i}.bias': np.ndarray,     # Shape (1, fan_out)
        'decoder.{i}.weight': np.ndarray,
        'decoder.{i}.bias': np.ndarray,
        'centroids': np.ndarray,            # Shape (k, embedding_dim)
    }
)
LossTerms(
    total=Node,                     # 1x1 graph root for backward()
    reconstruction=float,           # L_s (NaN when not computed)
    clustering=float,               # L_c (NaN when not computed)
    parameters=Dict[str, Node],     # Graph leaves, keyed like ModelParams.tensors
)
"""

import json
import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from ddic_ot.config import ArchitectureSpec, LossMode
from ddic_ot.exceptions import ContractError, FormatError, ShapeError
from ddic_ot.numerics.sinkhorn import DEFAULT_UNROLL_ITERS, sinkhorn_loss_node
from ddic_ot.numerics.tensor import (
    Node,
    as_matrix,
    constant,
    log,
    logsumexp_rows,
    pairwise_sq_dists,
    parameter,
    relu,
    sum_all,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ddic-ot-checkpoint/1"
CENTROIDS = "centroids"


def parameter_shapes(arch: ArchitectureSpec) -> "OrderedDict[str, Tuple[int, int]]":
    """Names and shapes of every parameter tensor, in a fixed order."""
    shapes: "OrderedDict[str, Tuple[int, int]]" = OrderedDict()
    for part, dims in (("encoder", arch.encoder_dims), ("decoder", arch.decoder_dims)):
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            shapes[f"{part}.{i}.weight"] = (fan_in, fan_out)
            shapes[f"{part}.{i}.bias"] = (1, fan_out)
    shapes[CENTROIDS] = (arch.cluster_count, arch.embedding_dim)
    return shapes


@dataclass
class ModelParams:
    """
    Trainable state: encoder and decoder layers plus the centroids.

    Attributes:
        arch (ArchitectureSpec): Network shape
        tensors (Dict[str, np.ndarray]): Parameter matrices keyed as in parameter_shapes
    """

    arch: ArchitectureSpec
    tensors: Dict[str, np.ndarray]

    def __post_init__(self):
        """Validate names, shapes and finiteness"""
        expected = parameter_shapes(self.arch)
        if set(self.tensors) != set(expected):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ShapeError(f"parameter names do not match architecture (missing {missing}, unexpected {extra})")
        ordered = OrderedDict()
        for name, shape in expected.items():
            tensor = as_matrix(self.tensors[name])
            if tensor.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {tensor.shape}")
            if not np.all(np.isfinite(tensor)):
                raise ContractError(f"{name}: parameters must be finite")
            ordered[name] = tensor
        self.tensors = ordered

    @property
    def centroids(self) -> np.ndarray:
        return self.tensors[CENTROIDS]

    @property
    def network_names(self) -> List[str]:
        """Encoder and decoder parameter names (everything except the centroids)."""
        return [name for name in self.tensors if name != CENTROIDS]

    def layers(self, part: str) -> List[Tuple[str, str]]:
        """(weight, bias) names of the 'encoder' or 'decoder' layers in order."""
        count = len(self.arch.encoder_dims) - 1
        return [(f"{part}.{i}.weight", f"{part}.{i}.bias") for i in range(count)]

    def with_tensors(self, tensors: Dict[str, np.ndarray]) -> "ModelParams":
        """Copy with some tensors swapped."""
        updated = dict(self.tensors)
        updated.update(tensors)
        return ModelParams(self.arch, updated)

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {name: t.copy() for name, t in self.tensors.items()})


def init_params(arch: ArchitectureSpec, seed: int) -> ModelParams:
    """
    Glorot-uniform weights, zero biases and zero centroids.

    Each weight matrix is drawn from U(-r, r) with r = sqrt(6 / (fan_in + fan_out)).
    Centroids are placeholders until init_centroids runs.
    """
    rng = np.random.default_rng(seed)
    tensors: Dict[str, np.ndarray] = {}
    for name, (rows, cols) in parameter_shapes(arch).items():
        if name.endswith(".weight"):
            limit = np.sqrt(6.0 / (rows + cols))
            tensors[name] = rng.uniform(-limit, limit, size=(rows, cols))
        else:
            tensors[name] = np.zeros((rows, cols))
    return ModelParams(arch, tensors)


def _mlp(h: Node, layers: Iterable[Tuple[Node, Node]]) -> Node:
    layers = list(layers)
    for index, (weight, bias) in enumerate(layers):
        h = h @ weight + bias
        if index < len(layers) - 1:
            h = relu(h)
    return h


def parameter_nodes(params: ModelParams, trainable: Optional[Iterable[str]] = None) -> Dict[str, Node]:
    """
    Graph leaves for every parameter tensor.

    Args:
        params: Model parameters
        trainable: Names that should receive gradients (default: all)
    """
    trainable = set(params.tensors if trainable is None else trainable)
    return {
        name: parameter(tensor) if name in trainable else constant(tensor)
        for name, tensor in params.tensors.items()
    }


def encode_node(params: ModelParams, nodes: Dict[str, Node], X: Node) -> Node:
    if X.shape[1] != params.arch.input_dim:
        raise ShapeError(f"encode: expected {params.arch.input_dim} columns, got {X.shape[1]}")
    return _mlp(X, ((nodes[w], nodes[b]) for w, b in params.layers("encoder")))


def decode_node(params: ModelParams, nodes: Dict[str, Node], Z: Node) -> Node:
    if Z.shape[1] != params.arch.embedding_dim:
        raise ShapeError(f"decode: expected {params.arch.embedding_dim} columns, got {Z.shape[1]}")
    return _mlp(Z, ((nodes[w], nodes[b]) for w, b in params.layers("decoder")))


def encode(params: ModelParams, X) -> np.ndarray:
    """
    Embed rows of X: ReLU hidden layers, linear embedding layer.

    Args:
        params: Model parameters
        X: n x d matrix

    Returns:
        n x embedding_dim matrix
    """
    return encode_node(params, parameter_nodes(params, ()), constant(X)).value


def decode(params: ModelParams, Z) -> np.ndarray:
    """Map embeddings back to feature space (mirror of encode)."""
    return decode_node(params, parameter_nodes(params, ()), constant(Z)).value


def reconstruct(params: ModelParams, X) -> np.ndarray:
    return decode(params, encode(params, X))


def soft_assign(Z, centroids) -> np.ndarray:
    """
    Student-t (one degree of freedom) soft assignment of embeddings to centroids.

    p_ij = (1 + |z_i - mu_j|^2)^-1 / sum_j' (1 + |z_i - mu_j'|^2)^-1

    Example:
        >>> soft_assign([[0.0]], [[0.0], [1.0]])
        array([[0.66666667, 0.33333333]])
    """
    Z, centroids = as_matrix(Z), as_matrix(centroids)
    if centroids.shape[0] == 0:
        raise ContractError("soft_assign needs at least one centroid")
    kernel = 1.0 / (1.0 + pairwise_sq_dists(Z, centroids))
    return kernel / kernel.sum(axis=1, keepdims=True)


def target_dist(P) -> np.ndarray:
    """
    Sharpened target q_ij proportional to p_ij^2 / f_j with f_j = sum_i p_ij.

    Columns with zero soft frequency get zero target mass.
    """
    P = as_matrix(P)
    frequency = P.sum(axis=0)
    weight = np.zeros_like(P)
    np.divide(P ** 2, frequency[None, :], out=weight, where=frequency[None, :] > 0)
    return weight / weight.sum(axis=1, keepdims=True)


def kl_loss(P, Q) -> float:
    """
    KL(Q || P) = sum_ij q_ij log(q_ij / p_ij), with 0 log(0 / p) = 0.

    Raises:
        ContractError: If some p_ij == 0 while q_ij > 0
    """
    P, Q = as_matrix(P), as_matrix(Q)
    if P.shape != Q.shape:
        raise ShapeError(f"kl_loss: shapes differ, {P.shape} vs {Q.shape}")
    support = Q > 0
    if np.any(support & (P <= 0)):
        raise ContractError("kl_loss: P has zero mass where Q is positive")
    ratio = np.ones_like(Q)
    np.divide(Q, P, out=ratio, where=support)
    return float(np.sum(np.where(support, Q * np.log(ratio), 0.0)))


def hard_assign(P) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest cluster index."""
    return np.argmax(as_matrix(P), axis=1).astype(np.int64)


@dataclass
class LossTerms:
    total: Node
    reconstruction: float
    clustering: float
    parameters: Dict[str, Node]


def _clustering_node(Z: Node, centroids: Node, target: Optional[np.ndarray] = None) -> Node:
    """KL(Q || P) as a graph node, with Q held constant (computed from P unless given)."""
    log_kernel = -log(pairwise_sq_dists(Z, centroids) + 1.0)
    log_p = log_kernel - logsumexp_rows(log_kernel)
    if target is None:
        Q = target_dist(np.exp(log_p.value))
    else:
        Q = as_matrix(target)
        if Q.shape != log_p.shape:
            raise ShapeError(f"target shape {Q.shape} does not match assignments {log_p.shape}")
    positive = Q > 0
    q_log_q = float(np.sum(Q[positive] * np.log(Q[positive])))
    return q_log_q - sum_all(constant(Q) * log_p)


def total_loss(
    params: ModelParams,
    X_batch,
    eps: float,
    gamma: float,
    loss_mode: Union[LossMode, str] = LossMode.JOINT,
    unroll_iters: int = DEFAULT_UNROLL_ITERS,
    tol: Optional[float] = None,
    trainable: Optional[Iterable[str]] = None,
    include_clustering: bool = True,
    target: Optional[np.ndarray] = None
) -> LossTerms:
    """
    Build the training objective for one batch.

    Args:
        params: Current parameters
        X_batch: Filled b x d batch (also the reconstruction target)
        eps: Sinkhorn regularization
        gamma: Clustering-loss weight, >= 0
        loss_mode: 'joint' (L_s + gamma L_c), 'reconstruction' (L_s) or 'clustering' (L_c)
        unroll_iters: Unrolled Sinkhorn iterations per solve
        tol: Early exit tolerance for the unrolled solves (None unrolls fully)
        trainable: Parameter names that receive gradients (default: all)
        include_clustering: Set False to skip L_c entirely (pretraining)
        target: Fixed b x k target distribution; by default Q is recomputed
            from the batch's soft assignments

    Returns:
        LossTerms with the 1x1 root in `total`
    """
    loss_mode = LossMode(loss_mode)
    if gamma < 0:
        raise ContractError(f"gamma must be non-negative, got {gamma}")
    if not include_clustering and loss_mode is LossMode.CLUSTERING:
        raise ContractError("clustering loss mode needs include_clustering=True")

    nodes = parameter_nodes(params, trainable)
    X = constant(X_batch)
    Z = encode_node(params, nodes, X)

    reconstruction = clustering = None
    if loss_mode is not LossMode.CLUSTERING:
        X_hat = decode_node(params, nodes, Z)
        reconstruction = sinkhorn_loss_node(X, X_hat, eps, unroll_iters, tol)
    if include_clustering:
        clustering = _clustering_node(Z, nodes[CENTROIDS], target)

    if loss_mode is LossMode.CLUSTERING:
        total = clustering
    elif loss_mode is LossMode.RECONSTRUCTION or clustering is None or gamma == 0:
        total = reconstruction
    else:
        total = reconstruction + clustering * gamma

    return LossTerms(
        total=total,
        reconstruction=reconstruction.item() if reconstruction is not None else float("nan"),
        clustering=clustering.item() if clustering is not None else float("nan"),
        parameters=nodes,
    )


def save_checkpoint(params: ModelParams, path: Union[str, Path]) -> None:
    """
    Write parameters to a NumPy .npz container.

    The archive holds a format tag, the architecture as JSON and every
    parameter matrix under its name.
    """
    with open(path, "wb") as handle:
        np.savez(
            handle,
            __format__=np.array(CHECKPOINT_FORMAT),
            __arch__=np.array(json.dumps(params.arch.to_dict())),
            **params.tensors,
        )
    logger.info("Saved checkpoint with %d tensors to %s", len(params.tensors), path)


def load_checkpoint(path: Union[str, Path]) -> ModelParams:
    """Read parameters written by save_checkpoint."""
    try:
        with np.load(path, allow_pickle=False) as archive:
            if "__format__" not in archive.files or str(archive["__format__"]) != CHECKPOINT_FORMAT:
                raise FormatError(f"{path}: not a checkpoint, expected format tag '{CHECKPOINT_FORMAT}'")
            arch = ArchitectureSpec(**json.loads(str(archive["__arch__"])))
            tensors = {name: archive[name] for name in parameter_shapes(arch) if name in archive.files}
    except (OSError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: unreadable checkpoint ({exc})")
    return ModelParams(arch, tensors)
