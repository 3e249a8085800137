"""
Module 3: Trainer

End-to-end training of the incomplete-data clustering model:

1. fill missing entries (mean, zero or kNN)
2. pretrain the autoencoder on the Sinkhorn reconstruction loss alone
3. initialize centroids with k-means on the embeddings
4. fine-tune encoder, decoder and centroids jointly with Adam, stopping when
   the fraction of changed hard assignments between epochs drops below delta
5. impute missing entries from the final reconstruction

Also provides the k-means routine used for initialization and by the
fill-then-cluster baselines.

INPUT STRUCTURE:
{
    'ds': MaskedDataset,            # Observed data, mask, optional labels
    'config': TrainConfig,          # Hyperparameters (see ddic_ot.config)
    'progress': TextIO | None,      # Optional JSON-lines progress stream
}

OUTPUT STRUCTURE:
FitResult(
    labels=np.ndarray,              # Shape (n,), values in [0, k)
    model=ModelParams,              # Trained parameters
    imputed=np.ndarray,             # Shape (n, d); observed entries verbatim
    filled=np.ndarray,              # Network input (initial fill)
    observed=MaskedDataset,
    initial_labels=np.ndarray,      # k-means labels after pretraining
    epochs_run=int,
    stopped_by=StopReason,          # 'delta' or 'max_iter'
    loss_history=pd.DataFrame,      # Columns: epoch, loss_s, loss_c, loss,
                                    #          label_change[, acc, nmi, purity]
    pretrain_history=pd.DataFrame,  # Columns: epoch, loss_s
)
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, TextIO, Tuple

import numpy as np
import pandas as pd

from ddic_ot.config import LossMode, TrainConfig
from ddic_ot.exceptions import ContractError, ShapeError, TrainingError
from ddic_ot.modules.evaluation import acc, nmi, purity
from ddic_ot.modules.incomplete import MaskedDataset, fill_missing, impute_from_reconstruction
from ddic_ot.modules.model import (
    CENTROIDS,
    ModelParams,
    encode,
    hard_assign,
    init_params,
    reconstruct,
    soft_assign,
    total_loss,
)
from ddic_ot.numerics.tensor import as_matrix, backward, pairwise_sq_dists

logger = logging.getLogger(__name__)


class StopReason(Enum):
    DELTA = "delta"
    MAX_ITER = "max_iter"


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def _kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new center drawn with probability proportional to D^2."""
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    closest = pairwise_sq_dists(X, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            index = rng.choice(n, p=closest / total)
        else:
            index = rng.integers(n)
        centers.append(X[index])
        closest = np.minimum(closest, pairwise_sq_dists(X, X[index][None, :])[:, 0])
    return np.array(centers)


def _lloyd(X: np.ndarray, centroids: np.ndarray, max_iters: int) -> Tuple[np.ndarray, np.ndarray, float, int]:
    """Lloyd iterations until assignments stop changing; returns labels, centroids, WCSS, repairs."""
    n, k = X.shape[0], centroids.shape[0]
    labels = None
    repairs = 0
    for _ in range(max_iters):
        distances = pairwise_sq_dists(X, centroids)
        new_labels = np.argmin(distances, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels

        closest = distances[np.arange(n), labels].copy()
        updated = np.empty_like(centroids)
        for j in range(k):
            members = labels == j
            if members.any():
                updated[j] = X[members].mean(axis=0)
            else:
                # Empty cluster: re-seed from the point farthest from its center
                farthest = int(np.argmax(closest))
                updated[j] = X[farthest]
                closest[farthest] = 0.0
                repairs += 1
        centroids = updated

    distances = pairwise_sq_dists(X, centroids)
    labels = np.argmin(distances, axis=1)
    wcss = float(distances[np.arange(n), labels].sum())
    return labels.astype(np.int64), centroids, wcss, repairs


def kmeans(
    X,
    k: int,
    seed: int,
    max_iters: int = 300,
    restarts: int = 10
) -> Tuple[np.ndarray, np.ndarray]:
    """
    k-means with k-means++ seeding, keeping the restart with the lowest
    within-cluster sum of squares.

    Args:
        X: n x d data
        k: Number of clusters, 1 <= k <= n
        seed: Seed of the restarts
        max_iters: Lloyd iterations per restart
        restarts: Number of independent seedings

    Returns:
        (labels of length n, k x d centroids)

    Example:
        >>> labels, centers = kmeans([[0.0], [0.1], [10.0], [10.1]], k=2, seed=0)
        >>> len(set(labels[:2])), len(set(labels))
        (1, 2)
    """
    X = as_matrix(X)
    n = X.shape[0]
    if k < 1 or k > n:
        raise ContractError(f"kmeans needs 1 <= k <= n, got k={k} with n={n}")
    if restarts < 1 or max_iters < 1:
        raise ContractError("kmeans needs at least one restart and one iteration")

    rng = np.random.default_rng(seed)
    best: Optional[Tuple[np.ndarray, np.ndarray, float]] = None
    total_repairs = 0
    for _ in range(restarts):
        labels, centroids, wcss, repairs = _lloyd(X, _kmeans_plusplus(X, k, rng), max_iters)
        total_repairs += repairs
        if best is None or wcss < best[2]:
            best = (labels, centroids, wcss)
    if total_repairs:
        logger.warning("kmeans: re-seeded %d empty cluster(s) across %d restarts", total_repairs, restarts)
    return best[0], best[1]


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First and second moment estimates plus the step counter."""
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    lr: float
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One bias-corrected Adam update of every tensor named in `grads`.

    Inputs are not modified; updated tensors and a new state are returned.

    Args:
        params: Current tensors
        grads: Gradients, same names and shapes
        state: Optimizer state
        lr: Learning rate

    Returns:
        (updated tensors, new state)
    """
    step = state.step + 1
    m = dict(state.m)
    v = dict(state.v)
    updated = dict(params)
    for name, grad in grads.items():
        value = params[name]
        if grad.shape != value.shape:
            raise ShapeError(f"adam_step: gradient for {name} has shape {grad.shape}, expected {value.shape}")
        m[name] = state.beta1 * m.get(name, np.zeros_like(value)) + (1 - state.beta1) * grad
        v[name] = state.beta2 * v.get(name, np.zeros_like(value)) + (1 - state.beta2) * grad ** 2
        m_hat = m[name] / (1 - state.beta1 ** step)
        v_hat = v[name] / (1 - state.beta2 ** step)
        updated[name] = value - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(step, m, v, state.beta1, state.beta2, state.epsilon)
    return updated, new_state


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

class MinibatchSlicer:
    """
    Seeded shuffled minibatches over n rows; the last short batch is kept.

    Example:
        >>> [len(batch) for batch in MinibatchSlicer(5, 2, seed=0).epoch()]
        [2, 2, 1]
    """

    def __init__(self, n: int, batch_size: int, seed: int):
        if batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        self.n = n
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)

    def epoch(self) -> Iterator[np.ndarray]:
        order = self.rng.permutation(self.n)
        for start in range(0, self.n, self.batch_size):
            yield order[start:start + self.batch_size]


def _spawn_seeds(seed: int, count: int) -> List[int]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint32)[0]) for child in children]


def _json_value(value):
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


@dataclass
class FitResult:
    labels: np.ndarray
    model: ModelParams
    imputed: np.ndarray
    filled: np.ndarray
    observed: MaskedDataset
    initial_labels: np.ndarray
    epochs_run: int
    stopped_by: StopReason
    loss_history: pd.DataFrame
    pretrain_history: pd.DataFrame


class DDICOTTrainer:
    """
    Runs pretraining, centroid initialization and joint fine-tuning.

    Example:
        >>> trainer = DDICOTTrainer(TrainConfig(cluster_count=3, hidden_dims=(32,), embedding_dim=3))
        >>> result = trainer.fit(masked_dataset)
        >>> result.labels[:5]
    """

    def __init__(self, config: TrainConfig, progress: Optional[TextIO] = None):
        """
        Initialize the trainer.

        Args:
            config: Training hyperparameters
            progress: Text stream receiving one JSON record per epoch
        """
        self.config = config
        self.progress = progress

    def _emit(self, record: Dict) -> None:
        if self.progress is None:
            return
        self.progress.write(json.dumps({key: _json_value(value) for key, value in record.items()}) + "\n")
        self.progress.flush()

    def _run_epoch(
        self,
        params: ModelParams,
        X: np.ndarray,
        names: List[str],
        state: AdamState,
        slicer: MinibatchSlicer,
        phase: str,
        epoch: int,
        loss_mode: LossMode,
        include_clustering: bool
    ) -> Tuple[ModelParams, AdamState, Tuple[float, float, float]]:
        config = self.config
        totals = np.zeros(3)
        batches = 0
        for batch_index, rows in enumerate(slicer.epoch()):
            terms = total_loss(
                params,
                X[rows],
                eps=config.eps,
                gamma=config.gamma,
                loss_mode=loss_mode,
                unroll_iters=config.sinkhorn_unroll,
                tol=config.sinkhorn_tol,
                trainable=names,
                include_clustering=include_clustering,
            )
            loss = terms.total.item()
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss}", phase, epoch, batch_index)

            backward(terms.total)
            grads = {name: terms.parameters[name].gradient for name in names}
            current = {name: params.tensors[name] for name in names}
            updated, state = adam_step(current, grads, state, config.lr)
            if not all(np.all(np.isfinite(tensor)) for tensor in updated.values()):
                raise TrainingError("parameters became non-finite", phase, epoch, batch_index)
            params = params.with_tensors(updated)

            totals += (terms.reconstruction, terms.clustering, loss)
            batches += 1
        means = totals / max(batches, 1)
        return params, state, (float(means[0]), float(means[1]), float(means[2]))

    def pretrain(self, params: ModelParams, X_filled, seed: int) -> Tuple[ModelParams, pd.DataFrame]:
        """
        Train encoder and decoder on the reconstruction loss alone.

        Args:
            params: Initial parameters (centroids are left untouched)
            X_filled: Fully finite n x d input
            seed: Shuffling seed

        Returns:
            (pretrained parameters, per-epoch history with columns epoch, loss_s)
        """
        X = as_matrix(X_filled)
        if not np.all(np.isfinite(X)):
            raise ContractError("pretrain needs a fully finite input matrix")
        slicer = MinibatchSlicer(X.shape[0], self.config.batch_size, seed)
        names = params.network_names
        state = AdamState()
        rows = []
        for epoch in range(self.config.pretrain_epochs):
            params, state, (loss_s, _, _) = self._run_epoch(
                params, X, names, state, slicer, "pretrain", epoch, LossMode.RECONSTRUCTION, False
            )
            rows.append({"epoch": epoch, "loss_s": loss_s})
            self._emit({"phase": "pretrain", "epoch": epoch, "loss_s": loss_s, "loss_c": None, "loss": loss_s})
            logger.debug("pretrain epoch %d: L_s=%.6f", epoch, loss_s)
        return params, pd.DataFrame(rows, columns=["epoch", "loss_s"])

    def init_centroids(self, params: ModelParams, X_filled, seed: int) -> Tuple[ModelParams, np.ndarray]:
        """
        Place centroids with k-means on the embeddings.

        Returns:
            (parameters with the new centroids, k-means labels)
        """
        Z = encode(params, X_filled)
        labels, centroids = kmeans(
            Z,
            params.arch.cluster_count,
            seed,
            max_iters=self.config.kmeans_max_iters,
            restarts=self.config.kmeans_restarts,
        )
        return params.with_tensors({CENTROIDS: centroids}), labels

    def fit(self, ds: MaskedDataset) -> FitResult:
        """
        Train on an incomplete dataset and return cluster labels and imputations.

        Args:
            ds: Masked dataset (labels, if present, are used only for the
                per-epoch metric history)

        Returns:
            FitResult
        """
        config = self.config
        n, d = ds.observed.shape
        if n == 0:
            raise ContractError("fit needs a nonempty dataset")
        if config.cluster_count > n:
            raise ContractError(f"cluster_count {config.cluster_count} exceeds the {n} samples")

        init_seed, pretrain_seed, kmeans_seed, finetune_seed = _spawn_seeds(config.seed, 4)
        X = fill_missing(ds, config.fill, config.knn_k)

        params = init_params(config.architecture(d), init_seed)
        params, pretrain_history = self.pretrain(params, X, pretrain_seed)
        params, initial_labels = self.init_centroids(params, X, kmeans_seed)
        logger.info("Pretrained %d epochs; centroids initialized for k=%d", config.pretrain_epochs, config.cluster_count)

        slicer = MinibatchSlicer(n, config.batch_size, finetune_seed)
        names = list(params.tensors)
        state = AdamState()
        labels = initial_labels
        history = []
        stopped_by = StopReason.MAX_ITER
        epochs_run = 0

        for epoch in range(config.max_iter):
            params, state, (loss_s, loss_c, loss) = self._run_epoch(
                params, X, names, state, slicer, "finetune", epoch, config.loss_mode, True
            )
            P = soft_assign(encode(params, X), params.centroids)
            new_labels = hard_assign(P)
            change = float(np.mean(new_labels != labels))
            labels = new_labels
            epochs_run = epoch + 1

            record = {
                "epoch": epoch,
                "loss_s": loss_s,
                "loss_c": loss_c,
                "loss": loss,
                "label_change": change,
            }
            if ds.labels is not None:
                record.update(
                    acc=acc(ds.labels, labels),
                    nmi=nmi(ds.labels, labels),
                    purity=purity(ds.labels, labels),
                )
            history.append(record)
            self._emit({"phase": "finetune", **record})
            logger.info("finetune epoch %d: L=%.6f L_s=%.6f L_c=%.6f change=%.4f",
                        epoch, loss, loss_s, loss_c, change)

            if change < config.delta:
                stopped_by = StopReason.DELTA
                break

        columns = ["epoch", "loss_s", "loss_c", "loss", "label_change"]
        if ds.labels is not None:
            columns += ["acc", "nmi", "purity"]
        imputed = impute_from_reconstruction(ds, reconstruct(params, X))
        return FitResult(
            labels=labels,
            model=params,
            imputed=imputed,
            filled=X,
            observed=ds,
            initial_labels=initial_labels,
            epochs_run=epochs_run,
            stopped_by=stopped_by,
            loss_history=pd.DataFrame(history, columns=columns),
            pretrain_history=pretrain_history,
        )


# Convenience functions

def pretrain(params: ModelParams, X_filled, config: TrainConfig) -> ModelParams:
    """Pretrain with a trainer built from `config`, shuffling with config.seed."""
    pretrained, _ = DDICOTTrainer(config).pretrain(params, X_filled, config.seed)
    return pretrained


def init_centroids(params: ModelParams, X_filled, k: int, seed: int) -> np.ndarray:
    """k x embedding_dim centroids from k-means on the embeddings of X_filled."""
    _, centroids = kmeans(encode(params, X_filled), k, seed)
    return centroids


def fit(ds: MaskedDataset, config: TrainConfig, progress: Optional[TextIO] = None) -> FitResult:
    """
    Train with default trainer settings.

    Example:
        >>> result = fit(masked_dataset, TrainConfig(cluster_count=3))
        >>> result.stopped_by
    """
    return DDICOTTrainer(config, progress).fit(ds)
