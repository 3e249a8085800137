"""
Unit Tests for Module 2: Clustering Model

Tests cover:
- Parameter naming, shapes and initialization
- Encoder / decoder forward passes
- Soft assignment, target distribution, KL loss and hard assignment
- The joint objective: loss modes, zero-loss fixed point, gradients
- Checkpoint save / load
"""

import pytest
import numpy as np
import sys
import os

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from ddic_ot.config import ArchitectureSpec, LossMode
from ddic_ot.exceptions import ContractError, FormatError, ShapeError
from ddic_ot.modules import model
from ddic_ot.numerics.tensor import backward


# Helper functions
def create_small_model(seed=0):
    """d=6, hidden [8], embedding 2, k=2 with random centroids."""
    arch = ArchitectureSpec(input_dim=6, hidden_dims=(8,), embedding_dim=2, cluster_count=2)
    params = model.init_params(arch, seed)
    rng = np.random.default_rng(seed + 1)
    return params.with_tensors({model.CENTROIDS: rng.normal(size=(2, 2))})


def create_identity_model(d=3):
    """Linear autoencoder with identity weights (encoder and decoder), one centroid."""
    arch = ArchitectureSpec(input_dim=d, hidden_dims=(), embedding_dim=d, cluster_count=1)
    params = model.init_params(arch, 0)
    return params.with_tensors({
        "encoder.0.weight": np.eye(d),
        "decoder.0.weight": np.eye(d),
    })


def loss_value(params, X, target, **kwargs):
    return model.total_loss(params, X, target=target, **kwargs).total.item()


def max_gradient_error(params, X, h=1e-5, **kwargs):
    """
    Compare total_loss gradients for every tensor with central differences.

    The target distribution is frozen at the unperturbed parameters, matching
    the constant-Q treatment of the backward pass.
    """
    P = model.soft_assign(model.encode(params, X), params.centroids)
    target = model.target_dist(P)
    terms = model.total_loss(params, X, target=target, **kwargs)
    backward(terms.total)

    worst = 0.0
    for name, tensor in params.tensors.items():
        analytic = terms.parameters[name].gradient
        for idx in np.ndindex(*tensor.shape):
            shifted = tensor.copy()
            shifted[idx] += h
            f_plus = loss_value(params.with_tensors({name: shifted}), X, target, **kwargs)
            shifted[idx] -= 2 * h
            f_minus = loss_value(params.with_tensors({name: shifted}), X, target, **kwargs)
            numeric = (f_plus - f_minus) / (2 * h)
            worst = max(worst, abs(analytic[idx] - numeric) / max(1.0, abs(analytic[idx])))
    return worst


class TestParameters:
    """Test parameter layout and initialization."""

    def test_parameter_names_and_shapes(self):
        """Test encoder, decoder and centroid tensors for a two-layer encoder."""
        arch = ArchitectureSpec(input_dim=6, hidden_dims=(8,), embedding_dim=2, cluster_count=3)
        shapes = model.parameter_shapes(arch)
        assert shapes["encoder.0.weight"] == (6, 8)
        assert shapes["encoder.1.weight"] == (8, 2)
        assert shapes["decoder.0.weight"] == (2, 8)
        assert shapes["decoder.1.bias"] == (1, 6)
        assert shapes["centroids"] == (3, 2)
        assert len(shapes) == 9

    def test_glorot_bounds(self):
        """Test weights lie in the Glorot-uniform range and biases start at zero."""
        params = create_small_model()
        limit = np.sqrt(6.0 / (6 + 8))
        assert np.all(np.abs(params.tensors["encoder.0.weight"]) <= limit)
        assert np.all(params.tensors["encoder.0.bias"] == 0)

    def test_init_deterministic(self):
        """Test the same seed gives identical parameters."""
        arch = ArchitectureSpec(input_dim=4, hidden_dims=(5,), embedding_dim=2, cluster_count=2)
        a, b = model.init_params(arch, 3), model.init_params(arch, 3)
        for name in a.tensors:
            np.testing.assert_array_equal(a.tensors[name], b.tensors[name])

    def test_wrong_shape_rejected(self):
        """Test swapping in a tensor of the wrong shape fails."""
        params = create_small_model()
        with pytest.raises(ShapeError):
            params.with_tensors({model.CENTROIDS: np.zeros((3, 2))})

    def test_non_finite_rejected(self):
        """Test non-finite parameters are rejected."""
        params = create_small_model()
        with pytest.raises(ContractError):
            params.with_tensors({model.CENTROIDS: np.full((2, 2), np.nan)})

    def test_network_names_exclude_centroids(self):
        """Test network_names lists every tensor except the centroids."""
        params = create_small_model()
        assert model.CENTROIDS not in params.network_names
        assert len(params.network_names) == len(params.tensors) - 1


class TestForward:
    """Test encode, decode and reconstruct."""

    def test_shapes(self):
        """Test embedding and reconstruction shapes."""
        params = create_small_model()
        X = np.random.default_rng(0).normal(size=(5, 6))
        assert model.encode(params, X).shape == (5, 2)
        assert model.reconstruct(params, X).shape == (5, 6)

    def test_identity_model_reconstructs_exactly(self):
        """Test identity weights give X back."""
        params = create_identity_model()
        X = np.array([[1.0, -2.0, 3.0]])
        np.testing.assert_array_equal(model.reconstruct(params, X), X)

    def test_wrong_width(self):
        """Test inputs must have input_dim columns."""
        with pytest.raises(ShapeError):
            model.encode(create_small_model(), np.zeros((2, 5)))


class TestAssignments:
    """Test soft assignment, target distribution and KL loss."""

    def test_soft_assign_rows_sum_to_one(self):
        """Test every row of P is a distribution."""
        rng = np.random.default_rng(4)
        P = model.soft_assign(rng.normal(size=(20, 3)) * 5, rng.normal(size=(4, 3)))
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(P > 0)

    def test_soft_assign_example(self):
        """Test a point on the first of two unit-spaced centroids."""
        np.testing.assert_allclose(model.soft_assign([[0.0]], [[0.0], [1.0]]), [[2 / 3, 1 / 3]])

    def test_target_dist_hand_example(self):
        """Test q_ij = (p_ij^2 / f_j) / sum_j' (p_ij'^2 / f_j') on a 2x2 example."""
        P = np.array([[0.8, 0.2], [0.4, 0.6]])
        # f = (1.2, 0.8); row 1: (0.5333, 0.05) / 0.5833; row 2: (0.1333, 0.45) / 0.5833
        expected = np.array([[32 / 35, 3 / 35], [8 / 35, 27 / 35]])
        np.testing.assert_allclose(model.target_dist(P), expected, atol=1e-4)

    def test_target_dist_single_row(self):
        """Test Q == P for a single sample."""
        P = np.array([[0.7, 0.2, 0.1]])
        np.testing.assert_allclose(model.target_dist(P), P, atol=1e-12)

    def test_target_dist_uniform(self):
        """Test Q == P for uniform assignments."""
        P = np.full((5, 4), 0.25)
        np.testing.assert_allclose(model.target_dist(P), P, atol=1e-12)

    def test_target_dist_sharpens(self):
        """Test the dominant assignment of a confident row grows."""
        P = np.array([[0.9, 0.1], [0.5, 0.5], [0.3, 0.7]])
        Q = model.target_dist(P)
        assert Q[0, 0] > P[0, 0]
        np.testing.assert_allclose(Q.sum(axis=1), 1.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_kl_nonnegative(self, seed):
        """Test KL(target_dist(P) || P) >= 0."""
        rng = np.random.default_rng(seed)
        P = model.soft_assign(rng.normal(size=(15, 2)), rng.normal(size=(3, 2)))
        assert model.kl_loss(P, model.target_dist(P)) >= 0.0

    def test_kl_zero_for_identical(self):
        """Test KL(P || P) == 0."""
        P = np.array([[0.3, 0.7], [0.5, 0.5]])
        assert model.kl_loss(P, P) == pytest.approx(0.0, abs=1e-15)

    def test_kl_support_violation(self):
        """Test zero P mass under positive Q raises."""
        with pytest.raises(ContractError):
            model.kl_loss(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]]))

    def test_hard_assign_ties(self):
        """Test ties resolve to the lowest cluster index."""
        np.testing.assert_array_equal(model.hard_assign([[0.5, 0.5], [0.2, 0.8]]), [0, 1])


class TestTotalLoss:
    """Test the training objective."""

    def test_zero_at_perfect_reconstruction(self):
        """Test L == 0 for one sample, identity autoencoder and one centroid."""
        params = create_identity_model()
        terms = model.total_loss(params, np.array([[0.5, 1.0, -1.0]]), eps=0.01, gamma=100.0)
        assert terms.total.item() == pytest.approx(0.0, abs=1e-12)

    def test_zero_at_perfect_reconstruction_batch(self):
        """Test L == 0 and a vanishing gradient for a 16 x 4 batch reconstructed exactly."""
        params = create_identity_model(d=4)
        X = np.random.default_rng(12).normal(size=(16, 4))
        terms = model.total_loss(params, X, eps=0.01, gamma=100.0, unroll_iters=200)
        backward(terms.total)
        assert terms.reconstruction == pytest.approx(0.0, abs=1e-9)
        assert terms.total.item() == pytest.approx(0.0, abs=1e-9)
        for name in params.tensors:
            assert np.max(np.abs(terms.parameters[name].gradient)) < 1e-6

    def test_gradients_match_finite_differences(self):
        """Test every parameter gradient with gamma = 100."""
        params = create_small_model(seed=2)
        X = np.random.default_rng(5).normal(size=(5, 6))
        error = max_gradient_error(params, X, eps=0.5, gamma=100.0, unroll_iters=30)
        assert error < 1e-4

    def test_gradients_reconstruction_only(self):
        """Test reconstruction-only gradients leave the centroids untouched."""
        params = create_small_model(seed=3)
        X = np.random.default_rng(6).normal(size=(4, 6))
        terms = model.total_loss(params, X, eps=0.5, gamma=100.0, loss_mode=LossMode.RECONSTRUCTION,
                                 unroll_iters=20)
        backward(terms.total)
        assert np.all(terms.parameters[model.CENTROIDS].gradient == 0)
        assert np.isfinite(terms.clustering)

    def test_loss_modes(self):
        """Test joint = L_s + gamma * L_c and single-term modes."""
        params = create_small_model(seed=4)
        X = np.random.default_rng(7).normal(size=(6, 6))
        common = dict(eps=0.5, gamma=10.0, unroll_iters=20)
        joint = model.total_loss(params, X, loss_mode="joint", **common)
        assert joint.total.item() == pytest.approx(joint.reconstruction + 10.0 * joint.clustering, rel=1e-12)
        recon = model.total_loss(params, X, loss_mode="reconstruction", **common)
        assert recon.total.item() == pytest.approx(joint.reconstruction, rel=1e-12)
        clust = model.total_loss(params, X, loss_mode="clustering", **common)
        assert clust.total.item() == pytest.approx(joint.clustering, rel=1e-12)
        assert np.isnan(clust.reconstruction)

    def test_gamma_zero_is_reconstruction(self):
        """Test gamma = 0 reduces the joint loss to L_s."""
        params = create_small_model(seed=5)
        X = np.random.default_rng(8).normal(size=(4, 6))
        terms = model.total_loss(params, X, eps=0.5, gamma=0.0, unroll_iters=20)
        assert terms.total.item() == pytest.approx(terms.reconstruction, rel=1e-12)

    def test_pretraining_skips_clustering(self):
        """Test include_clustering=False reports NaN for L_c."""
        params = create_small_model()
        terms = model.total_loss(params, np.zeros((3, 6)), eps=0.5, gamma=1.0, unroll_iters=5,
                                 include_clustering=False)
        assert np.isnan(terms.clustering)

    def test_negative_gamma(self):
        """Test gamma must be non-negative."""
        with pytest.raises(ContractError):
            model.total_loss(create_small_model(), np.zeros((2, 6)), eps=0.5, gamma=-1.0)

    def test_trainable_subset(self):
        """Test frozen tensors receive no gradient."""
        params = create_small_model()
        X = np.random.default_rng(9).normal(size=(4, 6))
        terms = model.total_loss(params, X, eps=0.5, gamma=1.0, unroll_iters=10, trainable=[model.CENTROIDS])
        backward(terms.total)
        assert not terms.parameters["encoder.0.weight"].requires_grad
        assert np.any(terms.parameters[model.CENTROIDS].gradient != 0)


class TestCheckpoint:
    """Test checkpoint persistence."""

    def test_round_trip(self, tmp_path):
        """Test save then load reproduces every tensor and the architecture."""
        params = create_small_model()
        path = tmp_path / "model.npz"
        model.save_checkpoint(params, path)
        loaded = model.load_checkpoint(path)
        assert loaded.arch == params.arch
        for name, tensor in params.tensors.items():
            np.testing.assert_array_equal(loaded.tensors[name], tensor)

    def test_foreign_file(self, tmp_path):
        """Test a non-checkpoint file raises FormatError."""
        path = tmp_path / "other.npz"
        np.savez(path, data=np.zeros(3))
        with pytest.raises(FormatError):
            model.load_checkpoint(path)

    def test_garbage_file(self, tmp_path):
        """Test an unreadable file raises FormatError."""
        path = tmp_path / "garbage.npz"
        path.write_bytes(b"not a zip archive")
        with pytest.raises(FormatError):
            model.load_checkpoint(path)
