"""
Unit Tests for the Autodiff Engine

Tests cover:
- Matrix coercion and node construction
- Forward values of every primitive
- Gradients of every primitive against central differences
- Broadcasting, accumulation and repeated backward passes
- Error handling
"""

import pytest
import numpy as np
import sys
import os

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from ddic_ot.exceptions import ContractError, EvaluationError, ShapeError
from ddic_ot.numerics import tensor as T


SEEDS = range(10)


# Helper functions
def weighted_sum(node, weights):
    """Scalar sum(node * weights) so that every output entry gets a distinct weight."""
    return T.sum_all(T.mul(node, T.constant(weights)))


def random_weights(rng, shape):
    return rng.normal(size=shape)


class TestMatrixCoercion:
    """Test as_matrix and leaf construction."""

    def test_scalar_becomes_1x1(self):
        """Test a scalar is promoted to a 1x1 matrix."""
        assert T.as_matrix(2.5).shape == (1, 1)

    def test_vector_becomes_row(self):
        """Test a 1-D sequence is promoted to a single row."""
        m = T.as_matrix([1.0, 2.0, 3.0])
        assert m.shape == (1, 3)
        assert m.dtype == np.float64

    def test_three_dimensional_rejected(self):
        """Test arrays with more than two dimensions are rejected."""
        with pytest.raises(ShapeError):
            T.as_matrix(np.zeros((2, 2, 2)))

    def test_constant_and_parameter(self):
        """Test only parameters require gradients."""
        assert not T.constant([[1.0]]).requires_grad
        assert T.parameter([[1.0]]).requires_grad

    def test_constant_subgraph_keeps_no_parents(self):
        """Test nodes built from constants only do not retain the graph."""
        node = T.add(T.constant([[1.0]]), T.constant([[2.0]]))
        assert node.parents == ()
        assert not node.requires_grad

    def test_primitives_registered(self):
        """Test every graph-building primitive is in the registry."""
        for name in ("add", "sub", "mul", "scale", "matmul", "relu", "exp", "log", "sum_all",
                     "sum_rows", "sum_cols", "transpose", "pairwise_sq_dists", "logsumexp_rows",
                     "softmin_rows"):
            assert name in T.PRIMITIVES


class TestForwardValues:
    """Test forward computations."""

    def test_arithmetic_operators(self):
        """Test operator overloads match numpy."""
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[0.5, -1.0], [2.0, 0.0]])
        x, y = T.constant(a), T.constant(b)
        np.testing.assert_allclose((x + y).value, a + b)
        np.testing.assert_allclose((x - y).value, a - b)
        np.testing.assert_allclose((x * y).value, a * b)
        np.testing.assert_allclose((x @ y).value, a @ b)
        np.testing.assert_allclose((x * 3).value, a * 3)
        np.testing.assert_allclose((x / 2).value, a / 2)
        np.testing.assert_allclose((-x).value, -a)
        np.testing.assert_allclose(x.T.value, a.T)

    def test_broadcast_row_and_column(self):
        """Test row (1 x m) and column (n x 1) broadcasting."""
        a = np.arange(6.0).reshape(2, 3)
        row = np.array([[1.0, 2.0, 3.0]])
        col = np.array([[10.0], [20.0]])
        np.testing.assert_allclose(T.add(a, row).value, a + row)
        np.testing.assert_allclose(T.sub(a, col).value, a - col)

    def test_incompatible_broadcast(self):
        """Test mismatched shapes raise ShapeError."""
        with pytest.raises(ShapeError):
            T.add(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_matmul_inner_dimension(self):
        """Test matmul checks inner dimensions."""
        with pytest.raises(ShapeError):
            T.matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_reductions(self):
        """Test sum_all, sum_rows and sum_cols shapes and values."""
        a = np.arange(6.0).reshape(2, 3)
        assert T.sum_all(a).item() == 15.0
        np.testing.assert_allclose(T.sum_rows(a).value, [[3.0], [12.0]])
        np.testing.assert_allclose(T.sum_cols(a).value, [[3.0, 5.0, 7.0]])

    def test_relu_exp_log(self):
        """Test elementwise nonlinearities."""
        a = np.array([[-1.0, 0.0, 2.0]])
        np.testing.assert_allclose(T.relu(a).value, [[0.0, 0.0, 2.0]])
        np.testing.assert_allclose(T.exp(a).value, np.exp(a))
        np.testing.assert_allclose(T.log(np.array([[1.0, np.e]])).value, [[0.0, 1.0]])

    def test_log_of_nonpositive(self):
        """Test log rejects non-positive inputs."""
        with pytest.raises(ContractError):
            T.log(np.array([[1.0, 0.0]]))

    def test_item_requires_scalar(self):
        """Test item() only works on 1x1 nodes."""
        with pytest.raises(ShapeError):
            T.constant(np.zeros((2, 1))).item()

    def test_pairwise_sq_dists(self):
        """Test distances against a direct loop."""
        rng = np.random.default_rng(0)
        X, Y = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
        D = T.pairwise_sq_dists(X, Y)
        expected = np.array([[np.sum((x - y) ** 2) for y in Y] for x in X])
        np.testing.assert_allclose(D, expected, rtol=1e-12)

    def test_pairwise_self_diagonal_exact_zero(self):
        """Test X against itself has an exactly zero diagonal."""
        X = np.random.default_rng(1).normal(size=(6, 4)) * 1e3
        assert np.all(np.diag(T.pairwise_sq_dists(X, X)) == 0.0)
        assert np.all(T.pairwise_sq_dists(X, X) >= 0.0)

    def test_pairwise_column_mismatch(self):
        """Test differing feature counts are rejected."""
        with pytest.raises(ShapeError):
            T.pairwise_sq_dists(np.zeros((2, 3)), np.zeros((2, 4)))

    def test_pairwise_returns_node_for_node_input(self):
        """Test array inputs give arrays and Node inputs give Nodes."""
        X = np.zeros((2, 2))
        assert isinstance(T.pairwise_sq_dists(X, X), np.ndarray)
        assert isinstance(T.pairwise_sq_dists(T.parameter(X), X), T.Node)

    def test_logsumexp_large_values(self):
        """Test max shifting keeps large inputs finite."""
        M = np.array([[1000.0, 1000.0], [-1000.0, -1000.0]])
        np.testing.assert_allclose(T.logsumexp_rows(M), [1000.0 + np.log(2), -1000.0 + np.log(2)])

    def test_logsumexp_empty(self):
        """Test empty input is rejected."""
        with pytest.raises(ShapeError):
            T.logsumexp_rows(np.zeros((0, 3)))

    def test_softmin_rows_matches_definition(self):
        """Test softmin against its closed form."""
        rng = np.random.default_rng(2)
        C = rng.random((3, 4))
        h = rng.normal(size=(4, 1))
        eps = 0.3
        out = T.softmin_rows(C, h, eps).value
        expected = -eps * np.log(np.exp(h.T - C / eps).sum(axis=1, keepdims=True))
        np.testing.assert_allclose(out, expected, rtol=1e-12)

    def test_softmin_rows_shape_check(self):
        """Test the potential must be an m x 1 column."""
        with pytest.raises(ShapeError):
            T.softmin_rows(np.zeros((3, 4)), np.zeros((3, 1)), 0.1)


class TestPrimitiveGradients:
    """Test every primitive against central finite differences."""

    @pytest.mark.parametrize("seed", SEEDS)
    def test_binary_elementwise(self, seed):
        """Test add, sub and mul with broadcasting on both sides."""
        rng = np.random.default_rng(seed)
        other = rng.normal(size=(1, 4))
        w = random_weights(rng, (3, 4))
        x = rng.normal(size=(3, 4))
        assert T.grad_check(lambda v: weighted_sum(T.add(v, other), w), x) < 1e-4
        assert T.grad_check(lambda v: weighted_sum(T.sub(other, v), w), x) < 1e-4
        assert T.grad_check(lambda v: weighted_sum(T.mul(v, other), w), x) < 1e-4
        # broadcast operand as the differentiated input
        big = rng.normal(size=(3, 4))
        assert T.grad_check(lambda v: weighted_sum(T.mul(big, v), w), other) < 1e-4
        assert T.grad_check(lambda v: weighted_sum(T.add(big, v), w), rng.normal(size=(3, 1))) < 1e-4

    @pytest.mark.parametrize("seed", SEEDS)
    def test_scale_and_transpose(self, seed):
        """Test scale and transpose."""
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 3))
        w = random_weights(rng, (3, 2))
        assert T.grad_check(lambda v: weighted_sum(T.scale(v, -2.5).T, w), x) < 1e-4

    @pytest.mark.parametrize("seed", SEEDS)
    def test_matmul(self, seed):
        """Test matmul for both operands."""
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        w = random_weights(rng, (3, 2))
        assert T.grad_check(lambda v: weighted_sum(T.matmul(v, b), w), a) < 1e-4
        assert T.grad_check(lambda v: weighted_sum(T.matmul(a, v), w), b) < 1e-4

    @pytest.mark.parametrize("seed", SEEDS)
    def test_relu(self, seed):
        """Test relu away from the kink."""
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(3, 3))
        x[np.abs(x) < 0.1] = 0.5
        w = random_weights(rng, (3, 3))
        assert T.grad_check(lambda v: weighted_sum(T.relu(v), w), x) < 1e-4

    @pytest.mark.parametrize("seed", SEEDS)
    def test_exp_and_log(self, seed):
        """Test exp and log."""
        rng = np.random.default_rng(seed)
        w = random_weights(rng, (2, 3))
        assert T.grad_check(lambda v: weighted_sum(T.exp(v), w), rng.normal(size=(2, 3))) < 1e-4
        assert T.grad_check(lambda v: weighted_sum(T.log(v), w), rng.uniform(0.5, 2.0, size=(2, 3))) < 1e-4

    @pytest.mark.parametrize("seed", SEEDS)
    def test_reductions(self, seed):
        """Test sum_rows and sum_cols."""
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(3, 4))
        w_rows, w_cols = random_weights(rng, (3, 1)), random_weights(rng, (1, 4))
        assert T.grad_check(lambda v: weighted_sum(T.sum_rows(v), w_rows), x) < 1e-4
        assert T.grad_check(lambda v: weighted_sum(T.sum_cols(v), w_cols), x) < 1e-4

    @pytest.mark.parametrize("seed", SEEDS)
    def test_pairwise_sq_dists(self, seed):
        """Test distances for both point clouds."""
        rng = np.random.default_rng(seed)
        X, Y = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
        w = random_weights(rng, (4, 5))
        assert T.grad_check(lambda v: weighted_sum(T.pairwise_sq_dists(v, Y), w), X) < 1e-4
        assert T.grad_check(lambda v: weighted_sum(T.pairwise_sq_dists(X, v), w), Y) < 1e-4

    @pytest.mark.parametrize("seed", SEEDS)
    def test_logsumexp_rows(self, seed):
        """Test row log-sum-exp."""
        rng = np.random.default_rng(seed)
        w = random_weights(rng, (3, 1))
        assert T.grad_check(lambda v: weighted_sum(T.logsumexp_rows(v), w), rng.normal(size=(3, 5))) < 1e-4

    @pytest.mark.parametrize("seed", SEEDS)
    def test_softmin_rows(self, seed):
        """Test softmin for the cost and the potential."""
        rng = np.random.default_rng(seed)
        C, h = rng.random((3, 4)), rng.normal(size=(4, 1))
        w = random_weights(rng, (3, 1))
        assert T.grad_check(lambda v: weighted_sum(T.softmin_rows(v, h, 0.5), w), C) < 1e-4
        assert T.grad_check(lambda v: weighted_sum(T.softmin_rows(C, v, 0.5), w), h) < 1e-4


class TestBackward:
    """Test the reverse pass."""

    def test_shared_node_accumulates(self):
        """Test a node used twice receives the sum of both contributions."""
        x = T.parameter([[3.0]])
        T.backward(T.sum_all(x * x + x))
        np.testing.assert_allclose(x.gradient, [[7.0]])

    def test_repeated_backward_identical(self):
        """Test a second pass on the same graph does not double the gradients."""
        x = T.parameter([[1.0, 2.0]])
        root = T.sum_all(T.exp(x))
        first = T.backward(root)[x].copy()
        second = T.backward(root)[x]
        np.testing.assert_array_equal(first, second)

    def test_non_scalar_root(self):
        """Test a non-1x1 root is rejected."""
        with pytest.raises(ContractError):
            T.backward(T.parameter(np.zeros((2, 2))))

    def test_unreached_parameter_has_zero_gradient(self):
        """Test parameters outside the graph report zeros."""
        x, y = T.parameter([[1.0]]), T.parameter([[2.0, 3.0]])
        T.backward(T.sum_all(x * 2))
        np.testing.assert_array_equal(y.gradient, np.zeros((1, 2)))

    def test_constants_get_no_gradient(self):
        """Test constants are absent from the returned mapping."""
        x, c = T.parameter([[1.0]]), T.constant([[5.0]])
        grads = T.backward(T.sum_all(x * c))
        assert x in grads and c not in grads

    def test_deep_chain(self):
        """Test a long chain does not hit recursion limits."""
        x = T.parameter([[1.0]])
        node = x
        for _ in range(5000):
            node = node * 1.0
        T.backward(T.sum_all(node))
        np.testing.assert_allclose(x.gradient, [[1.0]])


class TestGradCheck:
    """Test the finite-difference checker itself."""

    def test_detects_wrong_gradient(self):
        """Test a primitive with a deliberately wrong rule is caught."""
        def bad_square(v):
            return T._make("bad", v.value ** 2, (v,), lambda g: (g * v.value,))
        assert T.grad_check(lambda v: T.sum_all(bad_square(v)), [[1.0, 2.0]]) > 0.1

    def test_non_finite_function(self):
        """Test a non-finite function value raises EvaluationError."""
        with pytest.raises(EvaluationError):
            T.grad_check(lambda v: T.sum_all(v * np.inf), [[1.0]])
