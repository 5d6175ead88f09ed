"""Tests for the reverse-mode autodiff."""

import numpy as np
import pytest

from wrflow.autodiff import (
    DetachAnchors,
    Graph,
    Tensor,
    add,
    anchored_detach,
    backward,
    check_gradients,
    concat,
    detach_surrogate,
    embedding,
    gelu,
    layer_norm,
    matmul,
    mul,
    partial_detach,
    reduce_sum,
    relative_error,
    scale,
    softmax,
    squared_error,
    stop_gradient,
    sub,
)
from wrflow.errors import ShapeError


class TestBackward:
    """Gradient accumulation and graph ordering."""

    def test_matmul_docstring_example(self):
        """Sum of w @ I has unit gradient everywhere."""
        w = Tensor.parameter([[1.0, 2.0], [3.0, 4.0]], name="w")
        grads = backward((w @ Tensor(np.eye(2))).sum())
        np.testing.assert_array_equal(grads[w], np.ones((2, 2)))

    def test_reused_input_accumulates(self):
        """x used twice gets both contributions."""
        x = Tensor.parameter([3.0])
        grads = backward((x * x).sum())
        np.testing.assert_allclose(grads[x], [6.0])

    def test_unreached_parameter_gets_zeros(self):
        """Parameters outside the graph report zero gradients."""
        x = Tensor.parameter([1.0, 2.0])
        y = Tensor.parameter([[5.0]])
        grads = backward(x.sum(), wrt=[x, y])
        np.testing.assert_array_equal(grads[y], np.zeros((1, 1)))

    def test_constant_loss(self):
        """A loss with no node gives zeros for every requested parameter."""
        x = Tensor.parameter([1.0, 2.0])
        grads = backward(Tensor(3.0), wrt=[x])
        np.testing.assert_array_equal(grads[x], [0.0, 0.0])

    def test_non_scalar_loss_rejected(self):
        """backward needs a one-element loss."""
        x = Tensor.parameter([1.0, 2.0])
        with pytest.raises(ShapeError):
            backward(x * 2.0)

    def test_graph_is_topological(self):
        """Trace order follows creation sequence."""
        x = Tensor.parameter([1.0])
        y = (x * 2.0) + x
        graph = Graph.trace(y.node)
        seqs = [n.seq for n in graph.nodes]
        assert seqs == sorted(seqs)
        assert graph.leaves() == [x]

    def test_broadcast_add_unbroadcasts(self):
        """A [1, d] row added to [n, d] collects gradients over rows."""
        row = Tensor.parameter(np.zeros((1, 3)))
        grid = Tensor(np.ones((4, 3)))
        grads = backward((grid + row).sum())
        np.testing.assert_array_equal(grads[row], np.full((1, 3), 4.0))

    def test_backward_repeat_is_bit_identical(self, rng):
        """Rebuilding the same graph gives byte-identical gradients."""
        x = Tensor.parameter(rng.uniform(-2.0, 2.0, (4, 5)), name="x")
        w = Tensor.parameter(rng.uniform(-2.0, 2.0, (5, 5)), name="w")

        def grads():
            h = layer_norm(gelu(x @ w))
            loss = squared_error(softmax(partial_detach(h, 0.1) @ w) + h, np.zeros((4, 5)))
            return backward(loss, wrt=[x, w])

        first, second = grads(), grads()
        assert first[x].tobytes() == second[x].tobytes()
        assert first[w].tobytes() == second[w].tobytes()


class TestGradientControl:
    """stop_gradient and partial_detach."""

    def test_stop_gradient_blocks(self):
        """Nothing flows through a stopped edge."""
        x = Tensor.parameter([2.0])
        grads = backward((stop_gradient(x) * x).sum(), wrt=[x])
        np.testing.assert_allclose(grads[x], [2.0])

    @pytest.mark.parametrize("alpha", [0.0, 0.1, 0.5, 1.0])
    def test_partial_detach_scales_backward(self, alpha):
        """Backward is multiplied by exactly 1 - alpha."""
        x = Tensor.parameter([1.5, -2.0])
        grads = backward((partial_detach(x, alpha) * 3.0).sum(), wrt=[x])
        np.testing.assert_array_equal(grads[x], np.full(2, 3.0 * (1.0 - alpha)))

    @pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0])
    def test_partial_detach_forward_identity(self, alpha):
        """Forward value is bit-identical to the input."""
        x = Tensor.parameter(np.random.default_rng(0).standard_normal((3, 4)))
        out = partial_detach(x, alpha)
        assert np.array_equal(out.data, x.data)

    @pytest.mark.parametrize("alpha", [-0.1, 1.1])
    def test_partial_detach_range(self, alpha):
        """alpha outside [0, 1] is rejected."""
        with pytest.raises(ValueError):
            partial_detach(Tensor.parameter([1.0]), alpha)


class TestDetachSurrogate:
    """Finite-difference oracle for losses with partially detached edges."""

    def test_replay_holds_detached_share(self):
        """After recording, an edge evaluates to alpha * reference + (1 - alpha) * x."""
        x = Tensor.parameter([1.0, -2.0])
        anchors = DetachAnchors()
        with anchored_detach(anchors):
            recorded = partial_detach(x, 0.25)
        np.testing.assert_array_equal(recorded.data, [1.0, -2.0])

        x.data = np.array([3.0, 2.0])
        with anchored_detach(anchors):
            replayed = partial_detach(x, 0.25)
        np.testing.assert_allclose(replayed.data, 0.25 * np.array([1.0, -2.0]) + 0.75 * np.array([3.0, 2.0]))

    def test_outside_block_is_plain(self):
        """Recorded anchors only apply inside anchored_detach."""
        x = Tensor.parameter([1.0])
        anchors = DetachAnchors()
        with anchored_detach(anchors):
            partial_detach(x, 0.5)
        x.data = np.array([4.0])
        assert partial_detach(x, 0.5).data[0] == 4.0

    def test_replay_with_extra_edge_rejected(self):
        """A replayed graph may not build more detached edges than were recorded."""
        x = Tensor.parameter([1.0])
        anchors = DetachAnchors()
        with anchored_detach(anchors):
            partial_detach(x, 0.5)
        with pytest.raises(ValueError):
            with anchored_detach(anchors):
                partial_detach(x, 0.5)
                partial_detach(x, 0.5)

    def test_replay_shape_change_rejected(self):
        """A replayed edge must keep its recorded shape."""
        anchors = DetachAnchors()
        with anchored_detach(anchors):
            partial_detach(Tensor.parameter([1.0, 2.0]), 0.5)
        with pytest.raises(ShapeError):
            with anchored_detach(anchors):
                partial_detach(Tensor.parameter([1.0]), 0.5)

    @pytest.mark.parametrize("alpha", [0.1, 0.3, 0.9])
    def test_surrogate_matches_detached_backward(self, rng, alpha):
        """Differences of the surrogate equal the scaled backward."""
        x = Tensor.parameter(rng.uniform(-2.0, 2.0, (3, 4)), name="x")
        w = rng.uniform(-2.0, 2.0, (4, 4))

        def loss():
            return (softmax(partial_detach(x, alpha) @ w) * x).sum()

        result = check_gradients(detach_surrogate(loss), {"x": x}, tolerance=1e-5)
        assert result.passed, result

    def test_plain_differences_disagree_with_detached_backward(self, rng):
        """Without the surrogate the undetached forward is the wrong oracle."""
        x = Tensor.parameter(rng.uniform(0.5, 2.0, (2, 3)), name="x")

        def loss():
            return (partial_detach(x, 0.3) * x).sum()

        plain = check_gradients(loss, {"x": x}, tolerance=1e-5)
        assert not plain.passed
        assert plain.max_rel_error == pytest.approx(0.15, rel=1e-4)
        assert check_gradients(detach_surrogate(loss), {"x": x}, tolerance=1e-5).passed


class TestShapes:
    """Shape violations raise ShapeError."""

    def test_matmul_mismatch(self):
        """Inner dimensions must agree."""
        with pytest.raises(ShapeError):
            Tensor.parameter(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

    def test_matmul_needs_matrices(self):
        """1-D operands are not accepted."""
        with pytest.raises(ShapeError):
            Tensor.parameter(np.ones(3)) @ Tensor(np.ones((3, 2)))

    def test_embedding_out_of_range(self):
        """Ids beyond the table are rejected."""
        with pytest.raises(ShapeError):
            embedding(Tensor.parameter(np.ones((4, 2))), [4])

    def test_squared_error_weight_shape(self):
        """Row weights must match the row count."""
        a = Tensor.parameter(np.ones((3, 2)))
        with pytest.raises(ShapeError):
            squared_error(a, np.zeros((3, 2)), row_weights=np.ones(2))


class TestPrimitives:
    """Forward values and finite-difference checks of each primitive."""

    def test_softmax_rows_sum_to_one(self, rng):
        """Softmax normalizes the last axis."""
        y = softmax(Tensor(rng.standard_normal((3, 5)) * 10))
        np.testing.assert_allclose(y.data.sum(axis=-1), np.ones(3))

    def test_layer_norm_constant_row(self):
        """A constant row maps to zeros instead of dividing by zero."""
        y = layer_norm(Tensor(np.full((2, 4), 7.0)))
        np.testing.assert_array_equal(y.data, np.zeros((2, 4)))

    def test_squared_error_weighted(self):
        """Weighted MSE is sum_i w_i mse_i / sum_i w_i."""
        pred = Tensor.parameter([[1.0, 1.0], [3.0, 3.0]])
        value = squared_error(pred, np.zeros((2, 2)), row_weights=np.array([1.0, 3.0]))
        assert value.item() == pytest.approx((1.0 * 1.0 + 3.0 * 9.0) / 4.0)

    def test_squared_error_uniform_weights_match_unweighted(self, rng):
        """All-ones weights give the plain mean."""
        pred = Tensor.parameter(rng.standard_normal((4, 3)))
        target = rng.standard_normal((4, 3))
        plain = squared_error(pred, target).item()
        weighted = squared_error(pred, target, row_weights=np.ones(4)).item()
        assert weighted == pytest.approx(plain, rel=1e-12)

    @pytest.mark.parametrize(
        "build",
        [
            lambda x: gelu(x).sum(),
            lambda x: (softmax(x) * softmax(x)).sum(),
            lambda x: (layer_norm(x) * np.arange(12.0).reshape(3, 4)).sum(),
            lambda x: squared_error(x @ x.transpose(), np.eye(3), row_weights=np.array([1.0, 2.0, 0.5])),
            lambda x: reduce_sum(concat([x, x * 2.0], axis=0), axis=0).sum(),
            lambda x: (x.reshape((4, 3)).permute((1, 0)) * 1.5).mean(),
            lambda x: (x[1:, :2] * x[1:, :2]).sum(),
        ],
        ids=["gelu", "softmax", "layer_norm", "weighted_mse", "concat", "reshape", "slice"],
    )
    def test_gradcheck(self, rng, build):
        """Backward matches central differences."""
        x = Tensor.parameter(rng.uniform(-2.0, 2.0, (3, 4)), name="x")
        result = check_gradients(lambda: build(x), {"x": x}, tolerance=1e-5)
        assert result.passed, result

    @pytest.mark.parametrize(
        "build",
        [
            lambda a, b: (add(a, b) * add(a, b)).sum(),
            lambda a, b: (sub(a, b) * a).sum(),
            lambda a, b: mul(a, b).sum(),
            lambda a, b: (scale(a, -1.7) * b).sum(),
            lambda a, b: (matmul(a, b.transpose()) * matmul(a, b.transpose())).sum(),
        ],
        ids=["add", "sub", "mul", "scale", "matmul"],
    )
    def test_binary_gradcheck(self, rng, build):
        """Both operands of the elementwise and matrix primitives match central differences."""
        a = Tensor.parameter(rng.uniform(-2.0, 2.0, (3, 4)), name="a")
        b = Tensor.parameter(rng.uniform(-2.0, 2.0, (3, 4)), name="b")
        result = check_gradients(lambda: build(a, b), {"a": a, "b": b}, tolerance=1e-5)
        assert result.passed, result
        assert result.n_coordinates == 24

    def test_embedding_gradcheck(self, rng):
        """Embedding rows accumulate gradients per id."""
        table = Tensor.parameter(rng.uniform(-2.0, 2.0, (4, 3)), name="table")
        result = check_gradients(
            lambda: (embedding(table, [1, 1, 3]) * embedding(table, [0, 1, 2])).sum(),
            {"table": table},
        )
        assert result.passed


class TestGradcheckHelpers:
    """relative_error and coordinate sampling."""

    def test_relative_error_floor(self):
        """Tiny values are compared against the floor, not each other."""
        err = relative_error(np.array([1e-12]), np.array([0.0]))
        assert err[0] < 1e-6

    def test_max_coordinates_subset(self, rng):
        """Only the requested number of coordinates are checked."""
        x = Tensor.parameter(rng.standard_normal((5, 5)), name="x")
        result = check_gradients(lambda: (x * x).sum(), {"x": x}, max_coordinates=7)
        assert result.n_coordinates == 7
        assert result.passed
