import hashlib

import numpy as np
import pytest

from cocomg.graph import SparseAdjacency
from cocomg.model import (
    AdamState,
    GcnEncoder,
    MlpEncoder,
    StaleCacheError,
    adam_step,
    gcn_forward,
    gcn_init,
    load_encoder,
    mlp_backward,
    mlp_forward,
    mlp_init,
    normalized_propagation,
    save_encoder,
)
from cocomg.numerics import make_rng

from conftest import central_difference, max_rel_err


class TestInit:
    def test_glorot_bounds(self):
        enc = mlp_init([4, 3], make_rng(0))
        assert np.all(np.abs(enc.weights[0]) <= np.sqrt(6 / 7))

    def test_zero_biases(self):
        enc = mlp_init([5, 4, 3], make_rng(0))
        assert all(np.all(b == 0) for b in enc.biases)

    def test_deterministic(self):
        a = mlp_init([5, 4, 3], make_rng(3))
        b = mlp_init([5, 4, 3], make_rng(3))
        assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))

    @pytest.mark.parametrize("dims", [[4], [4, 0], []])
    def test_invalid_dims(self, dims):
        with pytest.raises(ValueError):
            mlp_init(dims, make_rng(0))


class TestForward:
    def test_zero_parameters(self, rng):
        enc = MlpEncoder([np.zeros((4, 3)), np.zeros((3, 2))], [np.zeros(3), np.zeros(2)])
        z, _ = mlp_forward(enc, rng.normal(size=(5, 4)))
        np.testing.assert_array_equal(z, 0.0)

    def test_identity(self, rng):
        x = rng.normal(size=(5, 3))
        z, _ = mlp_forward(MlpEncoder([np.eye(3)], [np.zeros(3)]), x)
        np.testing.assert_array_equal(z, x)

    def test_layer_by_layer(self, rng):
        enc = mlp_init([4, 5, 3], rng)
        enc.biases[0][:] = rng.normal(size=5)
        x = rng.normal(size=(6, 4))
        expect = np.zeros((6, 3))
        for r in range(6):
            h = [np.tanh(sum(x[r, i] * enc.weights[0][i, j] for i in range(4)) + enc.biases[0][j]) for j in range(5)]
            for j in range(3):
                expect[r, j] = sum(h[i] * enc.weights[1][i, j] for i in range(5)) + enc.biases[1][j]
        np.testing.assert_allclose(mlp_forward(enc, x)[0], expect, atol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            mlp_forward(mlp_init([4, 2], rng), np.zeros((3, 5)))

    def test_bitwise_deterministic(self, rng):
        enc = mlp_init([6, 8, 8, 2], rng)
        x = rng.normal(size=(10, 6))
        assert mlp_forward(enc, x)[0].tobytes() == mlp_forward(enc, x)[0].tobytes()


def check_encoder_gradients(enc, x, dz, forward):
    _, cache = forward(enc, x)
    grads = mlp_backward(enc, cache, dz)

    def objective():
        return float(np.sum(dz * forward(enc, x)[0]))

    errs = {}
    for i in range(enc.depth):
        errs[f"W{i}"] = max_rel_err(grads.dW[i], central_difference(objective, enc.weights[i]))
        errs[f"b{i}"] = max_rel_err(grads.db[i], central_difference(objective, enc.biases[i]))
    errs["x"] = max_rel_err(grads.dx, central_difference(objective, x))
    return errs


class TestBackward:
    def test_zero_upstream(self, rng):
        enc = mlp_init([4, 5, 3], rng)
        _, cache = mlp_forward(enc, rng.normal(size=(6, 4)))
        g = mlp_backward(enc, cache, np.zeros((6, 3)))
        assert all(np.all(w == 0) for w in g.dW + g.db) and np.all(g.dx == 0)

    def test_linearity(self, rng):
        enc = mlp_init([4, 5, 3], rng)
        _, cache = mlp_forward(enc, rng.normal(size=(6, 4)))
        dz = rng.normal(size=(6, 3))
        g1 = mlp_backward(enc, cache, dz)
        g2 = mlp_backward(enc, cache, 2 * dz)
        for a, b in zip(g1.dW + g1.db + [g1.dx], g2.dW + g2.db + [g2.dx]):
            np.testing.assert_allclose(b, 2 * a, rtol=1e-12)

    def test_finite_difference_8x3(self, rng):
        enc = mlp_init([3, 4, 2], rng)
        enc.biases[0][:] = rng.normal(size=4) * 0.1
        errs = check_encoder_gradients(enc, rng.normal(size=(8, 3)), rng.normal(size=(8, 2)), mlp_forward)
        assert max(errs.values()) <= 1e-4, errs

    @pytest.mark.parametrize("dims", [[5, 4, 3], [6, 8, 8, 2]])
    def test_gradient_check(self, dims):
        r = make_rng(sum(dims))
        enc = mlp_init(dims, r)
        errs = check_encoder_gradients(enc, r.normal(size=(7, dims[0])), r.normal(size=(7, dims[-1])), mlp_forward)
        assert max(errs.values()) <= 1e-4, errs

    def test_gcn_gradient_check(self):
        r = make_rng(8)
        a = SparseAdjacency.from_edges(7, [(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (0, 6)])
        enc = gcn_init([4, 5, 3], a, r)
        errs = check_encoder_gradients(enc, r.normal(size=(7, 4)), r.normal(size=(7, 3)), gcn_forward)
        assert max(errs.values()) <= 1e-4, errs

    def test_stale_cache(self, rng):
        enc = mlp_init([4, 3], rng)
        _, cache = mlp_forward(enc, rng.normal(size=(2, 4)))
        enc.touch()
        with pytest.raises(StaleCacheError):
            mlp_backward(enc, cache, np.zeros((2, 3)))

    def test_cache_from_other_encoder(self, rng):
        a, b = mlp_init([4, 3], rng), mlp_init([4, 3], rng)
        _, cache = mlp_forward(a, rng.normal(size=(2, 4)))
        with pytest.raises(StaleCacheError):
            mlp_backward(b, cache, np.zeros((2, 3)))

    def test_dz_shape(self, rng):
        enc = mlp_init([4, 3], rng)
        _, cache = mlp_forward(enc, rng.normal(size=(2, 4)))
        with pytest.raises(ValueError):
            mlp_backward(enc, cache, np.zeros((3, 3)))


class TestAdam:
    def test_zero_gradient(self, rng):
        w = rng.normal(size=(3, 2))
        before = w.copy()
        adam_step({"w": w}, {"w": np.zeros_like(w)}, AdamState())
        np.testing.assert_array_equal(w, before)

    def test_first_step(self, rng):
        w = rng.normal(size=(4,))
        g = rng.normal(size=(4,))
        before = w.copy()
        state = AdamState(lr=0.01)
        adam_step({"w": w}, {"w": g}, state)
        assert state.t == 1
        np.testing.assert_allclose(w - before, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-10)

    def test_replay(self, rng):
        g1, g2 = rng.normal(size=3), rng.normal(size=3)
        runs = []
        for _ in range(2):
            w = np.ones(3)
            s = AdamState()
            adam_step({"w": w}, {"w": g1}, s)
            adam_step({"w": w}, {"w": g2}, s)
            runs.append(w.tobytes())
        assert runs[0] == runs[1]

    def test_non_finite(self):
        with pytest.raises(FloatingPointError, match="W1"):
            adam_step({"W1": np.zeros(2)}, {"W1": np.array([1.0, np.nan])}, AdamState())


class TestGcn:
    def test_empty_graph_equals_mlp(self, rng):
        enc = gcn_init([4, 5, 3], SparseAdjacency.from_edges(6, []), rng)
        x = rng.normal(size=(6, 4))
        np.testing.assert_allclose(gcn_forward(enc, x)[0], mlp_forward(MlpEncoder(enc.weights, enc.biases), x)[0])

    def test_path_normalization(self):
        a = SparseAdjacency.from_edges(3, [(0, 1), (1, 2)])
        p = normalized_propagation(a).toarray()
        s2, s6, s3 = np.sqrt(2), np.sqrt(6), 3.0
        expect = np.array([[1 / 2, 1 / s6, 0], [1 / s6, 1 / s3, 1 / s6], [0, 1 / s6, 1 / 2]])
        np.testing.assert_allclose(p, expect, atol=1e-15)
        assert s2  # degrees with self-loops are (2, 3, 2)

    @pytest.mark.parametrize("depth", [1, 2, 5])
    def test_output_shape(self, depth, rng):
        a = SparseAdjacency.from_edges(9, [(i, i + 1) for i in range(8)])
        enc = gcn_init([4] + [6] * (depth - 1) + [2], a, rng)
        assert gcn_forward(enc, rng.normal(size=(9, 4)))[0].shape == (9, 2)


def _digest(enc):
    return hashlib.sha256(b"".join(w.tobytes() for w in enc.weights + enc.biases)).hexdigest()


def test_encoders_do_not_share_storage(rng):
    a = mlp_init([4, 3, 2], make_rng((0, 0)))
    b = mlp_init([4, 3, 2], make_rng((0, 1)))
    x = rng.normal(size=(5, 4))
    before = (_digest(b), mlp_forward(b, x)[0].tobytes())
    a.weights[0] += 1.0
    a.biases[1] -= 3.0
    assert (_digest(b), mlp_forward(b, x)[0].tobytes()) == before
    assert not any(np.shares_memory(p, q) for p in a.parameters().values() for q in b.parameters().values())


def test_copy_is_independent(rng):
    a = mlp_init([4, 3], rng)
    b = a.copy()
    a.weights[0][0, 0] = 99.0
    assert b.weights[0][0, 0] != 99.0


def test_serialization_round_trip(tmp_path, rng):
    enc = mlp_init([5, 7, 3], rng)
    enc.biases[0][:] = rng.normal(size=7)
    path = tmp_path / "enc.txt"
    save_encoder(path, enc)
    assert path.read_text().splitlines()[0] == "MLP 2 5 7 3"
    back = load_encoder(path)
    for p, q in zip(enc.weights + enc.biases, back.weights + back.biases):
        assert p.tobytes() == q.tobytes()


def test_gcn_serialization_needs_adjacency(tmp_path, rng):
    a = SparseAdjacency.from_edges(4, [(0, 1)])
    enc = gcn_init([3, 2], a, rng)
    save_encoder(tmp_path / "g.txt", enc)
    with pytest.raises(ValueError):
        load_encoder(tmp_path / "g.txt")
    assert isinstance(load_encoder(tmp_path / "g.txt", a), GcnEncoder)
