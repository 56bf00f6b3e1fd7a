import math

import numpy as np
import pandas as pd
import pytest

from attention.kernels import (
    AttentionLayer,
    matrix_attention,
    normalize_weights,
    point_conv,
    scaled_dot_attention,
    vector_attention,
)
from attention.kinds import AttentionKind
from attention.neighborhood import Neighborhood, NeighborhoodError, knn
from attention.probe import COLUMNS, complexity_probe, doubling_ratios, fit_slopes
from attention.study import gradient_spread_table, matrix_gradient_spread, median_spread
from cli.checks import attention_units
from diffcore.gradcheck import grad_check
from diffcore.nn import MLP, ParameterSet
from diffcore.tensor import ShapeError, Tensor


def line(xs):
    return np.array([[x, 0.0, 0.0] for x in xs])


def constant(width, value):
    """Weight network ignoring its input"""

    def fn(x):
        return Tensor(np.broadcast_to(value, x.shape[:-1] + (width,)).copy())

    return fn


def patch(seed, n=6, d=3, k=3):
    rng = np.random.default_rng(seed)
    points = rng.uniform(-0.5, 0.5, size=(n, 3))
    return points, Tensor(rng.normal(size=(n, d))), knn(points, k)


# ============================================================================
# knn
# ============================================================================

def test_knn_collinear():
    points = line([0.0, 1.0, 3.0])
    np.testing.assert_array_equal(knn(points, 1).indices[:, 0], [0, 1, 2])
    np.testing.assert_array_equal(knn(points, 1, include_self=False).indices[:, 0], [1, 0, 1])


def test_knn_ties_prefer_smaller_index():
    points = line([0.0, 1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(knn(points, 2).indices[2], [2, 1])
    np.testing.assert_array_equal(knn(points, 2, include_self=False).indices[2], [1, 3])


def test_knn_all_others():
    points = np.random.default_rng(1).uniform(size=(6, 3))
    nbr = knn(points, 5, include_self=False)
    for i, row in enumerate(nbr.indices):
        assert sorted(row) == [j for j in range(6) if j != i]


def brute_force(points, anchors, k):
    d2 = np.sum((anchors[:, None, :] - points[None, :, :]) ** 2, axis=-1)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def test_knn_matches_brute_force():
    points = np.random.default_rng(2).uniform(size=(100, 3))
    nbr = knn(points, 5)
    np.testing.assert_array_equal(nbr.indices, brute_force(points, points, 5))
    np.testing.assert_allclose(nbr.offsets, points[nbr.indices] - points[:, None, :])


def test_knn_tree_path_matches_brute_force():
    points = np.random.default_rng(3).uniform(size=(400, 3))
    nbr = knn(points, 7)
    np.testing.assert_array_equal(nbr.indices, brute_force(points, points, 7))


def test_knn_tree_path_with_grid_ties():
    axis = np.arange(8.0)
    points = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    nbr = knn(points, 9)
    np.testing.assert_array_equal(nbr.indices, brute_force(points, points, 9))


def test_knn_queries():
    points = line([0.0, 1.0, 2.0])
    nbr = knn(points, 2, queries=line([1.9]))
    np.testing.assert_array_equal(nbr.indices, [[2, 1]])


def test_knn_rejects_bad_k():
    points = line([0.0, 1.0, 2.0])
    with pytest.raises(NeighborhoodError):
        knn(points, 4)
    with pytest.raises(NeighborhoodError):
        knn(points, 3, include_self=False)
    with pytest.raises(NeighborhoodError):
        knn(points, 0)
    with pytest.raises(NeighborhoodError):
        knn(np.zeros((0, 3)), 1)


# ============================================================================
# Kernels
# ============================================================================

def test_scaled_dot_hand_example():
    features = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    nbr = Neighborhood(np.array([[0, 1], [1, 0]]), np.zeros((2, 2, 3)))
    z = scaled_dot_attention(features, nbr)
    np.testing.assert_allclose(z.data[0], [math.e / (math.e + 1), 1 / (math.e + 1)])


def test_scaled_dot_identical_neighbors():
    features = Tensor(np.tile([0.3, -1.2, 2.0], (4, 1)))
    _, _, nbr = patch(0, n=4, k=3)
    np.testing.assert_allclose(scaled_dot_attention(features, nbr).data, features.data, atol=1e-12)


def test_scaled_dot_stays_in_convex_hull():
    _, features, nbr = patch(4, n=10, d=4, k=5)
    z = scaled_dot_attention(features, nbr).data
    neighbors = features.data[nbr.indices]
    assert np.all(z >= neighbors.min(axis=1) - 1e-12)
    assert np.all(z <= neighbors.max(axis=1) + 1e-12)


def test_matrix_attention_leaves_convex_hull():
    features = Tensor(np.array([[1.0], [2.0], [3.0]]))
    nbr = knn(line([0.0, 1.0, 2.0]), 2)
    z = matrix_attention(features, nbr, constant(1, -1.0), "linear").data
    neighbors = features.data[nbr.indices]
    assert np.all(z[:, 0] < neighbors.min(axis=1)[:, 0])


def test_vector_attention_uniform_weights(rng):
    features = Tensor(np.tile([0.5, -0.25, 1.0], (5, 1)))
    _, _, nbr = patch(1, n=5, k=3)
    phi = MLP(ParameterSet(), "phi", [3, 4, 3], rng)
    np.testing.assert_allclose(vector_attention(features, nbr, phi).data, features.data, atol=1e-12)


def test_vector_attention_single_channel_is_scalar_weighting(rng):
    _, features, nbr = patch(2, n=4, d=1, k=3)
    phi = MLP(ParameterSet(), "phi", [1, 4, 1], rng)
    z = vector_attention(features, nbr, phi).data
    canonical = nbr.canonical()
    f = features.data[:, 0]
    for i, row in enumerate(canonical.indices):
        logits = phi(Tensor((f[i] - f[row])[:, None])).data[:, 0]
        weights = np.exp(logits - logits.max())
        weights /= weights.sum()
        assert z[i, 0] == pytest.approx(np.sum(weights * f[row]), abs=1e-12)


def test_identity_matrices_sum_neighbors():
    _, features, nbr = patch(3, d=3)
    expected = features.data[nbr.indices].sum(axis=1)
    identity = constant(9, np.eye(3).reshape(-1))
    for norm in ("none", "linear"):
        np.testing.assert_allclose(matrix_attention(features, nbr, identity, norm).data, expected, atol=1e-14)


@pytest.mark.parametrize("seed", range(20))
def test_diagonal_softmax_reproduces_vector_attention(seed):
    _, features, nbr = patch(seed, n=5, d=3, k=3)
    phi = MLP(ParameterSet(), "phi", [3, 4, 3], np.random.default_rng(seed))
    diagonal = matrix_attention(features, nbr, phi, "softmax", structure="diagonal")
    np.testing.assert_allclose(diagonal.data, vector_attention(features, nbr, phi).data, rtol=0, atol=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_scaled_identity_reproduces_scaled_dot(seed):
    _, features, nbr = patch(seed, n=5, d=3, k=3)
    canonical = nbr.canonical()
    logits = np.einsum("nd,nkd->nk", features.data, features.data[canonical.indices])

    def dot_logits(relative):
        # s_ij * I: every diagonal entry carries the anchor-neighbour dot product
        return Tensor(np.repeat(logits[:, :, None], relative.shape[-1], axis=-1))

    z = matrix_attention(features, nbr, dot_logits, "softmax", structure="diagonal")
    np.testing.assert_allclose(z.data, scaled_dot_attention(features, nbr).data, rtol=0, atol=1e-9)


def test_linear_norm_rows_have_unit_l1(rng):
    # 1000 rows of 20 channels
    weights = Tensor(rng.normal(size=(10, 5, 20, 20)))
    normalized = normalize_weights(weights, "linear").data
    rows = np.abs(normalized).sum(axis=-1)
    assert rows.size == 1000
    np.testing.assert_allclose(rows, 1.0, rtol=0, atol=1e-9)


def test_softmax_norm_across_neighbors(rng):
    normalized = normalize_weights(Tensor(rng.normal(size=(4, 3, 2, 2))), "softmax").data
    np.testing.assert_allclose(normalized.sum(axis=1), 1.0, atol=1e-12)


def test_unknown_norm(rng):
    with pytest.raises(ValueError):
        normalize_weights(Tensor(rng.normal(size=(1, 1, 2, 2))), "l2")


def test_point_conv_identity_sums_neighbors():
    _, features, nbr = patch(6, d=2)
    z = point_conv(features, nbr, constant(4, np.eye(2).reshape(-1)))
    np.testing.assert_allclose(z.data, features.data[nbr.indices].sum(axis=1), atol=1e-14)


def test_point_conv_translation_invariant(rng):
    points, features, _ = patch(7, n=8, d=2, k=4)
    wnet = MLP(ParameterSet(), "wnet", [3, 4, 4], rng)
    moved = point_conv(features, knn(points + [0.25, -0.5, 1.0], 4), wnet)
    np.testing.assert_allclose(moved.data, point_conv(features, knn(points, 4), wnet).data, atol=1e-12)


@pytest.mark.parametrize("kind", list(AttentionKind))
def test_neighbor_order_does_not_matter(kind, rng):
    _, features, nbr = patch(8, n=7, d=3, k=4)
    layer = AttentionLayer(ParameterSet(), "layer", kind, 3, rng)
    order = np.random.default_rng(9).permuted(np.tile(np.arange(4), (7, 1)), axis=1)
    rows = np.arange(7)[:, None]
    shuffled = Neighborhood(nbr.indices[rows, order], nbr.offsets[rows, order])
    np.testing.assert_array_equal(layer(features, shuffled).data, layer(features, nbr).data)


@pytest.mark.parametrize("kind", list(AttentionKind))
def test_layer_preserves_width(kind, rng):
    _, features, nbr = patch(10, n=6, d=4, k=3)
    assert AttentionLayer(ParameterSet(), "layer", kind, 4, rng)(features, nbr).shape == (6, 4)


def test_layer_parameter_shapes(rng):
    params = ParameterSet()
    AttentionLayer(params, "m", AttentionKind.NORMALIZED_MATRIX, 4, rng, hidden=6)
    AttentionLayer(params, "p", AttentionKind.POINT_CONV, 4, rng, hidden=6)
    AttentionLayer(params, "s", AttentionKind.SCALAR_DOT, 4, rng)
    assert params["m.psi.w1"].shape == (6, 16)
    assert params["p.wnet.w0"].shape == (3, 6)
    assert not any(name.startswith("s.") for name in params.names())


def test_general_matrix_kind_takes_configured_norm(rng):
    assert AttentionLayer(ParameterSet(), "a", AttentionKind.MATRIX, 2, rng, matrix_norm="softmax").norm == "softmax"
    assert AttentionLayer(ParameterSet(), "b", AttentionKind.MATRIX_UNNORMALIZED, 2, rng).norm == "none"
    with pytest.raises(ValueError):
        AttentionLayer(ParameterSet(), "c", AttentionKind.MATRIX, 2, rng, matrix_norm="l2")


def test_feature_rows_must_match_anchors():
    _, features, _ = patch(11, n=6)
    with pytest.raises(ShapeError):
        scaled_dot_attention(features, knn(np.zeros((4, 3)) + np.arange(4.0)[:, None], 2))


def test_psi_width_must_be_d_squared(rng):
    _, features, nbr = patch(12, d=3)
    psi = MLP(ParameterSet(), "psi", [3, 4, 6], rng)
    with pytest.raises(ShapeError):
        matrix_attention(features, nbr, psi)


@pytest.mark.parametrize("seed", range(5))
def test_kernel_gradients(seed):
    for name, (fn, inputs) in attention_units(seed).items():
        error = grad_check(fn, inputs)
        assert error < 1e-3, f"{name}: {error:.3e}"


# ============================================================================
# Gradient spread
# ============================================================================

def test_matrix_gradient_spread_favours_linear():
    table = gradient_spread_table(range(10), "matrix")
    medians = median_spread(table)
    assert medians["linear"] > medians["softmax"]
    assert list(table.columns) == ["seed", "normalization", "fraction"]
    assert len(table) == 20


def test_vector_gradient_spread_favours_linear():
    medians = median_spread(gradient_spread_table(range(10), "vector"))
    assert medians["linear"] > medians["softmax"]


def test_gradient_spread_rejects_unknown():
    with pytest.raises(ValueError):
        gradient_spread_table(range(2), "tensor")
    with pytest.raises(ValueError):
        matrix_gradient_spread("none", 0)


# ============================================================================
# Complexity probe
# ============================================================================

def test_probe_table():
    table = complexity_probe(
        [AttentionKind.NORMALIZED_MATRIX, AttentionKind.SCALAR_DOT], [4], [4, 8], n_points=32, reps=1
    )
    assert list(table.columns) == COLUMNS
    assert len(table) == 4
    assert (table["time_ns"] > 0).all()
    assert (table["work_ns"] >= 1).all()
    assert (table["peak_bytes"] > 0).all()
    # one baseline per (kind, k)
    assert table.groupby("kind")["base_ns"].nunique().eq(1).all()


def test_probe_memory_ordering():
    table = complexity_probe(k_values=[24], d_values=[32], n_points=64, reps=1)
    peak = table.set_index("kind")["peak_bytes"]
    for baseline in ("scalar_dot", "vector", "point_conv"):
        assert peak["normalized_matrix"] > peak[baseline]


def test_probe_rejects_empty_ranges():
    with pytest.raises(ValueError):
        complexity_probe(k_values=[], d_values=[4])
    with pytest.raises(ValueError):
        complexity_probe(k_values=[4], d_values=[4], baseline_d=0)


def test_fit_slopes():
    rows = [{"kind": "a", "k": k, "d": d, "time_ns": k * d**2, "peak_bytes": 0} for k in (4, 8) for d in (8, 16, 32)]
    slopes = fit_slopes(pd.DataFrame(rows))
    assert slopes.loc["a", "d_slope"] == pytest.approx(2.0)
    assert slopes.loc["a", "k_slope"] == pytest.approx(1.0)


def test_fit_slopes_use_work_over_baseline():
    # a constant 10^6 on top of k * d: the raw times are nearly flat in d
    rows = [
        {"kind": "a", "k": 8, "d": d, "time_ns": 10**6 + 8 * d, "base_ns": 10**6 + 8, "work_ns": 8 * (d - 1)}
        for d in (16, 32, 64)
    ]
    table = pd.DataFrame(rows)
    assert 0.95 < fit_slopes(table).loc["a", "d_slope"] < 1.1
    assert fit_slopes(table.drop(columns="work_ns")).loc["a", "d_slope"] < 0.01


def test_doubling_ratios():
    rows = [{"kind": "a", "k": k, "d": d, "time_ns": k * d**2, "peak_bytes": 0} for k in (4, 8, 12) for d in (8, 16)]
    by_k = doubling_ratios(pd.DataFrame(rows), over="k")
    assert sorted(by_k["d"]) == [8, 16]
    assert (by_k["k"] == 8).all()
    assert by_k["ratio"].tolist() == [2.0, 2.0]
    by_d = doubling_ratios(pd.DataFrame(rows), over="d")
    assert by_d["ratio"].tolist() == [4.0, 4.0, 4.0]
    with pytest.raises(ValueError):
        doubling_ratios(pd.DataFrame(rows), over="n")


@pytest.mark.slow
def test_complexity_d_slopes():
    linear = complexity_probe(
        [AttentionKind.SCALAR_DOT, AttentionKind.VECTOR], [16], [16, 32, 64, 128], n_points=1024, reps=9
    )
    quadratic = complexity_probe([AttentionKind.NORMALIZED_MATRIX], [16], [8, 12, 16, 24, 32], n_points=1024, reps=9)
    slopes = pd.concat([fit_slopes(linear), fit_slopes(quadratic)])["d_slope"]
    assert 1.6 <= slopes["normalized_matrix"] <= 2.4
    assert 0.7 <= slopes["scalar_dot"] <= 1.4
    assert 0.7 <= slopes["vector"] <= 1.4


@pytest.mark.slow
def test_complexity_k_doubling():
    table = complexity_probe(k_values=[8, 16], d_values=[32], n_points=1024, reps=9)
    ratios = doubling_ratios(table, over="k").set_index("kind")["ratio"]
    assert set(ratios.index) == {"normalized_matrix", "scalar_dot", "vector", "point_conv"}
    for kind, ratio in ratios.items():
        assert 1.5 <= ratio <= 3.0, kind
