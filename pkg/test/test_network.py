import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from attention.kinds import AttentionKind
from attention.neighborhood import knn
from cli import checks
from cli.checks import all_passed, run_gradcheck
from diffcore import ops
from diffcore.checkpoint import CheckpointError, CheckpointStore
from diffcore.gradcheck import grad_check
from diffcore.nn import MLP, ParameterSet
from diffcore.tensor import ShapeError, Tensor
from geometry.marching_cubes import marching_cubes
from geometry.oracles import Box, Sphere
from geometry.pointcloud import PointCloud, normalize_cloud
from geometry.sampling import sample_surface
from geometry.smoothing import laplacian_smooth
from metrics.evaluate import evaluate_against_oracle
from network import (
    DivergenceError,
    NetworkConfig,
    ReconstructionNet,
    TensorformerBlock,
    TrainConfig,
    TrainResult,
    Trainer,
    bce_loss,
    farthest_point_sample,
    indicator_features,
    load_model,
    occupancy_head,
    predict_field,
    tensorformer_block,
)
from network.ablation import normalized_matrix_leads, run_ablation, summarize_ablation
from network.train import training_cloud


def min_gap(points):
    distances = np.linalg.norm(points[:, None] - points[None], axis=-1)
    return np.sort(distances, axis=1)[:, 1].min()


def tiny_cloud(sphere, n=32, seed=0):
    cloud, _ = normalize_cloud(sample_surface(sphere, n, 0.002, seed=seed))
    return cloud


# ============================================================================
# Configuration
# ============================================================================

def test_network_config_validation():
    with pytest.raises(ValidationError):
        NetworkConfig(block_dims=[8])
    with pytest.raises(ValidationError):
        NetworkConfig(head_dims=[4, 2])
    with pytest.raises(ValidationError):
        NetworkConfig(input_points=512, downsample_to=512)
    with pytest.raises(ValidationError):
        NetworkConfig.tiny(k=13)
    with pytest.raises(ValidationError):
        NetworkConfig(depth=3)


def test_network_presets():
    full = NetworkConfig.full()
    assert (full.k, full.input_points, full.downsample_to) == (24, 3000, 512)
    assert full.query_k == 24
    assert full.attention_kind is AttentionKind.NORMALIZED_MATRIX
    desk = NetworkConfig.desk(k=8)
    assert (desk.k, desk.downsample_to, desk.query_k) == (8, 256, 8)


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(fine_res=16, coarse_res=16)
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=-1.0)
    full = TrainConfig.full(iterations=5)
    assert (full.learning_rate, full.batch_size, full.iterations) == (1e-4, 2, 5)


def test_train_result_final_loss():
    losses = [float(v) for v in range(20, 0, -1)]
    result = TrainResult(run_id="r", iterations=20, losses=losses, learning_rates=[0.0] * 20)
    assert result.initial_loss == 20.0
    assert result.final_loss == 1.5


# ============================================================================
# Blocks
# ============================================================================

def test_farthest_point_sample_on_a_line():
    points = np.array([[float(i), 0.0, 0.0] for i in range(11)])
    np.testing.assert_array_equal(farthest_point_sample(points, 3), [0, 10, 5])
    np.testing.assert_array_equal(farthest_point_sample(points, 2, start=5)[1], 0)


def test_farthest_point_sample_ignores_point_order(rng):
    points = rng.uniform(-0.5, 0.5, size=(200, 3))
    order = rng.permutation(200)
    a = points[farthest_point_sample(points, 20)]
    b = points[order][farthest_point_sample(points[order], 20)]
    np.testing.assert_array_equal(a, b)


def test_farthest_point_sample_spreads_out(rng):
    points = rng.uniform(-0.5, 0.5, size=(500, 3))
    spread = points[farthest_point_sample(points, 16)]
    clumped = points[:16]
    assert min_gap(spread) > min_gap(clumped)


def test_farthest_point_sample_square_corners():
    corners = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
    np.testing.assert_array_equal(farthest_point_sample(corners, 2, start=0), [0, 2])
    assert sorted(farthest_point_sample(corners, 4, start=1)) == [0, 1, 2, 3]


def test_farthest_point_sample_beats_random_subsets():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        points = rng.uniform(-0.5, 0.5, size=(100, 3))
        chosen = points[farthest_point_sample(points, 10, seed=seed)]
        random_gaps = [min_gap(points[rng.choice(100, 10, replace=False)]) for _ in range(20)]
        assert min_gap(chosen) >= np.median(random_gaps)


def test_farthest_point_sample_bad_count(rng):
    points = rng.uniform(size=(5, 3))
    with pytest.raises(ValueError):
        farthest_point_sample(points, 0)
    with pytest.raises(ValueError):
        farthest_point_sample(points, 6)


def test_zeroed_residual_block_is_identity(rng):
    points = rng.uniform(-0.5, 0.5, size=(10, 3))
    features = Tensor(rng.normal(size=(10, 4)))
    block = TensorformerBlock(ParameterSet(), "block", 4, 4, AttentionKind.NORMALIZED_MATRIX, rng, kernel_hidden=4)
    block.zero_output()
    np.testing.assert_array_equal(block(features, knn(points, 4)).data, features.data)


def test_block_is_linear_attention_linear(rng):
    points = rng.uniform(-0.5, 0.5, size=(10, 3))
    nbr = knn(points, 4)
    features = Tensor(rng.normal(size=(10, 4)))
    block = TensorformerBlock(ParameterSet(), "block", 4, 4, AttentionKind.NORMALIZED_MATRIX, rng, kernel_hidden=4)
    expected = features.data + block.linear_out(block.attention(block.linear_in(features), nbr)).data
    np.testing.assert_array_equal(block(features, nbr).data, expected)
    # negative attention outputs reach linear-out unclipped
    assert (block.attention(block.linear_in(features), nbr).data < 0).any()


@pytest.mark.parametrize("kind", list(AttentionKind))
def test_block_widths(rng, kind):
    points = rng.uniform(-0.5, 0.5, size=(10, 3))
    block = TensorformerBlock(ParameterSet(), "block", 4, 6, kind, rng, kernel_hidden=4)
    assert not block.residual
    assert block(Tensor(rng.normal(size=(10, 4))), knn(points, 4)).shape == (10, 6)


def test_block_rejects_wrong_width(rng):
    points = rng.uniform(-0.5, 0.5, size=(10, 3))
    block = TensorformerBlock(ParameterSet(), "block", 4, 4, AttentionKind.VECTOR, rng)
    with pytest.raises(ShapeError):
        tensorformer_block(Tensor(np.zeros((10, 5))), knn(points, 4), block)


def test_indicator_features_sums_neighbours():
    points = np.array([[float(i), 0.0, 0.0] for i in range(5)])
    features = Tensor(np.arange(5.0).reshape(5, 1))
    ones = lambda rel: Tensor(np.ones(rel.shape[:2] + (1,)))
    g = indicator_features(np.array([[0.1, 0.0, 0.0], [3.6, 0.0, 0.0]]), points, features, ones, 2)
    np.testing.assert_array_equal(g.data, [[1.0], [7.0]])


def test_indicator_features_sees_query_minus_point():
    points = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    features = Tensor(np.ones((2, 3)))
    g = indicator_features(np.zeros((1, 3)), points, features, lambda rel: rel, 2)
    np.testing.assert_allclose(g.data, [[-1.0, -2.0, 0.0]])


def test_indicator_features_hand_example():
    # q - p is (1,0,0) and (0,1,0)
    points = np.array([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    features = Tensor([[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]])
    g = indicator_features(np.zeros((1, 3)), points, features, lambda rel: rel, 2)
    np.testing.assert_array_equal(g.data, [[1.0, 2.0, 0.0]])


def test_indicator_features_trivial_position_networks(rng):
    points = rng.uniform(-0.5, 0.5, size=(6, 3))
    features = Tensor(rng.normal(size=(6, 4)))
    queries = points[[2, 5]] + 1e-3
    ones = indicator_features(queries, points, features, lambda rel: Tensor(np.ones(rel.shape[:2] + (4,))), 1)
    np.testing.assert_array_equal(ones.data, features.data[[2, 5]])
    zeros = indicator_features(queries, points, features, lambda rel: Tensor(np.zeros(rel.shape[:2] + (4,))), 3)
    np.testing.assert_array_equal(zeros.data, np.zeros((2, 4)))


def test_indicator_features_width_mismatch(rng):
    points = rng.uniform(size=(6, 3))
    omega = MLP(ParameterSet(), "omega", [3, 5], rng)
    with pytest.raises(ShapeError):
        indicator_features(rng.uniform(size=(2, 3)), points, Tensor(np.ones((6, 4))), omega, 3)


def test_occupancy_head(rng):
    params = ParameterSet()
    head = MLP(params, "head", [4, 3, 1], rng)
    g = Tensor(rng.normal(size=(7, 4)))
    o = occupancy_head(g, head)
    assert o.shape == (7,)
    assert np.all((o.data > 0) & (o.data < 1))
    head.zero_last()
    np.testing.assert_array_equal(occupancy_head(g, head).data, np.full(7, 0.5))
    with pytest.raises(ShapeError):
        occupancy_head(g, MLP(params, "wide", [4, 2], rng))


def test_occupancy_head_increases_with_final_bias(rng):
    head = MLP(ParameterSet(), "head", [4, 3, 1], rng)
    g = Tensor(rng.normal(size=(7, 4)))
    before = occupancy_head(g, head).data
    head.layers[-1][1].data += 0.5
    assert np.all(occupancy_head(g, head).data > before)


def test_bce_loss_values():
    assert bce_loss(Tensor([0.5, 0.5]), [1, 0]).item() == pytest.approx(0.6931, abs=1e-4)
    assert bce_loss(Tensor([0.9]), [0]).item() == pytest.approx(2.3026, abs=1e-4)
    assert bce_loss(Tensor([1.0 - 1e-7]), [1]).item() == pytest.approx(0.0, abs=1e-6)
    assert bce_loss(Tensor([0.5, 0.5]), [0, 1]).item() == pytest.approx(np.log(2.0))
    assert bce_loss(Tensor([0.0, 1.0]), [0, 1]).item() == pytest.approx(0.0, abs=1e-6)
    assert bce_loss(Tensor([0.0]), [1]).item() == pytest.approx(-np.log(1e-7))


def test_bce_loss_rejects_bad_labels():
    with pytest.raises(ValueError):
        bce_loss(Tensor([0.5, 0.5]), [0, 2])
    with pytest.raises(ShapeError):
        bce_loss(Tensor([0.5, 0.5]), [0, 1, 1])


# ============================================================================
# Network
# ============================================================================

def test_network_forward(tiny_config, sphere, rng):
    net = ReconstructionNet(tiny_config)
    o = net(tiny_cloud(sphere).points, rng.uniform(-0.5, 0.5, size=(10, 3)))
    assert o.shape == (10,)
    assert np.all((o.data > 0) & (o.data < 1))
    net.zero_head()
    np.testing.assert_array_equal(net(tiny_cloud(sphere).points, np.zeros((3, 3))).data, np.full(3, 0.5))


def test_network_parameter_names(tiny_config):
    names = ReconstructionNet(tiny_config).params.names()
    assert "embed.w0" in names
    assert "block0.attn.psi.w0" in names
    assert "block1.out.b0" in names
    assert names[-1] == "head.b2"


def test_network_ignores_point_order(tiny_config, sphere, rng):
    net = ReconstructionNet(tiny_config)
    points = tiny_cloud(sphere).points
    queries = rng.uniform(-0.5, 0.5, size=(12, 3))
    shuffled = points[rng.permutation(len(points))]
    np.testing.assert_allclose(net(points, queries).data, net(shuffled, queries).data, rtol=1e-9, atol=1e-12)


def test_same_seed_same_network(tiny_config):
    a = ReconstructionNet(tiny_config, seed=3).params.state_dict()
    b = ReconstructionNet(tiny_config, seed=3).params.state_dict()
    c = ReconstructionNet(tiny_config, seed=4).params.state_dict()
    assert all(np.array_equal(a[name], b[name]) for name in a)
    assert not all(np.array_equal(a[name], c[name]) for name in a)


def test_block_gradients():
    table = run_gradcheck("block")
    assert all_passed(table), table.to_string()


def test_full_network_gradients():
    table = run_gradcheck("full")
    assert list(table["unit"]) == ["tiny_network"]
    assert all_passed(table), table.to_string()


def test_full_scope_checks_every_entry(monkeypatch):
    seen = []

    def record(fn, inputs, **kwargs):
        seen.append(kwargs.get("max_entries"))
        return 0.0

    monkeypatch.setattr(checks, "grad_check", record)
    run_gradcheck("full")
    assert seen == [None]


def test_grad_check_visits_every_entry():
    x = Tensor(np.arange(1.0, 8.0), requires_grad=True, name="x")
    calls = []

    def loss():
        calls.append(1)
        return ops.sum(ops.hadamard(x, x))

    assert grad_check(loss, [x]) < 1e-8
    # one backward pass, then two evaluations per entry
    assert len(calls) == 1 + 2 * 7


# ============================================================================
# Checkpoints
# ============================================================================

def test_checkpoint_round_trip(tmp_path, tiny_config, sphere, rng):
    net = ReconstructionNet(tiny_config, seed=5)
    path = net.save(tmp_path / "model")
    assert path == tmp_path / "model.npz"
    loaded = load_model(path)
    assert loaded.config == tiny_config
    points = tiny_cloud(sphere).points
    queries = rng.uniform(-0.5, 0.5, size=(8, 3))
    np.testing.assert_array_equal(loaded(points, queries).data, net(points, queries).data)


def test_checkpoint_keeps_extra_config(tmp_path, tiny_config):
    path = ReconstructionNet(tiny_config).save(tmp_path / "model.npz", {"train": {"seed": 4}})
    _, config = CheckpointStore.load(path)
    assert config["train"] == {"seed": 4}
    assert config["network"]["k"] == tiny_config.k


def test_checkpoint_rejects_foreign_files(tmp_path):
    np.savez(tmp_path / "plain.npz", a=np.zeros(2))
    np.savez(tmp_path / "future.npz", __format__=np.array("tensorformer-checkpoint/9"))
    (tmp_path / "text.npz").write_text("not a checkpoint\n")
    for name in ("plain.npz", "future.npz", "text.npz", "missing.npz"):
        with pytest.raises(CheckpointError):
            CheckpointStore.load(tmp_path / name)


def test_checkpoint_state_mismatch(tmp_path, tiny_config, rng):
    path = ReconstructionNet(tiny_config).save(tmp_path / "model")
    other = ParameterSet()
    MLP(other, "other", [3, 2], rng)
    with pytest.raises(KeyError):
        CheckpointStore.restore(path, other)


def test_checkpoint_reserved_name(tmp_path):
    params = ParameterSet()
    params.add("__config__", np.zeros(2))
    with pytest.raises(CheckpointError):
        CheckpointStore.save(tmp_path / "bad", params)


# ============================================================================
# Prediction
# ============================================================================

def test_predict_field(tiny_config, sphere):
    field = predict_field(tiny_cloud(sphere), ReconstructionNet(tiny_config), resolution=8)
    assert field.resolution == 8
    assert field.grid.values.shape == (8, 8, 8)
    assert np.all((field.grid.values > 0) & (field.grid.values < 1))
    assert field.binary().is_binary()
    np.testing.assert_allclose(field.normalization.apply(field.world_points()), field.grid.points(), atol=1e-12)


def test_predict_field_from_checkpoint(tmp_path, tiny_config, sphere):
    net = ReconstructionNet(tiny_config)
    path = net.save(tmp_path / "model")
    cloud = tiny_cloud(sphere)
    np.testing.assert_array_equal(
        predict_field(cloud, path, resolution=8).grid.values, predict_field(cloud, net, resolution=8).grid.values
    )


def test_predict_field_workers_do_not_change_values(tiny_config, sphere):
    net = ReconstructionNet(tiny_config)
    cloud = tiny_cloud(sphere)
    serial = predict_field(cloud, net, resolution=8, batch_size=100)
    threaded = predict_field(cloud, net, resolution=8, batch_size=100, workers=3)
    np.testing.assert_array_equal(serial.grid.values, threaded.grid.values)


def test_predict_field_ignores_placement(tiny_config, sphere):
    net = ReconstructionNet(tiny_config)
    cloud = tiny_cloud(sphere)
    moved = PointCloud(cloud.points * 2.5 + np.array([1.0, -3.0, 0.5]))
    np.testing.assert_allclose(
        predict_field(cloud, net, resolution=8).grid.values,
        predict_field(moved, net, resolution=8).grid.values,
        atol=1e-9,
    )


def test_predict_field_rejects_bad_input(tiny_config, sphere):
    net = ReconstructionNet(tiny_config)
    with pytest.raises(ValueError):
        predict_field(tiny_cloud(sphere), net, resolution=4)
    with pytest.raises(ValueError):
        predict_field(PointCloud(np.zeros((0, 3))), net, resolution=8)


# ============================================================================
# Training
# ============================================================================

def test_training_run(tmp_path, tiny_config, tiny_train, sphere):
    trainer = Trainer([sphere], tiny_config, tiny_train)
    result = trainer.run(tmp_path)
    assert result.iterations == 3
    assert len(result.losses) == len(result.learning_rates) == 3
    assert all(np.isfinite(result.losses))
    assert result.learning_rates[0] == pytest.approx(tiny_train.learning_rate)

    curve = pd.read_csv(result.loss_csv_path)
    assert list(curve.columns) == ["iteration", "loss", "lr"]
    np.testing.assert_array_equal(curve["loss"], result.losses)
    assert load_model(result.checkpoint_path).params.count() == trainer.net.params.count()


def test_training_is_reproducible(tiny_config, tiny_train, sphere):
    a = Trainer([sphere], tiny_config, tiny_train).run()
    b = Trainer([sphere], tiny_config, tiny_train).run()
    assert a.losses == b.losses


def test_draw_sample(tiny_config, tiny_train, sphere):
    trainer = Trainer([sphere, Box(0.3)], tiny_config, tiny_train)
    points, queries, labels = trainer.draw_sample()
    assert points.shape == (tiny_config.input_points, 3)
    assert np.max(np.abs(points)) <= 0.5
    assert queries.shape == (64, 3)
    assert set(np.unique(labels)) <= {0, 1}


def test_flipped_samples_keep_labels_consistent(tiny_config, tiny_train, rng):
    shape = Box((0.3, 0.2, 0.1), center=(0.1, 0.05, 0.0))
    trainer = Trainer([shape], tiny_config, tiny_train)
    for axis in range(3):
        sampler = trainer._sampler(0, axis)
        queries, labels = sampler.draw(rng)
        mirrored = queries.copy()
        mirrored[:, axis] *= -1.0
        np.testing.assert_array_equal(labels, shape.occupancy(mirrored))
        assert labels.any() and not labels.all()


def test_fixed_sample_loss_decreases(tiny_config, sphere):
    config = TrainConfig(
        iterations=40,
        learning_rate=1e-2,
        schedule="constant",
        resample_every=0,
        flip_augment=False,
        fine_res=16,
        coarse_res=4,
        queries_per_step=64,
    )
    result = Trainer([sphere], tiny_config, config).run()
    assert result.final_loss < result.initial_loss


def test_zero_learning_rate_keeps_parameters(tiny_config, sphere):
    config = TrainConfig(
        iterations=3,
        learning_rate=0.0,
        schedule="constant",
        resample_every=0,
        flip_augment=False,
        fine_res=16,
        coarse_res=4,
        queries_per_step=64,
    )
    trainer = Trainer([sphere], tiny_config, config)
    before = trainer.net.params.state_dict()
    result = trainer.run()
    after = trainer.net.params.state_dict()
    assert all(np.array_equal(before[name], after[name]) for name in before)
    assert len(set(result.losses)) == 1


def test_divergence_stops_training(monkeypatch, tiny_config, tiny_train, sphere):
    monkeypatch.setattr("network.train.bce_loss", lambda pred, labels: ops.scale(ops.sum(pred), float("nan")))
    with pytest.raises(DivergenceError):
        Trainer([sphere], tiny_config, tiny_train).run()


def test_trainer_needs_shapes(tiny_config, tiny_train):
    with pytest.raises(ValueError):
        Trainer([], tiny_config, tiny_train)


@pytest.mark.slow
def test_loss_halves_on_the_sphere_task(sphere):
    net_config = NetworkConfig.desk(block_dims=[8, 16, 16], input_points=1000, downsample_to=128)
    initial, final = [], []
    for seed in range(5):
        train_config = TrainConfig.desk(iterations=500, fine_res=32, coarse_res=8, queries_per_step=1024, seed=seed)
        result = Trainer([sphere], net_config, train_config).run()
        initial.append(result.initial_loss)
        final.append(result.final_loss)
    assert np.median(final) < 0.5 * np.median(initial)


@pytest.mark.slow
def test_trained_field_matches_the_sphere(sphere, trained_sphere):
    net, _, _ = trained_sphere
    cloud = training_cloud(sphere, net.config, 0.005, seed=99)
    field = predict_field(cloud, net, resolution=32)
    truth = sphere.occupancy(field.world_points()).reshape(field.grid.shape)
    assert np.mean(np.abs(field.grid.values - truth) < 0.5) > 0.95


@pytest.mark.slow
def test_desk_reconstruction_of_the_sphere(sphere, trained_sphere):
    net, result, _ = trained_sphere
    assert result.iterations <= 2000
    assert net.config.input_points == 3000
    cloud = training_cloud(sphere, net.config, 0.005, seed=99)
    field = predict_field(cloud, net, resolution=64)
    t = field.normalization
    mesh = laplacian_smooth(marching_cubes(field.grid, 0.5), 3, 0.5).transformed(1.0 / t.scale, t.center)
    report = evaluate_against_oracle(mesh, sphere, grid_res=64)
    assert report.iou > 0.90, report.summary()
    assert report.nc > 0.90, report.summary()
    assert report.cd1 < 0.05, report.summary()


@pytest.mark.slow
def test_full_preset_takes_a_step(sphere):
    config = TrainConfig.full(iterations=1, fine_res=32, coarse_res=8, queries_per_step=256)
    result = Trainer([sphere], NetworkConfig.full(), config).run()
    assert np.isfinite(result.losses[0])


# ============================================================================
# Ablation
# ============================================================================

def test_ablation_table(tiny_config, tiny_train):
    kinds = [AttentionKind.NORMALIZED_MATRIX, AttentionKind.POINT_CONV]
    table = run_ablation(kinds, [0], Sphere(0.4), tiny_config, tiny_train, resolution=8)
    assert list(table.columns) == ["kind", "seed", "final_loss", "iou"]
    assert list(table["kind"]) == ["normalized_matrix", "point_conv"]
    assert table["iou"].between(0.0, 1.0).all()


def test_ablation_summary():
    table = pd.DataFrame(
        {
            "kind": ["normalized_matrix", "normalized_matrix", "vector", "vector", "scalar_dot", "scalar_dot"],
            "seed": [0, 1, 0, 1, 0, 1],
            "final_loss": [0.1] * 6,
            "iou": [0.9, 0.8, 0.86, 0.86, 0.5, 0.7],
        }
    )
    summary = summarize_ablation(table)
    assert list(summary.index) == ["vector", "normalized_matrix", "scalar_dot"]
    assert summary.loc["normalized_matrix", "mean"] == pytest.approx(0.85)
    assert normalized_matrix_leads(table)
    assert not normalized_matrix_leads(table, tolerance=0.0)
