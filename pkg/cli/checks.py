"""
Gradient-check units grouped by scope
Each unit rebuilds a scalar loss from tensors that require gradients; the
harness compares backward() with central differences for every one of them.
"""

from typing import Callable, Dict, List, Literal, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel

from attention.kernels import (
    matrix_aggregate,
    matrix_attention,
    matrix_weights,
    point_conv,
    scaled_dot_attention,
    vector_attention,
)
from attention.kinds import AttentionKind
from attention.neighborhood import knn
from diffcore import ops
from diffcore.gradcheck import grad_check
from diffcore.nn import MLP, ParameterSet
from diffcore.tensor import Tensor
from geometry.oracles import Sphere
from geometry.pointcloud import normalize_cloud
from geometry.sampling import sample_surface
from network.blocks import TensorformerBlock, bce_loss, indicator_features, occupancy_head
from network.model import ReconstructionNet
from network.models import NetworkConfig

Scope = Literal["ops", "attention", "block", "full"]
SCOPES = ("ops", "attention", "block", "full")

Unit = Tuple[Callable[[], Tensor], List[Tensor]]



# ============================================================================
# Records
# ============================================================================

class GradCheckRow(BaseModel):
    unit: str
    max_rel_error: float
    passed: bool


# ============================================================================
# Instances
# ============================================================================

def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.05) -> np.ndarray:
    """Uniform [-1, 1] values pushed at least margin away from 0"""
    x = rng.uniform(-1.0, 1.0, size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def _leaf(value: np.ndarray, name: str) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def _readout(y: Tensor, weights: np.ndarray) -> Tensor:
    return ops.sum(ops.hadamard(y, weights))


def _patch(rng: np.random.Generator, n: int = 5, d: int = 3, k: int = 3):
    points = rng.uniform(-0.5, 0.5, size=(n, 3))
    features = _leaf(rng.uniform(-1.0, 1.0, size=(n, d)), "features")
    return points, features, knn(points, k)


# ============================================================================
# Scopes
# ============================================================================

def ops_units(seed: int = 0) -> Dict[str, Unit]:
    rng = np.random.default_rng(seed)
    units: Dict[str, Unit] = {}

    a = _leaf(rng.uniform(-1, 1, (3, 4)), "a")
    b = _leaf(rng.uniform(-1, 1, (4, 2)), "b")
    r = rng.normal(size=(3, 2))
    units["matmul"] = (lambda: _readout(ops.matmul(a, b), r), [a, b])

    x = _leaf(rng.uniform(-1, 1, (4, 3)), "x")
    y = _leaf(rng.uniform(-1, 1, (3,)), "y")
    r = rng.normal(size=(4, 3))
    units["add"] = (lambda: _readout(ops.add(x, y), r), [x, y])
    units["sub"] = (lambda: _readout(ops.sub(x, y), r), [x, y])
    units["hadamard"] = (lambda: _readout(ops.hadamard(x, y), r), [x, y])
    units["scale"] = (lambda: _readout(ops.scale(x, -2.5), r), [x])
    units["sigmoid"] = (lambda: _readout(ops.sigmoid(x), r), [x])
    units["exp"] = (lambda: _readout(ops.exp(x), r), [x])
    units["sum"] = (lambda: _readout(ops.sum(x, axis=0), r[0]), [x])
    units["mean"] = (lambda: _readout(ops.mean(x, axis=1), r[:, 0]), [x])
    units["reshape"] = (lambda: _readout(ops.reshape(x, (2, 6)), r.reshape(2, 6)), [x])

    kinked = _leaf(_away_from_zero(rng, (4, 3)), "kinked")
    units["relu"] = (lambda: _readout(ops.relu(kinked), r), [kinked])
    units["l1_normalize"] = (lambda: _readout(ops.l1_normalize(kinked, axis=1), r), [kinked])

    positive = _leaf(rng.uniform(0.5, 2.0, (4, 3)), "positive")
    units["log"] = (lambda: _readout(ops.log(positive), r), [positive])
    inside = _leaf(rng.uniform(-0.4, 0.4, (4, 3)), "inside")
    units["clamp"] = (lambda: _readout(ops.clamp(inside, -0.5, 0.5), r), [inside])

    logits = _leaf(rng.uniform(-1, 1, (2, 5, 3)), "logits")
    r3 = rng.normal(size=(2, 5, 3))
    units["softmax"] = (lambda: _readout(ops.softmax(logits, axis=1), r3), [logits])

    table = _leaf(rng.uniform(-1, 1, (5, 3)), "table")
    index = np.array([[0, 4, 4], [2, 2, 1]])
    rg = rng.normal(size=(2, 3, 3))
    units["gather_rows"] = (lambda: _readout(ops.gather_rows(table, index), rg), [table])

    w = _leaf(rng.uniform(-1, 1, (2, 3, 4, 4)), "w")
    v = _leaf(rng.uniform(-1, 1, (2, 3, 4)), "v")
    r2 = rng.normal(size=(2, 4))
    units["einsum2"] = (lambda: _readout(ops.einsum2("nkrc,nkc->nr", w, v), r2), [w, v])

    params = ParameterSet()
    mlp = MLP(params, "mlp", [3, 5, 2], rng)
    inputs = _leaf(rng.uniform(-1, 1, (4, 3)), "mlp_input")
    r = rng.normal(size=(4, 2))
    units["mlp_forward"] = (lambda: _readout(mlp(inputs), r), [inputs] + list(params))
    return units


def attention_units(seed: int = 0) -> Dict[str, Unit]:
    """Kernels on an N=5, d=3, k=3 instance"""
    rng = np.random.default_rng(seed)
    points, features, nbr = _patch(rng)
    r = rng.normal(size=(5, 3))
    units: Dict[str, Unit] = {}

    units["scaled_dot_attention"] = (lambda: _readout(scaled_dot_attention(features, nbr), r), [features])

    params = ParameterSet()
    phi = MLP(params, "phi", [3, 4, 3], rng)
    units["vector_attention"] = (lambda: _readout(vector_attention(features, nbr, phi), r), [features] + list(params))

    for norm in ("linear", "softmax", "none"):
        params = ParameterSet()
        psi = MLP(params, f"psi_{norm}", [3, 4, 9], rng)
        units[f"matrix_attention_{norm}"] = (
            lambda psi=psi, norm=norm: _readout(matrix_attention(features, nbr, psi, norm), r),
            [features] + list(params),
        )

    params = ParameterSet()
    diag = MLP(params, "psi_diag", [3, 4, 3], rng)
    units["matrix_attention_diagonal"] = (
        lambda: _readout(matrix_attention(features, nbr, diag, "softmax", structure="diagonal"), r),
        [features] + list(params),
    )

    weights = _leaf(_away_from_zero(rng, (5, 3, 3, 3)), "weights")
    neighbors = _leaf(rng.uniform(-1, 1, (5, 3, 3)), "neighbors")
    units["matrix_aggregate"] = (lambda: _readout(matrix_aggregate(weights, neighbors, "linear"), r), [weights, neighbors])

    params = ParameterSet()
    psi = MLP(params, "psi_weights", [3, 4, 9], rng)
    canonical = nbr.canonical()
    r4 = rng.normal(size=(5, 3, 3, 3))
    units["matrix_weights"] = (lambda: _readout(matrix_weights(features, canonical, psi), r4), [features] + list(params))

    params = ParameterSet()
    wnet = MLP(params, "wnet", [3, 4, 9], rng)
    units["point_conv"] = (lambda: _readout(point_conv(features, nbr, wnet), r), [features] + list(params))
    return units


def block_units(seed: int = 0) -> Dict[str, Unit]:
    """Tensorformer block, indicator layer and the occupancy loss"""
    rng = np.random.default_rng(seed)
    points, _, nbr = _patch(rng, n=8, d=4, k=4)
    features = _leaf(rng.uniform(-1, 1, (8, 4)), "features")
    units: Dict[str, Unit] = {}

    params = ParameterSet()
    same = TensorformerBlock(params, "block", 4, 4, AttentionKind.NORMALIZED_MATRIX, rng, kernel_hidden=4)
    r = rng.normal(size=(8, 4))
    units["tensorformer_block"] = (lambda: _readout(same(features, nbr), r), [features] + list(params))

    params = ParameterSet()
    wider = TensorformerBlock(params, "wide", 4, 6, AttentionKind.NORMALIZED_MATRIX, rng, kernel_hidden=4)
    r6 = rng.normal(size=(8, 6))
    units["tensorformer_block_widening"] = (lambda: _readout(wider(features, nbr), r6), [features] + list(params))

    queries = rng.uniform(-0.5, 0.5, size=(6, 3))
    params = ParameterSet()
    omega = MLP(params, "omega", [3, 4, 4], rng)
    rq = rng.normal(size=(6, 4))
    units["indicator_features"] = (
        lambda: _readout(indicator_features(queries, points, features, omega, 4), rq),
        [features] + list(params),
    )

    params = ParameterSet()
    head = MLP(params, "head", [4, 5, 1], rng)
    g = _leaf(rng.uniform(-1, 1, (6, 4)), "g")
    labels = (rng.random(6) < 0.5).astype(np.int8)
    units["occupancy_bce"] = (lambda: bce_loss(occupancy_head(g, head), labels), [g] + list(params))
    return units


def full_units(seed: int = 0) -> Dict[str, Unit]:
    """BCE loss of a tiny reconstruction network with respect to every parameter"""
    net = ReconstructionNet(NetworkConfig.tiny(), seed=seed)
    sphere = Sphere(0.4)
    cloud, transform = normalize_cloud(sample_surface(sphere, net.config.input_points, 0.002, seed=seed))
    rng = np.random.default_rng(seed)
    queries = rng.uniform(-0.5, 0.5, size=(16, 3))
    labels = sphere.occupancy(transform.invert(queries))
    return {"tiny_network": (lambda: bce_loss(net(cloud.points, queries), labels), list(net.params))}


_BUILDERS = {"ops": ops_units, "attention": attention_units, "block": block_units, "full": full_units}


# ============================================================================
# Harness
# ============================================================================

def run_gradcheck(
    scope: Scope = "ops",
    eps: float = 1e-4,
    tolerance: float = 1e-3,
    seed: int = 0,
    verbose: bool = False,
) -> pd.DataFrame:
    """
    Check every unit of a scope; every entry of every input is perturbed

    Returns:
        DataFrame with columns unit, max_rel_error, passed
    """
    if scope not in _BUILDERS:
        raise ValueError(f"scope must be one of {SCOPES}, got {scope!r}")
    rows: List[GradCheckRow] = []
    for name, (fn, inputs) in _BUILDERS[scope](seed).items():
        error = grad_check(fn, inputs, eps=eps, seed=seed)
        row = GradCheckRow(unit=name, max_rel_error=error, passed=error < tolerance)
        rows.append(row)
        if verbose:
            mark = "✓" if row.passed else "✗"
            print(f"[gradcheck:{scope}] {mark} {name:<30} max rel error {error:.3e}")
    return pd.DataFrame([row.model_dump() for row in rows], columns=list(GradCheckRow.model_fields))


def all_passed(table: pd.DataFrame) -> bool:
    return bool(table["passed"].all())

