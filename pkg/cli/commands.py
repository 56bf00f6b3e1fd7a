"""
Command implementations
Each command validates nothing itself (cli.config did that), prints bracketed
progress, writes its outputs plus resolved_config.ini under `out`, and either
returns 0 or raises CommandError with the exit code for the failure.
"""

from pathlib import Path
from typing import Callable, Dict

import numpy as np
import pandas as pd

from attention.kinds import AttentionKind
from attention.probe import complexity_probe, fit_slopes
from attention.study import gradient_spread_table, median_spread
from cli.checks import all_passed, run_gradcheck
from cli.config import (
    AblateSection,
    BenchSection,
    EvalSection,
    GradcheckSection,
    ReconstructSection,
    Resolved,
    TrainRun,
    write_resolved,
)
from cli.errors import EXIT_CHECK, EXIT_CONFIG, EXIT_EMPTY, EXIT_IO, EXIT_OK, CommandError
from diffcore import settings
from diffcore.checkpoint import CheckpointError
from geometry.grid import GridMismatchError, VoxelGrid, read_grid, write_grid
from geometry.marching_cubes import marching_cubes
from geometry.mesh import EmptyMeshError, TriangleMesh, read_obj, write_obj
from geometry.oracles import ShapeOracle, parse_shape_spec
from geometry.pointcloud import read_xyz
from geometry.smoothing import laplacian_smooth
from metrics.evaluate import MetricsReport, evaluate_against_oracle, evaluate_meshes, iou
from network.ablation import normalized_matrix_leads, run_ablation, summarize_ablation
from network.model import load_model
from network.models import NetworkConfig, TrainConfig
from network.predict import predict_field
from network.train import DivergenceError, Trainer

FIELD_NAME = "field.grid"
METRICS_NAME = "metrics.csv"


def banner(title: str) -> None:
    print("=" * 60)
    print(title)
    print("=" * 60)


def _apply_dtype(dtype) -> None:
    if dtype is not None:
        settings.use_dtype(dtype)


def _shape(spec: str) -> ShapeOracle:
    try:
        return parse_shape_spec(spec)
    except ValueError as error:
        raise CommandError(EXIT_CONFIG, f"invalid shape spec {spec!r}: {error}")


def _read_mesh(path: str, label: str) -> TriangleMesh:
    try:
        return read_obj(path)
    except (OSError, ValueError) as error:
        raise CommandError(EXIT_IO, f"cannot read {label} {path}: {error}")


def _read_binary_grid(path: str, label: str) -> VoxelGrid:
    try:
        grid = read_grid(path)
    except (OSError, ValueError) as error:
        raise CommandError(EXIT_IO, f"cannot read {label} {path}: {error}")
    if grid.is_binary():
        return grid
    return grid.with_values((grid.values > 0.5).astype(np.int8))


def _write_csv(frame: pd.DataFrame, path: Path, index: bool = False) -> Path:
    frame.to_csv(path, index=index, float_format="%.17g")
    return path


# ============================================================================
# train
# ============================================================================

def cmd_train(run: TrainRun, net_config: NetworkConfig, train_config: TrainConfig) -> int:
    """Train on the configured shapes; writes checkpoint.npz, loss.csv and the resolved config"""
    banner("Tensorformer training")
    _apply_dtype(run.dtype)
    specs = run.shape_specs()
    if not specs:
        raise CommandError(EXIT_CONFIG, "[train] key `shape` names no shape")
    shapes = [_shape(spec) for spec in specs]
    out = Path(run.out)
    resolved = write_resolved("train", (run, net_config, train_config), out)
    print(f"✓ Resolved config written to {resolved}")

    trainer = Trainer(shapes, net_config, train_config, run_id=f"train-seed{train_config.seed}", verbose=True)
    try:
        result = trainer.run(out)
    except DivergenceError as error:
        raise CommandError(EXIT_CHECK, f"training diverged: {error}")
    print(f"✓ Loss curve: {result.loss_csv_path}")
    print(f"✓ Checkpoint: {result.checkpoint_path}")
    return EXIT_OK


# ============================================================================
# reconstruct
# ============================================================================

def cmd_reconstruct(section: ReconstructSection) -> int:
    """Point cloud + checkpoint -> occupancy field -> marching cubes -> smoothing -> OBJ"""
    banner("Tensorformer reconstruction")
    _apply_dtype(section.dtype)
    out = Path(section.out)
    write_resolved("reconstruct", section, out)

    print(f"[1/4] Loading {section.cloud} and {section.checkpoint}...")
    try:
        cloud = read_xyz(section.cloud)
    except (OSError, ValueError) as error:
        raise CommandError(EXIT_IO, f"cannot read point cloud {section.cloud}: {error}")
    if len(cloud) == 0:
        raise CommandError(EXIT_EMPTY, f"point cloud {section.cloud} has no points")
    try:
        net = load_model(section.checkpoint)
    except (OSError, CheckpointError) as error:
        raise CommandError(EXIT_IO, f"cannot load checkpoint {section.checkpoint}: {error}")
    print(f"✓ {len(cloud)} points, {net.params.count()} parameters")

    print(f"\n[2/4] Predicting occupancy on a {section.resolution}^3 grid...")
    field = predict_field(cloud, net, section.resolution, section.batch_size, section.workers)
    t = field.normalization
    world_grid = VoxelGrid(field.grid.values, t.invert(field.grid.origin), field.grid.h / t.scale)
    write_grid(out / FIELD_NAME, world_grid)
    print(f"✓ {int(np.count_nonzero(field.grid.values > section.iso))} cells inside")

    print("\n[3/4] Extracting and smoothing the surface...")
    mesh = marching_cubes(field.grid, section.iso)
    if mesh.is_empty():
        raise CommandError(EXIT_EMPTY, "the predicted field has no surface at this iso level")
    mesh = laplacian_smooth(mesh, section.smooth_iterations, section.smooth_lambda)
    mesh = mesh.transformed(1.0 / t.scale, t.center)

    print("\n[4/4] Writing mesh...")
    path = write_obj(out / section.mesh, mesh)
    print(f"✓ Mesh: {mesh.n_vertices} vertices, {mesh.n_faces} triangles -> {path}")
    return EXIT_OK


# ============================================================================
# eval
# ============================================================================

def cmd_eval(section: EvalSection) -> int:
    """
    Chamfer-L1, normal consistency and IoU of a mesh against a mesh or a shape spec

    IoU source: both grids given -> grid against grid; prediction grid only ->
    its detection points labelled by the reference; no grid -> voxelised meshes.
    """
    banner("Tensorformer evaluation")
    out = Path(section.out)
    write_resolved("eval", section, out)

    mesh = _read_mesh(section.mesh, "mesh")
    oracle = _shape(section.oracle) if section.oracle is not None else None
    reference = _read_mesh(section.reference, "reference mesh") if section.reference is not None else None
    if section.reference_grid is not None and section.prediction_grid is None:
        raise CommandError(EXIT_CONFIG, "[eval] `reference_grid` needs `prediction_grid`")
    prediction = _read_binary_grid(section.prediction_grid, "prediction grid") if section.prediction_grid else None

    try:
        if oracle is not None:
            points = prediction.points() if prediction is not None else None
            report = evaluate_against_oracle(
                mesh, oracle, section.grid_res, section.n, section.seed, prediction, points, section.norm
            )
        else:
            report = evaluate_meshes(mesh, reference, section.grid_res, section.n, section.seed, section.norm)
            if prediction is not None and section.reference_grid is None:
                report = _with_iou(report, iou(prediction, reference.voxelize(prediction)))
        if section.reference_grid is not None:
            truth = _read_binary_grid(section.reference_grid, "reference grid")
            report = _with_iou(report, iou(prediction, truth))
    except EmptyMeshError as error:
        raise CommandError(EXIT_EMPTY, str(error))
    except GridMismatchError as error:
        raise CommandError(EXIT_CONFIG, str(error))

    print(report.summary())
    path = report.to_csv(out / METRICS_NAME)
    print(f"\n✓ Metrics written to {path}")
    return EXIT_OK


def _with_iou(report: MetricsReport, value: float) -> MetricsReport:
    return MetricsReport(**{**report.model_dump(), "iou": value})


# ============================================================================
# gradcheck
# ============================================================================

def cmd_gradcheck(section: GradcheckSection) -> int:
    """Finite-difference check of one scope plus the softmax-versus-linear gradient-spread study"""
    banner(f"Tensorformer gradient check ({section.scope})")
    _apply_dtype(section.dtype)
    out = Path(section.out)
    write_resolved("gradcheck", section, out)

    table = run_gradcheck(section.scope, section.eps, section.tolerance, section.seed, verbose=True)
    _write_csv(table, out / "gradcheck.csv")

    seeds = range(section.spread_seeds)
    for scope, name in (("vector", "gradient_spread.csv"), ("matrix", "gradient_spread_matrix.csv")):
        spread = gradient_spread_table(seeds, scope)
        _write_csv(spread, out / name)
        medians = median_spread(spread)
        mark = "✓" if medians["linear"] > medians["softmax"] else "✗"
        print(
            f"[gradient-spread:{scope}] {mark} median fraction linear={medians['linear']:.4f} "
            f"softmax={medians['softmax']:.4f} over {len(seeds)} seeds"
        )

    failed = table.loc[~table["passed"], "unit"].tolist()
    if not all_passed(table):
        raise CommandError(EXIT_CHECK, f"{len(failed)} unit(s) above {section.tolerance:g}: {', '.join(failed)}")
    print(f"\n✓ All {len(table)} units within {section.tolerance:g}")
    return EXIT_OK


# ============================================================================
# bench
# ============================================================================

def cmd_bench(section: BenchSection) -> int:
    """Time and peak memory per kernel over the (k, d) grid, plus log-log slopes per kind"""
    banner("Tensorformer attention benchmark")
    _apply_dtype(section.dtype)
    out = Path(section.out)
    write_resolved("bench", section, out)

    try:
        kinds = [AttentionKind(kind) for kind in section.kinds]
        table = complexity_probe(
            kinds,
            section.k_values,
            section.d_values,
            section.n_points,
            section.reps,
            section.hidden,
            section.seed,
            section.baseline_d,
            verbose=True,
        )
    except ValueError as error:
        raise CommandError(EXIT_CONFIG, f"invalid benchmark range: {error}")
    _write_csv(table, out / "bench.csv")
    slopes = fit_slopes(table)
    _write_csv(slopes, out / "slopes.csv", index=True)
    for kind, row in slopes.iterrows():
        print(f"[bench] {kind:<20} d-slope {row['d_slope']:.3f}  k-slope {row['k_slope']:.3f}")
    print(f"\n✓ Results written to {out}")
    return EXIT_OK


# ============================================================================
# ablate
# ============================================================================

def cmd_ablate(section: AblateSection) -> int:
    """Train every attention kind on one shape with matched budgets and compare IoU"""
    banner("Tensorformer attention ablation")
    _apply_dtype(section.dtype)
    out = Path(section.out)
    write_resolved("ablate", section, out)

    shape = _shape(section.shape)
    try:
        kinds = [AttentionKind(kind) for kind in section.kinds]
    except ValueError as error:
        raise CommandError(EXIT_CONFIG, f"[ablate] invalid value for `kinds`: {error}")
    table = run_ablation(
        kinds,
        section.seeds,
        shape,
        NetworkConfig.desk(),
        TrainConfig.desk(iterations=section.iterations),
        section.resolution,
        verbose=True,
    )
    _write_csv(table, out / "ablation.csv")
    print(summarize_ablation(table).to_string())
    if AttentionKind.NORMALIZED_MATRIX in kinds and len(kinds) > 1:
        mark = "✓" if normalized_matrix_leads(table) else "✗"
        print(f"\n{mark} normalized matrix attention leads the other kinds")
    return EXIT_OK


_COMMANDS: Dict[str, Callable[..., int]] = {
    "reconstruct": cmd_reconstruct,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
}


def run(command: str, resolved: Resolved) -> int:
    if command == "train":
        return cmd_train(*resolved)
    return _COMMANDS[command](resolved)
