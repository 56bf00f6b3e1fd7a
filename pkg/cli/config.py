"""
Run configuration
Flat `key = value` files with one [section] per command, validated by pydantic
section models. Network and training keys of [train] map onto NetworkConfig and
TrainConfig; every other section has its own model.
"""

import configparser
import os
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Mapping, Optional, Tuple, Type, Union

from dotenv import load_dotenv
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, model_validator

from cli.errors import EXIT_CONFIG, EXIT_IO, CommandError

COMMANDS = ("train", "reconstruct", "eval", "gradcheck", "bench", "ablate")
RESOLVED_NAME = "resolved_config.ini"

load_dotenv()

# Parent of every command's default `out` directory
OUTPUT_DIR = os.getenv("TENSORFORMER_OUTPUT_DIR", "runs")

# Shapes of one [train] section are joined with this separator
SHAPE_SEPARATOR = "|"

# NetworkConfig fields written as comma-separated integers
_LIST_KEYS = ("block_dims", "head_dims")


def _comma_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


def _none_word(value):
    if isinstance(value, str) and value.strip().lower() in ("", "none"):
        return None
    return value


IntList = Annotated[List[int], BeforeValidator(_comma_list)]
StrList = Annotated[List[str], BeforeValidator(_comma_list)]


# ============================================================================
# Section models
# ============================================================================

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")

    out: str
    dtype: Optional[Literal["float64", "float32"]] = None  # None keeps TENSORFORMER_DTYPE


class TrainRun(_Section):
    """Keys of [train] that are not network or training settings"""

    out: str = f"{OUTPUT_DIR}/train"
    shape: str  # one or more shape specs joined by "|"
    preset: Literal["desk", "full"] = "desk"
    seed: int = 0

    def shape_specs(self) -> List[str]:
        return [part.strip() for part in self.shape.split(SHAPE_SEPARATOR) if part.strip()]


class ReconstructSection(_Section):
    out: str = f"{OUTPUT_DIR}/reconstruct"
    cloud: str
    checkpoint: str
    resolution: int = Field(64, ge=8)
    mesh: str = "mesh.obj"
    iso: float = Field(0.5, gt=0, lt=1)
    smooth_iterations: int = Field(3, ge=0)
    smooth_lambda: float = Field(0.5, gt=0, le=1)
    batch_size: int = Field(8192, ge=1)
    workers: int = Field(1, ge=1)


class EvalSection(_Section):
    out: str = f"{OUTPUT_DIR}/eval"
    mesh: str
    reference: Optional[str] = None  # second mesh
    oracle: Optional[str] = None  # or a shape spec
    grid_res: int = Field(64, ge=2)
    n: int = Field(100_000, ge=1)
    seed: int = 0
    norm: Literal["l1", "l2"] = "l1"
    prediction_grid: Optional[str] = None  # occupancy grid written by reconstruct
    reference_grid: Optional[str] = None

    @model_validator(mode="after")
    def _one_reference(self):
        if (self.reference is None) == (self.oracle is None):
            raise ValueError("exactly one of `reference` or `oracle` is required")
        return self


class GradcheckSection(_Section):
    out: str = f"{OUTPUT_DIR}/gradcheck"
    scope: Literal["ops", "attention", "block", "full"] = "ops"
    eps: float = Field(1e-4, gt=0, le=1e-2)
    tolerance: float = Field(1e-3, gt=0)
    seed: int = 0
    spread_seeds: int = Field(50, ge=1)


class BenchSection(_Section):
    out: str = f"{OUTPUT_DIR}/bench"
    kinds: StrList = Field(default_factory=lambda: ["normalized_matrix", "scalar_dot", "vector", "point_conv"])
    k_values: IntList = Field(default_factory=lambda: [16])
    d_values: IntList = Field(default_factory=lambda: [8, 12, 16, 24, 32])
    n_points: int = Field(1024, ge=2)
    reps: int = Field(5, ge=1)
    hidden: int = Field(8, ge=1)
    baseline_d: int = Field(1, ge=1)
    seed: int = 0


class AblateSection(_Section):
    out: str = f"{OUTPUT_DIR}/ablate"
    kinds: StrList = Field(
        default_factory=lambda: [
            "normalized_matrix",
            "scalar_dot",
            "vector",
            "matrix_softmax",
            "matrix_unnormalized",
            "point_conv",
        ]
    )
    seeds: IntList = Field(default_factory=lambda: [0, 1, 2])
    shape: str = "sphere:radius=0.4"
    iterations: int = Field(2000, ge=1)
    resolution: int = Field(32, ge=8)


SECTION_MODELS: Dict[str, Type[_Section]] = {
    "reconstruct": ReconstructSection,
    "eval": EvalSection,
    "gradcheck": GradcheckSection,
    "bench": BenchSection,
    "ablate": AblateSection,
}

Resolved = Union[_Section, Tuple[TrainRun, Any, Any]]


# ============================================================================
# Reading
# ============================================================================

def read_section(path: Optional[Union[str, Path]], command: str) -> Dict[str, str]:
    """
    Raw keys of one command's section

    A missing file is an I/O error (exit 3); a malformed one a config error (exit 2).
    A file without the section yields no keys.
    """
    if path is None:
        return {}
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            parser.read_file(handle)
    except OSError as error:
        raise CommandError(EXIT_IO, f"cannot read config {path}: {error.strerror or error}")
    except configparser.Error as error:
        raise CommandError(EXIT_CONFIG, f"malformed config {path}: {error.message}")
    if not parser.has_section(command):
        return {}
    return dict(parser.items(command))


def parse_assignments(assignments: List[str]) -> Dict[str, str]:
    """`key=value` pairs given with --set"""
    values = {}
    for item in assignments or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise CommandError(EXIT_CONFIG, f"--set expects key=value, got {item!r}")
        values[key.strip()] = value.strip()
    return values


def _config_error(command: str, error: ValidationError) -> CommandError:
    first = error.errors()[0]
    key = ".".join(str(part) for part in first["loc"]) or "section"
    if first["type"] == "missing":
        return CommandError(EXIT_CONFIG, f"[{command}] missing required key `{key}`")
    if first["type"] == "extra_forbidden":
        return CommandError(EXIT_CONFIG, f"[{command}] unknown key `{key}`")
    return CommandError(EXIT_CONFIG, f"[{command}] invalid value for `{key}`: {first['msg']}")


def _clean(values: Mapping[str, Any]) -> Dict[str, Any]:
    return {key: _none_word(value) for key, value in values.items()}


def resolve_train(values: Mapping[str, Any]):
    """
    Split [train] keys between the run, the network and the training loop

    Returns:
        (TrainRun, NetworkConfig, TrainConfig)
    """
    from network.models import NetworkConfig, TrainConfig

    values = _clean(values)
    run_keys = set(TrainRun.model_fields)
    net_keys = set(NetworkConfig.model_fields)
    train_keys = set(TrainConfig.model_fields) - {"seed"}
    for key in values:
        if key not in run_keys | net_keys | train_keys:
            raise CommandError(EXIT_CONFIG, f"[train] unknown key `{key}`")

    net_values = {
        key: _comma_list(value) if key in _LIST_KEYS else value for key, value in values.items() if key in net_keys
    }
    train_values = {key: value for key, value in values.items() if key in train_keys}
    try:
        run = TrainRun(**{key: value for key, value in values.items() if key in run_keys})
        train_values["seed"] = run.seed
        if run.preset == "full":
            net = NetworkConfig(**{**NetworkConfig.full().model_dump(), **net_values})
            loop = TrainConfig.full(**train_values)
        else:
            net = NetworkConfig.desk(**net_values)
            loop = TrainConfig.desk(**train_values)
    except ValidationError as error:
        raise _config_error("train", error)
    return run, net, loop


def resolve(command: str, values: Mapping[str, Any]) -> Resolved:
    """Validate a command's keys; [train] resolves to (TrainRun, NetworkConfig, TrainConfig)"""
    if command == "train":
        return resolve_train(values)
    if command not in SECTION_MODELS:
        raise CommandError(EXIT_CONFIG, f"unknown command {command!r}, expected one of {COMMANDS}")
    try:
        return SECTION_MODELS[command](**_clean(values))
    except ValidationError as error:
        raise _config_error(command, error)


def load_run_config(
    command: str,
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> Resolved:
    """File keys, then overrides (command-line flags), validated"""
    values: Dict[str, Any] = read_section(path, command)
    values.update({key: value for key, value in (overrides or {}).items() if value is not None})
    return resolve(command, values)


# ============================================================================
# Writing
# ============================================================================

def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, (list, tuple)):
        return ",".join(_format(item) for item in value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def flatten(command: str, resolved: Resolved) -> Dict[str, str]:
    """Every resolved key as INI text"""
    if command == "train":
        run, net, loop = resolved
        merged = {**run.model_dump(), **net.model_dump(mode="json"), **loop.model_dump(mode="json")}
    else:
        merged = resolved.model_dump(mode="json")
    return {key: _format(value) for key, value in merged.items()}


def write_resolved(command: str, resolved: Resolved, out_dir: Union[str, Path]) -> Path:
    """Write resolved_config.ini next to a command's outputs; it is a valid --config input"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    parser = configparser.ConfigParser(interpolation=None)
    parser[command] = flatten(command, resolved)
    path = out_dir / RESOLVED_NAME
    with open(path, "w", encoding="utf-8") as handle:
        parser.write(handle)
    return path
