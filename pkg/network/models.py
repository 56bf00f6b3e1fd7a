"""
Pydantic models for network and training configuration
"""

from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from attention.kinds import AttentionKind


# ============================================================================
# Network
# ============================================================================

class NetworkConfig(BaseModel):
    """Shape of the reconstruction network"""

    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    block_dims: List[int] = Field(default_factory=lambda: [8, 32, 32, 32, 32])  # embedding, then one per block
    k: int = Field(24, ge=1)  # neighbours inside blocks and transfer layers
    input_points: int = Field(3000, ge=2)
    downsample_to: int = Field(512, ge=1)
    indicator_k: Optional[int] = Field(None, ge=1)  # neighbours per query; defaults to k
    indicator_dim: int = Field(128, ge=1)  # expansion between aggregation and head
    head_dims: List[int] = Field(default_factory=lambda: [32, 1])
    omega_hidden: int = Field(32, ge=1)  # hidden width of the position networks
    kernel_hidden: Optional[int] = Field(None, ge=1)  # hidden width of attention weight networks; defaults to d
    attention_kind: AttentionKind = AttentionKind.NORMALIZED_MATRIX
    matrix_norm: Literal["linear", "softmax", "none"] = "linear"
    normalize_extent: float = Field(0.8, gt=0, le=1)

    @field_validator("block_dims")
    @classmethod
    def _block_dims(cls, value):
        if len(value) < 2 or min(value) < 1:
            raise ValueError("block_dims needs an embedding width and at least one positive block width")
        return value

    @field_validator("head_dims")
    @classmethod
    def _head_dims(cls, value):
        if not value or value[-1] != 1 or min(value) < 1:
            raise ValueError("head_dims must be positive and end at width 1")
        return value

    @model_validator(mode="after")
    def _counts(self):
        if self.downsample_to >= self.input_points:
            raise ValueError(
                f"downsample_to ({self.downsample_to}) must be smaller than input_points ({self.input_points})"
            )
        if self.k > self.downsample_to:
            raise ValueError(f"k ({self.k}) cannot exceed downsample_to ({self.downsample_to})")
        return self

    @property
    def query_k(self) -> int:
        return self.indicator_k or self.k

    @classmethod
    def full(cls) -> "NetworkConfig":
        return cls()

    @classmethod
    def desk(cls, **overrides) -> "NetworkConfig":
        """Smaller patches and coarse set for laptop-scale runs"""
        values = {"k": 16, "downsample_to": 256, "indicator_k": 8}
        values.update(overrides)
        return cls(**values)

    @classmethod
    def tiny(cls, **overrides) -> "NetworkConfig":
        """Gradient-check sized network"""
        values = {
            "block_dims": [4, 8, 8],
            "k": 4,
            "input_points": 32,
            "downsample_to": 12,
            "indicator_k": 4,
            "indicator_dim": 8,
            "head_dims": [4, 1],
            "omega_hidden": 4,
            "kernel_hidden": 4,
        }
        values.update(overrides)
        return cls(**values)


# ============================================================================
# Training
# ============================================================================

class TrainConfig(BaseModel):
    """Optimisation and data sampling"""

    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(1e-3, ge=0)  # 0 runs a frozen model (diagnostic)
    schedule: Literal["cosine", "constant"] = "cosine"
    batch_size: int = Field(1, ge=1)
    iterations: int = Field(2000, ge=1)
    noise_std_fraction: float = Field(0.005, ge=0)  # times the largest bounding-box side
    flip_augment: bool = True
    seed: int = 0
    fine_res: int = Field(64, ge=4)
    coarse_res: int = Field(16, ge=2)
    queries_per_step: Optional[int] = Field(2048, ge=1)  # None keeps every sampled query
    resample_every: int = Field(1, ge=0)  # 0 draws one sample and reuses it
    log_every: int = Field(100, ge=1)

    @model_validator(mode="after")
    def _resolutions(self):
        if self.fine_res <= self.coarse_res:
            raise ValueError(f"fine_res ({self.fine_res}) must exceed coarse_res ({self.coarse_res})")
        return self

    @classmethod
    def full(cls, **overrides) -> "TrainConfig":
        values = {"learning_rate": 1e-4, "batch_size": 2, "iterations": 4_000_000}
        values.update(overrides)
        return cls(**values)

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        return cls(**overrides)


class TrainResult(BaseModel):
    """Outcome of a training run"""

    run_id: str
    iterations: int
    losses: List[float]
    learning_rates: List[float]
    checkpoint_path: Optional[str] = None
    loss_csv_path: Optional[str] = None

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        """Mean of the last tenth of the curve"""
        tail = max(1, len(self.losses) // 10)
        return float(sum(self.losses[-tail:]) / tail)
