"""
Training loop
Adam on the BCE occupancy loss over freshly sampled clouds and queries
"""

import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from diffcore import ops
from diffcore.optim import Adam, cosine_lr
from diffcore.tensor import backward
from geometry.oracles import Flipped, ShapeOracle
from geometry.pointcloud import PointCloud, normalize_cloud
from geometry.sampling import QuerySampler, sample_surface
from network.blocks import bce_loss
from network.model import ReconstructionNet
from network.models import NetworkConfig, TrainConfig, TrainResult

Sample = Tuple[np.ndarray, np.ndarray, np.ndarray]


# Raised when the loss stops being finite; the run is not retried
class DivergenceError(RuntimeError):
    """Training loss became NaN or infinite"""
    pass


class Trainer:
    """Runs one training job over a set of shapes"""

    def __init__(
        self,
        shapes: Sequence[ShapeOracle],
        net_config: NetworkConfig,
        train_config: TrainConfig,
        run_id: Optional[str] = None,
        verbose: bool = False,
    ):
        """
        Args:
            shapes: Training shapes (normalized units)
            net_config: Network shape
            train_config: Optimisation and sampling settings
            run_id: Prefix of progress lines (defaults to "train-seed<seed>")
            verbose: Print progress
        """
        if not shapes:
            raise ValueError("training needs at least one shape")
        self.shapes = list(shapes)
        self.net_config = net_config
        self.config = train_config
        self.run_id = run_id or f"train-seed{train_config.seed}"
        self.verbose = verbose
        self.net = ReconstructionNet(net_config, seed=train_config.seed)
        self.optimizer = Adam(self.net.params)
        self.rng = np.random.default_rng(train_config.seed)
        self._samplers: Dict[Tuple[int, int], QuerySampler] = {}
        self._cached: List[Sample] = []

        self.log(f"Trainer initialized: {len(self.shapes)} shape(s), {self.net.params.count()} parameters")
        self.log(f"Attention: {net_config.attention_kind.value}, k={net_config.k}, blocks={net_config.block_dims}")

    def log(self, message: str) -> None:
        if self.verbose:
            print(f"[{self.run_id}] {message}")

    def _sampler(self, shape_index: int, flip_axis: int) -> QuerySampler:
        key = (shape_index, flip_axis)
        if key not in self._samplers:
            oracle = self.shapes[shape_index]
            if flip_axis >= 0:
                oracle = Flipped(oracle, flip_axis)
            self._samplers[key] = QuerySampler(oracle, self.config.fine_res, self.config.coarse_res)
        return self._samplers[key]

    def draw_sample(self) -> Sample:
        """
        One training example in network coordinates

        Returns:
            (normalized cloud (N, 3), normalized queries (Q, 3), labels (Q,))
        """
        cfg = self.config
        shape_index = int(self.rng.integers(len(self.shapes)))
        flip_axis = int(self.rng.integers(3)) if cfg.flip_augment and self.rng.random() < 0.5 else -1
        sampler = self._sampler(shape_index, flip_axis)
        oracle = sampler.oracle

        noise = cfg.noise_std_fraction * oracle.max_side()
        cloud = sample_surface(oracle, self.net_config.input_points, noise, seed=int(self.rng.integers(2**31)))
        normalized, transform = normalize_cloud(cloud, self.net_config.normalize_extent)

        queries, labels = sampler.draw(self.rng)
        if cfg.queries_per_step is not None and len(queries) > cfg.queries_per_step:
            keep = np.sort(self.rng.choice(len(queries), size=cfg.queries_per_step, replace=False))
            queries, labels = queries[keep], labels[keep]
        return normalized.points, transform.apply(queries), labels

    def _batch(self, iteration: int) -> List[Sample]:
        every = self.config.resample_every
        if not self._cached or (every > 0 and iteration % every == 0):
            self._cached = [self.draw_sample() for _ in range(self.config.batch_size)]
        return self._cached

    def learning_rate(self, iteration: int) -> float:
        if self.config.schedule == "cosine":
            return cosine_lr(iteration, self.config.iterations, self.config.learning_rate)
        return self.config.learning_rate

    def step(self, iteration: int) -> Tuple[float, float]:
        """One optimiser update; returns (loss, learning rate)"""
        lr = self.learning_rate(iteration)
        self.net.params.zero_grad()
        total = None
        for points, queries, labels in self._batch(iteration):
            loss = bce_loss(self.net(points, queries), labels)
            total = loss if total is None else ops.add(total, loss)
        loss = ops.scale(total, 1.0 / self.config.batch_size)
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(f"loss became {value} at iteration {iteration}")
        backward(loss, self.net.params)
        self.optimizer.step(lr)
        return value, lr

    def run(self, out_dir: Optional[Union[str, Path]] = None) -> TrainResult:
        """
        Train for the configured number of iterations

        Args:
            out_dir: When given, checkpoint.npz and loss.csv are written there

        Returns:
            Loss curve and written paths
        """
        total = self.config.iterations
        losses: List[float] = []
        rates: List[float] = []
        self.log(f"Training for {total} iterations")
        try:
            for iteration in range(total):
                loss, lr = self.step(iteration)
                losses.append(loss)
                rates.append(lr)
                if (iteration + 1) % self.config.log_every == 0 or iteration + 1 == total:
                    self.log(f"iter {iteration + 1}/{total} loss={loss:.4f} lr={lr:.3g}")
        except DivergenceError as error:
            self.log(f"✗ {error}")
            raise

        result = TrainResult(run_id=self.run_id, iterations=total, losses=losses, learning_rates=rates)
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            checkpoint = self.net.save(out_dir / "checkpoint.npz", {"train": self.config.model_dump(mode="json")})
            csv_path = write_loss_csv(out_dir / "loss.csv", losses, rates)
            result.checkpoint_path = str(checkpoint)
            result.loss_csv_path = str(csv_path)
            self.log(f"✓ Checkpoint written to {checkpoint}")
        self.log(f"✓ Done: loss {losses[0]:.4f} -> {result.final_loss:.4f}")
        return result


def write_loss_csv(path: Union[str, Path], losses: Sequence[float], rates: Sequence[float]) -> Path:
    path = Path(path)
    frame = pd.DataFrame({"iteration": np.arange(len(losses)), "loss": losses, "lr": rates})
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def train(
    shapes: Sequence[ShapeOracle],
    net_config: NetworkConfig,
    train_config: TrainConfig,
    out_dir: Optional[Union[str, Path]] = None,
    verbose: bool = False,
) -> Tuple[ReconstructionNet, TrainResult]:
    """Train a network and return it together with its loss curve"""
    trainer = Trainer(shapes, net_config, train_config, verbose=verbose)
    result = trainer.run(out_dir)
    return trainer.net, result


def training_cloud(oracle: ShapeOracle, net_config: NetworkConfig, noise_std_fraction: float, seed: int) -> PointCloud:
    """Noisy surface cloud sized like a training input"""
    return sample_surface(oracle, net_config.input_points, noise_std_fraction * oracle.max_side(), seed=seed)
