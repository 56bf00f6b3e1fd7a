"""
Reconstruction network
embed (fine points) -> transfer to the farthest-point subset -> Tensorformer
blocks -> transfer back to the fine points -> indicator layer -> occupancy head
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from attention.neighborhood import knn
from diffcore.checkpoint import CheckpointStore
from diffcore.nn import MLP, ParameterSet
from diffcore.tensor import Tensor
from network.blocks import (
    TensorformerBlock,
    farthest_point_sample,
    indicator_features,
    occupancy_head,
    transfer_features,
)
from network.models import NetworkConfig


@dataclass
class Encoding:
    """Per-point features of one (normalized) cloud"""

    points: np.ndarray
    features: Tensor
    coarse_index: np.ndarray


class ReconstructionNet:
    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config
        self.params = ParameterSet()
        rng = np.random.default_rng(seed)
        dims = config.block_dims
        hidden = config.omega_hidden

        self.embed = MLP(self.params, "embed", [3, dims[0]], rng)
        self.omega_down = MLP(self.params, "omega_down", [3, hidden, dims[0]], rng)
        self.blocks = [
            TensorformerBlock(
                self.params,
                f"block{i}",
                d_in,
                d_out,
                config.attention_kind,
                rng,
                config.matrix_norm,
                config.kernel_hidden,
            )
            for i, (d_in, d_out) in enumerate(zip(dims, dims[1:]))
        ]
        self.omega_up = MLP(self.params, "omega_up", [3, hidden, dims[-1]], rng)
        self.omega_ind = MLP(self.params, "omega_ind", [3, hidden, dims[-1]], rng)
        self.head = MLP(self.params, "head", [dims[-1], config.indicator_dim] + list(config.head_dims), rng)

    def encode(self, points: np.ndarray) -> Encoding:
        """Backbone features for every input point"""
        points = np.asarray(points, dtype=np.float64)
        k = self.config.k
        m = min(self.config.downsample_to, len(points))
        fine = self.embed(Tensor(points))
        coarse_index = farthest_point_sample(points, m)
        coarse = points[coarse_index]
        features = transfer_features(coarse, points, fine, self.omega_down, min(k, len(points)))
        nbr = knn(coarse, min(k, m))
        for block in self.blocks:
            features = block(features, nbr)
        features = transfer_features(points, coarse, features, self.omega_up, min(k, m))
        return Encoding(points, features, coarse_index)

    def occupancy(self, encoding: Encoding, queries: np.ndarray) -> Tensor:
        """Occupancy probability per query, shape (Q,)"""
        k = min(self.config.query_k, len(encoding.points))
        g = indicator_features(queries, encoding.points, encoding.features, self.omega_ind, k)
        return occupancy_head(g, self.head)

    def __call__(self, points: np.ndarray, queries: np.ndarray) -> Tensor:
        return self.occupancy(self.encode(points), queries)

    def zero_head(self) -> None:
        """Make the head output 0 logits, i.e. 0.5 everywhere"""
        self.head.zero_last()

    def save(self, path: Union[str, Path], extra: Optional[dict] = None) -> Path:
        config = {"network": self.config.model_dump(mode="json")}
        config.update(extra or {})
        return CheckpointStore.save(path, self.params, config)


def load_model(path: Union[str, Path]) -> ReconstructionNet:
    """Rebuild a network from a checkpoint written by ReconstructionNet.save"""
    state, config = CheckpointStore.load(path)
    net = ReconstructionNet(NetworkConfig(**config.get("network", {})))
    net.params.load_state_dict(state)
    return net
