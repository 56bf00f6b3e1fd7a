# Network module

from network.blocks import (
    TensorformerBlock,
    bce_loss,
    farthest_point_sample,
    indicator_features,
    occupancy_head,
    tensorformer_block,
    transfer_features,
)
from network.model import Encoding, ReconstructionNet, load_model
from network.models import NetworkConfig, TrainConfig, TrainResult
from network.predict import OccupancyField, predict_field
from network.train import DivergenceError, Trainer
