"""
Shared fixtures
Tests run single-threaded so seeded results are bit-reproducible.
"""

import os

for _name in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_name, "1")

import numpy as np
import pytest

from geometry.oracles import Sphere
from network.models import NetworkConfig, TrainConfig
from network.train import train


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def sphere():
    return Sphere(0.4)


@pytest.fixture
def tiny_config():
    return NetworkConfig.tiny()


@pytest.fixture
def tiny_train():
    """A few iterations on coarse query grids"""
    return TrainConfig(iterations=3, fine_res=16, coarse_res=4, queries_per_step=64, log_every=1)


@pytest.fixture
def tiny_train_keys():
    """[train] keys for a tiny run through the command line"""
    return {
        "shape": "sphere:radius=0.4",
        "block_dims": "4,8,8",
        "k": "4",
        "input_points": "32",
        "downsample_to": "12",
        "indicator_k": "4",
        "indicator_dim": "8",
        "head_dims": "4,1",
        "omega_hidden": "4",
        "kernel_hidden": "4",
        "iterations": "3",
        "fine_res": "16",
        "coarse_res": "4",
        "queries_per_step": "64",
    }


@pytest.fixture
def write_ini():
    """Writes one [section] of key = value lines"""

    def write(path, section, values):
        lines = [f"[{section}]"] + [f"{key} = {value}" for key, value in values.items()]
        path.write_text("\n".join(lines) + "\n")
        return path

    return write


@pytest.fixture(scope="session")
def trained_sphere(tmp_path_factory):
    """Desk-preset network trained once on the r=0.4 sphere; (net, result, checkpoint path)"""
    out = tmp_path_factory.mktemp("trained_sphere")
    net, result = train([Sphere(0.4)], NetworkConfig.desk(), TrainConfig.desk(), out_dir=out)
    return net, result, out / "checkpoint.npz"
