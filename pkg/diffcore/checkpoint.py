"""
Parameter checkpoint files
Handles reading and writing named parameter tensors

Format (stable, versioned): a numpy .npz archive holding
    __format__   the string "tensorformer-checkpoint/1"
    __config__   JSON text of the configuration that built the parameters (may be "{}")
    <name>       one array per parameter, stored with its shape, row-major
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from diffcore.nn import ParameterSet

FORMAT_TAG = "tensorformer-checkpoint/1"
_RESERVED = ("__format__", "__config__")


class CheckpointError(ValueError):
    """Raised when a file is not a readable checkpoint of this format version"""
    pass


class CheckpointStore:
    """Checkpoint read/write operations"""

    @staticmethod
    def save(
        path: Union[str, Path],
        params: ParameterSet,
        config: Optional[Dict[str, Any]] = None,
    ) -> Path:
        """
        Write every parameter of a set to disk

        Args:
            path: Destination file (".npz" is appended by numpy when missing)
            params: Parameters to store
            config: JSON-serialisable description of the model

        Returns:
            Path actually written
        """
        path = Path(path)
        if path.suffix != ".npz":
            path = path.with_suffix(".npz")
        path.parent.mkdir(parents=True, exist_ok=True)

        arrays = {name: p.data for name, p in params.items()}
        for name in arrays:
            if name in _RESERVED:
                raise CheckpointError(f"parameter name {name!r} is reserved")
        np.savez(
            path,
            __format__=np.array(FORMAT_TAG),
            __config__=np.array(json.dumps(config or {}, sort_keys=True)),
            **arrays,
        )
        return path

    @staticmethod
    def load(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
        """
        Read a checkpoint

        Args:
            path: Checkpoint file

        Returns:
            (parameter arrays by name, stored config)
        """
        try:
            with np.load(Path(path), allow_pickle=False) as archive:
                if "__format__" not in archive.files:
                    raise CheckpointError(f"{path}: missing format header")
                tag = str(archive["__format__"])
                if tag != FORMAT_TAG:
                    raise CheckpointError(f"{path}: unsupported checkpoint format {tag!r}, expected {FORMAT_TAG!r}")
                config = json.loads(str(archive["__config__"])) if "__config__" in archive.files else {}
                state = {name: archive[name].copy() for name in archive.files if name not in _RESERVED}
        except (OSError, ValueError) as error:
            if isinstance(error, CheckpointError):
                raise
            raise CheckpointError(f"{path}: not a readable checkpoint ({error})") from error
        return state, config

    @staticmethod
    def restore(path: Union[str, Path], params: ParameterSet) -> Dict[str, Any]:
        """Load values into an existing ParameterSet and return the stored config"""
        state, config = CheckpointStore.load(path)
        params.load_state_dict(state)
        return config


def save_checkpoint(path: Union[str, Path], params: ParameterSet, config: Optional[Dict[str, Any]] = None) -> Path:
    return CheckpointStore.save(path, params, config)


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    return CheckpointStore.load(path)
