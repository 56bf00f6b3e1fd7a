"""
Process-level settings
Read once from the environment (or a .env file next to the working directory)
"""

import os

import numpy as np
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Engine precision: "float64" (default) or "float32"
DTYPE_NAME = os.getenv("TENSORFORMER_DTYPE", "float64")

# l1_normalize: rows whose absolute sum is below the floor get the floor added
DENOM_FLOOR = float(os.getenv("TENSORFORMER_DENOM_FLOOR", "1e-12"))

# Raise instead of adding the floor
STRICT_NORM = os.getenv("TENSORFORMER_STRICT_NORM", "0").lower() in ("1", "true", "yes")

_VALID_DTYPES = {"float64": np.float64, "float32": np.float32}

if DTYPE_NAME not in _VALID_DTYPES:
    raise ValueError(f"TENSORFORMER_DTYPE must be one of {sorted(_VALID_DTYPES)}, got {DTYPE_NAME!r}")

DTYPE = _VALID_DTYPES[DTYPE_NAME]


def use_dtype(name: str) -> None:
    """
    Switch the engine precision for tensors created from now on

    Args:
        name: "float64" or "float32"
    """
    global DTYPE, DTYPE_NAME
    if name not in _VALID_DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_VALID_DTYPES)}, got {name!r}")
    DTYPE_NAME = name
    DTYPE = _VALID_DTYPES[name]
