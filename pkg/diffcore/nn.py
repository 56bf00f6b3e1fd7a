"""
Parameters and multilayer perceptrons
"""

from collections import OrderedDict
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from diffcore import ops
from diffcore.tensor import ShapeError, Tensor

ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {
    "relu": ops.relu,
    "sigmoid": ops.sigmoid,
}


class ParameterSet:
    """Named registry of learnable tensors, in creation order"""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        param = Tensor(value, requires_grad=True, name=name)
        self._params[name] = param
        return param

    def add_uniform(self, name: str, shape: Tuple[int, ...], fan_in: int, rng: np.random.Generator) -> Tensor:
        """Register a tensor drawn uniform in [-sqrt(1/fan_in), +sqrt(1/fan_in)]"""
        bound = np.sqrt(1.0 / max(fan_in, 1))
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def zero_grad(self) -> None:
        for param in self._params.values():
            param.zero_grad()

    def count(self) -> int:
        return int(np.sum([p.size for p in self._params.values()]))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        unexpected = set(state) - set(self._params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, param in self._params.items():
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise ShapeError(f"parameter {name!r}: stored shape {value.shape} vs model shape {param.shape}")
            param.data = value.astype(param.data.dtype, copy=True)
            param.zero_grad()


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Row-vector affine map x @ W + b over the last axis of x"""
    x = ops.as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input shape {x.shape} does not match weight shape {weight.shape}")
    lead = x.shape[:-1]
    flat = x if x.ndim == 2 else ops.reshape(x, (-1, x.shape[-1]))
    y = ops.matmul(flat, weight)
    if bias is not None:
        y = ops.add(y, bias)
    if x.ndim != 2:
        y = ops.reshape(y, lead + (weight.shape[1],))
    return y


def mlp_forward(
    layers: Sequence[Tuple[Tensor, Tensor]],
    x: Tensor,
    hidden_activation: str = "relu",
    final_activation: Optional[str] = None,
) -> Tensor:
    """
    Alternating affine maps and activations

    Args:
        layers: (weight, bias) pairs; weight shape (in, out)
        x: Input whose last axis matches the first layer's input width
        hidden_activation: Applied after every layer but the last
        final_activation: Optional activation after the last layer

    Returns:
        Output tensor
    """
    if not layers:
        raise ShapeError("mlp_forward: empty layer list")
    for (w_prev, _), (w_next, _) in zip(layers, layers[1:]):
        if w_prev.shape[1] != w_next.shape[0]:
            raise ShapeError(f"mlp_forward: layer widths do not chain ({w_prev.shape} -> {w_next.shape})")
    h = ops.as_tensor(x)
    last = len(layers) - 1
    for i, (weight, bias) in enumerate(layers):
        h = linear(h, weight, bias)
        if i < last:
            h = ACTIVATIONS[hidden_activation](h)
        elif final_activation is not None:
            h = ACTIVATIONS[final_activation](h)
    return h


class MLP:
    """Perceptron whose weights live in a shared ParameterSet under a name prefix"""

    def __init__(
        self,
        params: ParameterSet,
        prefix: str,
        dims: Sequence[int],
        rng: np.random.Generator,
        final_activation: Optional[str] = None,
    ):
        if len(dims) < 2:
            raise ShapeError(f"MLP {prefix!r} needs at least input and output widths, got {list(dims)}")
        self.prefix = prefix
        self.dims = list(dims)
        self.final_activation = final_activation
        self.layers: List[Tuple[Tensor, Tensor]] = []
        for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
            weight = params.add_uniform(f"{prefix}.w{i}", (fan_in, fan_out), fan_in, rng)
            bias = params.add_uniform(f"{prefix}.b{i}", (fan_out,), fan_in, rng)
            self.layers.append((weight, bias))

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def zero_last(self) -> None:
        """Zero the last layer so the network outputs 0 (or the activation of 0)"""
        weight, bias = self.layers[-1]
        weight.data[...] = 0.0
        bias.data[...] = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        return mlp_forward(self.layers, x, final_activation=self.final_activation)
