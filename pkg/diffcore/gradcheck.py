"""
Finite-difference verification of analytic gradients
"""

from typing import Callable, Dict, Optional, Sequence

import numpy as np

from diffcore import ops
from diffcore.tensor import Tensor, backward, no_grad


def grad_check_detail(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-4,
    max_entries: Optional[int] = None,
    seed: int = 0,
    refine: int = 2,
    tolerance: float = 1e-3,
) -> Dict[str, float]:
    """
    Compare backward() against central differences, per input tensor

    An entry whose error exceeds tolerance is measured again with the step
    divided by 10, up to refine times, and its smallest error is kept; this
    separates a relu/abs kink inside the difference interval from a wrong
    gradient.

    Args:
        fn: Rebuilds the scalar loss from the current values of inputs
        inputs: Tensors (requires_grad=True) whose entries are perturbed
        eps: Central-difference step, in (0, 1e-2]
        max_entries: Check at most this many entries per input (seeded choice)
        seed: Seed for the entry choice
        refine: Number of smaller steps tried for entries above tolerance
        tolerance: Error that triggers a smaller step

    Returns:
        Max relative error per input, keyed by tensor name or position
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must be in (0, 1e-2], got {eps}")

    for tensor in inputs:
        tensor.zero_grad()
    loss = fn()
    backward(loss, inputs)
    analytic = [t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    errors: Dict[str, float] = {}
    for position, (tensor, grad) in enumerate(zip(inputs, analytic)):
        tensor.data = np.ascontiguousarray(tensor.data)
        flat = tensor.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for entry in entries:
            exact = grad.reshape(-1)[entry]
            error = np.inf
            step = eps
            for _ in range(refine + 1):
                numeric = _central_difference(fn, flat, entry, step)
                error = min(error, abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8))
                if error <= tolerance:
                    break
                step /= 10.0
            worst = max(worst, error)
        errors[tensor.name or f"input{position}"] = worst
    return errors


def _central_difference(fn: Callable[[], Tensor], flat: np.ndarray, entry: int, step: float) -> float:
    original = flat[entry]
    with no_grad():
        flat[entry] = original + step
        plus = fn().item()
        flat[entry] = original - step
        minus = fn().item()
    flat[entry] = original
    return (plus - minus) / (2.0 * step)


def grad_check(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-4,
    max_entries: Optional[int] = None,
    seed: int = 0,
    refine: int = 2,
) -> float:
    """Max over all inputs of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)"""
    errors = grad_check_detail(fn, inputs, eps=eps, max_entries=max_entries, seed=seed, refine=refine)
    return max(errors.values()) if errors else 0.0


def active_fraction(grad: np.ndarray, threshold: float = 1e-4) -> float:
    """Fraction of entries whose magnitude exceeds threshold * max magnitude"""
    magnitude = np.abs(grad).reshape(-1)
    peak = magnitude.max()
    if peak == 0.0:
        return 0.0
    return float(np.mean(magnitude > threshold * peak))


def normalization_gradient_spread(
    normalization: str,
    seed: int,
    length: int = 64,
    sigma: float = 5.0,
    threshold: float = 1e-4,
) -> float:
    """
    Fraction of inputs that still receive gradient through a normalisation

    The input is drawn N(0, sigma^2); the loss is a random linear read-out of the
    normalised vector so that no coordinate is favoured.

    Args:
        normalization: "softmax" or "linear"
        seed: Seed for the input and read-out weights
        length: Vector length
        sigma: Standard deviation of the input
        threshold: Relative magnitude counted as receiving gradient

    Returns:
        Fraction in [0, 1]
    """
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(0.0, sigma, size=length), requires_grad=True)
    readout = rng.normal(0.0, 1.0, size=length)
    if normalization == "softmax":
        y = ops.softmax(x)
    elif normalization == "linear":
        y = ops.l1_normalize(x)
    else:
        raise ValueError(f"normalization must be 'softmax' or 'linear', got {normalization!r}")
    loss = ops.sum(ops.hadamard(y, readout))
    backward(loss)
    return active_fraction(x.grad, threshold)
