"""Finite-difference gradient checking for :mod:`engine.tensor` functions."""
from typing import Callable, Sequence

import numpy as np

from .tensor import ComputationTape, Tensor, backward, default_dtype


def numerical_gradient(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], index: int,
                       weights: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central differences of ``sum(fn(*arrays) * weights)`` w.r.t. ``arrays[index]``."""
    base = [np.array(array, dtype=np.float64) for array in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    for position in np.ndindex(target.shape):
        original = target[position]
        target[position] = original + h
        plus = float(np.sum(fn(*(Tensor(a) for a in base)).data * weights))
        target[position] = original - h
        minus = float(np.sum(fn(*(Tensor(a) for a in base)).data * weights))
        target[position] = original
        grad[position] = (plus - minus) / (2.0 * h)
    return grad


def gradcheck(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-3,
              rtol: float = 1e-3, atol: float = 1e-5, seed: int = 0) -> None:
    """Compare tape gradients of ``fn`` against central differences.

    ``fn`` takes one Tensor per array and must be deterministic. The output is
    contracted with fixed random weights so every output element contributes.
    Raises ``AssertionError`` on mismatch.
    """
    with default_dtype(np.float64):
        inputs = [Tensor(np.array(array, dtype=np.float64), requires_grad=True) for array in arrays]
        with ComputationTape() as tape:
            output = fn(*inputs)
            weights = np.random.default_rng(seed).standard_normal(output.shape)
            loss = (output * Tensor(weights)).sum()
        backward(loss, tape)
        for index, tensor in enumerate(inputs):
            numeric = numerical_gradient(fn, arrays, index, weights, h=h)
            analytic = tensor.grad if tensor.grad is not None else np.zeros_like(numeric)
            np.testing.assert_allclose(
                analytic, numeric, rtol=rtol, atol=atol,
                err_msg=f'gradient mismatch for input {index}',
            )
