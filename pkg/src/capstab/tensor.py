"""Dense-array layer primitives with hand-derived gradients.

All values are 64-bit float numpy arrays in row-major layout. Every forward
operation here is a pure function and has a matching analytic backward;
`finite_difference_grad` is the independent oracle the backwards are checked
against. Convolutions use valid (no) padding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ShapeError


def as_tensor(values) -> np.ndarray:
    """Coerce to a C-contiguous float64 array."""
    return np.ascontiguousarray(values, dtype=np.float64)


def conv1d_output_len(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


@dataclass
class Conv1dLayer:
    """Valid-padding 1D convolution: kernels [C_out, C_in, K], bias [C_out]."""

    kernels: np.ndarray
    bias: np.ndarray
    stride: int = 1

    def __post_init__(self):
        self.kernels = as_tensor(self.kernels)
        self.bias = as_tensor(self.bias)
        if self.kernels.ndim != 3:
            raise ShapeError(f"kernels must be [C_out, C_in, K], got {self.kernels.shape}")
        if self.bias.shape != (self.kernels.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} != ({self.kernels.shape[0]},)")
        if self.stride < 1:
            raise ShapeError(f"stride must be positive, got {self.stride}")

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[2]


@dataclass
class DenseLayer:
    """Affine map out = W @ x + b: weights [N_out, N_in], bias [N_out]."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = as_tensor(self.weights)
        self.bias = as_tensor(self.bias)
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} != ({self.weights.shape[0]},)")


def _conv_windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Strided view of x [C_in, L] as windows [C_in, L_out, K]."""
    win = np.lib.stride_tricks.sliding_window_view(x, kernel, axis=1)
    return win[:, ::stride, :]


def conv1d_forward(layer: Conv1dLayer, x: np.ndarray) -> np.ndarray:
    """out[c, t] = bias[c] + sum_{i,k} kernels[c,i,k] * x[i, t*stride + k]."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"input must be [C_in, L], got {x.shape}")
    if x.shape[0] != layer.in_channels:
        raise ShapeError(f"input has {x.shape[0]} channels, layer expects {layer.in_channels}")
    if x.shape[1] < layer.kernel_size:
        raise ShapeError(f"input length {x.shape[1]} < kernel size {layer.kernel_size}")
    win = _conv_windows(x, layer.kernel_size, layer.stride)
    return np.einsum("itk,oik->ot", win, layer.kernels) + layer.bias[:, None]


def conv1d_backward(
    layer: Conv1dLayer, x: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv1d_forward: (grad_input, grad_kernels, grad_bias)."""
    x = as_tensor(x)
    grad_out = as_tensor(grad_out)
    l_out = conv1d_output_len(x.shape[1], layer.kernel_size, layer.stride)
    if grad_out.shape != (layer.out_channels, l_out):
        raise ShapeError(f"grad_out shape {grad_out.shape} != ({layer.out_channels}, {l_out})")
    win = _conv_windows(x, layer.kernel_size, layer.stride)
    grad_bias = grad_out.sum(axis=1)
    grad_kernels = np.einsum("ot,itk->oik", grad_out, win)
    grad_input = np.zeros_like(x)
    # scatter each kernel tap back; for fixed k the target columns are distinct
    spread = np.einsum("ot,oik->itk", grad_out, layer.kernels)
    positions = np.arange(l_out) * layer.stride
    for k in range(layer.kernel_size):
        grad_input[:, positions + k] += spread[:, :, k]
    return grad_input, grad_kernels, grad_bias


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    x = as_tensor(x)
    if x.shape != (layer.weights.shape[1],):
        raise ShapeError(f"input shape {x.shape} != ({layer.weights.shape[1]},)")
    return layer.weights @ x + layer.bias


def dense_backward(
    layer: DenseLayer, x: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of dense_forward: (grad_input, grad_weights, grad_bias)."""
    x = as_tensor(x)
    grad_out = as_tensor(grad_out)
    if grad_out.shape != (layer.weights.shape[0],):
        raise ShapeError(f"grad_out shape {grad_out.shape} != ({layer.weights.shape[0]},)")
    grad_input = layer.weights.T @ grad_out
    grad_weights = np.outer(grad_out, x)
    return grad_input, grad_weights, grad_out.copy()


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Backward from the forward output y = sigmoid(x)."""
    return grad_out * y * (1.0 - y)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max-subtraction) along `axis`."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(y: np.ndarray, grad_out: np.ndarray, axis: int = -1) -> np.ndarray:
    """Backward from the forward output y = softmax(x)."""
    inner = np.sum(grad_out * y, axis=axis, keepdims=True)
    return y * (grad_out - inner)


def finite_difference_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of scalar f at x: (f(x+h e_i) - f(x-h e_i)) / 2h."""
    x = as_tensor(x)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    probe = x.copy()
    probe_flat = probe.ravel()
    for i in range(probe_flat.size):
        orig = probe_flat[i]
        probe_flat[i] = orig + step
        f_plus = f(probe)
        probe_flat[i] = orig - step
        f_minus = f(probe)
        probe_flat[i] = orig
        flat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-ratio discrepancy ||a - b|| / max(||a||, ||b||); 0 when both vanish."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a.ravel()), np.linalg.norm(b.ravel()))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm((a - b).ravel()) / denom)
