"""CNN baseline matched to the capsule network's conv trunk.

Same two convolutions (identical channel counts, kernels, strides), relu
after each, then global average pooling and a dense softmax head trained with
cross-entropy. Trunk parameter-count parity with the paired capsule model is
checked at construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .capsnet import CapsNetConfig, _kaiming_uniform
from .errors import ShapeError
from .tensor import (
    Conv1dLayer,
    DenseLayer,
    conv1d_backward,
    conv1d_forward,
    conv1d_output_len,
    dense_backward,
    dense_forward,
    relu,
    relu_backward,
    softmax,
)


@dataclass(frozen=True)
class CnnConfig:
    signal_len: int = 64
    conv1_channels: int = 32
    conv1_kernel: int = 9
    conv1_stride: int = 1
    conv2_channels: int = 32
    conv2_kernel: int = 9
    conv2_stride: int = 2
    n_classes: int = 5

    def __post_init__(self):
        if self.conv1_len < 1 or self.conv2_len < 1:
            raise ValueError("signal too short for the configured conv stack")

    @property
    def conv1_len(self) -> int:
        return conv1d_output_len(self.signal_len, self.conv1_kernel, self.conv1_stride)

    @property
    def conv2_len(self) -> int:
        return conv1d_output_len(self.conv1_len, self.conv2_kernel, self.conv2_stride)

    @classmethod
    def matched_to(cls, caps: CapsNetConfig) -> "CnnConfig":
        """Trunk copied field-for-field from a capsule config."""
        return cls(
            signal_len=caps.signal_len,
            conv1_channels=caps.conv1_channels,
            conv1_kernel=caps.conv1_kernel,
            conv1_stride=caps.conv1_stride,
            conv2_channels=caps.conv2_channels,
            conv2_kernel=caps.conv2_kernel,
            conv2_stride=caps.conv2_stride,
            n_classes=caps.n_classes,
        )

    def trunk_signature(self) -> tuple:
        return (
            self.signal_len,
            self.conv1_channels,
            self.conv1_kernel,
            self.conv1_stride,
            self.conv2_channels,
            self.conv2_kernel,
            self.conv2_stride,
        )


def trunk_signature_of_caps(caps: CapsNetConfig) -> tuple:
    return CnnConfig.matched_to(caps).trunk_signature()


@dataclass
class CnnCache:
    x: np.ndarray
    conv1_pre: np.ndarray
    conv1_out: np.ndarray
    conv2_pre: np.ndarray
    conv2_out: np.ndarray
    pooled: np.ndarray
    logits: np.ndarray


def cross_entropy_loss(logits: np.ndarray, label: int) -> float:
    """-log softmax(logits)[label], computed in log space."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    shifted = logits - logits.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[label])


def cross_entropy_grad_logits(logits: np.ndarray, label: int) -> np.ndarray:
    grad = softmax(np.asarray(logits, dtype=np.float64))
    grad[label] -= 1.0
    return grad


class CnnModel:
    """Conv trunk + global-average-pool + dense head; float64 throughout."""

    kind = "cnn"

    def __init__(
        self,
        config: CnnConfig,
        seed: int = 0,
        match: CapsNetConfig | None = None,
    ):
        if match is not None and config.trunk_signature() != trunk_signature_of_caps(match):
            raise ValueError(
                "trunk parity violated: CNN trunk does not match the paired capsule config"
            )
        self.config = config
        self.seed = int(seed)
        cfg = config
        rng = np.random.default_rng(self.seed)
        self.conv1 = Conv1dLayer(
            kernels=_kaiming_uniform(
                rng, (cfg.conv1_channels, 1, cfg.conv1_kernel), 1 * cfg.conv1_kernel
            ),
            bias=np.zeros(cfg.conv1_channels),
            stride=cfg.conv1_stride,
        )
        self.conv2 = Conv1dLayer(
            kernels=_kaiming_uniform(
                rng,
                (cfg.conv2_channels, cfg.conv1_channels, cfg.conv2_kernel),
                cfg.conv1_channels * cfg.conv2_kernel,
            ),
            bias=np.zeros(cfg.conv2_channels),
            stride=cfg.conv2_stride,
        )
        self.head = DenseLayer(
            weights=_kaiming_uniform(rng, (cfg.n_classes, cfg.conv2_channels), cfg.conv2_channels),
            bias=np.zeros(cfg.n_classes),
        )

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("conv1.kernels", self.conv1.kernels),
            ("conv1.bias", self.conv1.bias),
            ("conv2.kernels", self.conv2.kernels),
            ("conv2.bias", self.conv2.bias),
            ("head.weights", self.head.weights),
            ("head.bias", self.head.bias),
        ]

    def flat_params(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for _, arr in self.param_items()])

    def set_flat_params(self, flat: np.ndarray) -> None:
        offset = 0
        for _, arr in self.param_items():
            arr[...] = flat[offset : offset + arr.size].reshape(arr.shape)
            offset += arr.size
        if offset != flat.size:
            raise ShapeError(f"flat vector has {flat.size} values, model needs {offset}")

    def trunk_param_count(self) -> int:
        return self.conv1.kernels.size + self.conv1.bias.size + self.conv2.kernels.size + self.conv2.bias.size

    def _as_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape != (1, self.config.signal_len):
            raise ShapeError(f"input shape {x.shape} != (1, {self.config.signal_len})")
        return x

    def forward(self, x: np.ndarray) -> CnnCache:
        x = self._as_input(x)
        conv1_pre = conv1d_forward(self.conv1, x)
        conv1_out = relu(conv1_pre)
        conv2_pre = conv1d_forward(self.conv2, conv1_out)
        conv2_out = relu(conv2_pre)
        pooled = conv2_out.mean(axis=1)
        logits = dense_forward(self.head, pooled)
        return CnnCache(
            x=x,
            conv1_pre=conv1_pre,
            conv1_out=conv1_out,
            conv2_pre=conv2_pre,
            conv2_out=conv2_out,
            pooled=pooled,
            logits=logits,
        )

    def loss(self, x: np.ndarray, label: int) -> tuple[float, CnnCache]:
        cache = self.forward(x)
        return cross_entropy_loss(cache.logits, label), cache

    def backward(self, cache: CnnCache, label: int) -> dict[str, np.ndarray]:
        grad_logits = cross_entropy_grad_logits(cache.logits, label)
        grad_pooled, grad_head_w, grad_head_b = dense_backward(
            self.head, cache.pooled, grad_logits
        )
        n_positions = cache.conv2_out.shape[1]
        grad_conv2_out = np.repeat(grad_pooled[:, None] / n_positions, n_positions, axis=1)
        grad_conv2_pre = relu_backward(cache.conv2_pre, grad_conv2_out)
        grad_conv1_out, gk2, gb2 = conv1d_backward(
            self.conv2, cache.conv1_out, grad_conv2_pre
        )
        grad_conv1_pre = relu_backward(cache.conv1_pre, grad_conv1_out)
        grad_x, gk1, gb1 = conv1d_backward(self.conv1, cache.x, grad_conv1_pre)
        return {
            "conv1.kernels": gk1,
            "conv1.bias": gb1,
            "conv2.kernels": gk2,
            "conv2.bias": gb2,
            "head.weights": grad_head_w,
            "head.bias": grad_head_b,
            "x": grad_x.ravel(),
        }

    def loss_and_input_grad(self, x: np.ndarray, label: int) -> tuple[float, np.ndarray]:
        value, cache = self.loss(x, label)
        return value, self.backward(cache, label)["x"]

    def predict(self, x: np.ndarray) -> int:
        return int(np.argmax(self.forward(x).logits))


def cnn_forward(model: CnnModel, x: np.ndarray) -> tuple[np.ndarray, CnnCache]:
    """Forward pass returning (logits, cache); softmax lives in the loss."""
    cache = model.forward(x)
    return cache.logits, cache


def cnn_backward(model: CnnModel, cache: CnnCache, label: int) -> dict[str, np.ndarray]:
    return model.backward(cache, label)
