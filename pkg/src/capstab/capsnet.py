"""Dynamic-routing capsule network for 1D signals.

Pipeline: conv feature extractor -> primary capsules (conv features reshaped
into vectors over receptive-field-sized signal parts, then squashed) ->
per-pair affine vote matrices -> iterative routing by agreement with coupling
coefficients -> class capsules whose norms score the classes. A three-stage
dense decoder reconstructs the signal from the selected class capsule.

Training loss is a per-class margin loss on capsule norms plus a weighted
reconstruction MSE. The backward pass is fully hand-derived, including
backprop through the unrolled routing loop, so the loss gradient with respect
to the *input* is exact (required by the gradient-sign attack).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

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
    sigmoid,
    sigmoid_backward,
    softmax,
    softmax_backward,
)


@dataclass(frozen=True)
class CapsNetConfig:
    """Architecture and loss hyperparameters.

    conv1 feeds relu features into the primary-capsule convolution; that
    feature map [conv2_channels x T2] is regrouped into capsules of dimension
    primary_dim. Class capsules have dimension class_dim, one per class.
    """

    signal_len: int = 64
    conv1_channels: int = 32
    conv1_kernel: int = 9
    conv1_stride: int = 1
    conv2_channels: int = 32
    conv2_kernel: int = 9
    conv2_stride: int = 2
    primary_dim: int = 8
    class_dim: int = 16
    n_classes: int = 5
    routing_iters: int = 3
    m_plus: float = 0.9
    m_minus: float = 0.1
    lam: float = 0.5
    recon_weight: float = 0.0005
    decoder_hidden: tuple[int, int] = (128, 256)

    def __post_init__(self):
        if self.conv2_channels % self.primary_dim != 0:
            raise ValueError(
                f"conv2_channels ({self.conv2_channels}) must be a multiple of "
                f"primary_dim ({self.primary_dim})"
            )
        if self.routing_iters < 1:
            raise ValueError("routing_iters must be >= 1")
        if self.conv1_len < 1 or self.primary_positions < 1:
            raise ValueError("signal too short for the configured conv stack")

    @property
    def conv1_len(self) -> int:
        return conv1d_output_len(self.signal_len, self.conv1_kernel, self.conv1_stride)

    @property
    def primary_positions(self) -> int:
        return conv1d_output_len(self.conv1_len, self.conv2_kernel, self.conv2_stride)

    @property
    def primary_groups(self) -> int:
        return self.conv2_channels // self.primary_dim

    @property
    def n_primary(self) -> int:
        return self.primary_groups * self.primary_positions


def squash(s: np.ndarray) -> np.ndarray:
    """Norm-bounding nonlinearity (||s||^2/(1+||s||^2)) * s/||s||; squash(0) = 0."""
    s = np.asarray(s, dtype=np.float64)
    norm_sq = float(np.dot(s, s))
    if norm_sq == 0.0:
        return np.zeros_like(s)
    norm = np.sqrt(norm_sq)
    return (norm / (1.0 + norm_sq)) * s


def squash_rows(s: np.ndarray) -> np.ndarray:
    """Row-wise squash for a stack of capsule vectors [N, d]."""
    norm_sq = np.sum(s * s, axis=1)
    norm = np.sqrt(norm_sq)
    scale = np.divide(norm, 1.0 + norm_sq, out=np.zeros_like(norm), where=norm > 0.0)
    return scale[:, None] * s


def squash_rows_backward(s: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Row-wise Jacobian-transpose product of squash_rows at s.

    With n = ||s|| and v = phi(n) s, phi(n) = n/(1+n^2):
    grad_s = phi(n) g + (phi'(n)/n) (g . s) s,  phi'(n) = (1-n^2)/(1+n^2)^2.
    The zero vector maps to zero gradient (squash is quadratically flat at 0).
    """
    norm_sq = np.sum(s * s, axis=1)
    norm = np.sqrt(norm_sq)
    nonzero = norm > 0.0
    phi = np.divide(norm, 1.0 + norm_sq, out=np.zeros_like(norm), where=nonzero)
    dphi_over_n = np.divide(
        1.0 - norm_sq,
        (1.0 + norm_sq) ** 2 * norm,
        out=np.zeros_like(norm),
        where=nonzero,
    )
    dots = np.sum(grad_out * s, axis=1)
    return phi[:, None] * grad_out + (dphi_over_n * dots)[:, None] * s


def squash_backward(s: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Jacobian-transpose product of squash at a single vector s."""
    return squash_rows_backward(
        np.asarray(s, dtype=np.float64)[None, :], np.asarray(grad_out)[None, :]
    )[0]


def compute_votes(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-pair affine votes: votes[i, j] = w[i, j] @ u[i].

    u: [N_p, d_p] squashed primary capsules; w: [N_p, N_c, d_c, d_p].
    """
    u = np.asarray(u, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if u.ndim != 2 or w.ndim != 4 or w.shape[0] != u.shape[0] or w.shape[3] != u.shape[1]:
        raise ShapeError(f"incompatible shapes u{u.shape} w{w.shape}")
    return np.einsum("ijcd,id->ijc", w, u)


def compute_votes_backward(
    u: np.ndarray, w: np.ndarray, grad_votes: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of compute_votes: (grad_u, grad_w)."""
    grad_u = np.einsum("ijc,ijcd->id", grad_votes, w)
    grad_w = np.einsum("ijc,id->ijcd", grad_votes, u)
    return grad_u, grad_w


@dataclass
class RoutingIterate:
    """Intermediates of one routing iteration (kept for backward)."""

    c: np.ndarray  # coupling coefficients [N_p, N_c]
    s: np.ndarray  # weighted vote sums [N_c, d_c]
    v: np.ndarray  # squashed outputs [N_c, d_c]


@dataclass
class RoutingState:
    """Routing logits and coupling coefficients of one forward pass.

    `history` holds every iteration's intermediates, in order; the last
    entry's c equals `c`.
    """

    b: np.ndarray
    c: np.ndarray
    history: tuple[RoutingIterate, ...] = field(default=(), repr=False)

    @property
    def coupling_history(self) -> list[np.ndarray]:
        return [it.c for it in self.history]


def dynamic_routing(votes: np.ndarray, iters: int) -> tuple[np.ndarray, RoutingState]:
    """Routing by agreement over vote vectors [N_p, N_c, d_c].

    Logits start at zero. Each iteration: couplings c = softmax of logits per
    input capsule, weighted vote sums per output capsule, squash; then (except
    after the last iteration) logits grow by the vote/output agreement
    votes[i,j] . v[j]. Agreeing votes therefore gain coupling while
    disagreeing ones are suppressed.
    """
    votes = np.asarray(votes, dtype=np.float64)
    if votes.ndim != 3:
        raise ShapeError(f"votes must be [N_p, N_c, d_c], got {votes.shape}")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    n_p, n_c, _ = votes.shape
    b = np.zeros((n_p, n_c))
    history: list[RoutingIterate] = []
    v = None
    for r in range(iters):
        c = softmax(b, axis=1)
        s = np.einsum("ij,ijc->jc", c, votes)
        v = squash_rows(s)
        history.append(RoutingIterate(c=c, s=s, v=v))
        if r < iters - 1:
            b = b + np.einsum("ijc,jc->ij", votes, v)
    state = RoutingState(b=b, c=history[-1].c, history=tuple(history))
    return v, state


def routing_backward(
    votes: np.ndarray, history: Sequence[RoutingIterate], grad_v_out: np.ndarray
) -> np.ndarray:
    """Gradient of the routing output wrt the votes, through every iteration.

    The loop is treated as an unrolled computation graph: gradients flow both
    through the weighted sums and through the logit updates of earlier
    iterations (no stop-gradient).
    """
    n_iters = len(history)
    grad_votes = np.zeros_like(votes)
    grad_b = np.zeros((votes.shape[0], votes.shape[1]))
    grad_v = grad_v_out
    for r in range(n_iters - 1, -1, -1):
        it = history[r]
        if r < n_iters - 1:
            # b_{r+1} = b_r + votes . v_r: split the incoming logit gradient
            grad_votes += grad_b[:, :, None] * it.v[None, :, :]
            grad_v = np.einsum("ij,ijc->jc", grad_b, votes)
        grad_s = squash_rows_backward(it.s, grad_v)
        grad_votes += it.c[:, :, None] * grad_s[None, :, :]
        grad_c = np.einsum("ijc,jc->ij", votes, grad_s)
        grad_b_here = softmax_backward(it.c, grad_c, axis=1)
        grad_b = grad_b + grad_b_here if r < n_iters - 1 else grad_b_here
    return grad_votes


def margin_loss(
    v_norms: np.ndarray,
    label: int,
    m_plus: float = 0.9,
    m_minus: float = 0.1,
    lam: float = 0.5,
) -> float:
    """Sum over classes of hinge-squared terms on the capsule norms."""
    v_norms = np.asarray(v_norms, dtype=np.float64)
    if not 0 <= label < v_norms.shape[0]:
        raise ValueError(f"label {label} out of range for {v_norms.shape[0]} classes")
    present = np.zeros_like(v_norms)
    present[label] = 1.0
    pos = np.maximum(0.0, m_plus - v_norms) ** 2
    neg = np.maximum(0.0, v_norms - m_minus) ** 2
    return float(np.sum(present * pos + lam * (1.0 - present) * neg))


def margin_loss_grad_norms(
    v_norms: np.ndarray,
    label: int,
    m_plus: float = 0.9,
    m_minus: float = 0.1,
    lam: float = 0.5,
) -> np.ndarray:
    """d margin_loss / d v_norms."""
    v_norms = np.asarray(v_norms, dtype=np.float64)
    present = np.zeros_like(v_norms)
    present[label] = 1.0
    grad = -2.0 * present * np.maximum(0.0, m_plus - v_norms)
    grad += 2.0 * lam * (1.0 - present) * np.maximum(0.0, v_norms - m_minus)
    return grad


@dataclass
class CapsNetCache:
    """Everything the backward pass needs from one forward pass."""

    x: np.ndarray  # [1, L]
    conv1_pre: np.ndarray
    conv1_out: np.ndarray
    primary_pre: np.ndarray
    u_raw: np.ndarray
    u: np.ndarray
    votes: np.ndarray
    routing: RoutingState
    v: np.ndarray
    norms: np.ndarray
    selected: int
    dec_h1_pre: np.ndarray
    dec_h1: np.ndarray
    dec_h2_pre: np.ndarray
    dec_h2: np.ndarray
    recon: np.ndarray


def _kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class CapsNetModel:
    """Capsule classifier with reconstruction decoder; float64 throughout."""

    kind = "capsnet"

    def __init__(self, config: CapsNetConfig, seed: int = 0):
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
        self.vote_weights = _kaiming_uniform(
            rng,
            (cfg.n_primary, cfg.n_classes, cfg.class_dim, cfg.primary_dim),
            cfg.primary_dim,
        )
        h1, h2 = cfg.decoder_hidden
        sizes = [(h1, cfg.class_dim), (h2, h1), (cfg.signal_len, h2)]
        self.decoder = tuple(
            DenseLayer(
                weights=_kaiming_uniform(rng, (n_out, n_in), n_in),
                bias=np.zeros(n_out),
            )
            for n_out, n_in in sizes
        )

    # -- parameter access -------------------------------------------------

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        items = [
            ("conv1.kernels", self.conv1.kernels),
            ("conv1.bias", self.conv1.bias),
            ("conv2.kernels", self.conv2.kernels),
            ("conv2.bias", self.conv2.bias),
            ("vote_weights", self.vote_weights),
        ]
        for idx, layer in enumerate(self.decoder):
            items.append((f"decoder.{idx}.weights", layer.weights))
            items.append((f"decoder.{idx}.bias", layer.bias))
        return items

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

    # -- forward / loss / backward ----------------------------------------

    def _as_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape != (1, self.config.signal_len):
            raise ShapeError(
                f"input shape {x.shape} != (1, {self.config.signal_len})"
            )
        return x

    def forward(self, x: np.ndarray, label: int | None = None) -> CapsNetCache:
        """Full forward pass; `label` selects the decoder capsule (training
        masking), otherwise the max-norm capsule is reconstructed."""
        cfg = self.config
        x = self._as_input(x)
        conv1_pre = conv1d_forward(self.conv1, x)
        conv1_out = relu(conv1_pre)
        primary_pre = conv1d_forward(self.conv2, conv1_out)
        u_raw = (
            primary_pre.reshape(cfg.primary_groups, cfg.primary_dim, cfg.primary_positions)
            .transpose(0, 2, 1)
            .reshape(cfg.n_primary, cfg.primary_dim)
        )
        u = squash_rows(u_raw)
        votes = compute_votes(u, self.vote_weights)
        v, routing = dynamic_routing(votes, cfg.routing_iters)
        norms = np.sqrt(np.sum(v * v, axis=1))
        selected = int(label) if label is not None else int(np.argmax(norms))
        if not 0 <= selected < cfg.n_classes:
            raise ValueError(f"label {selected} out of range for {cfg.n_classes} classes")
        z = v[selected]
        dec1, dec2, dec3 = self.decoder
        h1_pre = dense_forward(dec1, z)
        h1 = relu(h1_pre)
        h2_pre = dense_forward(dec2, h1)
        h2 = relu(h2_pre)
        recon = sigmoid(dense_forward(dec3, h2))
        return CapsNetCache(
            x=x,
            conv1_pre=conv1_pre,
            conv1_out=conv1_out,
            primary_pre=primary_pre,
            u_raw=u_raw,
            u=u,
            votes=votes,
            routing=routing,
            v=v,
            norms=norms,
            selected=selected,
            dec_h1_pre=h1_pre,
            dec_h1=h1,
            dec_h2_pre=h2_pre,
            dec_h2=h2,
            recon=recon,
        )

    def loss(self, x: np.ndarray, label: int) -> tuple[float, CapsNetCache]:
        """Total training loss: margin + recon_weight * mse(recon, x)."""
        cache = self.forward(x, label=label)
        cfg = self.config
        margin = margin_loss(cache.norms, label, cfg.m_plus, cfg.m_minus, cfg.lam)
        recon_mse = float(np.mean((cache.recon - cache.x[0]) ** 2))
        return margin + cfg.recon_weight * recon_mse, cache

    def backward(self, cache: CapsNetCache, label: int) -> dict[str, np.ndarray]:
        """Analytic gradients of the total loss for every parameter and for
        the input signal (key "x")."""
        cfg = self.config
        if cache.selected != label:
            raise ValueError("cache was built with a different label selection")
        x1d = cache.x[0]
        length = cfg.signal_len

        # reconstruction term: recon_weight * mean((recon - x)^2)
        grad_recon = (2.0 * cfg.recon_weight / length) * (cache.recon - x1d)
        grad_x_direct = -grad_recon  # x is also the reconstruction target

        dec1, dec2, dec3 = self.decoder
        g3 = sigmoid_backward(cache.recon, grad_recon)
        gi3, gw3, gb3 = dense_backward(dec3, cache.dec_h2, g3)
        g2 = relu_backward(cache.dec_h2_pre, gi3)
        gi2, gw2, gb2 = dense_backward(dec2, cache.dec_h1, g2)
        g1 = relu_backward(cache.dec_h1_pre, gi2)
        gi1, gw1, gb1 = dense_backward(dec1, cache.v[cache.selected], g1)

        grad_v = np.zeros_like(cache.v)
        grad_v[cache.selected] += gi1

        # margin term acts on the norms
        grad_norms = margin_loss_grad_norms(
            cache.norms, label, cfg.m_plus, cfg.m_minus, cfg.lam
        )
        nonzero = cache.norms > 0.0
        grad_v[nonzero] += (grad_norms[nonzero] / cache.norms[nonzero])[:, None] * cache.v[nonzero]

        grad_votes = routing_backward(cache.votes, cache.routing.history, grad_v)
        grad_u, grad_w = compute_votes_backward(cache.u, self.vote_weights, grad_votes)
        grad_u_raw = squash_rows_backward(cache.u_raw, grad_u)
        grad_primary_pre = (
            grad_u_raw.reshape(cfg.primary_groups, cfg.primary_positions, cfg.primary_dim)
            .transpose(0, 2, 1)
            .reshape(cfg.conv2_channels, cfg.primary_positions)
        )
        grad_conv1_out, gk2, gb2c = conv1d_backward(
            self.conv2, cache.conv1_out, grad_primary_pre
        )
        grad_conv1_pre = relu_backward(cache.conv1_pre, grad_conv1_out)
        grad_x2d, gk1, gb1c = conv1d_backward(self.conv1, cache.x, grad_conv1_pre)

        return {
            "conv1.kernels": gk1,
            "conv1.bias": gb1c,
            "conv2.kernels": gk2,
            "conv2.bias": gb2c,
            "vote_weights": grad_w,
            "decoder.0.weights": gw1,
            "decoder.0.bias": gb1,
            "decoder.1.weights": gw2,
            "decoder.1.bias": gb2,
            "decoder.2.weights": gw3,
            "decoder.2.bias": gb3,
            "x": grad_x2d.ravel() + grad_x_direct,
        }

    def loss_and_input_grad(self, x: np.ndarray, label: int) -> tuple[float, np.ndarray]:
        """Loss value and its gradient wrt the input signal (for FGSM)."""
        value, cache = self.loss(x, label)
        return value, self.backward(cache, label)["x"]

    def predict(self, x: np.ndarray) -> int:
        return int(np.argmax(self.forward(x).norms))


def capsnet_forward(
    model: CapsNetModel, x: np.ndarray, label: int | None = None
) -> tuple[np.ndarray, np.ndarray, CapsNetCache]:
    """Forward pass returning (class capsule norms, reconstruction, cache)."""
    cache = model.forward(x, label=label)
    return cache.norms, cache.recon, cache


def capsnet_backward(
    model: CapsNetModel, cache: CapsNetCache, label: int
) -> dict[str, np.ndarray]:
    return model.backward(cache, label)


def reconstruct(model: CapsNetModel, v: np.ndarray, label: int | None = None) -> np.ndarray:
    """Decode one class capsule (all others masked out) to a signal.

    With `label` given, that capsule is decoded (training masking); otherwise
    the max-norm capsule is decoded (inference masking).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (model.config.n_classes, model.config.class_dim):
        raise ShapeError(
            f"v shape {v.shape} != ({model.config.n_classes}, {model.config.class_dim})"
        )
    if label is None:
        label = int(np.argmax(np.sqrt(np.sum(v * v, axis=1))))
    dec1, dec2, dec3 = model.decoder
    h1 = relu(dense_forward(dec1, v[label]))
    h2 = relu(dense_forward(dec2, h1))
    return sigmoid(dense_forward(dec3, h2))
