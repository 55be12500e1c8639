"""Finite-difference verification suite for every differentiable component.

Each check compares an analytic gradient against the central-difference
oracle on random small instances and reports the worst relative error.
Primitive layers must agree to 1e-6, full models (through unrolled routing
and the decoder) to 1e-4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .capsnet import (
    CapsNetConfig,
    CapsNetModel,
    compute_votes,
    compute_votes_backward,
    dynamic_routing,
    routing_backward,
    squash,
    squash_backward,
)
from .cnn import CnnConfig, CnnModel
from .tensor import (
    Conv1dLayer,
    DenseLayer,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    finite_difference_grad,
    rel_error,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    softmax,
    softmax_backward,
)

LAYER_TOL = 1e-6
MODEL_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _jitter(model, rng):
    flat = model.flat_params()
    model.set_flat_params(flat + rng.normal(scale=0.05, size=flat.size))


def _random_tiny_caps_config(rng) -> CapsNetConfig:
    return CapsNetConfig(
        signal_len=int(rng.integers(12, 18)),
        conv1_channels=int(rng.integers(2, 4)),
        conv1_kernel=int(rng.choice([3, 5])),
        conv2_channels=2 * int(rng.integers(1, 3)),
        conv2_kernel=3,
        conv2_stride=int(rng.integers(1, 3)),
        primary_dim=2,
        class_dim=int(rng.integers(3, 5)),
        n_classes=int(rng.integers(2, 6)),
        routing_iters=int(rng.integers(1, 4)),
        decoder_hidden=(int(rng.integers(4, 7)), int(rng.integers(4, 7))),
    )


def _check_conv(rng, n_instances: int, corrupt: bool) -> float:
    worst = 0.0
    for _ in range(n_instances):
        layer = Conv1dLayer(
            kernels=rng.normal(size=(2, 2, 3)), bias=rng.normal(size=2),
            stride=int(rng.integers(1, 3)),
        )
        x = rng.normal(size=(2, 8))
        l_out = (8 - 3) // layer.stride + 1
        proj = rng.normal(size=(2, l_out))
        gi, gk, gb = conv1d_backward(layer, x, proj)
        if corrupt:
            gk = gk * 1.001  # test-only hook: deliberately wrong gradient
        worst = max(
            worst,
            rel_error(gi, finite_difference_grad(
                lambda v: float(np.sum(conv1d_forward(layer, v) * proj)), x)),
            rel_error(gk, finite_difference_grad(
                lambda kv: float(np.sum(conv1d_forward(
                    Conv1dLayer(kv, layer.bias, layer.stride), x) * proj)), layer.kernels)),
            rel_error(gb, proj.sum(axis=1)),
        )
    return worst


def _check_dense(rng, n_instances: int) -> float:
    worst = 0.0
    for _ in range(n_instances):
        layer = DenseLayer(weights=rng.normal(size=(3, 4)), bias=rng.normal(size=3))
        x = rng.normal(size=4)
        proj = rng.normal(size=3)
        gi, gw, gb = dense_backward(layer, x, proj)
        worst = max(
            worst,
            rel_error(gi, finite_difference_grad(
                lambda v: float(dense_forward(layer, v) @ proj), x)),
            rel_error(gw, finite_difference_grad(
                lambda wv: float(dense_forward(DenseLayer(wv, layer.bias), x) @ proj),
                layer.weights)),
            rel_error(gb, proj),
        )
    return worst


def _check_pointwise(rng, n_instances: int) -> dict[str, float]:
    worst = {"relu": 0.0, "softmax": 0.0, "sigmoid": 0.0, "squash": 0.0}
    for _ in range(n_instances):
        x = rng.normal(size=6) + 0.01  # keep clear of the relu kink
        proj = rng.normal(size=6)
        worst["relu"] = max(worst["relu"], rel_error(
            relu_backward(x, proj),
            finite_difference_grad(lambda v: float(relu(v) @ proj), x)))
        worst["softmax"] = max(worst["softmax"], rel_error(
            softmax_backward(softmax(x), proj),
            finite_difference_grad(lambda v: float(softmax(v) @ proj), x)))
        worst["sigmoid"] = max(worst["sigmoid"], rel_error(
            sigmoid_backward(sigmoid(x), proj),
            finite_difference_grad(lambda v: float(sigmoid(v) @ proj), x)))
        s = rng.normal(size=4)
        sproj = rng.normal(size=4)
        worst["squash"] = max(worst["squash"], rel_error(
            squash_backward(s, sproj),
            finite_difference_grad(lambda v: float(squash(v) @ sproj), s)))
    return worst


def _check_routing(rng, n_instances: int) -> float:
    worst = 0.0
    for _ in range(n_instances):
        votes = rng.normal(size=(4, 3, 3))
        iters = int(rng.integers(1, 4))
        proj = rng.normal(size=(3, 3))
        _, state = dynamic_routing(votes, iters)
        analytic = routing_backward(votes, state.history, proj)

        def f(v):
            out, _ = dynamic_routing(v, iters)
            return float(np.sum(out * proj))

        worst = max(worst, rel_error(analytic, finite_difference_grad(f, votes)))
    return worst


def _check_votes(rng, n_instances: int) -> float:
    worst = 0.0
    for _ in range(n_instances):
        u = rng.normal(size=(3, 2))
        w = rng.normal(size=(3, 2, 3, 2))
        proj = rng.normal(size=(3, 2, 3))
        gu, gw = compute_votes_backward(u, w, proj)
        worst = max(
            worst,
            rel_error(gu, finite_difference_grad(
                lambda v: float(np.sum(compute_votes(v, w) * proj)), u)),
            rel_error(gw, finite_difference_grad(
                lambda wv: float(np.sum(compute_votes(u, wv) * proj)), w)),
        )
    return worst


def _check_capsnet(rng, n_configs: int) -> tuple[float, float]:
    worst_params, worst_input = 0.0, 0.0
    for i in range(n_configs):
        cfg = _random_tiny_caps_config(rng)
        model = CapsNetModel(cfg, seed=int(rng.integers(1 << 31)))
        _jitter(model, rng)
        x = rng.uniform(size=cfg.signal_len)
        label = int(rng.integers(cfg.n_classes))
        _, cache = model.loss(x, label)
        grads = model.backward(cache, label)
        analytic = np.concatenate([grads[n].ravel() for n, _ in model.param_items()])

        def f(flat):
            saved = model.flat_params()
            model.set_flat_params(flat)
            value, _ = model.loss(x, label)
            model.set_flat_params(saved)
            return value

        worst_params = max(
            worst_params, rel_error(analytic, finite_difference_grad(f, model.flat_params()))
        )
        worst_input = max(
            worst_input,
            rel_error(grads["x"], finite_difference_grad(
                lambda xv: model.loss(xv, label)[0], x)),
        )
    return worst_params, worst_input


def _check_cnn(rng, n_configs: int) -> tuple[float, float]:
    worst_params, worst_input = 0.0, 0.0
    for i in range(n_configs):
        cfg = CnnConfig(
            signal_len=int(rng.integers(12, 18)),
            conv1_channels=int(rng.integers(2, 4)),
            conv1_kernel=int(rng.choice([3, 5])),
            conv2_channels=int(rng.integers(2, 4)),
            conv2_kernel=3,
            conv2_stride=int(rng.integers(1, 3)),
            n_classes=int(rng.integers(2, 6)),
        )
        model = CnnModel(cfg, seed=int(rng.integers(1 << 31)))
        _jitter(model, rng)
        x = rng.uniform(size=cfg.signal_len)
        label = int(rng.integers(cfg.n_classes))
        _, cache = model.loss(x, label)
        grads = model.backward(cache, label)
        analytic = np.concatenate([grads[n].ravel() for n, _ in model.param_items()])

        def f(flat):
            saved = model.flat_params()
            model.set_flat_params(flat)
            value, _ = model.loss(x, label)
            model.set_flat_params(saved)
            return value

        worst_params = max(
            worst_params, rel_error(analytic, finite_difference_grad(f, model.flat_params()))
        )
        worst_input = max(
            worst_input,
            rel_error(grads["x"], finite_difference_grad(
                lambda xv: model.loss(xv, label)[0], x)),
        )
    return worst_params, worst_input


def run_gradient_checks(
    seed: int = 0,
    corrupt: bool = False,
    n_layer_instances: int = 10,
    n_model_configs: int = 10,
) -> list[CheckResult]:
    """Run the full suite; `corrupt` deliberately breaks one gradient so the
    failure path can be exercised (negative control)."""
    rng = np.random.default_rng(seed)
    results = [
        CheckResult("conv1d", _check_conv(rng, n_layer_instances, corrupt), LAYER_TOL),
        CheckResult("dense", _check_dense(rng, n_layer_instances), LAYER_TOL),
    ]
    pointwise = _check_pointwise(rng, n_layer_instances)
    for name in ("relu", "softmax", "sigmoid", "squash"):
        results.append(CheckResult(name, pointwise[name], LAYER_TOL))
    results.append(CheckResult("votes", _check_votes(rng, n_layer_instances), LAYER_TOL))
    results.append(CheckResult("routing", _check_routing(rng, n_layer_instances), LAYER_TOL))
    caps_params, caps_input = _check_capsnet(rng, n_model_configs)
    results.append(CheckResult("capsnet-params", caps_params, MODEL_TOL))
    results.append(CheckResult("capsnet-input", caps_input, MODEL_TOL))
    cnn_params, cnn_input = _check_cnn(rng, n_model_configs)
    results.append(CheckResult("cnn-params", cnn_params, MODEL_TOL))
    results.append(CheckResult("cnn-input", cnn_input, MODEL_TOL))
    return results
