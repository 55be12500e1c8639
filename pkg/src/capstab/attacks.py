"""Sensor-fault and adversarial attacks on fixed-length signals.

The three manual faults (constant offset, gradual drift, temporal lag) draw
their magnitudes from a geometric-Brownian-motion "noise move" process
simulated with the exact log-normal step

    s[t+1] = s[t] * exp((mu - sigma^2/2) dt + sigma sqrt(dt) z_t),

so every one-step ratio is log-normally distributed and paths stay strictly
positive. The adversarial attack is the single-step gradient-sign
perturbation x' = x + alpha * sign(dL/dx) computed with the attacked model's
own exact input gradient; sign(0) = 0, so zero-gradient coordinates are left
unchanged.

Every generator is deterministic given its integer seed; attack sets derive
one sub-seed per sample so any record can be replayed in isolation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .data import Dataset
from .errors import DataError, NumericError

DEFAULT_MU = 0.1
DEFAULT_SIGMA = 0.3
DEFAULT_SCALE = 0.2
DEFAULT_MAX_FRACTION = 0.1
DEFAULT_ALPHA = 0.01


@dataclass(frozen=True)
class NoiseMoveParams:
    """Parameters of the log-normal noise-move process.

    mu: drift rate per unit time; sigma: volatility per sqrt(time);
    dt: step size; s0: starting level; seed: RNG seed for the normal draws.
    """

    mu: float
    sigma: float
    dt: float
    s0: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.s0 <= 0:
            raise ValueError(f"s0 must be > 0, got {self.s0}")


def default_noise_params(signal_len: int, seed: int | None = None) -> NoiseMoveParams:
    """Defaults tuned for [0,1]-normalized signals: one unit of time per signal."""
    return NoiseMoveParams(
        mu=DEFAULT_MU, sigma=DEFAULT_SIGMA, dt=1.0 / signal_len, s0=1.0, seed=seed
    )


ATTACK_NAMES = ("offset", "drift-inc", "drift-dec", "lag-fwd", "lag-bwd", "fgsm")


def default_attack_specs(
    signal_len: int,
    alpha: float = DEFAULT_ALPHA,
    mu: float = DEFAULT_MU,
    sigma: float = DEFAULT_SIGMA,
    scale: float = DEFAULT_SCALE,
    max_fraction: float = DEFAULT_MAX_FRACTION,
) -> dict[str, "AttackSpec"]:
    """The canonical named attack grid, in report order."""
    noise = NoiseMoveParams(mu=mu, sigma=sigma, dt=1.0 / signal_len, s0=1.0)
    return {
        "offset": Offset(scale=scale, noise=noise),
        "drift-inc": Drift(direction="increasing", scale=scale, noise=noise),
        "drift-dec": Drift(direction="decreasing", scale=scale, noise=noise),
        "lag-fwd": Lag(direction="forward", max_fraction=max_fraction, noise=noise),
        "lag-bwd": Lag(direction="backward", max_fraction=max_fraction, noise=noise),
        "fgsm": Fgsm(alpha=alpha),
    }


def noise_move_path(params: NoiseMoveParams, n_steps: int) -> np.ndarray:
    """Simulate s[0..n_steps] with the exact log-normal step; s[0] = s0."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    rng = np.random.default_rng(params.seed)
    z = rng.standard_normal(n_steps)
    increments = (params.mu - 0.5 * params.sigma**2) * params.dt + params.sigma * np.sqrt(
        params.dt
    ) * z
    log_path = np.concatenate([[0.0], np.cumsum(increments)])
    return params.s0 * np.exp(log_path)


def sample_magnitude(params: NoiseMoveParams, horizon_steps: int) -> float:
    """One scalar noise level: the relative move s[T]/s0 - 1 of a fresh path."""
    path = noise_move_path(params, horizon_steps)
    return float(path[-1] / params.s0 - 1.0)


@dataclass(frozen=True)
class Offset:
    """Constant baseline shift by scale * (noise-move magnitude)."""

    scale: float = DEFAULT_SCALE
    noise: NoiseMoveParams | None = None


@dataclass(frozen=True)
class Drift:
    """Gradually growing (or shrinking) additive trend following a noise path."""

    direction: str = "increasing"
    scale: float = DEFAULT_SCALE
    noise: NoiseMoveParams | None = None

    def __post_init__(self):
        if self.direction not in ("increasing", "decreasing"):
            raise ValueError(f"direction must be increasing|decreasing, got {self.direction!r}")


@dataclass(frozen=True)
class Lag:
    """Temporal shift by a noise-scaled number of samples, edges replicated."""

    direction: str = "forward"
    max_fraction: float = DEFAULT_MAX_FRACTION
    noise: NoiseMoveParams | None = None

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"direction must be forward|backward, got {self.direction!r}")
        if not 0.0 < self.max_fraction <= 0.5:
            raise ValueError(f"max_fraction must be in (0, 0.5], got {self.max_fraction}")


@dataclass(frozen=True)
class Fgsm:
    """Single-step gradient-sign perturbation of strength alpha."""

    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not self.alpha >= 0 or not np.isfinite(self.alpha):
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")


AttackSpec = Union[Offset, Drift, Lag, Fgsm]


@dataclass
class AttackedSample:
    """One original/attacked signal pair plus how it was produced."""

    original: np.ndarray
    attacked: np.ndarray
    spec: AttackSpec
    realized_magnitude: float
    label: int | None = None
    seed: int | None = None

    def __post_init__(self):
        self.original = np.ascontiguousarray(self.original, dtype=np.float64)
        self.attacked = np.ascontiguousarray(self.attacked, dtype=np.float64)
        if self.attacked.shape != self.original.shape:
            raise ValueError(
                f"attacked shape {self.attacked.shape} != original {self.original.shape}"
            )


def _noise_for(spec, x: np.ndarray, seed: int | None) -> NoiseMoveParams:
    params = spec.noise if spec.noise is not None else default_noise_params(x.size)
    if seed is not None:
        params = replace(params, seed=int(seed))
    return params


def offset_attack(x: np.ndarray, spec: Offset, seed: int | None = None) -> AttackedSample:
    """Shift every sample by the same noise-move amount."""
    x = np.asarray(x, dtype=np.float64)
    params = _noise_for(spec, x, seed)
    magnitude = spec.scale * sample_magnitude(params, x.size)
    return AttackedSample(
        original=x,
        attacked=x + magnitude,
        spec=spec,
        realized_magnitude=magnitude,
        seed=params.seed,
    )


def drift_attack(x: np.ndarray, spec: Drift, seed: int | None = None) -> AttackedSample:
    """Add a noise-move ramp: attacked[t] = x[t] +/- scale*(s[t]/s0 - 1)."""
    x = np.asarray(x, dtype=np.float64)
    params = _noise_for(spec, x, seed)
    path = noise_move_path(params, x.size - 1)
    ramp = spec.scale * (path / params.s0 - 1.0)
    sign = 1.0 if spec.direction == "increasing" else -1.0
    return AttackedSample(
        original=x,
        attacked=x + sign * ramp,
        spec=spec,
        realized_magnitude=float(sign * ramp[-1]),
        seed=params.seed,
    )


def lag_attack(x: np.ndarray, spec: Lag, seed: int | None = None) -> AttackedSample:
    """Shift the signal in time by k samples, replicating the exposed edge.

    k = round(|noise magnitude| * max_fraction * L), clamped to [0, L//2].
    Forward lag delays the signal (leading edge replicated); backward lag
    advances it (trailing edge replicated).
    """
    x = np.asarray(x, dtype=np.float64)
    params = _noise_for(spec, x, seed)
    magnitude = sample_magnitude(params, x.size)
    k = int(round(abs(magnitude) * spec.max_fraction * x.size))
    k = min(k, x.size // 2)
    attacked = x.copy()
    if k > 0:
        if spec.direction == "forward":
            attacked[k:] = x[: x.size - k]
            attacked[:k] = x[0]
        else:
            attacked[: x.size - k] = x[k:]
            attacked[x.size - k :] = x[-1]
    return AttackedSample(
        original=x,
        attacked=attacked,
        spec=spec,
        realized_magnitude=float(k),
        seed=params.seed,
    )


def fgsm_attack(model, x: np.ndarray, label: int, alpha: float) -> AttackedSample:
    """x' = x + alpha * sign(dL/dx) with the model's own input gradient.

    `model` must expose loss_and_input_grad(x, label); sign(0) = 0 keeps
    zero-gradient coordinates (and the alpha = 0 case) exactly unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    _, grad = model.loss_and_input_grad(x, label)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != x.shape:
        raise ValueError(f"input gradient shape {grad.shape} != signal shape {x.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite input gradient in gradient-sign attack")
    attacked = x + alpha * np.sign(grad)
    return AttackedSample(
        original=x,
        attacked=attacked,
        spec=Fgsm(alpha=alpha),
        realized_magnitude=float(np.max(np.abs(attacked - x))) if x.size else 0.0,
        label=label,
    )


def apply_attack(
    x: np.ndarray,
    spec: AttackSpec,
    seed: int | None = None,
    model=None,
    label: int | None = None,
) -> AttackedSample:
    """Dispatch on the spec variant; Fgsm requires `model` and `label`."""
    if isinstance(spec, Offset):
        return offset_attack(x, spec, seed)
    if isinstance(spec, Drift):
        return drift_attack(x, spec, seed)
    if isinstance(spec, Lag):
        return lag_attack(x, spec, seed)
    if isinstance(spec, Fgsm):
        if model is None or label is None:
            raise ValueError("gradient-sign attack needs a model and the true label")
        return fgsm_attack(model, x, label, spec.alpha)
    raise TypeError(f"unknown attack spec {type(spec).__name__}")


def generate_attack_set(
    dataset: Dataset,
    spec: AttackSpec,
    n: int,
    seed: int,
    model=None,
) -> list[AttackedSample]:
    """Attack n beats drawn from the dataset (with replacement only if n
    exceeds the dataset size). Each sample gets its own deterministic
    sub-seed so the whole set is bit-reproducible and each record replayable.
    """
    if len(dataset) == 0:
        raise DataError("empty dataset")
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    indices = rng.choice(len(dataset), size=n, replace=n > len(dataset))
    sub_seeds = np.random.SeedSequence(seed).generate_state(n)
    samples = []
    for i, idx in enumerate(indices):
        beat = dataset.beats[int(idx)]
        sample = apply_attack(
            beat.signal, spec, seed=int(sub_seeds[i]), model=model, label=beat.label
        )
        sample.label = beat.label
        if sample.seed is None:  # gradient-sign attack is deterministic
            sample.seed = int(sub_seeds[i])
        samples.append(sample)
    return samples


# -- serialization -----------------------------------------------------------

_KIND_BY_TYPE = {Offset: "offset", Drift: "drift", Lag: "lag", Fgsm: "fgsm"}


def _noise_to_dict(noise: NoiseMoveParams | None):
    if noise is None:
        return None
    return {"mu": noise.mu, "sigma": noise.sigma, "dt": noise.dt, "s0": noise.s0, "seed": noise.seed}


def spec_to_dict(spec: AttackSpec) -> dict:
    kind = _KIND_BY_TYPE[type(spec)]
    if isinstance(spec, Offset):
        return {"kind": kind, "scale": spec.scale, "noise": _noise_to_dict(spec.noise)}
    if isinstance(spec, Drift):
        return {
            "kind": kind,
            "direction": spec.direction,
            "scale": spec.scale,
            "noise": _noise_to_dict(spec.noise),
        }
    if isinstance(spec, Lag):
        return {
            "kind": kind,
            "direction": spec.direction,
            "max_fraction": spec.max_fraction,
            "noise": _noise_to_dict(spec.noise),
        }
    return {"kind": kind, "alpha": spec.alpha}


def spec_from_dict(d: dict) -> AttackSpec:
    kind = d.get("kind")
    noise = d.get("noise")
    params = NoiseMoveParams(**noise) if noise is not None else None
    if kind == "offset":
        return Offset(scale=d["scale"], noise=params)
    if kind == "drift":
        return Drift(direction=d["direction"], scale=d["scale"], noise=params)
    if kind == "lag":
        return Lag(direction=d["direction"], max_fraction=d["max_fraction"], noise=params)
    if kind == "fgsm":
        return Fgsm(alpha=d["alpha"])
    raise DataError(f"unknown attack kind {kind!r}")


def write_attack_set(samples: list[AttackedSample], path) -> None:
    """JSON-lines, one record per sample.

    Key order per record: label, seed, realized_magnitude, spec, original,
    attacked.
    """
    with open(path, "w") as fh:
        for s in samples:
            record = {
                "label": s.label,
                "seed": s.seed,
                "realized_magnitude": s.realized_magnitude,
                "spec": spec_to_dict(s.spec),
                "original": s.original.tolist(),
                "attacked": s.attacked.tolist(),
            }
            fh.write(json.dumps(record) + "\n")


def read_attack_set(path) -> list[AttackedSample]:
    samples = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                samples.append(
                    AttackedSample(
                        original=np.array(record["original"]),
                        attacked=np.array(record["attacked"]),
                        spec=spec_from_dict(record["spec"]),
                        realized_magnitude=record["realized_magnitude"],
                        label=record["label"],
                        seed=record["seed"],
                    )
                )
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from exc
    return samples
