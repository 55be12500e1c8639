"""Training loops, metrics, and the model-by-attack evaluation matrix.

The evaluation matrix covers both models against the clean test set plus
every requested attack. Manual attack sets are generated once and shown to
both models (a fair comparison on identical corrupted data); the
gradient-sign attack is white-box per model since it uses the attacked
model's own parameters. Every cell derives its RNG stream from the report
seed and the attack name, so results are independent of evaluation order.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .attacks import AttackSpec, Fgsm, generate_attack_set, spec_from_dict, spec_to_dict
from .capsnet import CapsNetModel
from .checkpoint import is_fresh_init
from .cnn import CnnModel
from .data import Dataset
from .errors import DataError, NumericError

REPORT_FORMAT = "capstab-report"
REPORT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd-momentum"):
            raise ValueError(f"optimizer must be adam|sgd-momentum, got {self.optimizer!r}")


class Adam:
    """Standard first/second-moment optimizer with bias correction."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: list[tuple[str, np.ndarray]], grads: dict[str, np.ndarray]):
        self.t += 1
        for name, arr in params:
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(arr))
            v = self.v.setdefault(name, np.zeros_like(arr))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            arr -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SgdMomentum:
    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: list[tuple[str, np.ndarray]], grads: dict[str, np.ndarray]):
        for name, arr in params:
            vel = self.velocity.setdefault(name, np.zeros_like(arr))
            vel *= self.momentum
            vel += grads[name]
            arr -= self.lr * vel


def _make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    return SgdMomentum(config.learning_rate, config.momentum)


@dataclass
class TrainResult:
    epoch_losses: list[float]
    train_config: dict
    model_config: dict


def train(model, dataset: Dataset, config: TrainConfig) -> TrainResult:
    """Mini-batch training, deterministic per seed; mutates the model.

    Raises NumericError if any sample loss goes non-finite.
    """
    rng = np.random.default_rng(config.seed)
    optimizer = _make_optimizer(config)
    params = model.param_items()
    losses: list[float] = []
    n = len(dataset)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            accum = {name: np.zeros_like(arr) for name, arr in params}
            for idx in batch:
                beat = dataset.beats[int(idx)]
                value, cache = model.loss(beat.signal, beat.label)
                if not np.isfinite(value):
                    raise NumericError(
                        f"training diverged: non-finite loss at epoch {epoch}, sample {int(idx)}"
                    )
                epoch_loss += value
                grads = model.backward(cache, beat.label)
                for name, _ in params:
                    accum[name] += grads[name]
            for name in accum:
                accum[name] /= len(batch)
            optimizer.step(params, accum)
        losses.append(epoch_loss / n)
    return TrainResult(
        epoch_losses=losses,
        train_config=asdict(config),
        model_config=asdict(model.config),
    )


# -- metrics -----------------------------------------------------------------


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {labels.shape}")
    return float(np.mean(preds == labels))


def f1_macro(preds, labels, n_classes: int = 5) -> float:
    """Unweighted mean of per-class F1; a class with no predictions and no
    labels contributes 0 by convention."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {labels.shape}")
    scores = []
    for c in range(n_classes):
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        scores.append(f1)
    return float(np.mean(scores))


# -- evaluation matrix ---------------------------------------------------------


@dataclass
class EvalCell:
    model: str
    attack: str
    n: int
    accuracy: float
    f1_macro: float
    recon_mse: float | None = None


@dataclass
class PlotExample:
    attack: str
    index: int
    original: list[float]
    attacked: list[float]
    reconstructed: list[float]


@dataclass
class EvalReport:
    cells: list[EvalCell]
    examples: list[PlotExample]
    seed: int
    n_per_attack: int
    attacks: list[str]
    config_echo: dict = field(default_factory=dict)


def derive_seed(base_seed: int, tag: str) -> int:
    """Stable per-cell seed derived from the report seed and a name."""
    mixed = np.random.SeedSequence([int(base_seed), zlib.crc32(tag.encode())])
    return int(mixed.generate_state(1)[0])


def _recon_mse(caps: CapsNetModel, signal: np.ndarray) -> float:
    cache = caps.forward(signal)  # inference masking: max-norm capsule
    return float(np.mean((cache.recon - np.asarray(signal, dtype=np.float64)) ** 2))


def _classify(model, signals) -> np.ndarray:
    return np.array([model.predict(s) for s in signals], dtype=np.int64)


def evaluate_matrix(
    caps: CapsNetModel,
    cnn: CnnModel,
    test_set: Dataset,
    attack_specs: dict[str, AttackSpec],
    n_per_attack: int = 100,
    seed: int = 0,
    config_echo: dict | None = None,
) -> EvalReport:
    """Fill the (model x condition) grid: clean plus every named attack.

    Both models must be trained (fresh-init parameter state is rejected) and
    share the conv trunk layout.
    """
    for model in (caps, cnn):
        if is_fresh_init(model):
            raise DataError(
                f"{model.kind} model parameters equal a fresh initialization; "
                "train it before evaluating"
            )
    if caps.trunk_param_count() != cnn.trunk_param_count():
        raise ValueError("trunk parity violated between the two models")

    labels_clean = np.array([b.label for b in test_set.beats], dtype=np.int64)
    signals_clean = [b.signal for b in test_set.beats]
    cells: list[EvalCell] = []
    examples: list[PlotExample] = []

    for model in (caps, cnn):
        preds = _classify(model, signals_clean)
        cells.append(
            EvalCell(
                model=model.kind,
                attack="none",
                n=len(test_set),
                accuracy=accuracy(preds, labels_clean),
                f1_macro=f1_macro(preds, labels_clean),
                recon_mse=(
                    float(np.mean([_recon_mse(caps, s) for s in signals_clean]))
                    if model.kind == "capsnet"
                    else None
                ),
            )
        )

    for name, spec in attack_specs.items():
        cell_seed = derive_seed(seed, name)
        if isinstance(spec, Fgsm):
            per_model_sets = {
                model.kind: generate_attack_set(
                    test_set, spec, n_per_attack, cell_seed, model=model
                )
                for model in (caps, cnn)
            }
        else:
            shared = generate_attack_set(test_set, spec, n_per_attack, cell_seed)
            per_model_sets = {"capsnet": shared, "cnn": shared}
        for model in (caps, cnn):
            samples = per_model_sets[model.kind]
            labels = np.array([s.label for s in samples], dtype=np.int64)
            attacked = [s.attacked for s in samples]
            preds = _classify(model, attacked)
            cells.append(
                EvalCell(
                    model=model.kind,
                    attack=name,
                    n=len(samples),
                    accuracy=accuracy(preds, labels),
                    f1_macro=f1_macro(preds, labels),
                    recon_mse=(
                        float(np.mean([_recon_mse(caps, s) for s in attacked]))
                        if model.kind == "capsnet"
                        else None
                    ),
                )
            )
        for index, sample in enumerate(per_model_sets["capsnet"][:3]):
            recon = caps.forward(sample.attacked).recon
            examples.append(
                PlotExample(
                    attack=name,
                    index=index,
                    original=[float(v) for v in sample.original],
                    attacked=[float(v) for v in sample.attacked],
                    reconstructed=[float(v) for v in recon],
                )
            )

    return EvalReport(
        cells=cells,
        examples=examples,
        seed=seed,
        n_per_attack=n_per_attack,
        attacks=list(attack_specs.keys()),
        config_echo=dict(config_echo or {}),
    )


# -- report files --------------------------------------------------------------


def report_to_dict(report: EvalReport) -> dict:
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "seed": report.seed,
        "n_per_attack": report.n_per_attack,
        "attacks": list(report.attacks),
        "config_echo": report.config_echo,
        "cells": [asdict(c) for c in report.cells],
        "examples": [asdict(e) for e in report.examples],
    }


def report_from_dict(payload: dict) -> EvalReport:
    if payload.get("format") != REPORT_FORMAT:
        raise DataError(f"not a {REPORT_FORMAT} document")
    if payload.get("version") != REPORT_VERSION:
        raise DataError(f"unsupported report version {payload.get('version')}")
    return EvalReport(
        cells=[EvalCell(**c) for c in payload["cells"]],
        examples=[PlotExample(**e) for e in payload["examples"]],
        seed=payload["seed"],
        n_per_attack=payload["n_per_attack"],
        attacks=list(payload["attacks"]),
        config_echo=dict(payload["config_echo"]),
    )


def parse_report(path) -> EvalReport:
    try:
        with open(path) as fh:
            return report_from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"cannot read report {path}: {exc}") from exc


def _svg_paths(example: PlotExample, width: int, height: int, pad: int) -> str:
    series = [
        ("#999999", example.original),
        ("#cc3333", example.attacked),
        ("#3366cc", example.reconstructed),
    ]
    lo = min(min(vals) for _, vals in series)
    hi = max(max(vals) for _, vals in series)
    if hi == lo:
        hi = lo + 1.0
    inner_w = width - 2 * pad
    inner_h = height - 2 * pad
    n = len(example.original)
    lines = []
    for color, vals in series:
        points = " ".join(
            f"{pad + inner_w * i / (n - 1):.2f},{pad + inner_h * (1 - (v - lo) / (hi - lo)):.2f}"
            for i, v in enumerate(vals)
        )
        lines.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{points}"/>'
        )
    return "\n".join(lines)


def render_example_svg(example: PlotExample, width: int = 480, height: int = 280) -> str:
    """Deterministic standalone SVG overlaying original/attacked/reconstructed."""
    pad = 30
    legend = (
        f'<text x="{pad}" y="16" font-size="11" fill="#999999">original</text>'
        f'<text x="{pad + 60}" y="16" font-size="11" fill="#cc3333">attacked</text>'
        f'<text x="{pad + 125}" y="16" font-size="11" fill="#3366cc">reconstructed</text>'
        f'<text x="{width - pad}" y="16" font-size="11" text-anchor="end" fill="#333333">'
        f"{example.attack} #{example.index}</text>"
    )
    frame = (
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
        'fill="none" stroke="#cccccc"/>'
    )
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n{legend}\n{frame}\n'
        f"{_svg_paths(example, width, height, pad)}\n</svg>\n"
    )


def write_report(report: EvalReport, out_dir) -> list[Path]:
    """Emit report.json, report.csv, and one SVG per attack example."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        json_path = out / "report.json"
        json_path.write_text(json.dumps(report_to_dict(report), indent=2) + "\n")
        written.append(json_path)

        csv_path = out / "report.csv"
        rows = ["model,attack,n,accuracy,f1_macro,recon_mse"]
        for cell in report.cells:
            recon = "" if cell.recon_mse is None else repr(cell.recon_mse)
            rows.append(
                f"{cell.model},{cell.attack},{cell.n},{cell.accuracy!r},{cell.f1_macro!r},{recon}"
            )
        csv_path.write_text("\n".join(rows) + "\n")
        written.append(csv_path)

        for example in report.examples:
            svg_path = out / f"signals_{example.attack}_{example.index}.svg"
            svg_path.write_text(render_example_svg(example))
            written.append(svg_path)
        return written
    except OSError as exc:
        raise DataError(f"cannot write report under {out_dir}: {exc}") from exc
