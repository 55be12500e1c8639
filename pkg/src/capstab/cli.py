"""Command-line pipeline: synth, train, attack, eval, gradcheck.

Exit codes are a stable scripting contract: 0 success, 1 usage error,
2 data error, 3 numeric failure. Every run prints its fully resolved
configuration before doing any work.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .attacks import (
    ATTACK_NAMES,
    Drift,
    Fgsm,
    Lag,
    NoiseMoveParams,
    Offset,
    default_attack_specs,
    generate_attack_set,
    write_attack_set,
)
from .capsnet import CapsNetConfig, CapsNetModel
from .checkpoint import load_model, save_model
from .cnn import CnnConfig, CnnModel
from .data import load_csv, save_csv, synth_dataset
from .errors import DataError, NumericError, ShapeError, UsageError
from .gradcheck import run_gradient_checks
from .harness import TrainConfig, evaluate_matrix, train, write_report

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

CORRUPT_ENV = "CAPSTAB_GRADCHECK_CORRUPT"  # test-only hook for the negative control


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        raise UsageError(message)


def _print_config(args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print("resolved config: " + json.dumps(resolved, default=str))


def cmd_synth(args) -> int:
    if args.n_per_class < 1:
        raise UsageError("--n-per-class must be >= 1")
    dataset = synth_dataset(args.n_per_class, args.length, args.noise_std, args.seed)
    save_csv(dataset, args.out)
    print(f"wrote {len(dataset)} beats of length {dataset.signal_len} to {args.out}")
    return EXIT_OK


def _build_model(kind: str, signal_len: int, seed: int):
    caps_cfg = CapsNetConfig(signal_len=signal_len)
    if kind == "capsnet":
        return CapsNetModel(caps_cfg, seed=seed)
    return CnnModel(CnnConfig.matched_to(caps_cfg), seed=seed, match=caps_cfg)


def cmd_train(args) -> int:
    dataset = load_csv(args.data)
    model = _build_model(args.model, dataset.signal_len, args.seed)
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        seed=args.seed,
    )
    result = train(model, dataset, config)
    save_model(model, args.out_checkpoint)
    losses_path = args.out_losses or str(args.out_checkpoint) + ".losses.json"
    with open(losses_path, "w") as fh:
        json.dump(
            {
                "epoch_losses": result.epoch_losses,
                "train_config": result.train_config,
                "model_config": result.model_config,
            },
            fh,
            indent=2,
        )
    final = f"{result.epoch_losses[-1]:.6f}" if result.epoch_losses else "n/a"
    print(f"trained {args.model} for {args.epochs} epochs (final loss {final})")
    print(f"checkpoint: {args.out_checkpoint}\nloss log: {losses_path}")
    return EXIT_OK


def _spec_from_args(args, signal_len: int):
    noise = NoiseMoveParams(mu=args.mu, sigma=args.sigma, dt=1.0 / signal_len, s0=1.0)
    if args.spec == "offset":
        return Offset(scale=args.scale, noise=noise)
    if args.spec == "drift-inc":
        return Drift(direction="increasing", scale=args.scale, noise=noise)
    if args.spec == "drift-dec":
        return Drift(direction="decreasing", scale=args.scale, noise=noise)
    if args.spec == "lag-fwd":
        return Lag(direction="forward", max_fraction=args.max_fraction, noise=noise)
    if args.spec == "lag-bwd":
        return Lag(direction="backward", max_fraction=args.max_fraction, noise=noise)
    return Fgsm(alpha=args.alpha)


def cmd_attack(args) -> int:
    dataset = load_csv(args.data)
    spec = _spec_from_args(args, dataset.signal_len)
    model = None
    if isinstance(spec, Fgsm):
        if not args.checkpoint:
            raise UsageError("--checkpoint is required for the fgsm spec")
        model = load_model(args.checkpoint)
    samples = generate_attack_set(dataset, spec, args.n, args.seed, model=model)
    write_attack_set(samples, args.out)
    print(f"wrote {len(samples)} attacked samples to {args.out}")
    return EXIT_OK


def _parse_attack_list(value: str, signal_len: int, args) -> dict:
    all_specs = default_attack_specs(
        signal_len,
        alpha=args.alpha,
        mu=args.mu,
        sigma=args.sigma,
        scale=args.scale,
        max_fraction=args.max_fraction,
    )
    if value == "all":
        return all_specs
    names = [name.strip() for name in value.split(",") if name.strip()]
    if names == ["none"]:
        return {}
    specs = {}
    for name in names:
        if name == "none":
            continue  # the clean cell is always evaluated
        if name not in all_specs:
            raise UsageError(
                f"unknown attack {name!r}; choose from none, {', '.join(ATTACK_NAMES)}"
            )
        specs[name] = all_specs[name]
    return specs


def cmd_eval(args) -> int:
    caps = load_model(args.caps_checkpoint)
    cnn = load_model(args.cnn_checkpoint)
    if caps.kind != "capsnet" or cnn.kind != "cnn":
        raise DataError(
            f"checkpoint kinds are {caps.kind}/{cnn.kind}; expected capsnet/cnn"
        )
    dataset = load_csv(args.data)
    specs = _parse_attack_list(args.attacks, dataset.signal_len, args)
    echo = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    report = evaluate_matrix(
        caps, cnn, dataset, specs,
        n_per_attack=args.n, seed=args.seed,
        config_echo={k: str(v) for k, v in echo.items()},
    )
    written = write_report(report, args.out_dir)
    print(f"{'model':8s} {'attack':10s} {'n':>5s} {'acc':>7s} {'f1':>7s} {'recon_mse':>10s}")
    for cell in report.cells:
        recon = f"{cell.recon_mse:.5f}" if cell.recon_mse is not None else "-"
        print(
            f"{cell.model:8s} {cell.attack:10s} {cell.n:5d} "
            f"{cell.accuracy:7.4f} {cell.f1_macro:7.4f} {recon:>10s}"
        )
    print(f"wrote {len(written)} files under {args.out_dir}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    corrupt = os.environ.get(CORRUPT_ENV, "") not in ("", "0")
    results = run_gradient_checks(seed=args.seed, corrupt=corrupt)
    all_passed = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name:16s} max relative error {r.max_rel_error:.3e} (tol {r.tolerance:.0e})")
        all_passed &= r.passed
    if not all_passed:
        raise NumericError("gradient checks failed")
    print("all gradient checks passed")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="capstab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic 5-class dataset CSV")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--length", type=int, default=64)
    p.add_argument("--noise-std", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model on a dataset CSV")
    p.add_argument("--data", required=True, help="dataset CSV path")
    p.add_argument("--model", choices=("capsnet", "cnn"), required=True)
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--optimizer", choices=("adam", "sgd-momentum"), default="adam")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--out-losses", default=None, help="loss log path (default: <checkpoint>.losses.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="generate an attacked sample set")
    p.add_argument("--data", required=True)
    p.add_argument("--spec", choices=ATTACK_NAMES, required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--mu", type=float, default=0.1)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--scale", type=float, default=0.2)
    p.add_argument("--max-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", default=None, help="model checkpoint (required for fgsm)")
    p.add_argument("--out", required=True, help="output JSON-lines path")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="fill the model-by-attack evaluation matrix")
    p.add_argument("--caps-checkpoint", required=True)
    p.add_argument("--cnn-checkpoint", required=True)
    p.add_argument("--data", required=True, help="test-set CSV path")
    p.add_argument("--attacks", default="all", help='"all", "none", or a comma list')
    p.add_argument("--n", type=int, default=100, help="samples per attack cell")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--mu", type=float, default=0.1)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--scale", type=float, default=0.2)
    p.add_argument("--max-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="run the finite-difference verification suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _print_config(args)
        return args.func(args)
    except UsageError as exc:
        print(f"capstab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"capstab: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ShapeError, OSError) as exc:
        print(f"capstab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"capstab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
