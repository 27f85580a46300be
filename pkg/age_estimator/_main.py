from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from age_estimator._config import ExperimentConfig
from age_estimator._config import default_output_dir
from age_estimator._config import experiment_from_dict
from age_estimator._config import fixed_grid
from age_estimator._config import full_scale
from age_estimator._config import load_grid
from age_estimator._data import AgeMode
from age_estimator._data import ControlMode
from age_estimator._dynamics import SYSTEMS
from age_estimator._dynamics import make_system
from age_estimator._format import ResultRecord
from age_estimator._format import format_results
from age_estimator._format import write_csv
from age_estimator._format import write_results
from age_estimator._harness import age_sweep
from age_estimator._harness import checkpoint_path
from age_estimator._harness import cross_test
from age_estimator._harness import gradcheck
from age_estimator._harness import run_experiment
from age_estimator._harness import run_grid
from age_estimator._harness import write_plot_script
from age_estimator._laa import GROUND_TRUTH_MODES
from age_estimator._laa import train

GRADCHECK_TOLERANCE = 1e-4
# Settings the cross test adds to the fixed grid, down to a very slow server
CROSS_TEST_EXTRA = ((0.001, 0.007), (0.005, 0.007))


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated numbers, got {text!r}",
        ) from None


def _add_experiment_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--system", choices=SYSTEMS, help="Dynamic system (default: linear)")
    parser.add_argument("--p", type=float, help="Admission probability per slot")
    parser.add_argument("--q", type=float, help="Service success probability per slot")
    parser.add_argument(
        "--time-varying",
        action="store_true",
        help="Draw a fresh (p, q) for every episode",
    )
    parser.add_argument(
        "--age",
        choices=[m.value for m in AgeMode],
        help="Age input: true, noisy, or none (ablation)",
    )
    parser.add_argument(
        "--controls",
        choices=[m.value for m in ControlMode],
        help="Whether the estimator knows the current control",
    )
    parser.add_argument("--episodes", type=int, help="Number of episodes")
    parser.add_argument("--horizon", type=int, help="Slots per episode")
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--checkpoint", type=Path, help="Model checkpoint (.npz)")
    parser.add_argument("--out", type=Path, help="Output CSV path")
    parser.add_argument(
        "--paper-scale",
        "--full-scale",
        action="store_true",
        dest="full_scale",
        help="Use the full-size training and evaluation presets (very slow)",
    )
    parser.add_argument(
        "--no-wall-time",
        action="store_false",
        dest="timing",
        help="Leave wall_s empty so reruns produce identical CSV files",
    )


def _overrides(args: argparse.Namespace, sizes: str) -> dict[str, Any]:
    """Experiment keys set on the command line.

    `sizes` names the table (`train` or `eval`) that --episodes and
    --horizon apply to.
    """
    o: dict[str, Any] = {}
    for flag, key in (
        ("system", "system"),
        ("p", "p"),
        ("q", "q"),
        ("age", "age_mode"),
        ("controls", "control_mode"),
        ("seed", "seed"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            o[key] = value
    if args.time_varying:
        o["time_varying"] = True
    if getattr(args, "estimators", None):
        o["estimators"] = [e for e in args.estimators.split(",") if e]

    table = {}
    if args.episodes is not None:
        table["episodes"] = args.episodes
    if args.horizon is not None:
        table["horizon"] = args.horizon
    if table:
        o[sizes] = table

    train_table = dict(o.get("train", {}))
    for flag, key in (
        ("train_episodes", "episodes"),
        ("train_horizon", "horizon"),
        ("batch_size", "batch_size"),
        ("ground_truth", "ground_truth"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            train_table[key] = value
    if train_table:
        o["train"] = train_table
    return o


def _scaled(args: argparse.Namespace, configs: list[ExperimentConfig]) -> list[ExperimentConfig]:
    if args.full_scale:
        return [full_scale(cfg) for cfg in configs]
    return configs


def _out(args: argparse.Namespace, name: str) -> Path:
    return args.out or default_output_dir() / name


def _print_results(records: Sequence[ResultRecord], out: Path) -> None:
    for line in format_results(records, out):
        print(line)


def _cmd_train(args: argparse.Namespace) -> int:
    (cfg,) = _scaled(args, [experiment_from_dict(_overrides(args, "train"))])
    system = make_system(cfg.system)
    model, losses = train(
        cfg.train_config,
        system,
        cfg.network,
        cfg.control_mode,
        uses_age=cfg.age_mode is not AgeMode.NONE,
    )
    ckpt = args.checkpoint or checkpoint_path(default_output_dir(), cfg)
    model.save(ckpt, cfg.seed, {"config": cfg.as_dict()})

    out = _out(args, f"loss_{cfg.model_fingerprint()}.csv")
    write_csv(
        out,
        ("update", "loss"),
        ({"update": str(i + 1), "loss": repr(v)} for i, v in enumerate(losses)),
    )
    print(f"checkpoint: {ckpt}")
    print(f"loss trace: {out} ({len(losses)} updates)")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    overrides = _overrides(args, "eval")
    if args.checkpoint is not None:
        overrides["checkpoint"] = str(args.checkpoint)
    (cfg,) = _scaled(args, [experiment_from_dict(overrides)])
    if "laa" in cfg.estimators and cfg.checkpoint is None:
        print("error: evaluating laa needs --checkpoint", file=sys.stderr)
        return 1

    records = run_experiment(cfg, timing=args.timing)
    out = _out(args, "eval.csv")
    write_results(out, records)
    write_plot_script(out, "rmse")
    _print_results(records, out)
    return 0


def _cmd_grid(args: argparse.Namespace) -> int:
    overrides = _overrides(args, "eval")
    if args.config is not None:
        configs = load_grid(args.config, overrides)
    else:
        configs = fixed_grid(experiment_from_dict(overrides))
    configs = _scaled(args, configs)

    out = _out(args, "grid.csv")
    checkpoint_dir = args.checkpoint_dir or default_output_dir() / "checkpoints"
    records = run_grid(
        configs, out, checkpoint_dir, workers=args.workers, timing=args.timing,
    )
    write_plot_script(out, "rmse")
    _print_results(records, out)
    return 0


def _cmd_age_sweep(args: argparse.Namespace) -> int:
    p_grid = args.p_grid
    if p_grid is None:
        # Utilization from ~3% up to just below 1
        p_grid = [round(args.q * u, 6) for u in (0.033, 0.1, 0.2, 0.33, 0.5, 0.7, 0.9, 0.99)]
    out = _out(args, "age_sweep.csv")
    rows = age_sweep(args.q, p_grid, args.horizon, range(args.seed, args.seed + args.seeds), out)
    write_plot_script(out, "age")
    best = min(rows, key=lambda r: r.mean_age)
    print(f"{len(rows)} row(s) written to {out}")
    print(f"lowest mean age {best.mean_age:.4g} at p={best.p:g} (q={args.q:g})")
    return 0


def _cmd_cross_test(args: argparse.Namespace) -> int:
    overrides = _overrides(args, "eval")
    overrides.pop("time_varying", None)
    if args.config is not None:
        configs = load_grid(args.config, overrides)
    else:
        base = experiment_from_dict(overrides)
        configs = fixed_grid(base) + [
            experiment_from_dict({**base.as_dict(), "p": p, "q": q, "checkpoint": None})
            for p, q in CROSS_TEST_EXTRA
        ]
    configs = _scaled(args, configs)

    out = _out(args, "cross_test.csv")
    rows = cross_test(args.checkpoint, configs, args.reference_dir, out, timing=args.timing)
    write_plot_script(out, "rmse")
    print(f"{len(rows)} row(s) written to {out}")
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    errors = gradcheck(args.configs, args.seed)
    worst = max(errors)
    print(f"{len(errors)} configuration(s), max relative error {worst:.3e}")
    if worst >= args.tolerance:
        print(f"error: gradient check exceeds {args.tolerance:g}", file=sys.stderr)
        return 1
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    common = argparse.ArgumentParser(add_help=False)
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true", help="Log debug details")
    verbosity.add_argument("--quiet", "-q", action="store_true", help="Only log warnings")

    parser = argparse.ArgumentParser(
        description="Age-aware state estimation experiments.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s train --system linear --p 0.1 --q 0.3
  %(prog)s eval --checkpoint model.npz --age noisy --estimators laa,tvkf,ukf
  %(prog)s grid --config grid.json --workers 4 --no-wall-time
  %(prog)s age-sweep --q 0.3 --horizon 1000000 --seeds 5
  %(prog)s cross-test --checkpoint time_varying.npz --reference-dir results/checkpoints
  %(prog)s gradcheck --configs 100
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", parents=[common], help="Train one model")
    _add_experiment_args(p_train)
    p_train.add_argument("--batch-size", type=int, help="Mini-batch size K")
    p_train.add_argument(
        "--ground-truth",
        choices=GROUND_TRUTH_MODES,
        help="Label every slot (oracle) or only delivered measurements",
    )
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", parents=[common], help="Evaluate estimators")
    _add_experiment_args(p_eval)
    p_eval.add_argument("--estimators", help="Comma-separated subset of laa,tvkf,ukf")
    p_eval.set_defaults(func=_cmd_eval)

    p_grid = sub.add_parser("grid", parents=[common], help="Train and evaluate a grid")
    _add_experiment_args(p_grid)
    p_grid.add_argument("--config", type=Path, help="JSON grid file")
    p_grid.add_argument("--estimators", help="Comma-separated subset of laa,tvkf,ukf")
    p_grid.add_argument("--train-episodes", type=int, help="Training episodes M")
    p_grid.add_argument("--train-horizon", type=int, help="Training slots per episode T")
    p_grid.add_argument("--checkpoint-dir", type=Path, help="Where models are cached")
    p_grid.add_argument("--workers", type=int, default=1, help="Worker processes")
    p_grid.set_defaults(func=_cmd_grid)

    p_age = sub.add_parser("age-sweep", parents=[common], help="Average age against p")
    p_age.add_argument("--q", type=float, default=0.3, help="Service success probability")
    p_age.add_argument("--p-grid", type=_float_list, help="Comma-separated admission probabilities")
    p_age.add_argument("--horizon", type=int, default=1_000_000, help="Slots per run")
    p_age.add_argument("--seeds", type=int, default=5, help="Number of seeds")
    p_age.add_argument("--seed", type=int, default=0, help="First seed")
    p_age.add_argument("--out", type=Path, help="Output CSV path")
    p_age.set_defaults(func=_cmd_age_sweep)

    p_cross = sub.add_parser("cross-test", parents=[common], help="Test one model on many networks")
    _add_experiment_args(p_cross)
    p_cross.add_argument("--config", type=Path, help="JSON grid file of test settings")
    p_cross.add_argument("--reference-dir", type=Path, help="Checkpoints trained per setting")
    p_cross.set_defaults(func=_cmd_cross_test)

    p_grad = sub.add_parser("gradcheck", parents=[common], help="Verify backpropagation")
    p_grad.add_argument("--configs", type=int, default=100, help="Random configurations")
    p_grad.add_argument("--seed", type=int, default=0, help="Master seed")
    p_grad.add_argument("--tolerance", type=float, default=GRADCHECK_TOLERANCE)
    p_grad.set_defaults(func=_cmd_gradcheck)

    args = parser.parse_args(argv)

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "cross-test" and args.checkpoint is None:
        print("error: cross-test needs --checkpoint", file=sys.stderr)
        return 1

    try:
        return int(args.func(args))
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
