"""Experiment orchestration: grids, age sweeps, cross tests and plot scripts."""
from __future__ import annotations

import concurrent.futures
import logging
import time
import warnings
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from age_estimator._baselines import baseline_evaluate
from age_estimator._config import ExperimentConfig
from age_estimator._data import AgeEstimatorWarning
from age_estimator._data import AgeMode
from age_estimator._data import QueueConfig
from age_estimator._dynamics import make_system
from age_estimator._format import AGE_SWEEP_COLUMNS
from age_estimator._format import CROSS_TEST_COLUMNS
from age_estimator._format import ResultRecord
from age_estimator._format import format_float
from age_estimator._format import write_csv
from age_estimator._format import write_results
from age_estimator._laa import LaaModel
from age_estimator._laa import check_compatible
from age_estimator._laa import evaluate
from age_estimator._laa import train
from age_estimator._network import average_age
from age_estimator._nn import TapeCache
from age_estimator._nn import gradient_check
from age_estimator._nn import init_params
from age_estimator._nn import sequence_loss
from age_estimator._seeding import substream
from age_estimator._simulation import EvaluationResult

logger = logging.getLogger(__name__)

# Stays clear of the ReLU kink so central differences are valid
KINK_MARGIN = 1e-3


def checkpoint_path(checkpoint_dir: Path, cfg: ExperimentConfig) -> Path:
    return checkpoint_dir / f"{cfg.model_fingerprint()}.npz"


def obtain_model(
    cfg: ExperimentConfig,
    checkpoint_dir: Path | None = None,
) -> LaaModel:
    """Load the configured or cached checkpoint, training one when missing."""
    system = make_system(cfg.system)
    path = Path(cfg.checkpoint) if cfg.checkpoint else None
    if path is None and checkpoint_dir is not None:
        cached = checkpoint_path(checkpoint_dir, cfg)
        path = cached if cached.exists() else None

    if path is not None:
        model, _ = LaaModel.load(path)
        check_compatible(model, system, cfg.age_mode, cfg.control_mode)
        logger.info("loaded %s", path)
        return model

    logger.info("training %s laa (model %s)", cfg.system, cfg.model_fingerprint())
    model, losses = train(
        cfg.train_config,
        system,
        cfg.network,
        cfg.control_mode,
        uses_age=cfg.age_mode is not AgeMode.NONE,
    )
    if losses:
        logger.info("final loss %.6g after %d updates", losses[-1], len(losses))
    if checkpoint_dir is not None:
        out = checkpoint_path(checkpoint_dir, cfg)
        model.save(out, cfg.seed, {"config": cfg.as_dict()})
        logger.info("saved %s", out)
    return model


def _evaluate_estimator(
    estimator: str,
    cfg: ExperimentConfig,
    checkpoint_dir: Path | None,
) -> EvaluationResult:
    system = make_system(cfg.system)
    if estimator == "laa":
        model = obtain_model(cfg, checkpoint_dir)
        return evaluate(
            model, system, cfg.network, cfg.eval.episodes, cfg.eval.horizon,
            cfg.age_mode, cfg.control_mode, cfg.seed,
        )
    return baseline_evaluate(
        estimator, system, cfg.network, cfg.eval.episodes, cfg.eval.horizon,
        cfg.age_mode, cfg.control_mode, cfg.seed,
    )


def run_experiment(
    cfg: ExperimentConfig,
    checkpoint_dir: Path | None = None,
    timing: bool = True,
) -> list[ResultRecord]:
    """One record per requested estimator, all on the same traces."""
    records = []
    digests: tuple[str, ...] | None = None
    for estimator in cfg.estimators:
        start = time.perf_counter()
        result = _evaluate_estimator(estimator, cfg, checkpoint_dir)
        wall_s = time.perf_counter() - start if timing else None

        if digests is None:
            digests = result.trace_digests
        elif result.trace_digests != digests:
            raise RuntimeError(
                f"{estimator} was evaluated on different traces than "
                f"{cfg.estimators[0]}",
            )
        logger.info(
            "%s %s %s: rmse %.6g", cfg.system, estimator, cfg.network_mode,
            result.rmse_total,
        )
        records.append(ResultRecord.from_evaluation(cfg, result, wall_s))
    return records


def run_grid(
    configs: Sequence[ExperimentConfig],
    out: Path | None = None,
    checkpoint_dir: Path | None = None,
    workers: int = 1,
    timing: bool = True,
) -> list[ResultRecord]:
    """Run every experiment, optionally in worker processes.

    Records are collected in the order of `configs` and written once.
    """
    records: list[ResultRecord] = []
    if workers > 1 and len(configs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [
                executor.submit(run_experiment, cfg, checkpoint_dir, timing)
                for cfg in configs
            ]
            for i, future in enumerate(futures):
                records.extend(future.result())
                logger.info("grid: %d/%d experiments done", i + 1, len(configs))
    else:
        for i, cfg in enumerate(configs):
            records.extend(run_experiment(cfg, checkpoint_dir, timing))
            logger.info("grid: %d/%d experiments done", i + 1, len(configs))

    if out is not None:
        write_results(out, records)
    return records


@dataclass(frozen=True)
class AgeSweepRow:
    q: float
    p: float
    horizon: int
    seed: int
    mean_age: float

    def as_row(self) -> dict[str, str]:
        return {
            "q": format_float(self.q),
            "p": format_float(self.p),
            "horizon": str(self.horizon),
            "seed": str(self.seed),
            "mean_age": format_float(self.mean_age),
        }


def age_sweep(
    q: float,
    p_grid: Sequence[float],
    horizon: int,
    seeds: Sequence[int],
    out: Path | None = None,
) -> list[AgeSweepRow]:
    """Time-average age for each admission rate in `p_grid`.

    Every p sees the same admission/service coins for a given seed.
    """
    rows = []
    for p in p_grid:
        if p >= q:
            warnings.warn(
                f"p={p} >= q={q}: the queue is unstable and its age grows "
                f"with the horizon",
                AgeEstimatorWarning,
                stacklevel=2,
            )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AgeEstimatorWarning)
            cfg = QueueConfig(p, q)
        for seed in seeds:
            mean = average_age(
                cfg, horizon, substream(seed, "admission"), substream(seed, "service"),
            )
            rows.append(AgeSweepRow(q, p, horizon, seed, mean))
        logger.debug("age sweep q=%g p=%g done", q, p)

    if out is not None:
        write_csv(out, AGE_SWEEP_COLUMNS, (r.as_row() for r in rows))
    return rows


def cross_test(
    checkpoint: Path,
    test_configs: Sequence[ExperimentConfig],
    reference_dir: Path | None = None,
    out: Path | None = None,
    timing: bool = True,
) -> list[dict[str, str]]:
    """Evaluate one trained model across many network settings.

    When `reference_dir` holds a checkpoint trained for a test setting
    itself (as `run_grid` caches them), that model is evaluated on the same
    traces and the RMSE ratio is reported.
    """
    model, metadata = LaaModel.load(checkpoint)
    rows = []
    for cfg in test_configs:
        system = make_system(cfg.system)
        check_compatible(model, system, cfg.age_mode, cfg.control_mode)
        start = time.perf_counter()
        result = evaluate(
            model, system, cfg.network, cfg.eval.episodes, cfg.eval.horizon,
            cfg.age_mode, cfg.control_mode, cfg.seed,
        )
        wall_s = time.perf_counter() - start if timing else None
        row = ResultRecord.from_evaluation(cfg, result, wall_s).as_row()

        reference = None
        if reference_dir is not None:
            ref_path = checkpoint_path(reference_dir, cfg)
            if ref_path.exists():
                ref_model, _ = LaaModel.load(ref_path)
                check_compatible(ref_model, system, cfg.age_mode, cfg.control_mode)
                reference = evaluate(
                    ref_model, system, cfg.network, cfg.eval.episodes,
                    cfg.eval.horizon, cfg.age_mode, cfg.control_mode, cfg.seed,
                )
        row["reference_rmse"] = ""
        row["ratio"] = ""
        if reference is not None:
            row["reference_rmse"] = format_float(reference.rmse_total)
            if reference.rmse_total > 0:
                row["ratio"] = format_float(result.rmse_total / reference.rmse_total)
        rows.append(row)
        logger.info(
            "cross test %s at %s: rmse %.6g", metadata.get("system"),
            cfg.network, result.rmse_total,
        )

    if out is not None:
        write_csv(out, CROSS_TEST_COLUMNS, rows)
    return rows


def random_gradcheck_case(
    rng: np.random.Generator,
    n_x: int,
    n_o: int,
    hidden_size: int = 5,
    steps: int = 4,
) -> tuple[float, int]:
    """Gradient-check one random stack; returns (max relative error, redraws)."""
    redraws = 0
    while True:
        params = init_params(n_x, hidden_size, n_o, rng, n_fc=hidden_size + 1)
        inputs = rng.normal(size=(steps, n_x))
        targets = rng.normal(size=(steps, n_o))
        cache = TapeCache()
        sequence_loss(params, inputs, targets, cache)
        if min(np.abs(step.fc[0].pre).min() for step in cache.steps) > KINK_MARGIN:
            return gradient_check(params, inputs, targets), redraws
        redraws += 1


def gradcheck(configs: int, seed: int = 0) -> list[float]:
    """Max relative gradient error of `configs` random stacks.

    Alternates between the vehicle (12 -> 4) and cartpole (9 -> 3) layouts.
    """
    errors = []
    for i in range(configs):
        n_x, n_o = (12, 4) if i % 2 == 0 else (9, 3)
        error, redraws = random_gradcheck_case(substream(seed, "init", i), n_x, n_o)
        logger.debug("gradcheck %d (%d -> %d): %.3g, %d redraws", i, n_x, n_o, error, redraws)
        errors.append(error)
    return errors


_AGE_PLOT = '''\
"""Mean age against admission rate, one curve per service rate."""
import csv
import collections
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else {csv!r}
curves = collections.defaultdict(lambda: collections.defaultdict(list))
with open(path, newline="") as f:
    for row in csv.DictReader(f):
        curves[float(row["q"])][float(row["p"])].append(float(row["mean_age"]))

fig, ax = plt.subplots()
for q, points in sorted(curves.items()):
    ps = sorted(points)
    ax.plot(ps, [sum(points[p]) / len(points[p]) for p in ps], marker="o", label=f"q={{q:g}}")
ax.set_xlabel("admission probability p")
ax.set_ylabel("average age (slots)")
ax.set_yscale("log")
ax.legend()
fig.savefig({png!r}, dpi=150)
'''

_RMSE_PLOT = '''\
"""Aggregate RMSE per network setting, one bar group per estimator."""
import csv
import collections
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else {csv!r}
bars = collections.defaultdict(dict)
with open(path, newline="") as f:
    for row in csv.DictReader(f):
        setting = "time-varying"
        if row["p"]:
            setting = f"({{float(row['p']):g}}, {{float(row['q']):g}})"
        label = row["estimator"] + ("" if row["age_mode"] != "none" else " (no age)")
        bars[label][setting] = float(row["rmse_total"])

settings = sorted({{s for values in bars.values() for s in values}})
width = 0.8 / max(len(bars), 1)
fig, ax = plt.subplots(figsize=(10, 4))
for i, (label, values) in enumerate(sorted(bars.items())):
    xs = [j + i * width for j in range(len(settings))]
    ax.bar(xs, [values.get(s, 0.0) for s in settings], width, label=label)
ax.set_xticks([j + 0.4 - width / 2 for j in range(len(settings))])
ax.set_xticklabels(settings, rotation=30)
ax.set_ylabel("RMSE")
ax.legend()
fig.tight_layout()
fig.savefig({png!r}, dpi=150)
'''

PLOT_KINDS = {"age": _AGE_PLOT, "rmse": _RMSE_PLOT}


def write_plot_script(csv_path: Path, kind: str) -> Path:
    """Write a standalone matplotlib script next to `csv_path`."""
    try:
        template = PLOT_KINDS[kind]
    except KeyError:
        raise ValueError(
            f"unknown plot kind {kind!r}; expected one of {sorted(PLOT_KINDS)}",
        ) from None
    script = csv_path.with_name(f"{csv_path.stem}_plot.py")
    png = csv_path.with_suffix(".png")
    script.write_text(template.format(csv=str(csv_path), png=str(png)))
    return script
