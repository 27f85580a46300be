"""CSV result tables and console summaries."""
from __future__ import annotations

import csv
import math
from collections.abc import Iterable
from collections.abc import Sequence
from dataclasses import dataclass
from importlib.metadata import PackageNotFoundError
from importlib.metadata import version
from pathlib import Path

from age_estimator._config import ExperimentConfig
from age_estimator._simulation import EvaluationResult

SCHEMA_VERSION = "1"
MAX_COMPONENTS = 4

RESULT_COLUMNS = (
    "schema",
    "system",
    "estimator",
    "p",
    "q",
    "network_mode",
    "control_mode",
    "age_mode",
    "seed",
    "episodes",
    "horizon",
    "rmse_total",
    *(f"rmse_{i}" for i in range(MAX_COMPONENTS)),
    "wall_s",
    "fingerprint",
    "version",
)
AGE_SWEEP_COLUMNS = ("q", "p", "horizon", "seed", "mean_age")
CROSS_TEST_COLUMNS = (*RESULT_COLUMNS, "reference_rmse", "ratio")

HORIZONTAL = "─"
DOUBLE_HORIZONTAL = "═"


def package_version() -> str:
    try:
        return version("age-estimator-py")
    except PackageNotFoundError:
        return "0+unknown"


def format_float(value: float | None) -> str:
    """Shortest text that reads back to the same float; blank for None."""
    if value is None:
        return ""
    return repr(float(value))


@dataclass(frozen=True)
class ResultRecord:
    system: str
    estimator: str
    p: float | None  # None for a time-varying network
    q: float | None
    network_mode: str
    control_mode: str
    age_mode: str
    seed: int
    episodes: int
    horizon: int
    rmse_total: float
    rmse_components: tuple[float, ...]
    wall_s: float | None  # None when timing is disabled
    fingerprint: str
    version: str

    def __post_init__(self) -> None:
        for value in (self.rmse_total, *self.rmse_components):
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"RMSE must be finite and nonnegative, got {value}")
        if len(self.rmse_components) > MAX_COMPONENTS:
            raise ValueError(f"at most {MAX_COMPONENTS} components fit the schema")

    @classmethod
    def from_evaluation(
        cls,
        cfg: ExperimentConfig,
        result: EvaluationResult,
        wall_s: float | None = None,
    ) -> ResultRecord:
        return cls(
            system=cfg.system,
            estimator=result.estimator,
            p=None if cfg.time_varying else cfg.p,
            q=None if cfg.time_varying else cfg.q,
            network_mode=cfg.network_mode,
            control_mode=cfg.control_mode.value,
            age_mode=cfg.age_mode.value,
            seed=cfg.seed,
            episodes=result.episodes,
            horizon=result.horizon,
            rmse_total=result.rmse_total,
            rmse_components=result.rmse_components,
            wall_s=wall_s,
            fingerprint=cfg.fingerprint(),
            version=package_version(),
        )

    def as_row(self) -> dict[str, str]:
        components = {
            f"rmse_{i}": format_float(self.rmse_components[i])
            if i < len(self.rmse_components) else ""
            for i in range(MAX_COMPONENTS)
        }
        return {
            "schema": SCHEMA_VERSION,
            "system": self.system,
            "estimator": self.estimator,
            "p": format_float(self.p),
            "q": format_float(self.q),
            "network_mode": self.network_mode,
            "control_mode": self.control_mode,
            "age_mode": self.age_mode,
            "seed": str(self.seed),
            "episodes": str(self.episodes),
            "horizon": str(self.horizon),
            "rmse_total": format_float(self.rmse_total),
            **components,
            "wall_s": "" if self.wall_s is None else f"{self.wall_s:.3f}",
            "fingerprint": self.fingerprint,
            "version": self.version,
        }


def write_csv(
    path: Path,
    columns: Sequence[str],
    rows: Iterable[dict[str, str]],
) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def read_csv(path: Path) -> list[dict[str, str]]:
    with path.open(newline="") as f:
        return list(csv.DictReader(f))


def write_results(path: Path, records: Iterable[ResultRecord]) -> None:
    write_csv(path, RESULT_COLUMNS, (r.as_row() for r in records))


def format_results(records: Sequence[ResultRecord], out: Path | None = None) -> list[str]:
    """Human-readable table of RMSE rows for the console."""
    lines = [HORIZONTAL * 79]
    lines.append(
        f"{'system':<9}{'estimator':<10}{'network':<16}{'controls':<10}"
        f"{'age':<6}{'rmse':>12}",
    )
    lines.append(HORIZONTAL * 79)
    for r in records:
        network = (
            "time-varying" if r.p is None else f"({r.p:g}, {r.q:g})"
        )
        lines.append(
            f"{r.system:<9}{r.estimator:<10}{network:<16}{r.control_mode:<10}"
            f"{r.age_mode:<6}{r.rmse_total:>12.6g}",
        )
    lines.append(DOUBLE_HORIZONTAL * 79)
    summary = f"{len(records)} result row(s)"
    if out is not None:
        summary += f" written to {out}"
    lines.append(summary)
    lines.append(DOUBLE_HORIZONTAL * 79)
    return lines
