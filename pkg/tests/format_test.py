"""Tests for result rows, CSV files and console tables."""
from __future__ import annotations

import math

import pytest

from age_estimator._config import ExperimentConfig
from age_estimator._format import RESULT_COLUMNS
from age_estimator._format import ResultRecord
from age_estimator._format import format_float
from age_estimator._format import format_results
from age_estimator._format import read_csv
from age_estimator._format import write_results
from age_estimator._simulation import EvaluationResult


def _result(components=(0.1, 0.2, 0.3), estimator='ukf', system='cartpole'):
    return EvaluationResult(
        estimator=estimator,
        system=system,
        rmse_total=math.sqrt(sum(c * c for c in components)),
        rmse_components=components,
        episodes=2,
        horizon=100,
        trace_digests=('a', 'b'),
    )


def test_format_float_round_trips():
    assert format_float(0.1) == '0.1'
    assert float(format_float(1 / 3)) == 1 / 3
    assert format_float(None) == ''


def test_row_for_cartpole_leaves_fourth_component_blank():
    cfg = ExperimentConfig(system='cartpole', estimators=('ukf',))
    row = ResultRecord.from_evaluation(cfg, _result(), wall_s=1.23456).as_row()
    assert list(row) == list(RESULT_COLUMNS)
    assert row['schema'] == '1'
    assert (row['rmse_0'], row['rmse_2'], row['rmse_3']) == ('0.1', '0.3', '')
    assert row['wall_s'] == '1.235'
    assert row['p'] == '0.1'
    assert row['network_mode'] == 'fixed'
    assert row['fingerprint'] == cfg.fingerprint()


def test_row_for_time_varying_network():
    cfg = ExperimentConfig(p=None, q=None, time_varying=True, estimators=('tvkf',))
    result = _result((0.1, 0.2, 0.3, 0.4), 'tvkf', 'linear')
    row = ResultRecord.from_evaluation(cfg, result).as_row()
    assert (row['p'], row['q'], row['wall_s']) == ('', '', '')
    assert row['network_mode'] == 'time_varying'
    assert row['rmse_3'] == '0.4'


@pytest.mark.parametrize(
    'components',
    (
        pytest.param((math.nan,), id='nan'),
        pytest.param((-1.0,), id='negative'),
        pytest.param((0.1,) * 5, id='too many components'),
    ),
)
def test_record_validation(components):
    cfg = ExperimentConfig(estimators=('tvkf',))
    with pytest.raises(ValueError):
        ResultRecord.from_evaluation(cfg, _result(components, 'tvkf', 'linear'))


def test_write_results_round_trip(tmp_path):
    cfg = ExperimentConfig(estimators=('tvkf',))
    records = [
        ResultRecord.from_evaluation(cfg, _result((0.5, 0.5, 0.5, 0.5), 'tvkf', 'linear')),
        ResultRecord.from_evaluation(cfg, _result((0.25, 0.5, 0.5, 0.5), 'tvkf', 'linear')),
    ]
    path = tmp_path / 'out' / 'results.csv'
    write_results(path, records)
    rows = read_csv(path)
    assert rows == [r.as_row() for r in records]
    assert path.read_text().splitlines()[0] == ','.join(RESULT_COLUMNS)
    assert float(rows[0]['rmse_total']) == 1.0


def test_format_results(tmp_path):
    cfg = ExperimentConfig(estimators=('tvkf',))
    records = [ResultRecord.from_evaluation(cfg, _result((0.5,) * 4, 'tvkf', 'linear'))]
    lines = format_results(records, tmp_path / 'grid.csv')
    assert any('tvkf' in line and '(0.1, 0.3)' in line for line in lines)
    assert f'1 result row(s) written to {tmp_path / "grid.csv"}' in lines
