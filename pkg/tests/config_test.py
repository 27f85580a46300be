"""Tests for experiment configuration and grid files."""
from __future__ import annotations

import dataclasses
import json
import warnings

import pytest

from age_estimator._config import FIXED_GRID
from age_estimator._config import OUTPUT_DIR_ENV
from age_estimator._config import EvalConfig
from age_estimator._config import ExperimentConfig
from age_estimator._config import default_output_dir
from age_estimator._config import experiment_from_dict
from age_estimator._config import fixed_grid
from age_estimator._config import full_scale
from age_estimator._config import load_grid
from age_estimator._data import AgeEstimatorWarning
from age_estimator._data import AgeMode
from age_estimator._data import ConfigError
from age_estimator._data import ControlMode
from age_estimator._data import QueueConfig
from age_estimator._laa import TrainConfig

# =============================================================================
# ExperimentConfig
# =============================================================================


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.network == QueueConfig(0.1, 0.3)
    assert cfg.network_mode == 'fixed'
    assert cfg.estimators == ('laa',)


@pytest.mark.parametrize(
    ('kwargs', 'match'),
    (
        pytest.param({'system': 'pendulum'}, 'unknown system', id='unknown system'),
        pytest.param({'estimators': ()}, 'no estimators', id='no estimators'),
        pytest.param({'estimators': ('ekf',)}, 'unknown estimators', id='unknown estimator'),
        pytest.param(
            {'system': 'cartpole', 'estimators': ('tvkf',)},
            'linear system',
            id='tvkf on cartpole',
        ),
        pytest.param(
            {'age_mode': AgeMode.NONE, 'estimators': ('laa', 'ukf')},
            'ablation',
            id='no-age filter',
        ),
        pytest.param({'p': None}, 'both p and q', id='missing p'),
        pytest.param({'q': 1.5}, 'q must be', id='q out of range'),
    ),
)
def test_validation(kwargs, match):
    with pytest.raises(ConfigError, match=match):
        ExperimentConfig(**kwargs)


def test_unstable_network_warns_when_built():
    with warnings.catch_warnings():
        warnings.simplefilter('error')
        cfg = ExperimentConfig(p=0.5, q=0.3)
    with pytest.warns(AgeEstimatorWarning):
        _ = cfg.network


def test_time_varying_needs_no_rates():
    cfg = ExperimentConfig(p=None, q=None, time_varying=True)
    assert cfg.network == 'time_varying'
    assert cfg.network_mode == 'time_varying'


def test_train_config_takes_the_master_seed():
    cfg = ExperimentConfig(seed=9, train=TrainConfig(seed=1))
    assert cfg.train_config.seed == 9


def test_fingerprint():
    base = ExperimentConfig()
    assert base.fingerprint() == ExperimentConfig().fingerprint()
    assert len(base.fingerprint()) == 16
    assert base.fingerprint() != ExperimentConfig(p=0.01).fingerprint()
    assert base.fingerprint() != ExperimentConfig(age_mode=AgeMode.NOISY).fingerprint()
    # which estimators run and where the model comes from do not change a result
    assert base.fingerprint() == ExperimentConfig(estimators=('tvkf',)).fingerprint()
    assert base.fingerprint() == ExperimentConfig(checkpoint='model.npz').fingerprint()


@pytest.mark.parametrize(
    ('kwargs', 'same'),
    (
        pytest.param({'age_mode': AgeMode.NOISY}, True, id='noisy ages'),
        pytest.param({'eval': EvalConfig(episodes=3)}, True, id='eval sizes'),
        pytest.param({'estimators': ('laa', 'ukf')}, True, id='estimators'),
        pytest.param({'age_mode': AgeMode.NONE}, False, id='age ablation'),
        pytest.param({'control_mode': ControlMode.KNOWN}, False, id='control mode'),
        pytest.param({'p': 0.01}, False, id='network'),
        pytest.param({'time_varying': True}, False, id='time varying'),
        pytest.param({'seed': 1}, False, id='seed'),
        pytest.param({'train': TrainConfig(episodes=2)}, False, id='training'),
    ),
)
def test_model_fingerprint(kwargs, same):
    base = ExperimentConfig()
    other = ExperimentConfig(**kwargs)
    assert (base.model_fingerprint() == other.model_fingerprint()) is same


def test_as_dict_is_json_ready():
    d = ExperimentConfig(control_mode=ControlMode.KNOWN).as_dict()
    assert json.loads(json.dumps(d)) == d
    assert d['control_mode'] == 'known'
    assert d['train']['batch_size'] == 256
    assert experiment_from_dict(d) == ExperimentConfig(control_mode=ControlMode.KNOWN)


def test_with_estimator():
    cfg = ExperimentConfig(estimators=('laa', 'tvkf')).with_estimator('tvkf')
    assert cfg.estimators == ('tvkf',)


def test_eval_config_validation():
    with pytest.raises(ConfigError):
        EvalConfig(episodes=0)


# =============================================================================
# experiment_from_dict and grid files
# =============================================================================


def test_from_dict_converts_values():
    cfg = experiment_from_dict({
        'system': 'cartpole',
        'age_mode': 'noisy',
        'estimators': ['laa', 'ukf'],
        'train': {'episodes': 3},
        'eval': {'horizon': 100},
    })
    assert cfg.age_mode is AgeMode.NOISY
    assert cfg.estimators == ('laa', 'ukf')
    assert cfg.train.episodes == 3
    assert cfg.eval == EvalConfig(horizon=100)


@pytest.mark.parametrize(
    ('raw', 'match'),
    (
        pytest.param({'sytem': 'linear'}, 'unknown experiment keys', id='typo'),
        pytest.param({'age_mode': 'fuzzy'}, 'fuzzy', id='bad enum'),
        pytest.param({'train': {'epochs': 3}}, 'epochs', id='bad train key'),
        pytest.param({'train': {'batch_size': 0}}, 'batch_size', id='bad train value'),
    ),
)
def test_from_dict_errors(raw, match):
    with pytest.raises(ConfigError, match=match):
        experiment_from_dict(raw)


def test_load_grid_merges_defaults_and_overrides(tmp_path):
    path = tmp_path / 'grid.json'
    path.write_text(json.dumps({
        'defaults': {'system': 'linear', 'train': {'episodes': 4, 'horizon': 500}},
        'experiments': [
            {'p': 0.01, 'q': 0.3},
            {'p': 0.3, 'q': 0.5, 'train': {'horizon': 800}},
        ],
    }))
    configs = load_grid(path, {'seed': 7, 'eval': {'episodes': 2}})
    assert [(c.p, c.q) for c in configs] == [(0.01, 0.3), (0.3, 0.5)]
    assert [c.train.horizon for c in configs] == [500, 800]
    assert all(c.train.episodes == 4 for c in configs)
    assert all(c.seed == 7 and c.eval.episodes == 2 for c in configs)


@pytest.mark.parametrize(
    'content',
    (
        pytest.param('{not json', id='invalid json'),
        pytest.param('{"defaults": {}}', id='no experiments'),
        pytest.param('[1, 2]', id='not an object'),
    ),
)
def test_load_grid_errors(tmp_path, content):
    path = tmp_path / 'grid.json'
    path.write_text(content)
    with pytest.raises(ConfigError):
        load_grid(path)


def test_load_grid_missing_file(tmp_path):
    with pytest.raises(ConfigError, match='cannot read'):
        load_grid(tmp_path / 'missing.json')


# =============================================================================
# presets
# =============================================================================


def test_fixed_grid():
    base = ExperimentConfig(system='cartpole', seed=3)
    configs = fixed_grid(base)
    assert [(c.p, c.q) for c in configs] == list(FIXED_GRID)
    assert all(c.system == 'cartpole' and c.seed == 3 for c in configs)


def test_full_scale_warns():
    cfg = ExperimentConfig(train=dataclasses.replace(TrainConfig(), batch_size=64))
    with pytest.warns(AgeEstimatorWarning, match='full scale'):
        scaled = full_scale(cfg)
    assert (scaled.train.episodes, scaled.train.horizon) == (200, 40_000)
    assert scaled.train.batch_size == 64
    assert (scaled.eval.episodes, scaled.eval.horizon) == (200, 40_000)


def test_default_output_dir(monkeypatch, tmp_path):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    assert str(default_output_dir()) == 'results'
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
    assert default_output_dir() == tmp_path
