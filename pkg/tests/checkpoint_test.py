"""Tests for checkpoint files."""
from __future__ import annotations

import json

import numpy as np
import pytest

from age_estimator._checkpoint import load_checkpoint
from age_estimator._checkpoint import save_checkpoint
from age_estimator._checkpoint import sidecar_path
from age_estimator._data import CheckpointMismatchError
from age_estimator._nn import init_params


@pytest.fixture
def params():
    return init_params(12, 8, 4, np.random.default_rng(0))


def _rewrite_header(path, **changes):
    with np.load(path) as archive:
        arrays = {name: archive[name] for name in archive.files}
    header = json.loads(str(arrays.pop('__header__')))
    header.update(changes)
    with path.open('wb') as f:
        np.savez(f, __header__=np.array(json.dumps(header)), **arrays)


def test_round_trip_is_exact(tmp_path, params):
    path = tmp_path / 'model.npz'
    save_checkpoint(path, params, 5, {'system': 'linear'})
    loaded, metadata = load_checkpoint(path)
    for name, arr in params.named_arrays().items():
        np.testing.assert_array_equal(loaded.named_arrays()[name], arr)
    assert metadata['system'] == 'linear'
    assert metadata['header']['seed'] == 5
    assert metadata['header']['sizes'] == {'n_x': 12, 'n_h': 8, 'n_fc': 8, 'n_o': 4}


def test_sidecar_is_optional(tmp_path, params):
    path = tmp_path / 'model.npz'
    save_checkpoint(path, params, 0, {'system': 'linear'})
    sidecar_path(path).unlink()
    _, metadata = load_checkpoint(path)
    assert set(metadata) == {'header'}


def test_creates_parent_directories(tmp_path, params):
    path = tmp_path / 'a' / 'b' / 'model.npz'
    save_checkpoint(path, params, 0, {})
    assert path.exists()
    assert sidecar_path(path) == tmp_path / 'a' / 'b' / 'model.json'


def test_overwrite_leaves_no_temporary_files(tmp_path, params):
    path = tmp_path / 'model.npz'
    save_checkpoint(path, params, 0, {'run': 1})
    save_checkpoint(path, params, 1, {'run': 2})
    assert sorted(p.name for p in tmp_path.iterdir()) == ['model.json', 'model.npz']
    _, metadata = load_checkpoint(path)
    assert (metadata['run'], metadata['header']['seed']) == (2, 1)


def test_failed_write_keeps_previous_checkpoint(tmp_path, params, monkeypatch):
    path = tmp_path / 'model.npz'
    save_checkpoint(path, params, 0, {'run': 1})
    before = path.read_bytes()

    def interrupted(*args, **kwargs):
        raise OSError('disk full')

    monkeypatch.setattr(np, 'savez', interrupted)
    with pytest.raises(OSError, match='disk full'):
        save_checkpoint(path, params, 5, {'run': 2})
    monkeypatch.undo()

    assert path.read_bytes() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ['model.json', 'model.npz']
    _, metadata = load_checkpoint(path)
    assert metadata['run'] == 1


@pytest.mark.parametrize(
    ('changes', 'match'),
    (
        pytest.param({'format': 99}, 'format', id='format version'),
        pytest.param(
            {'gate_order': ['input', 'cell', 'forget', 'output']},
            'gate order',
            id='gate order',
        ),
        pytest.param(
            {'sizes': {'n_x': 9, 'n_h': 8, 'n_fc': 8, 'n_o': 3}},
            'sizes',
            id='sizes',
        ),
    ),
)
def test_header_mismatch(tmp_path, params, changes, match):
    path = tmp_path / 'model.npz'
    save_checkpoint(path, params, 0, {})
    _rewrite_header(path, **changes)
    with pytest.raises(CheckpointMismatchError, match=match):
        load_checkpoint(path)
