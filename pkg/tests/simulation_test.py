"""Tests for seeded episode traces and RMSE bookkeeping."""
from __future__ import annotations

import numpy as np
import pytest

from age_estimator._data import DimensionError
from age_estimator._data import QueueConfig
from age_estimator._dynamics import Cartpole
from age_estimator._dynamics import LinearVehicle
from age_estimator import _simulation
from age_estimator._network import average_age
from age_estimator._network import queue_step
from age_estimator._seeding import substream
from age_estimator._simulation import TIME_VARYING
from age_estimator._simulation import RmseAccumulator
from age_estimator._simulation import episode_queue_config
from age_estimator._simulation import evaluation_trace
from age_estimator._simulation import simulate_episode
from age_estimator._simulation import trace_ages

CFG = QueueConfig(0.1, 0.3)

# =============================================================================
# seeding
# =============================================================================


def test_substream_is_reproducible():
    a = substream(3, 'controls', 7).random(5)
    b = substream(3, 'controls', 7).random(5)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize(
    'other',
    (
        pytest.param((4, 'controls', 7), id='seed'),
        pytest.param((3, 'dynamics', 7), id='stream'),
        pytest.param((3, 'controls', 8), id='key'),
    ),
)
def test_substreams_are_distinct(other):
    a = substream(3, 'controls', 7).random(5)
    b = substream(*other).random(5)
    assert not np.array_equal(a, b)


def test_substream_unknown_name():
    with pytest.raises(ValueError, match='unknown random stream'):
        substream(0, 'weather')


def _admissions_per_slot(monkeypatch, service_seed):
    admitted = []

    def shifted_substream(seed, name, *keys):
        return substream(service_seed if name == 'service' else seed, name, *keys)

    def recording_step(*args):
        qs, packet = queue_step(*args)
        admitted.append(qs.admitted)
        return qs, packet

    monkeypatch.setattr(_simulation, 'substream', shifted_substream)
    monkeypatch.setattr(_simulation, 'queue_step', recording_step)
    trace = simulate_episode(LinearVehicle(), QueueConfig(0.2, 0.3), 0, 0, 2000)
    return admitted, trace


def test_service_stream_varies_alone(monkeypatch):
    admitted_a, a = _admissions_per_slot(monkeypatch, 0)
    admitted_b, b = _admissions_per_slot(monkeypatch, 1)
    assert admitted_a == admitted_b
    np.testing.assert_array_equal(a.measurements, b.measurements)
    assert not np.array_equal(a.delivered_gen, b.delivered_gen)


# =============================================================================
# episodes
# =============================================================================


def test_simulate_episode_is_deterministic():
    a = simulate_episode(LinearVehicle(), CFG, 1, 0, 300)
    b = simulate_episode(LinearVehicle(), CFG, 1, 0, 300)
    assert a.digest() == b.digest()
    assert a.digest() != simulate_episode(LinearVehicle(), CFG, 2, 0, 300).digest()
    assert a.digest() != simulate_episode(LinearVehicle(), CFG, 1, 1, 300).digest()


def test_delivery_stream_is_independent_of_the_plant():
    linear = simulate_episode(LinearVehicle(), CFG, 5, 2, 500)
    cartpole = simulate_episode(Cartpole(), CFG, 5, 2, 500)
    np.testing.assert_array_equal(linear.delivered_gen, cartpole.delivered_gen)


def test_delivered_packets_carry_their_measurement():
    trace = simulate_episode(LinearVehicle(), CFG, 0, 0, 500)
    seen = 0
    for t in range(1, trace.horizon + 1):
        packet = trace.delivered(t)
        if packet is None:
            continue
        seen += 1
        assert packet.gen_slot < t
        np.testing.assert_array_equal(
            packet.payload.values, trace.measurements[packet.gen_slot - 1],
        )
    assert seen > 0


def test_trace_shapes():
    trace = simulate_episode(Cartpole(), CFG, 0, 0, 50)
    assert trace.horizon == 50
    assert trace.measurements.shape == (50, 4)
    assert trace.truths.shape == (50, 3)
    np.testing.assert_array_equal(trace.truth(3), trace.measurements[2, :3])


def test_simulate_episode_rejects_empty_horizon():
    with pytest.raises(ValueError):
        simulate_episode(LinearVehicle(), CFG, 0, 0, 0)


def test_trace_ages_match_average_age():
    trace = simulate_episode(LinearVehicle(), CFG, 8, 3, 3000)
    expected = average_age(
        CFG, 3000, substream(8, 'admission', 3), substream(8, 'service', 3),
    )
    assert np.mean(trace_ages(trace)) == pytest.approx(expected, rel=1e-12)


def test_time_varying_network_draws_per_episode():
    a = episode_queue_config(TIME_VARYING, 0, 0)
    b = episode_queue_config(TIME_VARYING, 0, 1)
    assert a != b
    assert a == episode_queue_config(TIME_VARYING, 0, 0)
    assert episode_queue_config(CFG, 0, 5) is CFG


def test_evaluation_traces_differ_from_training_traces():
    train = simulate_episode(LinearVehicle(), CFG, 0, 0, 200)
    held_out = evaluation_trace(LinearVehicle(), CFG, 0, 0, 200)
    assert train.digest() != held_out.digest()
    assert held_out.digest() == evaluation_trace(LinearVehicle(), CFG, 0, 0, 200).digest()


# =============================================================================
# RMSE
# =============================================================================


def test_rmse_accumulator_matches_numpy():
    rng = np.random.default_rng(0)
    estimates = rng.normal(size=(100, 3))
    truths = rng.normal(size=(100, 3))
    acc = RmseAccumulator(3)
    for est, truth in zip(estimates, truths):
        acc.add(est, truth)
    residual = truths - estimates
    assert acc.total == pytest.approx(np.sqrt(np.mean(np.sum(residual ** 2, axis=1))))
    np.testing.assert_allclose(acc.components, np.sqrt(np.mean(residual ** 2, axis=0)))


def test_rmse_accumulator_empty():
    acc = RmseAccumulator(2)
    with pytest.raises(ValueError, match='no residuals'):
        _ = acc.total


def test_rmse_accumulator_shape_mismatch():
    with pytest.raises(DimensionError):
        RmseAccumulator(2).add(np.zeros(3), np.zeros(3))
