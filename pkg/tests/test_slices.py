import pytest
import numpy as np
from src.Slicing.slices import (ConfigurationError, HistoryWindow, Observation, ObservationNorm, SliceGrid, SliceSpec,
                                build_action_space, observation_to_vector)

MHZ = 1_000_000


def freeway_grids():
    return (SliceGrid((2, 3, 4), (1_440_000, 2_160_000), (30, 50)),
            SliceGrid((2, 3, 4), (1_080_000, 1_440_000), (25, 15)))


def test_singleton_grid():
    space = build_action_space([SliceGrid((2,), (MHZ,), (10,))], 10 * MHZ)
    assert len(space) == 1
    setting = space[0][0]
    assert (setting.num_subchannels, setting.subchannel_bandwidth_hz, setting.selection_window) == (2, MHZ, 10)


def test_freeway_grids_count():
    # 22 feasible (F, B) pairs times 2 x 2 selection windows
    space = build_action_space(freeway_grids(), 10 * MHZ)
    assert len(space) == 88


def test_every_config_respects_budget_and_is_unique():
    space = build_action_space(freeway_grids(), 10 * MHZ)
    assert all(c.bandwidth_hz <= 10 * MHZ for c in space.configs)
    assert len(set(space.configs)) == len(space)


def test_order_is_deterministic():
    a = build_action_space(freeway_grids(), 10 * MHZ)
    b = build_action_space(freeway_grids(), 10 * MHZ)
    assert a.configs == b.configs
    first = a[0]
    assert [(s.num_subchannels, s.subchannel_bandwidth_hz, s.selection_window) for s in first.slices] == \
        [(2, 1_440_000, 30), (2, 1_080_000, 25)]


def test_duplicate_candidates_collapse():
    space = build_action_space([SliceGrid((2, 2), (MHZ, MHZ), (10, 10))], 10 * MHZ)
    assert len(space) == 1


def test_budget_boundary_is_inclusive():
    # 5 x 2 MHz is exactly 10 MHz
    space = build_action_space([SliceGrid((5,), (2 * MHZ,), (10,))], 10 * MHZ)
    assert len(space) == 1


def test_infeasible_grids_raise():
    grids = [SliceGrid((4,), (2_160_000,), (10,)), SliceGrid((4,), (2_160_000,), (10,))]
    with pytest.raises(ConfigurationError):
        build_action_space(grids, 10 * MHZ)


def test_action_outside_space_raises():
    space = build_action_space([SliceGrid((2,), (MHZ,), (10,))], 10 * MHZ)
    with pytest.raises(ValueError):
        space[1]


@pytest.mark.parametrize("kwargs", [
    dict(pdr_min=0.1, pdr_max=0.1),      # pdr_min must be below pdr_max
    dict(delay_min=10, delay_max=5),     # delay_min must be below delay_max
    dict(packet_period=0),
    dict(packet_size=0),
    dict(alpha=(1.0, -1.0)),
])
def test_slice_spec_validation(kwargs):
    base = dict(id=0, name="s", packet_period=25, packet_size=1600, pdr_min=0.01, pdr_max=0.1,
                delay_min=5, delay_max=25)
    base.update(kwargs)
    with pytest.raises(ConfigurationError):
        SliceSpec(**base)


def test_empty_grid_raises():
    with pytest.raises(ConfigurationError):
        SliceGrid((), (MHZ,), (10,))


@pytest.mark.parametrize("counts, occupancies, max_vues, expected", [
    ((10, 20), (0.5, 1.0), 20, (0.5, 0.5, 1.0, 1.0)),
    ((0, 0), (0.0, 0.0), 20, (0.0, 0.0, 0.0, 0.0)),
    ((7,), (0.25,), 10, (0.7, 0.25)),
])
def test_observation_to_vector(counts, occupancies, max_vues, expected):
    vector = observation_to_vector(Observation(counts, occupancies), ObservationNorm(max_vues))
    assert np.allclose(vector, expected)


def test_observation_clamps_and_warns(caplog):
    with caplog.at_level("WARNING"):
        vector = observation_to_vector(Observation((30,), (0.5,)), ObservationNorm(20))
    assert np.allclose(vector, (1.0, 0.5))
    assert "clamped" in caplog.text


def test_observation_vector_is_injective():
    norm = ObservationNorm(10)
    seen = {}
    for c0 in range(11):
        for x0 in (0.0, 0.25, 0.5, 1.0):
            vector = tuple(observation_to_vector(Observation((c0, 3), (x0, 0.1)), norm))
            assert vector not in seen
            seen[vector] = (c0, x0)


def test_observation_rejects_bad_occupancy():
    with pytest.raises(ValueError):
        Observation((1,), (1.5,))


def test_norm_must_be_positive():
    with pytest.raises(ConfigurationError):
        ObservationNorm(0)


def test_history_window_is_zero_padded():
    history = HistoryWindow(3, 2)
    history.push([1.0, 2.0])
    window = history.window()
    assert window.shape == (3, 2)
    assert np.allclose(window[:2], 0.0)
    assert np.allclose(window[2], [1.0, 2.0])


def test_history_window_shift():
    history = HistoryWindow(3, 1)
    for value in range(5):
        history.push([value])
    assert len(history) == 3
    assert np.allclose(history.window().ravel(), [2, 3, 4])


def test_history_window_rejects_wrong_width():
    history = HistoryWindow(2, 2)
    with pytest.raises(ValueError):
        history.push([1.0, 2.0, 3.0])
