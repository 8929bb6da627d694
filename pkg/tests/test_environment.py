from dataclasses import replace
import pytest
import numpy as np
from src.Slicing.environment import SlicingEnv, discounted_return, slice_reward, utility_delay, utility_pdr
from src.Slicing.scenario import freeway_scenario
from src.Slicing.slices import ConfigurationError, EpochMetrics, SliceSpec
from src.Slicing.sps import occupancy
from tests.conftest import make_scenario


def spec(alpha=(1.0, 2.0)):
    return SliceSpec(0, "s", packet_period=50, packet_size=2400, pdr_min=0.01, pdr_max=0.10,
                     delay_min=10, delay_max=50, alpha=alpha)


def metrics(pdr, delay, packets=5):
    return EpochMetrics(vue_count=(3,), avg_delay=(delay,), avg_pdr=(pdr,), occupancy=(0.5,), packets=(packets,))


@pytest.mark.parametrize("value, expected", [(0.005, 1.0), (0.10, 0.0), (0.2, 0.0), (0.055, 0.5), (0.01, 1.0)])
def test_utility_pdr(value, expected):
    assert np.isclose(utility_pdr(value, 0.01, 0.10), expected)


@pytest.mark.parametrize("value, expected", [(5, 1.0), (50, 0.0), (80, 0.0), (30, 0.5)])
def test_utility_delay(value, expected):
    assert np.isclose(utility_delay(value, 10, 50), expected)


def test_utilities_match_closed_form_on_grid():
    lo, hi = 0.01, 0.10
    for value in np.linspace(-0.1, 0.3, 1000):
        expected = 1.0 if value < lo else (0.0 if value >= hi else (hi - value) / (hi - lo))
        assert utility_pdr(value, lo, hi) == expected
    for delay in np.linspace(0.0, 60.0, 1000):
        expected = 1.0 if delay < 10 else (0.0 if delay >= 50 else (50 - delay) / 40)
        assert utility_delay(delay, 10, 50) == expected


def test_utilities_are_nonincreasing():
    values = [utility_delay(d, 5, 25) for d in np.linspace(0, 40, 400)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert min(values) == 0.0 and max(values) == 1.0


def test_utility_needs_ordered_bounds():
    with pytest.raises(ValueError):
        utility_pdr(0.1, 0.1, 0.1)


@pytest.mark.parametrize("alpha, pdr, delay, expected", [
    ((1.0, 2.0), 0.0, 0.0, 3.0),
    ((1.0, 2.0), 0.5, 100.0, 0.0),
    ((1.0, 3.0), 0.055, 30.0, 2.0),
])
def test_slice_reward(alpha, pdr, delay, expected):
    assert np.isclose(slice_reward(metrics(pdr, delay), spec(alpha)), expected)


def test_slice_without_packets_meets_qos():
    assert slice_reward(metrics(0.0, 0.0, packets=0), spec()) == 3.0


@pytest.mark.parametrize("rewards, discount, expected", [
    ((1, 1, 1), 0.0, (1, 1, 1)),
    ((1, 1), 0.9, (1.9, 1)),
    ((0, 0, 0), 0.9, (0, 0, 0)),
])
def test_discounted_return(rewards, discount, expected):
    assert np.allclose(discounted_return(rewards, discount), expected)


def test_discounted_return_matches_direct_sum():
    rng = np.random.default_rng(0)
    rewards = rng.random(30)
    returns = discounted_return(rewards, 0.9)
    for k in range(30):
        direct = sum(0.9 ** (j - k) * rewards[j] for j in range(k, 30))
        assert abs(returns[k] - direct) < 1e-12


@pytest.mark.parametrize("discount", [1.0, -0.1])
def test_discount_out_of_range(discount):
    with pytest.raises(ValueError):
        discounted_return([1.0], discount)


@pytest.fixture
def env():
    return SlicingEnv(make_scenario(num_vues=10, epoch_slots=100, episode_epochs=3))


def test_reset_is_deterministic(env):
    first = env.reset(5)
    assert env.reset(5) == first


def test_empty_network():
    env = SlicingEnv(make_scenario(num_vues=0))
    obs = env.reset(1)
    assert obs.vue_counts == (0, 0)
    assert obs.occupancies == (0.0, 0.0)


def test_step_before_reset_raises(env):
    with pytest.raises(RuntimeError):
        env.step(0)


def test_episode_ends_after_horizon(env):
    env.reset(2)
    steps = [env.step(0) for _ in range(3)]
    assert [s.done for s in steps] == [False, False, True]
    with pytest.raises(RuntimeError):
        env.step(0)


def test_step_simulates_epoch_slots(env):
    env.reset(3)
    env.step(1)
    assert env.sim.state.epoch in (1, 2)
    assert 2 * 100 <= env.sim.state.slot < 3 * 100


def test_reward_is_sum_of_slice_rewards(env):
    env.reset(4)
    step = env.step(0)
    assert step.reward == pytest.approx(sum(step.slice_rewards))
    assert 0.0 <= step.reward <= 3.0 + 4.0


def test_invalid_action_raises(env):
    env.reset(4)
    with pytest.raises(ValueError):
        env.step(len(env.action_space))


def test_same_seed_same_steps(env):
    other = SlicingEnv(env.scenario)
    env.reset(6)
    other.reset(6)
    for action in (0, 2, 1):
        assert env.step(action) == other.step(action)


def test_mean_occupancy_matches_per_slot_recount():
    env = SlicingEnv(make_scenario(num_vues=16, epoch_slots=200), record_usage=True)
    env.reset(7)
    step = env.step(0)
    config = env.sim.state.config
    epoch1 = [usage for t, usage, _ in env.sim.usage_log if 200 <= t < 400]
    for n in range(2):
        per_slot = [occupancy(usage[n], config[n].num_subchannels) for usage in epoch1]
        assert len(per_slot) == 200
        assert step.metrics.occupancy[n] == pytest.approx(np.mean(per_slot))


def test_observation_vector_width(env):
    obs = env.reset(8)
    assert env.vector(obs).shape == (env.observation_width,)


def test_default_action_outside_space():
    with pytest.raises(ConfigurationError):
        SlicingEnv(make_scenario(default_action=1000))


def test_freeway_scale_counts():
    env = SlicingEnv(replace(freeway_scenario(num_vues=100), epoch_slots=60))
    obs = env.reset(9)
    assert sum(obs.vue_counts) == 100


def test_packet_totals_balance(env):
    env.reset(10)
    for _ in range(3):
        env.step(0)
    totals = env.packet_totals()
    assert totals["generated"] == totals["scored"] + totals["pending"]


def test_reward_counts_packets_served_after_the_epoch():
    # arrivals at slot 150 with a 30-slot window straddle the 180-slot boundary
    env = SlicingEnv(make_scenario(num_vues=16, epoch_slots=90, episode_epochs=3), record_trace=True)
    env.reset(4)
    steps = [env.step(action) for action in (0, 3, 1)]
    for k, step in enumerate(steps, start=1):
        assert step.metrics == env.sim.epoch_metrics(k)
        arrived = [r for r in env.sim.trace if r.arrival_slot // 90 == k]
        assert step.metrics.packets == tuple(sum(1 for r in arrived if r.slice_id == n) for n in range(2))
    straddling = [r for r in env.sim.trace if r.arrival_slot // 90 == 1 and r.service_slot >= 180]
    assert straddling


def test_no_packet_of_a_finished_epoch_stays_queued():
    env = SlicingEnv(make_scenario(num_vues=16, epoch_slots=90, episode_epochs=3))
    env.reset(5)
    for k in range(1, 4):
        env.step(k)
        assert env.sim.pending(k) == 0
