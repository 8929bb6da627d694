"""
Epoch-level environment of the slicing controller.

The eNB applies one slice configuration per epoch, the network runs epoch_slots slots under it,
and the eNB receives the per-slice VUE count and mean subchannel occupancy together with a
reward built from the delay and PDR of the packets that arrived during the epoch.
Packets still queued at the boundary are served or dropped under the same configuration
before the reward is issued; the next configuration takes effect once they are settled.
"""
from dataclasses import dataclass
import logging

import numpy as np

from .Simulator import Simulator
from .slices import ConfigurationError, EpochMetrics, Observation, build_action_space, observation_to_vector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochStep:
    """
    Outcome of one epoch.
    Attributes:
        observation (Observation): O_k.
        reward (float): J_k, the sum of the slice rewards.
        metrics (EpochMetrics): delay, PDR, occupancy and counts of the epoch.
        done (bool): True once the episode horizon is reached.
        slice_rewards (tuple): J_{n,k} per slice.
    """
    observation: Observation
    reward: float
    metrics: EpochMetrics
    done: bool
    slice_rewards: tuple = ()


def _piecewise_utility(value, low, high):
    if not low < high:
        raise ValueError(f"Utility needs low < high, got {low} and {high}")
    if value < low:
        return 1.0
    if value >= high:
        return 0.0
    return (high - value) / (high - low)


def utility_pdr(pdr, pdr_min, pdr_max):
    """1 below pdr_min, 0 from pdr_max on, linear in between."""
    return _piecewise_utility(pdr, pdr_min, pdr_max)


def utility_delay(delay, delay_min, delay_max):
    """1 below delay_min, 0 from delay_max on, linear in between."""
    return _piecewise_utility(delay, delay_min, delay_max)


def slice_reward(metrics, spec):
    """
    Reward of one slice for one epoch, alpha_1 * U_pdr + alpha_2 * U_delay.
    A slice that carried no packets in the epoch meets its QoS vacuously and scores both utilities as 1.
    Args:
        metrics (EpochMetrics): the epoch's metrics.
        spec (SliceSpec): the slice, its id indexes the metrics.
    Returns:
        float: J_{n,k}.
    """
    n = spec.id
    if metrics.packets[n] == 0:
        u_pdr, u_delay = 1.0, 1.0
    else:
        u_pdr = utility_pdr(metrics.avg_pdr[n], spec.pdr_min, spec.pdr_max)
        u_delay = utility_delay(metrics.avg_delay[n], spec.delay_min, spec.delay_max)
    return spec.alpha[0] * u_pdr + spec.alpha[1] * u_delay


def discounted_return(rewards, discount):
    """
    Returns G_k = J_k + discount * G_{k+1} with G past the last epoch equal to 0.
    Args:
        rewards (array): J_k for every epoch of the episode.
        discount (float): lambda in [0, 1).
    Returns:
        np.ndarray: G_k for every epoch.
    """
    if not 0.0 <= discount < 1.0:
        raise ValueError(f"Discount must lie in [0, 1), got {discount}")
    rewards = np.asarray(rewards, dtype=float)
    returns = np.zeros_like(rewards)
    running = 0.0
    for k in range(len(rewards) - 1, -1, -1):
        running = rewards[k] + discount * running
        returns[k] = running
    return returns


class SlicingEnv:
    def __init__(self, scenario, record_usage=False, record_trace=False, record_sinr=False):
        """
        Partially observed slicing environment over the slot-level simulator.
        Args:
            scenario (Scenario): the network to control.
            record_usage, record_trace, record_sinr (bool): forwarded to the simulator.
        Raises:
            ConfigurationError: If the candidate grids admit no configuration or the default
                action lies outside the action space.
        """
        self._configure(scenario)
        self._record = dict(record_usage=record_usage, record_trace=record_trace, record_sinr=record_sinr)
        self.sim = None
        self.epoch = 0
        self.done = True
        self.last_observation = None
        self.last_action = None


    def _configure(self, scenario):
        self.scenario = scenario
        self._action_space = build_action_space(scenario.grids, scenario.total_bandwidth_hz)
        if not 0 <= scenario.default_action < len(self._action_space):
            raise ConfigurationError(
                f"network.default_action {scenario.default_action} outside action space "
                f"of size {len(self._action_space)}", key="default_action")


    @property
    def action_space(self):
        return self._action_space

    @property
    def observation_width(self):
        return 2 * self.scenario.num_slices


    def reset(self, seed, scenario=None):
        """
        Starts a new episode: places the vehicles and runs one warm-up epoch under the default
        configuration to produce the first observation.
        Args:
            seed (int): master seed of the episode.
            scenario (Scenario): replaces the current scenario when given.
        Returns:
            Observation: O_0.
        """
        if scenario is not None and scenario != self.scenario:
            self._configure(scenario)
        self.sim = Simulator(self.scenario, seed, **self._record)
        self.last_action = self.scenario.default_action
        self.sim.apply_config(self._action_space[self.last_action])
        metrics = self._finish_epoch()
        self.epoch = 0
        self.done = False
        self.last_observation = metrics.observation()
        logger.debug(f"Reset with seed {seed}: {self.last_observation}")
        return self.last_observation


    def step(self, action):
        """
        Applies configuration `action` for one epoch.
        Raises:
            RuntimeError: If called before reset or after the episode ended.
            ValueError: If the action is outside the action space.
        Returns:
            EpochStep: observation, reward, metrics and the done flag.
        """
        if self.sim is None:
            raise RuntimeError("reset must be called before step")
        if self.done:
            raise RuntimeError("Episode is over, call reset before stepping again")
        config = self._action_space[int(action)]
        self.sim.apply_config(config)
        metrics = self._finish_epoch()
        rewards = tuple(slice_reward(metrics, spec) for spec in self.scenario.slices)
        self.epoch += 1
        self.done = self.epoch >= self.scenario.episode_epochs
        self.last_action = int(action)
        self.last_observation = metrics.observation()
        return EpochStep(self.last_observation, float(sum(rewards)), metrics, self.done, rewards)


    def _finish_epoch(self):
        """Runs the epoch, settles its straddling packets and returns its final metrics."""
        self.sim.run_epoch()
        epoch = self.sim.state.epoch
        self.sim.settle()
        return self.sim.epoch_metrics(epoch)


    def vector(self, observation):
        return observation_to_vector(observation, self.scenario.norm)


    def packet_totals(self):
        if self.sim is None:
            return {"generated": 0, "scored": 0, "pending": 0}
        return self.sim.packet_totals()
