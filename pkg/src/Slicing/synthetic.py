"""
A PoMDP small enough to enumerate, used to validate policy-gradient estimators.

Two hidden states, three observations, two actions and a horizon of three epochs give
1728 state/observation/action paths, so the exact objective and the exact per-epoch expected
return can be computed by summing over all of them.
"""
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .nn import softmax


def _default_transitions():
    # [state, action, next state]
    return np.array([[[0.9, 0.1], [0.3, 0.7]],
                     [[0.2, 0.8], [0.6, 0.4]]])


@dataclass(frozen=True, eq=False)
class SyntheticPoMDP:
    """
    Attributes:
        initial (np.ndarray): distribution of the first hidden state.
        transitions (np.ndarray): P[s, a, s'].
        emissions (np.ndarray): O[s, o], probability of observing o in state s.
        rewards (np.ndarray): R[s, a].
        horizon (int): epochs per episode.
        reward_offset (float): constant added to every reward.
    """
    initial: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5]))
    transitions: np.ndarray = field(default_factory=_default_transitions)
    emissions: np.ndarray = field(default_factory=lambda: np.array([[0.7, 0.2, 0.1], [0.1, 0.2, 0.7]]))
    rewards: np.ndarray = field(default_factory=lambda: np.array([[1.0, 0.0], [0.2, 0.8]]))
    horizon: int = 3
    reward_offset: float = 0.0

    @property
    def num_states(self):
        return self.emissions.shape[0]

    @property
    def num_observations(self):
        return self.emissions.shape[1]

    @property
    def num_actions(self):
        return self.rewards.shape[1]

    def reward(self, state, action):
        return float(self.rewards[state, action]) + self.reward_offset

    def sample_episode(self, policy, rng):
        """
        Returns:
            tuple: observations, actions and rewards of one episode, as integer/float arrays.
        """
        observations = np.zeros(self.horizon, dtype=int)
        actions = np.zeros(self.horizon, dtype=int)
        rewards = np.zeros(self.horizon)
        s = rng.choice(self.num_states, p=self.initial)
        for k in range(self.horizon):
            o = rng.choice(self.num_observations, p=self.emissions[s])
            a = rng.choice(self.num_actions, p=policy.probs(o))
            observations[k], actions[k], rewards[k] = o, a, self.reward(s, a)
            s = rng.choice(self.num_states, p=self.transitions[s, a])
        return observations, actions, rewards

    def paths(self, policy):
        """Yields (probability, observations, actions, rewards) for every path of the episode."""
        H = self.horizon
        for states in product(range(self.num_states), repeat=H):
            p_states = self.initial[states[0]]
            for obs in product(range(self.num_observations), repeat=H):
                for acts in product(range(self.num_actions), repeat=H):
                    p = p_states
                    for k in range(H):
                        p *= self.emissions[states[k], obs[k]] * policy.probs(obs[k])[acts[k]]
                        if k + 1 < H:
                            p *= self.transitions[states[k], acts[k], states[k + 1]]
                        if p == 0.0:
                            break
                    if p == 0.0:
                        continue
                    rewards = [self.reward(states[k], acts[k]) for k in range(H)]
                    yield p, obs, acts, rewards

    def expected_return(self, policy, discount):
        """J(pi) = E[sum_k discount^k r_k], exact."""
        weights = discount ** np.arange(self.horizon)
        return float(sum(p * np.dot(weights, r) for p, _, _, r in self.paths(policy)))

    def expected_returns_to_go(self, policy, discount):
        """E[G_k] for every epoch k, exact. A state- and action-free baseline."""
        H = self.horizon
        out = np.zeros(H)
        for p, _, _, rewards in self.paths(policy):
            g = 0.0
            for k in range(H - 1, -1, -1):
                g = rewards[k] + discount * g
                out[k] += p * g
        return out

    def exact_gradient(self, policy, discount, h=1e-5):
        """Central finite differences of the enumerated objective with respect to the logits."""
        grad = np.zeros_like(policy.logits)
        for idx in np.ndindex(policy.logits.shape):
            saved = policy.logits[idx]
            policy.logits[idx] = saved + h
            plus = self.expected_return(policy, discount)
            policy.logits[idx] = saved - h
            minus = self.expected_return(policy, discount)
            policy.logits[idx] = saved
            grad[idx] = (plus - minus) / (2 * h)
        return grad


class TabularSoftmaxPolicy:
    """pi(a | o) = softmax(logits[o])."""
    def __init__(self, num_observations, num_actions, logits=None):
        if logits is None:
            logits = np.zeros((num_observations, num_actions))
        self.logits = np.array(logits, dtype=float)
        if self.logits.shape != (num_observations, num_actions):
            raise ValueError(f"Logits must have shape {(num_observations, num_actions)}")

    def probs(self, observation):
        return softmax(self.logits[observation])

    def score(self, observation, action):
        """Gradient of log pi(action | observation) with respect to the logits."""
        grad = np.zeros_like(self.logits)
        grad[observation] = -self.probs(observation)
        grad[observation, action] += 1.0
        return grad
