"""
Training of the slicing controller.

The advantage actor-critic collects a batch of episodes with the current softmax policy,
fits the critic to the discounted returns, then takes one policy-gradient step weighted by
the advantages G_k - V(H_k). The recurrent DQN baseline learns Q-values from a uniform replay
buffer with a periodically copied target network. The estimator utilities at the end check
the policy-gradient formula on the enumerable synthetic PoMDP.
"""
from collections import deque
from dataclasses import dataclass, field
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from .environment import discounted_return
from .nn import ActorCriticNet, QNet, log_softmax, make_optimizer, save_checkpoint
from .scenario import component_rng, derive_seed
from .slices import HistoryWindow

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Raised when a loss or a parameter stops being finite or the critic loss leaves its bound."""


@dataclass
class Trajectory:
    """
    One episode as seen by the learner.
    Attributes:
        windows (np.ndarray): H_k for every epoch, shape (T, K, input width).
        actions (np.ndarray): C_k.
        log_probs (np.ndarray): log pi(C_k | H_k) at collection time.
        rewards, returns, values, advantages (np.ndarray): J_k, G_k, V(H_k) and G_k - V(H_k).
        metrics (list[EpochMetrics]): per-epoch QoS, for reporting.
        seed (int): environment seed of the episode.
    """
    windows: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    returns: np.ndarray
    values: np.ndarray
    advantages: np.ndarray
    metrics: list = field(default_factory=list)
    seed: int = 0

    def __len__(self):
        return len(self.actions)

    @classmethod
    def from_steps(cls, windows, actions, log_probs, rewards, values, discount, metrics=(), seed=0):
        returns = discounted_return(rewards, discount)
        values = np.asarray(values, dtype=float)
        return cls(windows=np.asarray(windows, dtype=float), actions=np.asarray(actions, dtype=int),
                   log_probs=np.asarray(log_probs, dtype=float), rewards=np.asarray(rewards, dtype=float),
                   returns=returns, values=values, advantages=returns - values,
                   metrics=list(metrics), seed=seed)


class ReplayBuffer:
    def __init__(self, capacity, rng):
        """Uniform replay of (window, action, reward, next window, done) transitions."""
        if capacity < 1:
            raise ValueError("Replay capacity must be >= 1")
        self.capacity = capacity
        self.rng = rng
        self._items = deque(maxlen=capacity)

    def __len__(self):
        return len(self._items)

    def add(self, window, action, reward, next_window, done):
        self._items.append((np.array(window, dtype=float), int(action), float(reward),
                            np.array(next_window, dtype=float), bool(done)))

    def sample(self, batch_size):
        """
        Draws a batch uniformly without replacement (with replacement when the buffer is smaller).
        Returns:
            tuple: stacked windows, actions, rewards, next windows and done flags.
        """
        if len(self._items) == 0:
            raise ValueError("Cannot sample from an empty replay buffer")
        replace = batch_size > len(self._items)
        idx = self.rng.choice(len(self._items), size=batch_size, replace=replace)
        batch = [self._items[i] for i in idx]
        windows, actions, rewards, next_windows, dones = zip(*batch)
        return (np.stack(windows), np.array(actions), np.array(rewards),
                np.stack(next_windows), np.array(dones, dtype=float))


@dataclass(frozen=True)
class A2CParams:
    iterations: int = 300
    batch_episodes: int = 10
    history_length: int = 4
    discount: float = 0.9
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    lstm_units: int = 256
    hidden_units: int = 64
    lstm_activation: str = "relu"
    optimizer: str = "adam"
    discount_weighting: bool = True
    normalize_advantages: bool = False
    previous_action: bool = False
    divergence_bound: float = 1e6
    checkpoint_every: int = 0
    learning_rates: tuple = ()

    def __post_init__(self):
        if self.iterations < 0 or self.batch_episodes < 1 or self.history_length < 1:
            raise ValueError("agent needs iterations >= 0, batch_episodes >= 1 and history_length >= 1")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("agent.discount must lie in [0, 1)")


@dataclass(frozen=True)
class DrqnParams:
    episodes: int = 300
    history_length: int = 4
    discount: float = 0.9
    lr: float = 1e-4
    lstm_units: int = 256
    hidden: tuple = (128, 128)
    lstm_activation: str = "relu"
    buffer_capacity: int = 10_000
    batch_size: int = 32
    learn_start: int = 32
    target_update: int = 200
    epsilon: float = 1.0
    epsilon_min: float = 0.01
    epsilon_decay: float = 0.01
    previous_action: bool = False
    divergence_bound: float = 1e6
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.episodes < 0 or self.batch_size < 1 or self.target_update < 1:
            raise ValueError("drqn needs episodes >= 0, batch_size >= 1 and target_update >= 1")
        if not 0.0 <= self.epsilon_min <= self.epsilon <= 1.0:
            raise ValueError("drqn needs 0 <= epsilon_min <= epsilon <= 1")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("drqn.discount must lie in [0, 1)")


@dataclass
class TrainingResult:
    net: object
    curve: pd.DataFrame
    checkpoints: list = field(default_factory=list)


class ActorCriticPolicy:
    """Samples C_k from the softmax output of an ActorCriticNet."""
    def __init__(self, net):
        self.net = net

    def begin_episode(self, rng):
        pass

    def act(self, window, rng):
        probs, value = self.net.forward(window)
        action = int(rng.choice(len(probs), p=probs))
        return action, float(np.log(probs[action])), float(value)


class GreedyPolicy:
    """Most probable configuration of an ActorCriticNet, or highest Q-value of a QNet."""
    def __init__(self, net):
        self.net = net

    def begin_episode(self, rng):
        pass

    def act(self, window, rng):
        if isinstance(self.net, ActorCriticNet):
            probs, value = self.net.forward(window)
            action = int(np.argmax(probs))
            return action, float(np.log(probs[action])), float(value)
        q = self.net.forward(window)
        return int(np.argmax(q)), 0.0, float(np.max(q))


class RandomPolicy:
    """Draws one configuration uniformly at the start of each episode and holds it."""
    def __init__(self, num_actions):
        self.num_actions = num_actions
        self.action = None

    def begin_episode(self, rng):
        self.action = int(rng.integers(self.num_actions))

    def act(self, window, rng):
        return self.action, -float(np.log(self.num_actions)), 0.0


def input_width(env, previous_action=False):
    return env.observation_width + (len(env.action_space) if previous_action else 0)


def observation_input(env, observation, action, previous_action=False):
    """Observation vector, followed by the one-hot of the configuration in force when asked for."""
    vector = env.vector(observation)
    if not previous_action:
        return vector
    one_hot = np.zeros(len(env.action_space))
    one_hot[action] = 1.0
    return np.concatenate([vector, one_hot])


def collect_episode(env, policy, history_length, rng, seed, discount=0.9, previous_action=False):
    """
    Runs one episode and stores it for learning.
    Args:
        env (SlicingEnv): the environment, reset here with `seed`.
        policy: object with begin_episode(rng) and act(window, rng) -> (action, log_prob, value).
        history_length (int): K, observations per window.
        rng (np.random.Generator): the policy's sampling stream.
        seed (int): environment seed.
        discount (float): lambda for the returns.
        previous_action (bool): append the one-hot of the previous configuration to each observation.
    Returns:
        Trajectory: the episode with returns and advantages.
    """
    observation = env.reset(seed)
    history = HistoryWindow(history_length, input_width(env, previous_action))
    history.push(observation_input(env, observation, env.last_action, previous_action))
    policy.begin_episode(rng)
    windows, actions, log_probs, rewards, values, metrics = [], [], [], [], [], []
    done = False
    while not done:
        window = history.window()
        action, log_prob, value = policy.act(window, rng)
        step = env.step(action)
        windows.append(window)
        actions.append(action)
        log_probs.append(log_prob)
        rewards.append(step.reward)
        values.append(value)
        metrics.append(step.metrics)
        history.push(observation_input(env, step.observation, action, previous_action))
        done = step.done
    return Trajectory.from_steps(windows, actions, log_probs, rewards, values, discount, metrics, seed)


def _as_list(trajectories):
    return [trajectories] if isinstance(trajectories, Trajectory) else list(trajectories)


def critic_update(trajectories, net, optimizer):
    """
    One optimizer step on L(w) = 1/2 mean_k (V(H_k) - G_k)^2 over the critic head and the shared LSTM.
    Raises:
        ValueError: If there is nothing to learn from.
        TrainingDivergedError: If the loss or its gradient is not finite.
    Returns:
        float: the loss before the step.
    """
    trajectories = _as_list(trajectories)
    if sum(len(t) for t in trajectories) == 0:
        raise ValueError("critic_update needs at least one epoch")
    windows = np.concatenate([t.windows for t in trajectories])
    returns = np.concatenate([t.returns for t in trajectories])
    net.zero_grad()
    _, values = net.forward(windows)
    err = values - returns
    loss = 0.5 * float(np.mean(err ** 2))
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"Critic loss is {loss}")
    grads = net.backward(dvalues=err / len(err))
    if not grads.is_finite():
        raise TrainingDivergedError("Critic gradient is not finite")
    optimizer.step(grads)
    return loss


def actor_update(trajectories, net, optimizer, discount, discount_weighting=True, normalize_advantages=False):
    """
    One step along the advantage policy gradient, sum_k lambda^k grad log pi(C_k|H_k) A_k
    averaged over the episodes. The advantages are constants taken from the trajectories.
    Implemented as descent on the pseudo-loss -mean_episodes sum_k lambda^k log pi(C_k|H_k) A_k.
    Args:
        discount_weighting (bool): keep the lambda^k weight; False weights every epoch by 1.
        normalize_advantages (bool): standardise the advantages over the batch.
    Raises:
        TrainingDivergedError: If the pseudo-loss or its gradient is not finite.
    Returns:
        float: the pseudo-loss before the step.
    """
    trajectories = _as_list(trajectories)
    windows = np.concatenate([t.windows for t in trajectories])
    actions = np.concatenate([t.actions for t in trajectories])
    advantages = np.concatenate([t.advantages for t in trajectories])
    if discount_weighting:
        weights = np.concatenate([discount ** np.arange(len(t)) for t in trajectories])
    else:
        weights = np.ones(len(actions))
    if normalize_advantages and len(advantages) > 1:
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    net.zero_grad()
    probs, _ = net.forward(windows)
    rows = np.arange(len(actions))
    log_pi = log_softmax(net.logits)[rows, actions]
    coef = weights * advantages / len(trajectories)
    loss = -float(np.sum(coef * log_pi))
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"Actor pseudo-loss is {loss}")
    one_hot = np.zeros_like(probs)
    one_hot[rows, actions] = 1.0
    grads = net.backward(dlogits=-coef[:, None] * (one_hot - probs))
    if not grads.is_finite():
        raise TrainingDivergedError("Actor gradient is not finite")
    optimizer.step(grads)
    return loss


def epsilon_greedy(q_values, epsilon, rng):
    if rng.random() < epsilon:
        return int(rng.integers(len(q_values)))
    return int(np.argmax(q_values))


def td_targets(rewards, next_q, dones, discount):
    """r + lambda * max_a Q_target(H', a), with the bootstrap term dropped on terminal transitions."""
    return np.asarray(rewards, dtype=float) + discount * np.max(next_q, axis=1) * (1.0 - np.asarray(dones, dtype=float))


def _slice_summary(metrics, scenario):
    """Mean PDR and delay per slice over the epochs that carried packets."""
    row = {}
    for spec in scenario.slices:
        pdrs = [m.avg_pdr[spec.id] for m in metrics if m.packets[spec.id] > 0]
        delays = [m.avg_delay[spec.id] for m in metrics if m.packets[spec.id] > 0]
        row[f"pdr_{spec.name}"] = float(np.mean(pdrs)) if pdrs else 0.0
        row[f"delay_{spec.name}"] = float(np.mean(delays)) if delays else 0.0
    return row


def _checkpoint(net, checkpoint_dir, name, checkpoints):
    if checkpoint_dir is None:
        return
    checkpoints.append(save_checkpoint(net, Path(checkpoint_dir) / f"{name}.npz"))


def _diverged(net, checkpoint_dir, prefix, checkpoints, message):
    logger.error(f"{prefix} training diverged: {message}")
    _checkpoint(net, checkpoint_dir, f"{prefix}_diverged", checkpoints)
    raise TrainingDivergedError(message)


def train_a2c(make_env, params, seed, checkpoint_dir=None, log_every=10):
    """
    Advantage actor-critic training loop.
    Args:
        make_env (callable): returns a fresh SlicingEnv.
        params (A2CParams): hyper-parameters.
        seed (int): master seed; initialisation, sampling and episode seeds derive from it.
        checkpoint_dir (Path): where checkpoints go, None to keep none.
    Raises:
        TrainingDivergedError: After dumping the parameters, if training diverges.
    Returns:
        TrainingResult: the trained network, one curve row per iteration and the checkpoints.
    """
    env = make_env()
    rng = component_rng(seed, "a2c/policy")
    net = ActorCriticNet(input_width(env, params.previous_action), len(env.action_space),
                         params.lstm_units, params.hidden_units, params.lstm_activation,
                         seed=derive_seed(seed, "a2c/init"))
    shared = net.parameters()
    critic_opt = make_optimizer(params.optimizer, shared.subset(("lstm", "critic")), params.critic_lr)
    actor_opt = make_optimizer(params.optimizer, shared.subset(("lstm", "actor")), params.actor_lr)
    policy = ActorCriticPolicy(net)
    checkpoints = []
    _checkpoint(net, checkpoint_dir, "a2c_0000", checkpoints)

    curve = []
    for it in range(1, params.iterations + 1):
        batch = [collect_episode(env, policy, params.history_length, rng,
                                 derive_seed(seed, f"a2c/episode/{it}/{b}"), params.discount,
                                 params.previous_action)
                 for b in range(params.batch_episodes)]
        try:
            critic_loss = critic_update(batch, net, critic_opt)
            if abs(critic_loss) > params.divergence_bound:
                raise TrainingDivergedError(
                    f"Critic loss {critic_loss:.3e} above bound {params.divergence_bound:.3e}")
            actor_loss = actor_update(batch, net, actor_opt, params.discount,
                                      params.discount_weighting, params.normalize_advantages)
            if not net.parameters().is_finite():
                raise TrainingDivergedError(f"Parameters not finite after iteration {it}")
        except TrainingDivergedError as e:
            _diverged(net, checkpoint_dir, "a2c", checkpoints, str(e))

        row = {"iteration": it, "critic_loss": critic_loss, "actor_loss": actor_loss,
               "mean_reward": float(np.mean([t.rewards.mean() for t in batch]))}
        row.update(_slice_summary([m for t in batch for m in t.metrics], env.scenario))
        curve.append(row)
        if it % log_every == 0 or it == params.iterations:
            logger.info(f"A2C iteration {it}/{params.iterations}: L(w)={critic_loss:.4e} "
                        f"L(theta)={actor_loss:.4e} mean reward={row['mean_reward']:.3f}")
        if params.checkpoint_every and it % params.checkpoint_every == 0:
            _checkpoint(net, checkpoint_dir, f"a2c_{it:04d}", checkpoints)

    if params.iterations > 0 and not (params.checkpoint_every and params.iterations % params.checkpoint_every == 0):
        _checkpoint(net, checkpoint_dir, f"a2c_{params.iterations:04d}", checkpoints)
    return TrainingResult(net, pd.DataFrame(curve), checkpoints)


def _learn_q(online, target, buffer, optimizer, params):
    windows, actions, rewards, next_windows, dones = buffer.sample(params.batch_size)
    y = td_targets(rewards, target.forward(next_windows), dones, params.discount)
    online.zero_grad()
    q = online.forward(windows)
    rows = np.arange(len(actions))
    err = q[rows, actions] - y
    loss = 0.5 * float(np.mean(err ** 2))
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"Q loss is {loss}")
    dq = np.zeros_like(q)
    dq[rows, actions] = err / len(err)
    grads = online.backward(dq)
    if not grads.is_finite():
        raise TrainingDivergedError("Q gradient is not finite")
    optimizer.step(grads)
    return loss


def train_drqn(make_env, params, seed, checkpoint_dir=None, log_every=10):
    """
    Recurrent DQN baseline: epsilon-greedy episodes, uniform replay, target network copied every
    params.target_update learning steps, epsilon decayed once per episode.
    Returns:
        TrainingResult: the online network, one curve row per episode and the checkpoints.
    """
    env = make_env()
    rng = component_rng(seed, "drqn/policy")
    width = input_width(env, params.previous_action)
    online = QNet(width, len(env.action_space), params.lstm_units, params.hidden, params.lstm_activation,
                  seed=derive_seed(seed, "drqn/init"))
    target = online.copy()
    optimizer = make_optimizer("adam", online.parameters(), params.lr)
    buffer = ReplayBuffer(params.buffer_capacity, component_rng(seed, "drqn/replay"))
    epsilon = params.epsilon
    learn_steps = 0
    checkpoints = []
    _checkpoint(online, checkpoint_dir, "drqn_0000", checkpoints)

    curve = []
    for episode in range(1, params.episodes + 1):
        observation = env.reset(derive_seed(seed, f"drqn/episode/{episode}"))
        history = HistoryWindow(params.history_length, width)
        history.push(observation_input(env, observation, env.last_action, params.previous_action))
        rewards, losses, metrics = [], [], []
        done = False
        while not done:
            window = history.window()
            action = epsilon_greedy(online.forward(window), epsilon, rng)
            step = env.step(action)
            history.push(observation_input(env, step.observation, action, params.previous_action))
            buffer.add(window, action, step.reward, history.window(), step.done)
            rewards.append(step.reward)
            metrics.append(step.metrics)
            done = step.done
            if len(buffer) >= max(params.batch_size, params.learn_start):
                try:
                    loss = _learn_q(online, target, buffer, optimizer, params)
                    if abs(loss) > params.divergence_bound:
                        raise TrainingDivergedError(
                            f"Q loss {loss:.3e} above bound {params.divergence_bound:.3e}")
                except TrainingDivergedError as e:
                    _diverged(online, checkpoint_dir, "drqn", checkpoints, str(e))
                losses.append(loss)
                learn_steps += 1
                if learn_steps % params.target_update == 0:
                    target.set_parameters(online.parameters())

        row = {"episode": episode, "q_loss": float(np.mean(losses)) if losses else float("nan"),
               "mean_reward": float(np.mean(rewards)), "epsilon": epsilon, "learn_steps": learn_steps}
        row.update(_slice_summary(metrics, env.scenario))
        curve.append(row)
        epsilon = max(params.epsilon_min, epsilon * (1 - params.epsilon_decay))
        if episode % log_every == 0 or episode == params.episodes:
            logger.info(f"DRQN episode {episode}/{params.episodes}: loss={row['q_loss']:.4e} "
                        f"mean reward={row['mean_reward']:.3f} epsilon={row['epsilon']:.3f}")
        if params.checkpoint_every and episode % params.checkpoint_every == 0:
            _checkpoint(online, checkpoint_dir, f"drqn_{episode:04d}", checkpoints)

    if params.episodes > 0 and not (params.checkpoint_every and params.episodes % params.checkpoint_every == 0):
        _checkpoint(online, checkpoint_dir, f"drqn_{params.episodes:04d}", checkpoints)
    return TrainingResult(online, pd.DataFrame(curve), checkpoints)


def policy_gradient_estimate(pomdp, policy, episodes, rng, discount, baseline=None, discount_weighting=True):
    """
    Monte-Carlo score-function gradient of J on the synthetic PoMDP,
    sum_k lambda^k grad log pi(a_k|o_k) (G_k - b_k) averaged over sampled episodes.
    Args:
        pomdp (SyntheticPoMDP): the environment.
        policy (TabularSoftmaxPolicy): the policy.
        episodes (int): number of sampled episodes.
        baseline: None, a constant or one value per epoch.
    Returns:
        tuple: mean gradient and the per-episode samples, shape (episodes, *logits.shape).
    """
    b = np.zeros(pomdp.horizon) if baseline is None else np.broadcast_to(np.asarray(baseline, float), pomdp.horizon)
    samples = np.zeros((episodes, *policy.logits.shape))
    for e in range(episodes):
        observations, actions, rewards = pomdp.sample_episode(policy, rng)
        returns = discounted_return(rewards, discount)
        for k in range(pomdp.horizon):
            w = discount ** k if discount_weighting else 1.0
            samples[e] += w * policy.score(observations[k], actions[k]) * (returns[k] - b[k])
    return samples.mean(axis=0), samples


@dataclass(frozen=True)
class BaselineReport:
    """
    Attributes:
        baseline_mean (np.ndarray): sample mean of sum_k lambda^k grad log pi * b_k.
        baseline_stderr (np.ndarray): its standard error.
        baseline_within_3sigma (bool): every component within three standard errors of 0.
        advantage_variance, return_variance (float): total variance of the two estimators.
        variance_reduced (bool): advantage_variance <= return_variance.
    """
    episodes: int
    baseline_mean: np.ndarray
    baseline_stderr: np.ndarray
    baseline_within_3sigma: bool
    advantage_variance: float
    return_variance: float
    variance_reduced: bool


def baseline_unbiasedness_check(pomdp, policy, episodes, rng, discount, baseline=None):
    """
    Checks on one set of sampled episodes that subtracting a baseline leaves the gradient
    estimator's mean unchanged and lowers its variance.
    Args:
        baseline: None for the exact E[G_k] of the policy, a constant, or one value per epoch.
    Returns:
        BaselineReport: the two checks.
    """
    if baseline is None:
        baseline = pomdp.expected_returns_to_go(policy, discount)
    b = np.broadcast_to(np.asarray(baseline, dtype=float), pomdp.horizon)
    shape = (episodes, policy.logits.size)
    raw = np.zeros(shape)
    term = np.zeros(shape)
    for e in range(episodes):
        observations, actions, rewards = pomdp.sample_episode(policy, rng)
        returns = discounted_return(rewards, discount)
        for k in range(pomdp.horizon):
            score = discount ** k * policy.score(observations[k], actions[k]).ravel()
            raw[e] += score * returns[k]
            term[e] += score * b[k]
    advantage = raw - term
    mean = term.mean(axis=0)
    stderr = term.std(axis=0, ddof=1) / np.sqrt(episodes) if episodes > 1 else np.zeros_like(mean)
    adv_var = float(advantage.var(axis=0, ddof=1).sum()) if episodes > 1 else 0.0
    raw_var = float(raw.var(axis=0, ddof=1).sum()) if episodes > 1 else 0.0
    return BaselineReport(
        episodes=episodes,
        baseline_mean=mean,
        baseline_stderr=stderr,
        baseline_within_3sigma=bool(np.all(np.abs(mean) <= 3 * stderr + 1e-12)),
        advantage_variance=adv_var,
        return_variance=raw_var,
        variance_reduced=adv_var <= raw_var,
    )
