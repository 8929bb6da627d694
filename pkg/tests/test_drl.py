import os
import pytest
import numpy as np
from scipy import stats
from src.Slicing.drl import (A2CParams, ActorCriticPolicy, DrqnParams, GreedyPolicy, RandomPolicy, ReplayBuffer,
                             TrainingDivergedError, Trajectory, actor_update, collect_episode, critic_update,
                             epsilon_greedy, input_width, observation_input, td_targets, train_a2c, train_drqn)
from src.Slicing.environment import SlicingEnv
from src.Slicing.nn import ActorCriticNet, QNet, make_optimizer
from tests.conftest import make_scenario


def tiny_env():
    return SlicingEnv(make_scenario(epoch_slots=50, episode_epochs=2))


def tiny_a2c(**kwargs):
    options = dict(iterations=2, batch_episodes=2, history_length=2, lstm_units=4, hidden_units=4)
    options.update(kwargs)
    return A2CParams(**options)


def tiny_drqn(**kwargs):
    options = dict(episodes=2, history_length=2, lstm_units=4, hidden=(4,), batch_size=2, learn_start=2,
                   target_update=1)
    options.update(kwargs)
    return DrqnParams(**options)


def test_trajectory_returns_and_advantages():
    traj = Trajectory.from_steps(windows=np.zeros((2, 1, 1)), actions=[0, 1], log_probs=[0.0, 0.0],
                                 rewards=[1.0, 1.0], values=[0.5, 0.5], discount=0.5)
    assert len(traj) == 2
    assert np.allclose(traj.returns, [1.5, 1.0])
    assert np.allclose(traj.advantages, [1.0, 0.5])


@pytest.mark.parametrize("kwargs", [dict(batch_episodes=0), dict(history_length=0), dict(discount=1.0)])
def test_a2c_params_validation(kwargs):
    with pytest.raises(ValueError):
        A2CParams(**kwargs)


@pytest.mark.parametrize("kwargs", [dict(target_update=0), dict(epsilon=0.5, epsilon_min=0.6), dict(discount=-0.1)])
def test_drqn_params_validation(kwargs):
    with pytest.raises(ValueError):
        DrqnParams(**kwargs)


def test_replay_buffer_keeps_newest():
    buffer = ReplayBuffer(3, np.random.default_rng(0))
    for i in range(5):
        buffer.add(np.full((2, 1), i), i, float(i), np.full((2, 1), i + 1), i == 4)
    assert len(buffer) == 3
    windows, actions, rewards, next_windows, dones = buffer.sample(3)
    assert sorted(actions.tolist()) == [2, 3, 4]
    assert windows.shape == next_windows.shape == (3, 2, 1)
    assert dones.sum() == 1.0


def test_replay_buffer_errors():
    with pytest.raises(ValueError):
        ReplayBuffer(0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        ReplayBuffer(2, np.random.default_rng(0)).sample(1)


def test_epsilon_greedy():
    rng = np.random.default_rng(0)
    q = np.array([0.1, 0.9, 0.3])
    assert all(epsilon_greedy(q, 0.0, rng) == 1 for _ in range(20))
    drawn = {epsilon_greedy(q, 1.0, rng) for _ in range(200)}
    assert drawn == {0, 1, 2}


def test_full_exploration_is_uniform():
    rng = np.random.default_rng(1)
    q = np.array([0.1, 0.9, 0.3, -0.2])
    counts = np.bincount([epsilon_greedy(q, 1.0, rng) for _ in range(4000)], minlength=4)
    assert stats.chisquare(counts).pvalue > 0.01


def test_td_targets_drop_bootstrap_on_terminal():
    y = td_targets([1.0, 2.0], np.array([[0.0, 3.0], [5.0, 1.0]]), [0, 1], 0.5)
    assert np.allclose(y, [2.5, 2.0])


def synthetic_trajectory(rng, actions, returns):
    windows = rng.normal(size=(len(actions), 2, 2))
    return Trajectory.from_steps(windows, actions, np.zeros(len(actions)), returns, np.zeros(len(actions)), 0.0)


def test_critic_update_reduces_loss():
    rng = np.random.default_rng(4)
    net = ActorCriticNet(2, 3, 4, 4, seed=1)
    traj = synthetic_trajectory(rng, [0, 1, 2, 0], [1.0, -0.5, 0.3, 0.8])
    opt = make_optimizer("adam", net.parameters().subset(("lstm", "critic")), 0.01)
    first = critic_update(traj, net, opt)
    for _ in range(100):
        last = critic_update(traj, net, opt)
    assert last < first


def test_critic_update_leaves_actor_head():
    rng = np.random.default_rng(5)
    net = ActorCriticNet(2, 3, 4, 4, seed=1)
    before = net.parameters()["actor.0.W"].copy()
    critic_update(synthetic_trajectory(rng, [0, 1], [1.0, 0.0]), net,
                  make_optimizer("sgd", net.parameters().subset(("lstm", "critic")), 0.1))
    assert np.array_equal(net.parameters()["actor.0.W"], before)


def test_critic_update_needs_epochs():
    net = ActorCriticNet(2, 3, seed=1)
    with pytest.raises(ValueError):
        critic_update([], net, make_optimizer("sgd", net.parameters(), 0.1))


def test_actor_update_raises_probability_of_good_action():
    rng = np.random.default_rng(6)
    net = ActorCriticNet(2, 3, 4, 4, seed=2)
    traj = synthetic_trajectory(rng, [0, 0, 0], [1.0, 1.0, 1.0])
    before = net.forward(traj.windows)[0][:, 0]
    opt = make_optimizer("sgd", net.parameters().subset(("lstm", "actor")), 0.05)
    actor_update(traj, net, opt, discount=0.9)
    after = net.forward(traj.windows)[0][:, 0]
    assert after.mean() > before.mean()


def test_actor_update_diverges_on_nan():
    rng = np.random.default_rng(7)
    net = ActorCriticNet(2, 3, seed=2)
    traj = synthetic_trajectory(rng, [0, 1], [1.0, 1.0])
    traj.advantages[0] = np.nan
    with pytest.raises(TrainingDivergedError):
        actor_update(traj, net, make_optimizer("sgd", net.parameters(), 0.1), discount=0.9)


def test_random_policy_holds_its_action():
    policy = RandomPolicy(8)
    rng = np.random.default_rng(0)
    policy.begin_episode(rng)
    actions = {policy.act(None, rng)[0] for _ in range(10)}
    assert len(actions) == 1
    assert policy.act(None, rng)[1] == pytest.approx(-np.log(8))


def test_greedy_policy_picks_argmax():
    net = QNet(3, 4, seed=1)
    window = np.random.default_rng(0).normal(size=(2, 3))
    action, _, value = GreedyPolicy(net).act(window, np.random.default_rng(0))
    assert action == int(np.argmax(net.forward(window)))
    assert value == pytest.approx(float(np.max(net.forward(window))))


def test_observation_input_appends_previous_action():
    env = tiny_env()
    observation = env.reset(1)
    assert input_width(env, True) == env.observation_width + len(env.action_space)
    vector = observation_input(env, observation, 3, previous_action=True)
    assert vector.shape == (input_width(env, True),)
    assert vector[env.observation_width + 3] == 1.0
    assert vector[env.observation_width:].sum() == 1.0


def test_collect_episode():
    env = tiny_env()
    net = ActorCriticNet(env.observation_width, len(env.action_space), 4, 4, seed=3)
    traj = collect_episode(env, ActorCriticPolicy(net), 2, np.random.default_rng(0), seed=5)
    assert len(traj) == 2
    assert traj.windows.shape == (2, 2, env.observation_width)
    assert np.all(traj.log_probs <= 0.0)
    assert len(traj.metrics) == 2
    assert traj.seed == 5


def test_collect_episode_is_reproducible():
    env = tiny_env()
    a = collect_episode(env, RandomPolicy(len(env.action_space)), 2, np.random.default_rng(0), seed=5)
    b = collect_episode(env, RandomPolicy(len(env.action_space)), 2, np.random.default_rng(0), seed=5)
    assert np.array_equal(a.rewards, b.rewards)
    assert np.array_equal(a.windows, b.windows)


def test_train_a2c_curve_and_checkpoints(tmp_path):
    result = train_a2c(tiny_env, tiny_a2c(checkpoint_every=1), seed=3, checkpoint_dir=tmp_path)
    assert len(result.curve) == 2
    for column in ["iteration", "critic_loss", "actor_loss", "mean_reward", "pdr_safety", "delay_autonomous"]:
        assert column in result.curve.columns
    assert sorted(p.name for p in result.checkpoints) == ["a2c_0000.npz", "a2c_0001.npz", "a2c_0002.npz"]
    assert all(p.exists() for p in result.checkpoints)


def test_train_a2c_is_reproducible():
    a = train_a2c(tiny_env, tiny_a2c(), seed=4)
    b = train_a2c(tiny_env, tiny_a2c(), seed=4)
    assert a.curve.equals(b.curve)
    assert np.array_equal(a.net.parameters().flat(), b.net.parameters().flat())
    assert a.checkpoints == []


def test_train_a2c_with_previous_action():
    result = train_a2c(tiny_env, tiny_a2c(iterations=1, previous_action=True), seed=5)
    env = tiny_env()
    assert result.net.input_dim == env.observation_width + len(env.action_space)


def test_train_a2c_divergence_dumps_parameters(tmp_path):
    with pytest.raises(TrainingDivergedError):
        train_a2c(tiny_env, tiny_a2c(divergence_bound=1e-12), seed=3, checkpoint_dir=tmp_path)
    assert (tmp_path / "a2c_diverged.npz").exists()


def test_train_drqn_curve_and_checkpoints(tmp_path):
    result = train_drqn(tiny_env, tiny_drqn(), seed=3, checkpoint_dir=tmp_path)
    assert result.curve["episode"].tolist() == [1, 2]
    assert result.curve["epsilon"].tolist() == pytest.approx([1.0, 0.99])
    assert result.curve["learn_steps"].iloc[-1] > 0
    assert sorted(p.name for p in result.checkpoints) == ["drqn_0000.npz", "drqn_0002.npz"]


def test_drqn_target_equals_online_after_each_copy(monkeypatch):
    copies = []
    copy_parameters = QNet.set_parameters

    def recording_copy(self, params):
        copy_parameters(self, params)
        copies.append((np.array_equal(self.parameters().flat(), params.flat()),
                       np.shares_memory(self.parameters()["lstm.W"], params["lstm.W"])))

    monkeypatch.setattr(QNet, "set_parameters", recording_copy)
    result = train_drqn(tiny_env, tiny_drqn(episodes=3, target_update=2), seed=6)
    assert len(copies) == result.curve["learn_steps"].iloc[-1] // 2 == 2
    assert all(equal and not shared for equal, shared in copies)


def test_train_drqn_divergence(tmp_path):
    with pytest.raises(TrainingDivergedError):
        train_drqn(tiny_env, tiny_drqn(divergence_bound=1e-12), seed=3, checkpoint_dir=tmp_path)
    assert (tmp_path / "drqn_diverged.npz").exists()


@pytest.mark.skipif(not os.environ.get("SLICING_SLOW_TESTS"), reason="set SLICING_SLOW_TESTS to run")
def test_a2c_learns_on_desk_scenario():
    def make_env():
        return SlicingEnv(make_scenario(num_vues=16, epoch_slots=100, episode_epochs=5, max_vues=40))

    params = A2CParams(iterations=150, batch_episodes=8, history_length=4, actor_lr=1e-3, critic_lr=1e-3,
                       lstm_units=16, hidden_units=16)
    result = train_a2c(make_env, params, seed=11)
    first = result.curve["mean_reward"].iloc[:20].mean()
    last = result.curve["mean_reward"].iloc[-20:].mean()
    assert last > first


def test_default_networks_follow_the_full_scale_sizes():
    a2c, drqn = A2CParams(), DrqnParams()
    assert (a2c.lstm_units, a2c.hidden_units, a2c.lstm_activation) == (256, 64, "relu")
    assert (drqn.lstm_units, drqn.hidden, drqn.lstm_activation) == (256, (128, 128), "relu")
    net = ActorCriticNet(3, 4)
    assert (net.lstm_units, net.hidden_units, net.activation) == (256, 64, "relu")
    assert QNet(3, 4).hidden == (128, 128)
