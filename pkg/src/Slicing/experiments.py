"""
Experiment runner: training, evaluation, the density sweep, gradient validation and the
comparison of schemes. Every experiment writes CSV tables and a manifest.json holding the
resolved configuration, the derived seeds and the written files.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass, replace
import json
import logging
import math
from pathlib import Path
import zlib

import numpy as np
import pandas as pd
from scipy import stats

from .drl import (A2CParams, ActorCriticPolicy, DrqnParams, GreedyPolicy, RandomPolicy, baseline_unbiasedness_check,
                  collect_episode, policy_gradient_estimate, train_a2c, train_drqn)
from .environment import SlicingEnv
from .nn import ActorCriticNet, QNet, gradient_check, load_checkpoint
from .scenario import Scenario, SpsParams, component_rng, config_value, derive_seed, scenario_from_dict
from .Simulator import Simulator
from .slices import ConfigurationError, SliceGrid, SliceSpec, build_action_space
from .synthetic import SyntheticPoMDP, TabularSoftmaxPolicy

logger = logging.getLogger(__name__)

EXPERIMENTS = ("train-a2c", "train-drqn", "evaluate", "density-sweep", "validate-gradients", "compare")
SCHEMES = ("a2c", "drqn", "random")


@dataclass(frozen=True)
class EvaluateParams:
    episodes: int = 200
    scheme: str = "a2c"
    checkpoint: str = ""
    greedy: bool = False


@dataclass(frozen=True)
class SweepParams:
    num_vues: tuple = (10, 20, 40)
    seeds: int = 10
    episodes: int = 4
    schemes: tuple = ("random",)
    checkpoints: dict = field(default_factory=dict)


@dataclass(frozen=True)
class GradientParams:
    lstm_units: tuple = (4, 8, 16)
    hidden_units: tuple = (4, 8, 16)
    activations: tuple = ("tanh",)
    input_dim: int = 4
    num_actions: int = 5
    batch: int = 2
    window: int = 3
    rtol: float = 1e-4
    pg_episodes: int = 10_000
    delay_packets: int = 10_000


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Resolved contents of one configuration file.
    Attributes:
        experiment (str): one of EXPERIMENTS.
        seed (int): master seed.
        workers (int): processes for the density sweep.
        base_dir (Path): directory of the configuration file, relative paths resolve against it.
    """
    experiment: str
    seed: int
    scenario: Scenario
    agent: A2CParams = field(default_factory=A2CParams)
    drqn: DrqnParams = field(default_factory=DrqnParams)
    evaluate: EvaluateParams = field(default_factory=EvaluateParams)
    sweep: SweepParams = field(default_factory=SweepParams)
    gradients: GradientParams = field(default_factory=GradientParams)
    compare: dict = field(default_factory=dict)
    workers: int = 1
    log_name: str = "logfile"
    packet_trace: bool = False
    sinr_trace: bool = False
    base_dir: Path = None


def params_from_table(cls, table, where):
    """
    Builds a parameter dataclass from a TOML table; lists become tuples where the default is a tuple.
    Raises:
        ConfigurationError: On unknown keys, wrong types or rejected values.
    """
    known = {f.name: f for f in fields(cls)}
    for key in table:
        if key not in known:
            raise ConfigurationError(f"Unknown key {key} in [{where}]", key=key, section=where)
    kwargs = {}
    for name, f in known.items():
        if name not in table:
            continue
        default = f.default if f.default is not MISSING else f.default_factory()
        if isinstance(default, tuple):
            kwargs[name] = tuple(config_value(table, name, default, list, where))
        else:
            kwargs[name] = config_value(table, name, default, type(default), where)
    try:
        return cls(**kwargs)
    except ConfigurationError:
        raise
    except ValueError as e:
        raise ConfigurationError(f"[{where}] {e}") from e


def experiment_config_from_dict(config, base_dir=None):
    """
    Validates a parsed configuration file.
    Args:
        config (dict): the parsed TOML document.
        base_dir (Path): directory of the file.
    Raises:
        ConfigurationError: If anything is missing, mistyped or infeasible.
    Returns:
        ExperimentConfig: the resolved configuration.
    """
    settings = config.get("settings", {})
    experiment = config_value(settings, "experiment", "train-a2c", str, "settings")
    if experiment not in EXPERIMENTS:
        raise ConfigurationError(f"Unknown experiment '{experiment}', expected one of {', '.join(EXPERIMENTS)}",
                                 key="experiment", section="settings")
    io = config.get("IO", {})
    compare = config.get("compare", {})
    for name, path in compare.items():
        if not isinstance(path, str):
            raise ConfigurationError(f"[compare] {name} must be a path to an episodes CSV", key=name,
                                     section="compare")

    scenario = scenario_from_dict(config)
    build_action_space(scenario.grids, scenario.total_bandwidth_hz)
    evaluate = params_from_table(EvaluateParams, config.get("evaluate", {}), "evaluate")
    if evaluate.scheme not in SCHEMES:
        raise ConfigurationError(f"[evaluate] scheme must be one of {', '.join(SCHEMES)}", key="scheme",
                                 section="evaluate")
    sweep = params_from_table(SweepParams, config.get("sweep", {}), "sweep")
    for scheme in sweep.schemes:
        if scheme not in SCHEMES:
            raise ConfigurationError(f"[sweep] unknown scheme '{scheme}'", key="schemes", section="sweep")
        if scheme != "random" and scheme not in sweep.checkpoints:
            raise ConfigurationError(f"[sweep] scheme '{scheme}' needs a checkpoint in [sweep.checkpoints]",
                                     key="schemes", section="sweep")

    return ExperimentConfig(
        experiment=experiment,
        seed=config_value(settings, "seed", 0, int, "settings"),
        workers=config_value(settings, "workers", 1, int, "settings"),
        scenario=scenario,
        agent=params_from_table(A2CParams, config.get("agent", {}), "agent"),
        drqn=params_from_table(DrqnParams, config.get("drqn", {}), "drqn"),
        evaluate=evaluate,
        sweep=sweep,
        gradients=params_from_table(GradientParams, config.get("gradients", {}), "gradients"),
        compare=dict(compare),
        log_name=config_value(io, "logName", "logfile", str, "IO"),
        packet_trace=config_value(io, "packet_trace", False, bool, "IO"),
        sinr_trace=config_value(io, "sinr_trace", False, bool, "IO"),
        base_dir=Path(base_dir) if base_dir is not None else None,
    )


def _jsonable(value):
    if is_dataclass(value):
        return _jsonable(asdict(value))
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def resolved_config(config):
    """Every setting in force, defaults included, as a JSON-ready dict."""
    out = _jsonable(config)
    out.pop("base_dir", None)
    return out


def scenario_id(scenario):
    return f"{zlib.crc32(repr(scenario).encode('utf-8')):08x}"


def write_manifest(output_dir, config, seeds, files, status, error=None):
    """
    Writes manifest.json; no timestamps so reruns reproduce it byte for byte.
    Returns:
        Path: the manifest.
    """
    manifest = {
        "experiment": config.experiment,
        "status": status,
        "seed": config.seed,
        "seeds": seeds,
        "scenario_id": scenario_id(config.scenario),
        "action_space_size": len(build_action_space(config.scenario.grids, config.scenario.total_bandwidth_hz)),
        "files": sorted(str(Path(f).relative_to(output_dir)) for f in files),
        "config": resolved_config(config),
    }
    if error is not None:
        manifest["error"] = error
    path = Path(output_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _write_csv(frame, path, files):
    frame.to_csv(path, index=False)
    files.append(Path(path))
    return path


def _resolve(path, base_dir):
    path = Path(path)
    if base_dir is not None and not path.is_absolute():
        return Path(base_dir) / path
    return path


def reward_cdf(rewards):
    """Empirical CDF table (value, cumulative_fraction) of a sample of rewards."""
    values = np.sort(np.asarray(rewards, dtype=float))
    return pd.DataFrame({"value": values, "cumulative_fraction": np.arange(1, len(values) + 1) / len(values)})


def make_policy(scheme, num_actions, checkpoint=None, greedy=False):
    """
    Policy of a scheme: the fixed-random control, or a trained network loaded from its checkpoint.
    Raises:
        ValueError: If the checkpoint is missing or holds the wrong kind of network.
    """
    if scheme == "random":
        return RandomPolicy(num_actions)
    if not checkpoint:
        raise ValueError(f"Scheme '{scheme}' needs a checkpoint")
    net = load_checkpoint(checkpoint)
    if net.num_actions != num_actions:
        raise ValueError(f"Checkpoint {checkpoint} has {net.num_actions} actions, scenario has {num_actions}")
    if scheme == "a2c":
        if not isinstance(net, ActorCriticNet):
            raise ValueError(f"Checkpoint {checkpoint} is not an actor-critic network")
        return GreedyPolicy(net) if greedy else ActorCriticPolicy(net)
    if not isinstance(net, QNet):
        raise ValueError(f"Checkpoint {checkpoint} is not a Q-network")
    return GreedyPolicy(net)


def _policy_inputs(config, scheme):
    params = config.drqn if scheme == "drqn" else config.agent
    return params.history_length, params.discount, params.previous_action


def evaluate_policy(env, policy, episodes, seed, history_length, discount, previous_action=False,
                    scheme="", seed_prefix="evaluate", rng=None, on_episode=None):
    """
    Runs `episodes` episodes of a fixed policy. Episode e is seeded with derive_seed(seed,
    f"{seed_prefix}/{e}"), so every scheme meets the same networks.
    on_episode, when given, is called with the environment after every episode.
    Returns:
        tuple: one row per episode and one row per (episode, epoch, slice), as DataFrames.
    """
    rng = rng if rng is not None else component_rng(seed, f"{seed_prefix}/policy/{scheme}")
    sid = scenario_id(env.scenario)
    episode_rows, epoch_rows = [], []
    for e in range(episodes):
        episode_seed = derive_seed(seed, f"{seed_prefix}/{e}")
        traj = collect_episode(env, policy, history_length, rng, episode_seed, discount, previous_action)
        if on_episode is not None:
            on_episode(env)
        row = {"scheme": scheme, "scenario_id": sid, "episode": e, "seed": episode_seed,
               "mean_reward": float(traj.rewards.mean()), "return": float(traj.returns[0])}
        for spec in env.scenario.slices:
            carried = [m for m in traj.metrics if m.packets[spec.id] > 0]
            row[f"pdr_{spec.name}"] = float(np.mean([m.avg_pdr[spec.id] for m in carried])) if carried else 0.0
            row[f"delay_{spec.name}"] = float(np.mean([m.avg_delay[spec.id] for m in carried])) if carried else 0.0
        episode_rows.append(row)
        for k, (m, reward, action) in enumerate(zip(traj.metrics, traj.rewards, traj.actions)):
            for spec in env.scenario.slices:
                n = spec.id
                epoch_rows.append({
                    "scheme": scheme, "episode": e, "epoch": k + 1, "action": int(action), "slice": spec.name,
                    "vue_count": m.vue_count[n], "occupancy": m.occupancy[n], "packets": m.packets[n],
                    "pdr": m.avg_pdr[n], "delay": m.avg_delay[n], "reward": float(reward)})
    return pd.DataFrame(episode_rows), pd.DataFrame(epoch_rows)


def run_evaluate(config, output_dir, files, seeds):
    ev = config.evaluate
    scheme = ev.scheme
    env = SlicingEnv(config.scenario, record_trace=config.packet_trace, record_sinr=config.sinr_trace)
    checkpoint = _resolve(ev.checkpoint, config.base_dir) if ev.checkpoint else None
    policy = make_policy(scheme, len(env.action_space), checkpoint, ev.greedy)
    history_length, discount, previous_action = _policy_inputs(config, scheme)
    seeds["evaluate"] = [derive_seed(config.seed, f"evaluate/{e}") for e in range(ev.episodes)]

    traces, sinr_rows = [], []

    def keep_traces(env):
        traces.extend((env.sim.seed, r) for r in env.sim.trace)
        sinr_rows.extend((env.sim.seed, *r) for r in env.sim.sinr_trace)

    episodes, epochs = evaluate_policy(env, policy, ev.episodes, config.seed, history_length, discount,
                                       previous_action, scheme, on_episode=keep_traces)
    _write_csv(episodes, Path(output_dir) / f"episodes_{scheme}.csv", files)
    _write_csv(epochs, Path(output_dir) / f"epochs_{scheme}.csv", files)
    per_epoch_reward = epochs.drop_duplicates(["episode", "epoch"])["reward"]
    _write_csv(reward_cdf(per_epoch_reward), Path(output_dir) / f"reward_cdf_{scheme}.csv", files)

    if config.packet_trace:
        trace = pd.DataFrame([{"episode_seed": s, **asdict(r)} for s, r in traces])
        _write_csv(trace, Path(output_dir) / f"packet_trace_{scheme}.csv", files)
    if config.sinr_trace:
        sinr = pd.DataFrame(sinr_rows, columns=["episode_seed", "slot", "vue", "slice", "subchannel", "sinr", "bits"])
        _write_csv(sinr, Path(output_dir) / f"sinr_trace_{scheme}.csv", files)
    logger.info(f"Evaluated {scheme} over {ev.episodes} episodes: mean reward "
                f"{episodes['mean_reward'].mean():.3f}")


def _sweep_cell(task):
    scenario, num_vues, seed_index, schemes, checkpoints, episodes, seed, inputs = task
    env = SlicingEnv(scenario.with_vues(num_vues))
    rows = []
    for scheme in schemes:
        policy = make_policy(scheme, len(env.action_space), checkpoints.get(scheme))
        history_length, discount, previous_action = inputs[scheme]
        # policy stream keyed by seed index only: every density meets the same configurations
        frame, _ = evaluate_policy(env, policy, episodes, seed, history_length, discount, previous_action, scheme,
                                   seed_prefix=f"sweep/{num_vues}/{seed_index}",
                                   rng=component_rng(seed, f"sweep/policy/{seed_index}/{scheme}"))
        for spec in scenario.slices:
            rows.append({"num_vues": num_vues, "scheme": scheme, "slice": spec.name, "seed": seed_index,
                         "pdr": float(frame[f"pdr_{spec.name}"].mean()),
                         "delay": float(frame[f"delay_{spec.name}"].mean()),
                         "reward": float(frame["mean_reward"].mean())})
    return rows


def density_sweep(config, workers=1):
    """
    QoS against vehicle density: every (density, seed) cell runs every scheme on the same episodes.
    Returns:
        tuple: per-seed rows, the mean per (density, scheme, slice) and the Spearman trend table.
    """
    sw = config.sweep
    checkpoints = {k: str(_resolve(v, config.base_dir)) for k, v in sw.checkpoints.items()}
    inputs = {s: _policy_inputs(config, s) for s in sw.schemes}
    tasks = [(config.scenario, int(n), s, tuple(sw.schemes), checkpoints, sw.episodes, config.seed, inputs)
             for n in sw.num_vues for s in range(sw.seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, tasks))
    else:
        results = [_sweep_cell(t) for t in tasks]
    rows = pd.DataFrame([r for cell in results for r in cell])

    summary = (rows.groupby(["num_vues", "scheme", "slice"], sort=True)[["pdr", "delay", "reward"]]
               .mean().reset_index())
    trend = []
    for (scheme, name), group in rows.groupby(["scheme", "slice"], sort=True):
        for metric in ("pdr", "delay"):
            rho, p = stats.spearmanr(group["num_vues"], group[metric])
            trend.append({"scheme": scheme, "slice": name, "metric": metric, "rho": float(rho), "p_value": float(p)})
    return rows, summary, pd.DataFrame(trend)


def delay_law_scenario(num_vues=20, packet_period=25, selection_window=20, subchannels=2):
    """One light slice whose VUEs choose uniformly among all resources of the selection window."""
    spec = SliceSpec(0, "uniform", packet_period=packet_period, packet_size=100, pdr_min=0.01, pdr_max=0.1,
                     delay_min=1, delay_max=selection_window, share=1.0)
    grid = SliceGrid((subchannels,), (1_000_000,), (selection_window,))
    sps = SpsParams(p_res=1.0, counter_min=1, counter_max=1, candidate_fraction=1.0)
    return Scenario(slices=(spec,), grids=(grid,), num_vues=num_vues, road_length_m=800.0, sps=sps)


def delay_law_check(scenario, seed, min_packets=10_000, significance=0.01):
    """
    Chi-square fit of the served-packet delays to the discrete uniform law on {1..T_sw}.
    Returns:
        dict: packet count, statistic, p-value and whether p exceeds the significance level.
    """
    sim = Simulator(scenario, seed, record_trace=True)
    sim.apply_config(build_action_space(scenario.grids, scenario.total_bandwidth_hz)[0])
    window = scenario.grids[0].selection_window[0]
    delays = []
    while len(delays) < min_packets:
        sim.run_epoch()
        delays.extend(r.delay for r in sim.trace if r.service_slot >= 0)
        sim.trace.clear()
        if sim.generated == 0:
            raise ValueError("Delay-law scenario generates no packets")
    counts = np.bincount(np.asarray(delays), minlength=window + 1)[1:window + 1]
    statistic, p_value = stats.chisquare(counts)
    return {"packets": int(len(delays)), "chi2": float(statistic), "p_value": float(p_value),
            "passed": bool(p_value > significance)}


def actor_critic_probe(net, windows, probs_weights, value_weights):
    """
    Scalar probe through both heads, sum(P * softmax(logits)) + sum(w * V), and its output gradients.
    Returns:
        tuple: loss, gradient at the logits, gradient at the values.
    """
    probs, values = net.forward(windows)
    loss = float(np.sum(probs_weights * probs) + np.sum(value_weights * values))
    inner = np.sum(probs_weights * probs, axis=1, keepdims=True)
    return loss, probs * (probs_weights - inner), value_weights


def validate_gradients(params, seed):
    """
    Finite-difference checks of every parameter of randomised networks, plus the policy-gradient
    and baseline checks on the synthetic PoMDP and, when asked, the delay-law fit.
    Returns:
        tuple: one row per (network, parameter) and the JSON report.
    """
    rng = component_rng(seed, "gradients")
    rows = []
    for units in params.lstm_units:
        for hidden in params.hidden_units:
            for activation in params.activations:
                init = int(rng.integers(2 ** 31 - 1))
                windows = rng.normal(size=(params.batch, params.window, params.input_dim))
                net = ActorCriticNet(params.input_dim, params.num_actions, units, hidden, activation, seed=init)
                p_w = rng.normal(size=(params.batch, params.num_actions))
                v_w = rng.normal(size=params.batch)
                net.zero_grad()
                _, dlogits, dvalues = actor_critic_probe(net, windows, p_w, v_w)
                analytic = net.backward(dlogits=dlogits, dvalues=dvalues).copy()
                report = gradient_check(lambda: actor_critic_probe(net, windows, p_w, v_w)[0],
                                        net.parameters(), analytic, rtol=params.rtol)
                rows.extend(_gradient_rows("ActorCriticNet", units, hidden, activation, report))

                qnet = QNet(params.input_dim, params.num_actions, units, (hidden, hidden), activation, seed=init)
                q_w = rng.normal(size=(params.batch, params.num_actions))
                qnet.zero_grad()
                qnet.forward(windows)
                analytic = qnet.backward(q_w).copy()
                report = gradient_check(lambda: float(np.sum(q_w * qnet.forward(windows))),
                                        qnet.parameters(), analytic, rtol=params.rtol)
                rows.extend(_gradient_rows("QNet", units, hidden, activation, report))
    frame = pd.DataFrame(rows)
    report = {
        "max_relative_error": float(frame["max_relative_error"].max()) if len(frame) else 0.0,
        "backprop_passed": bool(frame["passed"].all()) if len(frame) else True,
    }
    if params.pg_episodes > 0:
        report["policy_gradient"] = policy_gradient_validity(params.pg_episodes, component_rng(seed, "pg"))
        report["baseline"] = baseline_checks(params.pg_episodes, component_rng(seed, "baseline"))
    if params.delay_packets > 0:
        report["delay_law"] = delay_law_check(delay_law_scenario(), derive_seed(seed, "delay-law"),
                                              params.delay_packets)
    return frame, report


def _gradient_rows(network, units, hidden, activation, report):
    return [{"network": network, "lstm_units": units, "hidden_units": hidden, "activation": activation,
             "parameter": name, "max_relative_error": r["max_relative_error"],
             "max_absolute_error": r["max_absolute_error"], "passed": report["passed"]}
            for name, r in report["parameters"].items()]


def policy_gradient_validity(episodes, rng, discount=0.9, tolerance=0.1):
    """
    Monte-Carlo policy gradient (with the exact E[G_k] baseline) against finite differences of the
    enumerated objective. A component passes within `tolerance` relative error, or within three
    standard errors when it lies under that noise floor.
    """
    pomdp = SyntheticPoMDP()
    policy = TabularSoftmaxPolicy(pomdp.num_observations, pomdp.num_actions,
                                  rng.normal(0.0, 0.5, (pomdp.num_observations, pomdp.num_actions)))
    exact = pomdp.exact_gradient(policy, discount)
    baseline = pomdp.expected_returns_to_go(policy, discount)
    estimate, samples = policy_gradient_estimate(pomdp, policy, episodes, rng, discount, baseline)
    stderr = samples.std(axis=0, ddof=1) / np.sqrt(episodes)
    ok = np.abs(estimate - exact) <= np.maximum(tolerance * np.abs(exact), 3 * stderr)
    return {"episodes": episodes, "exact": exact.ravel().tolist(), "estimate": estimate.ravel().tolist(),
            "stderr": stderr.ravel().tolist(), "passed": bool(np.all(ok))}


def baseline_checks(episodes, rng, discount=0.9):
    """Zero-mean baseline term under a uniform policy with a constant baseline, and the variance
    reduction of the advantage estimator on rewards shifted by +100."""
    uniform = SyntheticPoMDP()
    policy = TabularSoftmaxPolicy(uniform.num_observations, uniform.num_actions)
    zero_mean = baseline_unbiasedness_check(uniform, policy, episodes, rng, discount, baseline=1.0)
    offset = SyntheticPoMDP(reward_offset=100.0)
    variance = baseline_unbiasedness_check(offset, policy, episodes, rng, discount)
    return {"baseline_mean": zero_mean.baseline_mean.tolist(),
            "baseline_stderr": zero_mean.baseline_stderr.tolist(),
            "baseline_within_3sigma": zero_mean.baseline_within_3sigma,
            "advantage_variance": variance.advantage_variance,
            "return_variance": variance.return_variance,
            "variance_reduced": variance.variance_reduced}


def compare_schemes(results):
    """
    Summary table of evaluation results of several schemes on matched scenarios and seeds.
    Args:
        results (dict[str, pd.DataFrame]): per scheme its episodes table; 'random' is required.
    Raises:
        ValueError: If the control is missing, or the scenarios or episode seeds differ.
    Returns:
        pd.DataFrame: per scheme the mean and std of the episode reward, per-slice mean PDR and
            delay, and against every other scheme the relative improvement in percent and the
            Welch t-test p-value.
    """
    if "random" not in results:
        raise ValueError("Comparison needs the random-policy control results")
    ids = {name: set(frame["scenario_id"].astype(str)) for name, frame in results.items()}
    if len(set.union(*ids.values())) != 1:
        raise ValueError(f"Refusing to compare results of different scenarios: {ids}")
    seeds = {name: sorted(frame["seed"].tolist()) for name, frame in results.items()}
    reference = next(iter(seeds.values()))
    if any(s != reference for s in seeds.values()):
        raise ValueError("Refusing to compare results with different episode seeds")

    metric_columns = [c for c in next(iter(results.values())).columns if c.startswith(("pdr_", "delay_"))]
    rows = []
    for name, frame in results.items():
        rewards = frame["mean_reward"].to_numpy(dtype=float)
        row = {"scheme": name, "episodes": len(frame), "mean_reward": float(rewards.mean()),
               "std_reward": float(rewards.std(ddof=1)) if len(rewards) > 1 else 0.0}
        for column in metric_columns:
            row[column] = float(frame[column].mean())
        for other, other_frame in results.items():
            if other == name:
                continue
            base = other_frame["mean_reward"].to_numpy(dtype=float)
            row[f"improvement_vs_{other}_pct"] = (100.0 * (rewards.mean() - base.mean()) / abs(base.mean())
                                                  if base.mean() != 0 else float("nan"))
            row[f"p_vs_{other}"] = float(stats.ttest_ind(rewards, base, equal_var=False).pvalue)
        rows.append(row)
    return pd.DataFrame(rows)


def run_experiment(config, output_dir):
    """
    Executes the configured experiment and writes its files and manifest.json into output_dir.
    On failure the manifest is written with status 'partial' and the error, then the error is re-raised.
    Returns:
        list[Path]: the written files, manifest last.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_dir = output_dir / "checkpoints"
    files, seeds = [], {"master": config.seed}
    make_env = EnvFactory(config.scenario)
    try:
        if config.experiment == "train-a2c":
            rates = config.agent.learning_rates
            runs = [(f"lr{r:g}", replace(config.agent, actor_lr=r, critic_lr=r)) for r in rates] or [("", config.agent)]
            for tag, agent in runs:
                target = checkpoint_dir / tag if tag else checkpoint_dir
                target.mkdir(parents=True, exist_ok=True)
                seeds[f"train-a2c{'/' + tag if tag else ''}"] = config.seed
                result = train_a2c(make_env, agent, config.seed, target)
                name = f"curve_a2c_{tag}.csv" if tag else "curve_a2c.csv"
                _write_csv(result.curve, output_dir / name, files)
                files.extend(result.checkpoints)
        elif config.experiment == "train-drqn":
            checkpoint_dir.mkdir(parents=True, exist_ok=True)
            result = train_drqn(make_env, config.drqn, config.seed, checkpoint_dir)
            _write_csv(result.curve, output_dir / "curve_drqn.csv", files)
            files.extend(result.checkpoints)
        elif config.experiment == "evaluate":
            run_evaluate(config, output_dir, files, seeds)
        elif config.experiment == "density-sweep":
            rows, summary, trend = density_sweep(config, config.workers)
            _write_csv(rows, output_dir / "density_rows.csv", files)
            _write_csv(summary, output_dir / "density_summary.csv", files)
            _write_csv(trend, output_dir / "density_trend.csv", files)
        elif config.experiment == "validate-gradients":
            frame, report = validate_gradients(config.gradients, config.seed)
            _write_csv(frame, output_dir / "gradients.csv", files)
            path = output_dir / "gradients_report.json"
            path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
            files.append(path)
        elif config.experiment == "compare":
            results = {name: pd.read_csv(_resolve(path, config.base_dir)) for name, path in config.compare.items()}
            _write_csv(compare_schemes(results), output_dir / "comparison.csv", files)
    except Exception as e:
        logger.error(f"Experiment {config.experiment} failed: {e}")
        write_manifest(output_dir, config, seeds, files, "partial", error=str(e))
        raise
    files.append(write_manifest(output_dir, config, seeds, files, "complete"))
    return files


class EnvFactory:
    """Picklable zero-argument factory of fresh environments."""
    def __init__(self, scenario):
        self.scenario = scenario

    def __call__(self):
        return SlicingEnv(self.scenario)
