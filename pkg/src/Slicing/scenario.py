from dataclasses import dataclass, field, replace
import math
import zlib

import numpy as np

from .channel import ChannelParams, dbm_to_watt
from .slices import ConfigurationError, ObservationNorm, SliceGrid, SliceSpec


def component_rng(seed, name):
    """
    Independent generator for a named component of a run.
    The stream depends only on (seed, name), so adding a component never shifts another's draws.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


def derive_seed(seed, name):
    """Integer seed for a named sub-run, derived the same way as component_rng."""
    return int(component_rng(seed, name).integers(2 ** 31 - 1))


@dataclass(frozen=True)
class SpsParams:
    sensing_window: int = 100
    p_res: float = 0.2
    counter_min: int = 5
    counter_max: int = 15
    candidate_fraction: float = 0.2

    def __post_init__(self):
        if self.sensing_window < 1:
            raise ConfigurationError("sps.sensing_window must be >= 1")
        if not 0.0 <= self.p_res <= 1.0:
            raise ConfigurationError("sps.p_res must lie in [0, 1]")
        if not 1 <= self.counter_min <= self.counter_max:
            raise ConfigurationError("sps needs 1 <= counter_min <= counter_max")
        if not 0.0 < self.candidate_fraction <= 1.0:
            raise ConfigurationError("sps.candidate_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class Scenario:
    """
    Everything needed to build the vehicular network of one run.
    Attributes:
        slices (tuple[SliceSpec]): services, one per slice.
        grids (tuple[SliceGrid]): candidate MAC parameters per slice.
        num_vues (int): average number of active VUEs.
        activity (float): stationary probability that a vehicle is an active VUE in an epoch.
        activity_persistence (float): lag-one correlation of a vehicle's activity.
    """
    slices: tuple
    grids: tuple
    total_bandwidth_hz: int = 10_000_000
    num_vues: int = 100
    activity: float = 1.0
    activity_persistence: float = 0.0
    road_length_m: float = 3400.0
    lanes_per_direction: int = 3
    lane_width_m: float = 4.0
    speed_kmh: float = 70.0
    epoch_slots: int = 400
    episode_epochs: int = 50
    slot_duration_s: float = 1e-3
    queue_limit: int = 10
    default_action: int = 0
    max_vues: int = 0
    channel: ChannelParams = field(default_factory=ChannelParams)
    sps: SpsParams = field(default_factory=SpsParams)

    def __post_init__(self):
        if len(self.slices) == 0 or len(self.slices) != len(self.grids):
            raise ConfigurationError("Need one candidate grid per slice and at least one slice")
        if self.num_vues < 0:
            raise ConfigurationError("network.num_vues must be >= 0")
        if not 0.0 < self.activity <= 1.0:
            raise ConfigurationError("network.activity must lie in (0, 1]")
        if not 0.0 <= self.activity_persistence < 1.0:
            raise ConfigurationError("network.activity_persistence must lie in [0, 1)")
        if self.epoch_slots < 1 or self.episode_epochs < 1:
            raise ConfigurationError("network.epoch_slots and network.episode_epochs must be >= 1")
        if self.queue_limit < 1:
            raise ConfigurationError("network.queue_limit must be >= 1")
        if self.road_length_m <= 0 or self.lanes_per_direction < 1:
            raise ConfigurationError("Road needs a positive length and at least one lane per direction")
        if not math.isclose(sum(s.share for s in self.slices), 1.0, abs_tol=1e-9):
            raise ConfigurationError("Slice shares must sum to 1")
        if max(max(g.selection_window) for g in self.grids) >= self.epoch_slots:
            raise ConfigurationError("Every selection window must be shorter than network.epoch_slots",
                                     key="selection_window")

    @property
    def num_slices(self):
        return len(self.slices)

    @property
    def num_vehicles(self):
        return int(round(self.num_vues / self.activity))

    @property
    def norm(self):
        return ObservationNorm(self.max_vues if self.max_vues > 0 else max(1, 2 * self.num_vehicles))

    def with_vues(self, num_vues):
        return replace(self, num_vues=int(num_vues))


REQUIRED = object()


def config_value(table, key, default, kind, where):
    """
    Reads one key of a parsed TOML table.
    Integers are accepted where floats are expected.
    Raises:
        ConfigurationError: If a required key is missing or the value has the wrong type.
    """
    if key not in table:
        if default is REQUIRED:
            raise ConfigurationError(f"Missing: {key} in [{where}]", key=key, section=where)
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and not isinstance(value, kind):
        raise ConfigurationError(f"[{where}] {key} must be {kind.__name__}, got {value!r}", key=key,
                                 section=where)
    return value


def _channel_from_table(table):
    carrier = config_value(table, "carrier_ghz", 5.9, float, "channel")
    height = config_value(table, "effective_antenna_height_m", 0.5, float, "channel")
    coefficients = table.get("pathloss", ChannelParams.winner_b1_los(carrier, height))
    return ChannelParams(
        tx_power=dbm_to_watt(config_value(table, "tx_power_dbm", 20.0, float, "channel")),
        noise_power=dbm_to_watt(config_value(table, "noise_dbm", -105.0, float, "channel")),
        reference_bandwidth_hz=config_value(table, "reference_bandwidth_hz", 1e6, float, "channel"),
        pathloss=tuple(float(c) for c in coefficients),
        rician_k=config_value(table, "rician_k", 3.0, float, "channel"),
        shadowing_sigma=config_value(table, "shadowing_sigma_db", 3.0, float, "channel"),
    )


def _slice_from_table(n, table):
    where = f"slices #{n + 1}"
    spec = SliceSpec(
        id=n,
        name=config_value(table, "name", f"slice{n}", str, where),
        packet_period=config_value(table, "packet_period", REQUIRED, int, where),
        packet_size=config_value(table, "packet_size_bits", REQUIRED, int, where),
        pdr_min=config_value(table, "pdr_min", REQUIRED, float, where),
        pdr_max=config_value(table, "pdr_max", REQUIRED, float, where),
        delay_min=config_value(table, "delay_min", REQUIRED, float, where),
        delay_max=config_value(table, "delay_max", REQUIRED, float, where),
        alpha=tuple(float(a) for a in config_value(table, "alpha", [1.0, 1.0], list, where)),
        share=config_value(table, "share", REQUIRED, float, where),
    )
    grid = SliceGrid(
        subchannels=tuple(config_value(table, "subchannels", REQUIRED, list, where)),
        subchannel_bandwidth_hz=tuple(config_value(table, "subchannel_bandwidth_hz", REQUIRED, list, where)),
        selection_window=tuple(config_value(table, "selection_window", REQUIRED, list, where)),
    )
    return spec, grid


def scenario_from_dict(config):
    """
    Builds a Scenario from the parsed TOML tables [network], [[slices]], [channel] and [sps].
    Args:
        config (dict): the parsed configuration file.
    Raises:
        ConfigurationError: If a key is missing, mistyped or out of range.
    Returns:
        Scenario: the validated scenario.
    """
    if "slices" not in config or not isinstance(config["slices"], list):
        raise ConfigurationError("Missing required section: [[slices]]")
    network = config.get("network", {})
    parsed = [_slice_from_table(n, t) for n, t in enumerate(config["slices"])]
    sps_table = config.get("sps", {})

    return Scenario(
        slices=tuple(p[0] for p in parsed),
        grids=tuple(p[1] for p in parsed),
        total_bandwidth_hz=config_value(network, "total_bandwidth_hz", 10_000_000, int, "network"),
        num_vues=config_value(network, "num_vues", 100, int, "network"),
        activity=config_value(network, "activity", 1.0, float, "network"),
        activity_persistence=config_value(network, "activity_persistence", 0.0, float, "network"),
        road_length_m=config_value(network, "road_length_m", 3400.0, float, "network"),
        lanes_per_direction=config_value(network, "lanes_per_direction", 3, int, "network"),
        lane_width_m=config_value(network, "lane_width_m", 4.0, float, "network"),
        speed_kmh=config_value(network, "speed_kmh", 70.0, float, "network"),
        epoch_slots=config_value(network, "epoch_slots", 400, int, "network"),
        episode_epochs=config_value(network, "episode_epochs", 50, int, "network"),
        slot_duration_s=config_value(network, "slot_duration_s", 1e-3, float, "network"),
        queue_limit=config_value(network, "queue_limit", 10, int, "network"),
        default_action=config_value(network, "default_action", 0, int, "network"),
        max_vues=config_value(network, "max_vues", 0, int, "network"),
        channel=_channel_from_table(config.get("channel", {})),
        sps=SpsParams(
            sensing_window=config_value(sps_table, "sensing_window", 100, int, "sps"),
            p_res=config_value(sps_table, "p_res", 0.2, float, "sps"),
            counter_min=config_value(sps_table, "counter_min", 5, int, "sps"),
            counter_max=config_value(sps_table, "counter_max", 15, int, "sps"),
            candidate_fraction=config_value(sps_table, "candidate_fraction", 0.2, float, "sps"),
        ),
    )


def freeway_scenario(num_vues=100):
    """The two-slice freeway scenario at full scale."""
    slices = (
        SliceSpec(0, "safety", packet_period=50, packet_size=2400, pdr_min=0.01, pdr_max=0.10,
                  delay_min=10, delay_max=50, alpha=(1.0, 2.0), share=0.5),
        SliceSpec(1, "autonomous", packet_period=25, packet_size=1600, pdr_min=0.005, pdr_max=0.05,
                  delay_min=5, delay_max=25, alpha=(1.0, 3.0), share=0.5),
    )
    grids = (
        SliceGrid((2, 3, 4), (1_440_000, 2_160_000), (30, 50)),
        SliceGrid((2, 3, 4), (1_080_000, 1_440_000), (25, 15)),
    )
    return Scenario(slices=slices, grids=grids, num_vues=num_vues)
