from collections import deque
from dataclasses import dataclass, field
from itertools import product
import logging

import numpy as np

logger = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    """
    Raised when a scenario or its candidate grids cannot be used.
    Attributes:
        key (str | None): the configuration key at fault, when known.
        section (str | None): the table holding it, "slices #2" for the second [[slices]] table.
    """
    def __init__(self, message, key=None, section=None):
        super().__init__(message)
        self.key = key
        self.section = section


@dataclass(frozen=True)
class SliceSpec:
    """
    Service description of one network slice.
    Attributes:
        id (int): slice index, 0-based in code.
        name (str): label used in reports.
        packet_period (int): T_n in slots.
        packet_size (int): Z_n in bits.
        pdr_min, pdr_max (float): PDR target and tolerance.
        delay_min, delay_max (float): delay target and tolerance in slots.
        alpha (tuple): reward weights (alpha_1 for PDR, alpha_2 for delay).
        share (float): fraction of the vehicle population served by this slice.
    """
    id: int
    name: str
    packet_period: int
    packet_size: int
    pdr_min: float
    pdr_max: float
    delay_min: float
    delay_max: float
    alpha: tuple = (1.0, 1.0)
    share: float = 1.0

    def __post_init__(self):
        if self.packet_period < 1:
            raise ConfigurationError(f"Slice {self.name}: packet_period must be >= 1")
        if self.packet_size <= 0:
            raise ConfigurationError(f"Slice {self.name}: packet_size must be > 0")
        if not 0.0 <= self.pdr_min < self.pdr_max <= 1.0:
            raise ConfigurationError(f"Slice {self.name}: need 0 <= pdr_min < pdr_max <= 1")
        if not self.delay_min < self.delay_max:
            raise ConfigurationError(f"Slice {self.name}: need delay_min < delay_max")
        if len(self.alpha) != 2 or min(self.alpha) < 0:
            raise ConfigurationError(f"Slice {self.name}: alpha must be two nonnegative weights")


@dataclass(frozen=True)
class SliceGrid:
    """Candidate values for one slice's MAC parameters."""
    subchannels: tuple
    subchannel_bandwidth_hz: tuple
    selection_window: tuple

    def __post_init__(self):
        for name in ("subchannels", "subchannel_bandwidth_hz", "selection_window"):
            values = getattr(self, name)
            if len(values) == 0:
                raise ConfigurationError(f"Candidate grid '{name}' is empty")
            if any(int(v) != v or v < 1 for v in values):
                raise ConfigurationError(f"Candidate grid '{name}' must hold positive integers")


@dataclass(frozen=True)
class SliceSetting:
    """MAC parameters applied to one slice for one epoch (F_n, B_n, T_n^sw)."""
    num_subchannels: int
    subchannel_bandwidth_hz: int
    selection_window: int

    @property
    def bandwidth_hz(self):
        return self.num_subchannels * self.subchannel_bandwidth_hz


@dataclass(frozen=True)
class SliceConfig:
    """One candidate slice configuration C, a setting per slice."""
    slices: tuple

    def __getitem__(self, n):
        return self.slices[n]

    def __len__(self):
        return len(self.slices)

    @property
    def bandwidth_hz(self):
        return sum(s.bandwidth_hz for s in self.slices)

    def describe(self):
        return "; ".join(
            f"F={s.num_subchannels} B={s.subchannel_bandwidth_hz / 1e6:g}MHz SW={s.selection_window}"
            for s in self.slices)


@dataclass(frozen=True)
class ActionSpace:
    configs: tuple

    def __len__(self):
        return len(self.configs)

    def __getitem__(self, index):
        if not 0 <= index < len(self.configs):
            raise ValueError(f"Action {index} outside action space of size {len(self.configs)}")
        return self.configs[index]


def _unique(values):
    return tuple(dict.fromkeys(int(v) for v in values))


def build_action_space(grids, total_bandwidth_hz):
    """
    Enumerates every admissible slice configuration.
    The Cartesian product is taken slice by slice (F, then B, then T^sw in grid order),
    and configurations whose total bandwidth exceeds the budget are filtered out.
    Bandwidths are integer Hz, so the feasibility test is exact.
    Args:
        grids (list[SliceGrid]): candidate values per slice.
        total_bandwidth_hz (int): the budget B.
    Raises:
        ConfigurationError: If no configuration fits the budget.
    Returns:
        ActionSpace: the ordered, duplicate-free list of configurations.
    """
    if len(grids) == 0:
        raise ConfigurationError("At least one slice grid is required")
    per_slice = []
    for grid in grids:
        per_slice.append([
            SliceSetting(f, b, w) for f, b, w in product(
                _unique(grid.subchannels),
                _unique(grid.subchannel_bandwidth_hz),
                _unique(grid.selection_window))
        ])

    configs = tuple(
        SliceConfig(tuple(combo)) for combo in product(*per_slice)
        if sum(s.bandwidth_hz for s in combo) <= int(total_bandwidth_hz)
    )
    if not configs:
        raise ConfigurationError(
            f"No feasible slice configuration within {int(total_bandwidth_hz)} Hz")
    return ActionSpace(configs)


@dataclass
class Packet:
    arrival_slot: int
    size: int
    seq: int


@dataclass
class Reservation:
    """A semi-persistent grant: subchannel m, next slot it is used, transmissions left."""
    subchannel: int
    next_slot: int
    counter: int


@dataclass
class Vue:
    """
    A vehicle and, when active, a transmitting VUE of its slice.
    Attributes:
        position (float): meters along the ring road.
        lane (int): lane index, lanes < lanes_per_direction drive in +x.
        receiver_id (int | None): paired receiving vehicle.
        reservation (Reservation | None): current SPS grant.
        queue (deque[Packet]): FCFS buffer.
    """
    id: int
    slice_id: int
    position: float
    lane: int
    direction: int
    active: bool = True
    receiver_id: int = None
    reservation: Reservation = None
    queue: deque = field(default_factory=deque)

    @property
    def reserved_subchannel(self):
        return None if self.reservation is None else self.reservation.subchannel

    @property
    def reselection_counter(self):
        return 0 if self.reservation is None else self.reservation.counter


@dataclass(frozen=True)
class Observation:
    """Per-slice VUE count and mean subchannel occupancy seen by the eNB."""
    vue_counts: tuple
    occupancies: tuple

    def __post_init__(self):
        if len(self.vue_counts) != len(self.occupancies):
            raise ValueError("Observation needs one count and one occupancy per slice")
        if any(not 0.0 <= x <= 1.0 for x in self.occupancies):
            raise ValueError(f"Occupancy outside [0, 1]: {self.occupancies}")

    @classmethod
    def empty(cls, num_slices):
        return cls((0,) * num_slices, (0.0,) * num_slices)


@dataclass(frozen=True)
class ObservationNorm:
    max_vues: int

    def __post_init__(self):
        if self.max_vues <= 0:
            raise ConfigurationError("max_vues must be > 0")


def observation_to_vector(obs, norm):
    """
    Flattens an observation to the 2N network input.
    Entries 2n and 2n+1 (0-based) hold slice n's normalised count and occupancy.
    Counts above norm.max_vues are clamped to 1 and a warning is logged.
    Args:
        obs (Observation): the observation.
        norm (ObservationNorm): normalisation constants.
    Returns:
        np.ndarray: vector of length 2N in [0, 1].
    """
    counts = np.asarray(obs.vue_counts, dtype=float) / norm.max_vues
    if np.any(counts > 1.0):
        logger.warning(f"VUE count {obs.vue_counts} above max_vues={norm.max_vues}, clamped")
        counts = np.minimum(counts, 1.0)
    vector = np.empty(2 * len(counts))
    vector[0::2] = counts
    vector[1::2] = obs.occupancies
    return vector


@dataclass
class EpochMetrics:
    """Per-slice QoS of one epoch; only the environment sees it."""
    vue_count: tuple
    avg_delay: tuple
    avg_pdr: tuple
    occupancy: tuple
    packets: tuple

    def observation(self):
        return Observation(tuple(self.vue_count), tuple(self.occupancy))


class HistoryWindow:
    """
    Fixed-length window of the K most recent input vectors, zero-padded at the front.
    """
    def __init__(self, length, width):
        if length < 1:
            raise ValueError("History length must be >= 1")
        self.length = length
        self.width = width
        self._items = deque([np.zeros(width) for _ in range(length)], maxlen=length)

    def push(self, vector):
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.width,):
            raise ValueError(f"Expected vector of width {self.width}, got {vector.shape}")
        self._items.append(vector.copy())

    def window(self):
        return np.stack(list(self._items))

    def __len__(self):
        return len(self._items)
