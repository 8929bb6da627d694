from collections import defaultdict
from dataclasses import dataclass, field
import logging

import numpy as np

from .channel import pathloss, rate, rician_draw, ring_distance, sinr
from .scenario import component_rng
from .slices import EpochMetrics, Vue
from .sps import SensingMemory, candidate_list, maybe_reselect, occupancy, select_resource, sense_update
from .traffic import PacketRecord, arrivals, enforce_queue_limit, expire_unserved, score_packet

logger = logging.getLogger(__name__)


@dataclass
class SimState:
    """
    Hidden network state X_k.
    Attributes:
        slot (int): next slot to simulate.
        epoch (int): current epoch, -1 before the first one starts.
        vehicles (list[Vue]): every vehicle on the road.
        config (SliceConfig): configuration in force.
        usage (list[np.ndarray]): s_{i,m,t} of the last simulated slot, one (V, F_n) array per slice.
        gains (np.ndarray): path loss times shadowing for every ordered vehicle pair this epoch.
    """
    slot: int = 0
    epoch: int = -1
    vehicles: list = field(default_factory=list)
    config: object = None
    usage: list = field(default_factory=list)
    gains: np.ndarray = None


class Simulator:
    def __init__(self, scenario, seed, record_usage=False, record_trace=False, record_sinr=False):
        """
        Slot-level simulator of the sliced Mode-4 network.
        Args:
            scenario (Scenario): network, slices and channel description.
            seed (int): master seed; every random component gets its own named stream.
            record_usage (bool): keep s_{i,m,t} and x_{n,t} of every slot in usage_log.
            record_trace (bool): keep one PacketRecord per scored packet in trace.
            record_sinr (bool): keep one row per transmission in sinr_trace.
        Attributes:
            memories (list[SensingMemory]): sensing memory per vehicle.
            generated, scored (int): packet totals.
        """
        self.scenario = scenario
        self.seed = seed
        self.record_usage = record_usage
        self.record_trace = record_trace
        self.record_sinr = record_sinr

        self._placement_rng = component_rng(seed, "placement")
        self._activity_rng = component_rng(seed, "activity")
        self._shadow_rng = component_rng(seed, "shadowing")
        self._fading_rng = component_rng(seed, "fading")

        self.state = SimState()
        self._place_vehicles()
        num_vehicles = len(self.state.vehicles)
        self._vue_rngs = [component_rng(seed, f"sps/{i}") for i in range(num_vehicles)]
        max_subchannels = max(max(g.subchannels) for g in scenario.grids)
        self.memories = [SensingMemory(scenario.sps.sensing_window, max_subchannels)
                         for _ in range(num_vehicles)]
        self._members = [[v.id for v in self.state.vehicles if v.slice_id == n]
                         for n in range(scenario.num_slices)]

        self._ledger = defaultdict(lambda: [([], []) for _ in range(scenario.num_slices)])
        self._occupancy_sum = np.zeros(scenario.num_slices)
        self._epoch_stats = {}
        self._vue_counts = (0,) * scenario.num_slices
        self.generated = 0
        self.scored = 0
        self.trace = []
        self.sinr_trace = []
        self.usage_log = []


    def _place_vehicles(self):
        """
        Drops vehicles uniformly on the ring road, assigns lanes, slices and initial activity.
        Slice sizes follow the shares by largest remainder, then vehicles are shuffled.
        """
        sc = self.scenario
        n_veh = sc.num_vehicles
        rng = self._placement_rng

        quotas = np.array([s.share for s in sc.slices]) * n_veh
        counts = np.floor(quotas).astype(int)
        remainder_order = np.argsort(-(quotas - counts), kind="stable")
        counts[remainder_order[:n_veh - counts.sum()]] += 1
        slice_ids = rng.permutation(np.repeat(np.arange(sc.num_slices), counts))

        positions = rng.uniform(0.0, sc.road_length_m, n_veh)
        lanes = rng.integers(0, 2 * sc.lanes_per_direction, n_veh)
        active = self._activity_rng.random(n_veh) < sc.activity

        self.state.vehicles = [
            Vue(id=i, slice_id=int(slice_ids[i]), position=float(positions[i]), lane=int(lanes[i]),
                direction=1 if lanes[i] < sc.lanes_per_direction else -1, active=bool(active[i]))
            for i in range(n_veh)
        ]


    def positions(self):
        vehicles = self.state.vehicles
        x = np.array([v.position for v in vehicles])
        y = np.array([v.lane * self.scenario.lane_width_m for v in vehicles])
        return x, y


    def _advance_mobility(self):
        sc = self.scenario
        shift = sc.speed_kmh / 3.6 * sc.epoch_slots * sc.slot_duration_s
        for v in self.state.vehicles:
            v.position = (v.position + v.direction * shift) % sc.road_length_m


    def _update_activity(self):
        """Two-state Markov chain per vehicle with stationary on-probability `activity`."""
        a = self.scenario.activity
        rho = self.scenario.activity_persistence
        stay_on = a + (1 - a) * rho
        turn_on = a * (1 - rho)
        draws = self._activity_rng.random(len(self.state.vehicles))
        for v, u in zip(self.state.vehicles, draws):
            v.active = bool(u < (stay_on if v.active else turn_on))


    def _pair_receivers(self):
        """
        Receiver of each vehicle: the nearest vehicle ahead in the same direction,
        or the nearest vehicle overall when it drives alone in its direction.
        """
        vehicles = self.state.vehicles
        if len(vehicles) < 2:
            for v in vehicles:
                v.receiver_id = None
            return
        length = self.scenario.road_length_m
        x, y = self.positions()
        directions = np.array([v.direction for v in vehicles])
        ids = np.arange(len(vehicles))
        for v in vehicles:
            others = ids != v.id
            ahead = ((x - v.position) * v.direction) % length
            same = others & (directions == v.direction)
            if same.any():
                candidates = ids[same]
                v.receiver_id = int(candidates[np.argmin(ahead[same])])
            else:
                d = ring_distance((v.position, y[v.id]), (x, y), length)
                d[v.id] = np.inf
                v.receiver_id = int(np.argmin(d))


    def _update_gains(self):
        """Path loss times per-epoch shadowing for every ordered pair; zero on the diagonal."""
        n_veh = len(self.state.vehicles)
        x, y = self.positions()
        length = self.scenario.road_length_m
        dx = np.abs(x[:, None] - x[None, :])
        d = np.hypot(np.minimum(dx, length - dx), y[:, None] - y[None, :])
        shadow_db = self._shadow_rng.normal(0.0, 1.0, (n_veh, n_veh))
        shadow_db = np.triu(shadow_db, 1)
        shadow_db = shadow_db + shadow_db.T
        shadow = shadowing_from_unit(shadow_db, self.scenario.channel.shadowing_sigma)
        gains = pathloss(d, self.scenario.channel) * shadow
        np.fill_diagonal(gains, 0.0)
        self.state.gains = gains


    def apply_config(self, config):
        """
        Puts a slice configuration in force.
        Reservations on a subchannel the slice no longer has, or whose offset inside the
        packet period exceeds the new selection window, are released.
        """
        released = 0
        for v in self.state.vehicles:
            r = v.reservation
            if r is None:
                continue
            setting = config[v.slice_id]
            period = self.scenario.slices[v.slice_id].packet_period
            offset = (r.next_slot - 1) % period + 1
            if r.subchannel >= setting.num_subchannels or offset > setting.selection_window:
                v.reservation = None
                released += 1
        if released:
            logger.debug(f"Released {released} reservations on reconfiguration")
        self.state.config = config


    def _begin_epoch(self):
        st = self.state
        st.epoch += 1
        if st.epoch > 0:
            self._advance_mobility()
            self._update_activity()
        self._pair_receivers()
        self._update_gains()
        self._occupancy_sum[:] = 0.0
        self._vue_counts = tuple(
            sum(1 for i in members if st.vehicles[i].active) for members in self._members)


    def _epoch_end(self):
        return (self.state.epoch + 1) * self.scenario.epoch_slots


    def run_epoch(self):
        """
        Simulates the rest of the current epoch under the configuration in force.
        Slots already run by settle() count toward the epoch.
        Returns:
            EpochMetrics: QoS of the packets that arrived in this epoch (as scored so far),
            mean occupancy and active VUE count per slice.
        """
        if self.state.config is None:
            raise RuntimeError("apply_config must be called before run_epoch")
        if self.state.slot >= self._epoch_end():
            self._begin_epoch()
        while self.state.slot < self._epoch_end():
            self.step()
        slots = self.scenario.epoch_slots
        self._epoch_stats[self.state.epoch] = (
            self._vue_counts, tuple(float(min(1.0, s / slots)) for s in self._occupancy_sum))
        return self.epoch_metrics(self.state.epoch)


    def pending(self, epoch):
        """Number of queued packets that arrived in `epoch`."""
        slots = self.scenario.epoch_slots
        return sum(1 for v in self.state.vehicles for p in v.queue if p.arrival_slot // slots == epoch)


    def settle(self):
        """
        Opens the next epoch and keeps the configuration in force until every packet of the
        finished epoch is served or dropped, so that its metrics are final.
        Selection windows shorter than an epoch bound the number of slots this takes.
        Returns:
            int: slots simulated.
        """
        epoch = self.state.epoch
        if epoch < 0 or self.state.slot < self._epoch_end() or not self.pending(epoch):
            return 0
        self._begin_epoch()
        start = self.state.slot
        while self.pending(epoch) and self.state.slot < self._epoch_end():
            self.step()
        return self.state.slot - start


    def epoch_metrics(self, epoch):
        ledger = self._ledger[epoch]
        delays, pdrs, packets = [], [], []
        for d, lost in ledger:
            packets.append(len(d))
            delays.append(float(np.mean(d)) if d else 0.0)
            pdrs.append(float(np.mean(lost)) if lost else 0.0)
        if epoch in self._epoch_stats:
            vue_count, occupancy_mean = self._epoch_stats[epoch]
        else:
            slots = self.scenario.epoch_slots
            vue_count = self._vue_counts
            occupancy_mean = tuple(float(min(1.0, s / slots)) for s in self._occupancy_sum)
        return EpochMetrics(
            vue_count=vue_count,
            avg_delay=tuple(delays),
            avg_pdr=tuple(pdrs),
            occupancy=occupancy_mean,
            packets=tuple(packets),
        )


    def _score(self, vue, packet, service_slot, delay, lost):
        epoch = packet.arrival_slot // self.scenario.epoch_slots
        d, l = self._ledger[epoch][vue.slice_id]
        d.append(delay)
        l.append(lost)
        self.scored += 1
        if self.record_trace:
            self.trace.append(PacketRecord(vue.id, vue.slice_id, packet.seq, packet.arrival_slot,
                                           service_slot, delay, lost))


    def _select(self, vue, packet, slot):
        """Runs sensing-based selection for the packet at the head of the queue."""
        spec = self.scenario.slices[vue.slice_id]
        setting = self.state.config[vue.slice_id]
        first = max(packet.arrival_slot, slot) + 1
        window = packet.arrival_slot + setting.selection_window - first + 1
        if window < 1:
            return
        rssi = self.memories[vue.id].resource_rssi(first, window, setting.num_subchannels,
                                                   spec.packet_period)
        candidates = candidate_list(rssi, first - 1, self.scenario.sps.candidate_fraction)
        sps = self.scenario.sps
        vue.reservation = select_resource(candidates, self._vue_rngs[vue.id],
                                          sps.counter_min, sps.counter_max)


    def step(self):
        """
        Simulates one slot: arrivals and selection, expiry, transmissions with SINR and
        scoring, reservation bookkeeping, then sensing.
        """
        st = self.state
        t = st.slot
        sc = self.scenario
        vehicles = st.vehicles

        for n, spec in enumerate(sc.slices):
            if t % spec.packet_period != 0:
                continue
            window = st.config[n].selection_window
            for i in self._members[n]:
                v = vehicles[i]
                if not v.active:
                    continue
                arrivals(v, t, spec.packet_period, spec.packet_size)
                self.generated += 1
                for p in enforce_queue_limit(v, sc.queue_limit):
                    self._score(v, p, -1, min(t - p.arrival_slot, window), 1)
                if v.reservation is None:
                    self._select(v, v.queue[0], t)

        st.usage = []
        x_slot = []
        for n, spec in enumerate(sc.slices):
            setting = st.config[n]
            transmitters = self._collect_transmitters(n, t)
            usage = np.zeros((len(vehicles), setting.num_subchannels), dtype=np.int8)
            used = np.zeros(setting.num_subchannels, dtype=int)
            for i in transmitters:
                m = vehicles[i].reservation.subchannel
                usage[i, m] = 1
                used[m] += 1
            x = float(np.count_nonzero(used)) / setting.num_subchannels
            self._occupancy_sum[n] += x
            x_slot.append(x)
            st.usage.append(usage)

            subchannels = [vehicles[i].reservation.subchannel for i in transmitters]
            self._transmit(n, t, transmitters)
            self._sense(n, t, transmitters, subchannels)

        if self.record_usage:
            self.usage_log.append((t, [u.copy() for u in st.usage], tuple(x_slot)))
        st.slot += 1


    def _collect_transmitters(self, n, t):
        spec = self.scenario.slices[n]
        window = self.state.config[n].selection_window
        transmitters = []
        for i in self._members[n]:
            v = self.state.vehicles[i]
            for p in expire_unserved(v, t, window):
                self._score(v, p, -1, window, 1)
            r = v.reservation
            if r is None:
                if v.queue:
                    self._select(v, v.queue[0], t)
                continue
            if r.next_slot != t:
                continue
            if not v.queue:
                r.next_slot += spec.packet_period
                if not v.active:
                    v.reservation = None
                continue
            transmitters.append(i)
        return transmitters


    def _transmit(self, n, t, transmitters):
        sc = self.scenario
        spec = sc.slices[n]
        setting = self.state.config[n]
        vehicles = self.state.vehicles
        channel = sc.channel
        noise = channel.noise(setting.subchannel_bandwidth_hz)
        by_subchannel = defaultdict(list)
        for i in transmitters:
            by_subchannel[vehicles[i].reservation.subchannel].append(i)

        for m in sorted(by_subchannel):
            group = by_subchannel[m]
            for j, i in enumerate(group):
                v = vehicles[i]
                packet = v.queue.popleft()
                if v.receiver_id is None:
                    gamma, bits = 0.0, 0.0
                else:
                    fading = rician_draw(self._fading_rng, channel.rician_k, len(group))
                    gains = self.state.gains[group, v.receiver_id] * fading
                    gamma = sinr(j, np.ones(len(group), dtype=bool), gains, channel.tx_power, noise)
                    bits = rate(gamma, setting.subchannel_bandwidth_hz, sc.slot_duration_s)
                delay, lost = score_packet(packet, t, bits, spec.packet_size)
                self._score(v, packet, t, delay, lost)
                if self.record_sinr:
                    self.sinr_trace.append((t, i, n, m, gamma, bits))
                self._advance_reservation(v, spec)


    def _advance_reservation(self, vue, spec):
        sps = self.scenario.sps
        r = vue.reservation
        r.next_slot += spec.packet_period
        r.counter -= 1
        if r.counter <= 0:
            r.counter = 0
            vue.reservation = maybe_reselect(r, self._vue_rngs[vue.id], sps.p_res,
                                             sps.counter_min, sps.counter_max)
        if not vue.active and not vue.queue:
            vue.reservation = None


    def _sense(self, n, t, transmitters, subchannels):
        """
        Every VUE of slice n records the co-slice power it receives on each subchannel.
        subchannels holds the subchannel each transmitter used, taken before reservations advanced.
        """
        members = self._members[n]
        if not members:
            return
        setting = self.state.config[n]
        channel = self.scenario.channel
        vehicles = self.state.vehicles
        power = np.zeros((len(vehicles), setting.num_subchannels))
        for i, m in zip(transmitters, subchannels):
            fading = rician_draw(self._fading_rng, channel.rician_k, len(vehicles))
            power[:, m] += channel.tx_power * self.state.gains[i] * fading
        for i in members:
            sense_update(self.memories[i], t, power[i])


    def packet_totals(self):
        pending = sum(len(v.queue) for v in self.state.vehicles)
        return {"generated": self.generated, "scored": self.scored, "pending": pending}


def shadowing_from_unit(unit_normal, sigma_db):
    """Linear shadowing from standard-normal draws scaled to sigma_db."""
    return 10 ** (unit_normal * sigma_db / 10)
