"""
Sensing-based semi-persistent scheduling (C-V2X Mode 4) for one slice.

Each VUE keeps the received power per subchannel over the last T_sense slots, ranks the
resources of its selection window by sensed power, draws one resource uniformly from the
quietest fraction and keeps it for a random number of transmissions.
"""
from fractions import Fraction
import math

import numpy as np

from .slices import Reservation


class SensingMemory:
    """
    Ring buffer of sensed power, one row per slot, one column per subchannel.
    Attributes:
        depth (int): T_sense.
        power (np.ndarray): shape (depth, num_subchannels).
        slots (np.ndarray): slot number held by each row, -1 while unfilled.
    """
    def __init__(self, depth, num_subchannels):
        if depth < 1:
            raise ValueError("Sensing window must be >= 1 slot")
        self.depth = depth
        self.num_subchannels = num_subchannels
        self.power = np.zeros((depth, num_subchannels))
        self.slots = np.full(depth, -1, dtype=np.int64)

    def filled(self):
        return self.slots >= 0

    def average(self, num_subchannels=None):
        """Window-mean power per subchannel (zeros before anything was sensed)."""
        f = self.num_subchannels if num_subchannels is None else num_subchannels
        mask = self.filled()
        if not mask.any():
            return np.zeros(f)
        return self.power[mask, :f].mean(axis=0)

    def resource_rssi(self, first_slot, window, num_subchannels, period):
        """
        Sensed power of every resource (m, t') with t' in [first_slot, first_slot + window).
        A resource is scored by the samples of its subchannel taken at slots congruent to t'
        modulo the packet period, since reserved resources repeat with that period.
        Falls back to the window mean of the subchannel when no such sample exists.
        Returns:
            np.ndarray: shape (num_subchannels, window).
        """
        mean = self.average(num_subchannels)
        rssi = np.repeat(mean[:, None], window, axis=1)
        mask = self.filled()
        if not mask.any():
            return rssi
        sensed_slots = self.slots[mask]
        sensed_power = self.power[mask, :num_subchannels]
        for j in range(window):
            same_phase = (first_slot + j - sensed_slots) % period == 0
            if same_phase.any():
                rssi[:, j] = sensed_power[same_phase].mean(axis=0)
        return rssi


def sense_update(memory, slot, power):
    """
    Records the per-subchannel aggregate power sensed at one slot, evicting the oldest slot.
    Args:
        memory (SensingMemory): the VUE's memory.
        slot (int): t.
        power (array): nonnegative power per subchannel.
    Returns:
        SensingMemory: the same memory, updated.
    """
    power = np.asarray(power, dtype=float)
    if np.any(power < 0):
        raise ValueError("Sensed power must be >= 0")
    row = slot % memory.depth
    memory.power[row] = 0.0
    memory.power[row, :len(power)] = power
    memory.slots[row] = slot
    return memory


def candidate_count(num_resources, fraction):
    """max(1, ceil(fraction * num_resources)) in exact arithmetic."""
    share = Fraction(str(fraction)) * num_resources
    return max(1, math.ceil(share))


def candidate_list(rssi, arrival_slot, fraction=0.2):
    """
    Bottom fraction of the selection-window resources by sensed power.
    Args:
        rssi (np.ndarray): shape (F_n, T_sw), column j is slot arrival_slot + 1 + j.
        arrival_slot (int): t^a.
        fraction (float): share of resources kept.
    Returns:
        list[tuple]: (subchannel, slot) pairs, quietest first, ties by (subchannel, slot).
    """
    rssi = np.asarray(rssi, dtype=float)
    num_subchannels, window = rssi.shape
    if num_subchannels < 1 or window < 1:
        raise ValueError("Selection window needs at least one subchannel and one slot")
    subs, offsets = np.meshgrid(np.arange(num_subchannels), np.arange(window), indexing="ij")
    subs, offsets, values = subs.ravel(), offsets.ravel(), rssi.ravel()
    order = np.lexsort((offsets, subs, values))
    keep = order[:candidate_count(values.size, fraction)]
    return [(int(subs[k]), int(arrival_slot + 1 + offsets[k])) for k in keep]


def select_resource(candidates, rng, counter_min, counter_max):
    """
    Uniform draw over the candidate list and a new reservation.
    Args:
        candidates (list[tuple]): (subchannel, slot) resources.
        rng (np.random.Generator): the VUE's stream.
        counter_min, counter_max (int): inclusive range of the reselection counter.
    Raises:
        ValueError: If the candidate list is empty.
    Returns:
        Reservation: subchannel, slot of the first transmission and counter.
    """
    if len(candidates) == 0:
        raise ValueError("Cannot select from an empty candidate list")
    m, slot = candidates[int(rng.integers(len(candidates)))]
    counter = int(rng.integers(counter_min, counter_max + 1))
    return Reservation(subchannel=m, next_slot=slot, counter=counter)


def maybe_reselect(reservation, rng, p_res, counter_min, counter_max):
    """
    Decision taken when the reselection counter has run out.
    With probability p_res the reservation is released (returns None), otherwise the
    counter is redrawn and the subchannel kept.
    Returns:
        Reservation | None: the kept reservation or None.
    """
    if reservation.counter > 0:
        raise ValueError("Reselection is only decided once the counter reaches 0")
    if rng.random() < p_res:
        return None
    reservation.counter = int(rng.integers(counter_min, counter_max + 1))
    return reservation


def occupancy(usage, num_subchannels):
    """
    Share of a slice's subchannels carrying at least one transmission in a slot.
    Args:
        usage (np.ndarray): s_{i,m,t} with one row per VUE, one column per subchannel.
        num_subchannels (int): F_n.
    Returns:
        float: x_{n,t} in [0, 1].
    """
    usage = np.asarray(usage).reshape(-1, num_subchannels)
    used = np.sum(usage.sum(axis=0) >= 1)
    return float(used) / num_subchannels
