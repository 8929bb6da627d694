from dataclasses import dataclass

from .slices import Packet


@dataclass(frozen=True)
class PacketRecord:
    """Score of one packet, one row of the packet trace."""
    vue: int
    slice_id: int
    seq: int
    arrival_slot: int
    service_slot: int
    delay: int
    lost: int


def arrivals(vue, slot, period, size):
    """
    Periodic arrival: packet l is created at slot l * T_n and appended to the FCFS queue.
    Args:
        vue (Vue): the VUE.
        slot (int): t >= 0.
        period (int): T_n.
        size (int): Z_n in bits.
    Returns:
        Packet | None: the new packet, if any.
    """
    if slot < 0:
        raise ValueError("Slot index must be >= 0")
    if slot % period != 0:
        return None
    packet = Packet(arrival_slot=slot, size=size, seq=slot // period)
    vue.queue.append(packet)
    return packet


def enforce_queue_limit(vue, limit):
    """Drops the oldest packets until the queue holds at most `limit`. Returns the dropped ones."""
    dropped = []
    while len(vue.queue) > limit:
        dropped.append(vue.queue.popleft())
    return dropped


def score_packet(packet, service_slot, delivered_bits, packet_size):
    """
    Delay and loss of a served packet.
    Args:
        packet (Packet): the packet.
        service_slot (int): t, the transmission slot.
        delivered_bits (float): r_{i,t}.
        packet_size (int): Z_n.
    Raises:
        ValueError: If the packet is served at or before its arrival slot.
    Returns:
        tuple: (delay in slots, lost flag 0/1).
    """
    if service_slot <= packet.arrival_slot:
        raise ValueError(
            f"Packet {packet.seq} served at slot {service_slot}, not after arrival {packet.arrival_slot}")
    delay = service_slot - packet.arrival_slot
    lost = int(delivered_bits < packet_size)
    return delay, lost


def expire_unserved(vue, slot, selection_window):
    """
    Removes queued packets whose selection window has elapsed without service.
    Expired packets count as lost with delay T_n^sw.
    Returns:
        list[Packet]: the expired packets, oldest first.
    """
    expired = []
    while vue.queue and slot > vue.queue[0].arrival_slot + selection_window:
        expired.append(vue.queue.popleft())
    return expired
