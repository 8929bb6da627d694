from dataclasses import dataclass
import math

import numpy as np

SPEED_OF_LIGHT = 3e8


def dbm_to_watt(dbm):
    return 10 ** ((dbm - 30) / 10)


@dataclass(frozen=True)
class ChannelParams:
    """
    V2V link model parameters.
    Path loss is a two-segment log-distance law in dB:
        PL(d) = A1*log10(d) + B1   for d <  d_bp
        PL(d) = A2*log10(d) + B2   for d >= d_bp
    Attributes:
        tx_power (float): P in watts.
        noise_power (float): N0 in watts over reference_bandwidth_hz; scaled linearly with B_n.
        pathloss (tuple): (A1, B1, A2, B2, d_bp).
        rician_k (float): linear K-factor, math.inf disables small-scale fading.
        shadowing_sigma (float): log-normal shadowing deviation in dB, 0 disables it.
    """
    tx_power: float = dbm_to_watt(20.0)
    noise_power: float = dbm_to_watt(-174.0 + 60.0 + 9.0)
    reference_bandwidth_hz: float = 1e6
    pathloss: tuple = (22.7, 42.44, 40.0, 20.06, 19.67)
    rician_k: float = 3.0
    shadowing_sigma: float = 3.0

    def __post_init__(self):
        if self.tx_power <= 0:
            raise ValueError("tx_power must be > 0")
        if self.noise_power <= 0 or self.reference_bandwidth_hz <= 0:
            raise ValueError("noise_power and reference_bandwidth_hz must be > 0")
        if len(self.pathloss) != 5 or self.pathloss[4] <= 0:
            raise ValueError("pathloss needs (A1, B1, A2, B2, d_bp) with d_bp > 0")
        if self.rician_k < 0:
            raise ValueError("rician_k must be >= 0")
        if self.shadowing_sigma < 0:
            raise ValueError("shadowing_sigma must be >= 0")

    @staticmethod
    def winner_b1_los(carrier_ghz=5.9, effective_antenna_height_m=0.5):
        """
        Line-of-sight coefficients of the WINNER+ B1 street model.
        Args:
            carrier_ghz (float): carrier frequency.
            effective_antenna_height_m (float): antenna height minus the 1 m environment height.
        Returns:
            tuple: (A1, B1, A2, B2, d_bp).
        """
        h = effective_antenna_height_m
        fc = carrier_ghz
        b1 = 41.0 + 20.0 * math.log10(fc / 5.0)
        b2 = 9.45 - 2 * 17.3 * math.log10(h) + 2.7 * math.log10(fc / 5.0)
        d_bp = 4 * h * h * fc * 1e9 / SPEED_OF_LIGHT
        return (22.7, b1, 40.0, b2, d_bp)

    def noise(self, bandwidth_hz):
        return self.noise_power * bandwidth_hz / self.reference_bandwidth_hz


@dataclass(frozen=True)
class LinkGain:
    value: float

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("Link gain must be >= 0")


def ring_distance(tx_pos, rx_pos, road_length):
    """
    Euclidean distance between two (x, y) points on a ring road of the given length.
    The longitudinal offset takes the shorter way around.
    """
    dx = np.abs(np.asarray(tx_pos[0], dtype=float) - np.asarray(rx_pos[0], dtype=float))
    if road_length is not None:
        dx = np.minimum(dx, road_length - dx)
    dy = np.asarray(tx_pos[1], dtype=float) - np.asarray(rx_pos[1], dtype=float)
    return np.hypot(dx, dy)


def pathloss(distance, params):
    """Linear path gain 10^(-PL/10); distances below 1 m are clamped to 1 m."""
    a1, b1, a2, b2, d_bp = params.pathloss
    d = np.maximum(np.asarray(distance, dtype=float), 1.0)
    pl_db = np.where(d < d_bp, a1 * np.log10(d) + b1, a2 * np.log10(d) + b2)
    return 10 ** (-pl_db / 10)


def shadowing(rng, sigma_db, size=None):
    """Log-normal shadowing factor(s) in linear scale."""
    if sigma_db == 0:
        return np.ones(size) if size is not None else 1.0
    return 10 ** (rng.normal(0.0, sigma_db, size) / 10)


def rician_draw(rng, k_factor, size=None):
    """
    Unit-mean power |h|^2 of Rician fading.
    h = sqrt(K/(K+1)) + sqrt(1/(K+1)) * CN(0, 1), so E|h|^2 = 1 for every K.
    """
    if math.isinf(k_factor):
        return np.ones(size) if size is not None else 1.0
    los = math.sqrt(k_factor / (k_factor + 1))
    scatter = math.sqrt(1 / (2 * (k_factor + 1)))
    real = los + scatter * rng.standard_normal(size)
    imag = scatter * rng.standard_normal(size)
    return real ** 2 + imag ** 2


def link_gain(tx_pos, rx_pos, subchannel, slot, rng, params, road_length=None, shadow=None):
    """
    |g|^2 = pathloss(d) * shadow * rician for one link on subchannel m at slot t.
    Fresh fading is drawn from rng on each call, so every (link, m, t) evaluation is an
    independent draw and the sequence is reproducible from the rng state.
    Args:
        tx_pos, rx_pos (tuple): (x, y) positions in meters.
        subchannel (int): m, only used to keep draws in (m, t) order by the caller.
        slot (int): t.
        rng (np.random.Generator): fading stream.
        params (ChannelParams): link model.
        road_length (float): ring length for wraparound, None for an open road.
        shadow (float): linear shadowing factor of the link for the current epoch; drawn from
            rng when not given.
    Returns:
        LinkGain: the linear power gain.
    """
    d = ring_distance(tx_pos, rx_pos, road_length)
    if shadow is None:
        shadow = shadowing(rng, params.shadowing_sigma)
    return LinkGain(float(pathloss(d, params) * shadow * rician_draw(rng, params.rician_k)))


def sinr(i, usage, gains, tx_power, noise_power):
    """
    SINR at the receiver of transmitter i on one subchannel and slot.
    Args:
        i (int): index of the transmitter of interest.
        usage (array[bool]): s_{i',m,t} for every co-slice transmitter i'.
        gains (array[float]): |g_{i',m,t}|^2 from each transmitter to i's receiver.
        tx_power (float): P.
        noise_power (float): N0 on this subchannel.
    Raises:
        ValueError: If transmitter i is not using the subchannel.
    Returns:
        float: gamma.
    """
    usage = np.asarray(usage, dtype=bool)
    gains = np.asarray(gains, dtype=float)
    if not usage[i]:
        raise ValueError(f"Transmitter {i} does not use this subchannel")
    others = usage.copy()
    others[i] = False
    interference = tx_power * float(np.sum(np.sort(gains[others])))
    return tx_power * float(gains[i]) / (interference + noise_power)


def rate(gamma, bandwidth_hz, slot_duration):
    """Bits delivered in one slot, B_n * delta * log2(1 + gamma)."""
    return bandwidth_hz * slot_duration * math.log2(1.0 + gamma)
