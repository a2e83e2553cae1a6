"""Link gains, interference, and SINR under plain and SIC reception.

All radio quantities cross the module boundary in dB/dBm and are linear
(watts / power ratios) internally. The path-loss law is log-distance with
a free-space reference at 1 m; the tunable inputs are the shadowing
statistics (3 dB std, 25 m decorrelation) and the noise figure.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

THERMAL_NOISE_DBM_PER_HZ = -174.0
MIN_PATH_DISTANCE_M = 1.0


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts) -> float:
    return 10.0 * np.log10(watts) + 30.0


def db_to_linear(db) -> float:
    return 10.0 ** (np.asarray(db, dtype=np.float64) / 10.0)


@dataclass
class ChannelParams:
    carrier_ghz: float = 5.9
    bandwidth_hz: float = 10e6
    noise_figure_db: float = 9.0
    shadow_std_db: float = 3.0
    decorr_dist_m: float = 25.0
    pathloss_exponent: float = 2.75
    pathloss_ref_db: float | None = None   # loss at 1 m; None -> free space at carrier
    rsrp_threshold_dbm: float = -126.0
    adjacent_leak: float = 1e-3            # in-band emission collapsed to one constant

    def validate(self) -> None:
        if self.bandwidth_hz <= 0:
            raise ValueError(f"bandwidth_hz must be > 0, got {self.bandwidth_hz}")
        if self.shadow_std_db < 0:
            raise ValueError(f"shadow_std_db must be >= 0, got {self.shadow_std_db}")
        if self.decorr_dist_m <= 0:
            raise ValueError(f"decorr_dist_m must be > 0, got {self.decorr_dist_m}")
        if not (0.0 <= self.adjacent_leak <= 1.0):
            raise ValueError(f"adjacent_leak must be in [0,1], got {self.adjacent_leak}")

    def ref_loss_db(self) -> float:
        """Reference path loss at 1 m (free space unless overridden)."""
        if self.pathloss_ref_db is not None:
            return self.pathloss_ref_db
        freq_hz = self.carrier_ghz * 1e9
        return 20.0 * math.log10(4.0 * math.pi * freq_hz / 299_792_458.0)


@dataclass
class LinkSample:
    """Gains of one link at one slot, all linear."""
    small_scale_gain: float
    large_scale_gain: float
    path_loss: float


@dataclass
class RxPowerEntry:
    """One co-slot transmission as seen by a receiver."""
    tx_id: int
    rx_power: float     # watts
    subchannel: int


def noise_power(params: ChannelParams) -> float:
    """Receiver noise power in watts: thermal density + bandwidth + noise figure."""
    p_n_dbm = (THERMAL_NOISE_DBM_PER_HZ
               + 10.0 * math.log10(params.bandwidth_hz)
               + params.noise_figure_db)
    return dbm_to_watts(p_n_dbm)


def path_loss(params: ChannelParams, d_m) -> np.ndarray | float:
    """Linear attenuation ref * d^exponent; distances below 1 m are clamped."""
    d = np.asarray(d_m, dtype=np.float64)
    if np.any(d < MIN_PATH_DISTANCE_M):
        logger.warning("path_loss distance below %.0f m clamped", MIN_PATH_DISTANCE_M)
        d = np.maximum(d, MIN_PATH_DISTANCE_M)
    loss_db = params.ref_loss_db() + 10.0 * params.pathloss_exponent * np.log10(d)
    out = db_to_linear(loss_db)
    return float(out) if np.isscalar(d_m) else out


class ShadowingProcess:
    """Spatially correlated log-normal shadowing for a set of directed links.

    State is an n x n matrix of shadowing values in dB. Successive samples of
    a link decorrelate as exp(-delta_d / decorr_dist) where delta_d is the sum
    of the distances both endpoints moved since that link was last sampled
    (Gudmundson model). Updates are lazy per transmitter row, so idle links
    cost nothing.
    """

    def __init__(self, n: int, params: ChannelParams, rng: np.random.Generator):
        self.n = n
        self.std_db = params.shadow_std_db
        self.decorr = params.decorr_dist_m
        self.rng = rng
        self.values_db = rng.normal(0.0, self.std_db, size=(n, n))
        # odometer-sum (o_tx + o_rx) at which each directed link was last sampled
        self._last_odo_sum = np.zeros((n, n))

    def sample_row(self, tx: int, odometers: np.ndarray) -> np.ndarray:
        """Current shadowing (dB) on links tx -> all, advancing their state."""
        odo_sum = odometers[tx] + odometers
        delta = odo_sum - self._last_odo_sum[tx]
        rho = np.exp(-delta / self.decorr)
        row = self.values_db[tx]
        row *= rho
        row += np.sqrt(1.0 - rho * rho) * self.rng.normal(0.0, self.std_db, size=self.n)
        self._last_odo_sum[tx] = odo_sum
        return row


def shadowing_gain(process: ShadowingProcess, tx: int, odometers: np.ndarray) -> np.ndarray:
    """Linear shadowing gains on links tx -> all at the current positions."""
    return db_to_linear(process.sample_row(tx, odometers))


def rx_power(tx_power_w: float, link: LinkSample) -> float:
    """Received power C = h_s * h * p / L_d."""
    return link.small_scale_gain * link.large_scale_gain * tx_power_w / link.path_loss


def overlap_sigma(params: ChannelParams, subch_a: int, subch_b: int) -> float:
    """Overlap degree between two subchannels: 1 same, leak adjacent, else 0."""
    gap = abs(subch_a - subch_b)
    if gap == 0:
        return 1.0
    if gap == 1:
        return params.adjacent_leak
    return 0.0


def interference(params: ChannelParams, desired_subchannel: int,
                 co_slot_entries: list[RxPowerEntry]) -> float:
    """Total interference power onto the desired subchannel, sigma-weighted.

    co_slot_entries must exclude the desired transmitter.
    """
    total = 0.0
    for e in co_slot_entries:
        total += overlap_sigma(params, e.subchannel, desired_subchannel) * e.rx_power
    return total


def sinr_oma(params: ChannelParams, desired: RxPowerEntry,
             co_slot_entries: list[RxPowerEntry], p_n: float) -> float:
    """Plain-reception SINR: every co-slot transmission is interference."""
    others = [e for e in co_slot_entries if e.tx_id != desired.tx_id]
    return desired.rx_power / (interference(params, desired.subchannel, others) + p_n)


def sic_decode(params: ChannelParams, co_slot_entries: list[RxPowerEntry],
               p_n: float, decodes) -> dict[int, float]:
    """Successive interference cancellation over one receiver's co-slot set.

    Messages are taken strongest-first (ties broken by lower tx_id). For the
    message under decode, only weaker still-undecoded messages interfere,
    sigma-weighted; on a successful decode (per the caller's `decodes(sinr)`
    criterion) its power is removed before moving on. Returns the SINR each
    transmitter actually experienced.
    """
    if not co_slot_entries:
        raise ValueError("sic_decode needs at least one entry")
    order = sorted(co_slot_entries, key=lambda e: (-e.rx_power, e.tx_id))
    undecoded = list(order)
    sinrs: dict[int, float] = {}
    for entry in order:
        weaker = [e for e in undecoded
                  if e is not entry and e.rx_power < entry.rx_power]
        denom = p_n
        for e in weaker:
            denom += overlap_sigma(params, e.subchannel, entry.subchannel) * e.rx_power
        sinr = entry.rx_power / denom
        sinrs[entry.tx_id] = sinr
        if decodes(sinr):
            undecoded.remove(entry)
    return sinrs
