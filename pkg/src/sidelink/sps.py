"""Sensing-based semi-persistent scheduling (NR-V2X Mode 2) and the
no-re-evaluation LTE-V2X Mode 4 comparison baseline.

A vehicle senses RSRP per (slot, subchannel) over a trailing window, builds a
candidate set over its selection window, excludes half-duplex slots and cells
projected busy by sensed reservations, raises the threshold 3 dB at a time
until enough candidates survive, and picks uniformly. The chosen cell repeats
every RRI for RC0 transmissions, after which the vehicle keeps it with
probability p_rk or reselects.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .events import NULL_LOG, EventLog

RRI_CHOICES = (20, 50, 100)
SLOTS_PER_FRAME = 10


class Mode(enum.Enum):
    NR_MODE2 = "NR"
    LTE_MODE4 = "LTE"


LTE_SENSE_SLOTS = 1000


@dataclass
class SpsParams:
    t1_slots: int = 2
    n_sense_slots: int = 100
    x_percent: int = 20
    p_rk: float = 0.4
    rsrp_step_db: float = 3.0
    mode: Mode = Mode.NR_MODE2
    reeval_lead_slots: int = 3   # re-evaluation check runs this many slots before first use

    def validate(self) -> None:
        if not (0 <= self.p_rk < 1):
            raise ValueError(f"p_rk must be in [0, 1), got {self.p_rk}")
        if self.x_percent not in (20, 35, 50):
            raise ValueError(f"x_percent must be one of 20/35/50, got {self.x_percent}")
        if self.t1_slots < 1:
            raise ValueError(f"t1_slots must be >= 1, got {self.t1_slots}")

    def sense_window(self) -> int:
        """LTE Mode 4 runs on a longer fixed sensing window."""
        return LTE_SENSE_SLOTS if self.mode is Mode.LTE_MODE4 else self.n_sense_slots


def rc0_of(rri_slots: int) -> int:
    """Initial reselection counter: 1000/max(20, RRI) for 20..100, else 50."""
    if not (1 <= rri_slots <= 100):
        raise ValueError(f"rri must be in [1, 100], got {rri_slots}")
    if rri_slots >= 20:
        return round(1000 / max(20, rri_slots))
    return 50


@dataclass
class Reservation:
    owner: int
    start_slot: int
    subchannel: int
    rri_slots: int
    rc0: int
    rc_remaining: int
    tx_power_w: float
    selected_at_slot: int

    @property
    def next_tx_slot(self) -> int:
        return self.start_slot + (self.rc0 - self.rc_remaining) * self.rri_slots

    @property
    def last_tx_slot(self) -> int:
        return self.start_slot + (self.rc0 - 1) * self.rri_slots


class TxOutcome(enum.Enum):
    TRANSMIT = "transmit"
    COUNTER_EXPIRED = "counter_expired"


class KeepOutcome(enum.Enum):
    KEEP = "keep"
    RESELECT = "reselect"


class ReevalOutcome(enum.Enum):
    CONFIRM = "confirm"
    MOVED = "moved"


@dataclass
class SensedTransmission:
    """One broadcast as logged by every vehicle's sensing chain.

    rsrp_dbm[v] is what vehicle v measured; NaN where v was itself
    transmitting that slot (half-duplex blind spot).
    """
    slot: int
    subchannel: int
    tx_id: int
    rri_slots: int
    rsrp_dbm: np.ndarray


class ResourceGrid:
    """Time x subchannel lattice: sensing history plus reservation bookkeeping."""

    def __init__(self, n_subchannels: int, n_vehicles: int, sense_window: int):
        self.n_subchannels = n_subchannels
        self.n_vehicles = n_vehicles
        self.sense_window = sense_window
        self.slots_per_frame = SLOTS_PER_FRAME
        self.sensing_log: deque[SensedTransmission] = deque()
        self.own_tx: list[deque[int]] = [deque() for _ in range(n_vehicles)]
        self.reservation_map: dict[tuple[int, int], set[int]] = {}

    def record_transmission(self, event: SensedTransmission) -> None:
        self.sensing_log.append(event)
        self.own_tx[event.tx_id].append(event.slot)

    def prune(self, now_slot: int) -> None:
        horizon = now_slot - self.sense_window
        while self.sensing_log and self.sensing_log[0].slot < horizon:
            self.sensing_log.popleft()
        for own in self.own_tx:
            while own and own[0] < horizon:
                own.popleft()
        if self.reservation_map and len(self.reservation_map) > 4 * self.n_vehicles * 60:
            self.reservation_map = {k: v for k, v in self.reservation_map.items()
                                    if k[0] >= now_slot}

    def reserve_cells(self, reservation: Reservation) -> None:
        for m in range(reservation.rc_remaining):
            key = (reservation.next_tx_slot + m * reservation.rri_slots,
                   reservation.subchannel)
            self.reservation_map.setdefault(key, set()).add(reservation.owner)


def build_candidate_set(grid: ResourceGrid, rri_slots: int, now_slot: int,
                        t1_slots: int) -> set[tuple[int, int]]:
    """All (slot, subchannel) cells with slot in [now+T1, now+RRI]."""
    if t1_slots >= rri_slots:
        raise ValueError(f"t1_slots ({t1_slots}) must be < rri ({rri_slots})")
    return {(slot, j)
            for slot in range(now_slot + t1_slots, now_slot + rri_slots + 1)
            for j in range(grid.n_subchannels)}


def _half_duplex_exclusions(grid: ResourceGrid, vehicle: int,
                            candidates: set[tuple[int, int]]) -> set[tuple[int, int]]:
    """Candidate slots blinded by the vehicle's own transmissions.

    Sensing slot s maps onto candidate slot s + window; every subchannel of
    a blinded slot goes.
    """
    blocked_slots = {s + grid.sense_window for s in grid.own_tx[vehicle]}
    return {c for c in candidates if c[0] in blocked_slots}


def _rsrp_exclusions(grid: ResourceGrid, vehicle: int,
                     candidates: set[tuple[int, int]],
                     rsrp_th_dbm: float) -> set[tuple[int, int]]:
    """Cells hit by any forward projection of a strong sensed reservation.

    A transmission sensed at slot s with advertised RRI P occupies s + m*P;
    every candidate on that lattice (same subchannel) is excluded when the
    measured RSRP clears the threshold.
    """
    if not candidates:
        return set()
    lo = min(c[0] for c in candidates)
    hi = max(c[0] for c in candidates)
    out: set[tuple[int, int]] = set()
    for ev in grid.sensing_log:
        level = ev.rsrp_dbm[vehicle]
        if not np.isfinite(level) or level < rsrp_th_dbm:
            continue
        period = ev.rri_slots
        first = ev.slot + period * max(1, math.ceil((lo - ev.slot) / period))
        for slot in range(first, hi + 1, period):
            cell = (slot, ev.subchannel)
            if cell in candidates:
                out.add(cell)
    return out


def exclude_candidates(grid: ResourceGrid, vehicle: int,
                       candidates: set[tuple[int, int]],
                       rsrp_th_dbm: float) -> set[tuple[int, int]]:
    """Candidates surviving half-duplex and RSRP-projection exclusion."""
    remaining = candidates - _half_duplex_exclusions(grid, vehicle, candidates)
    return remaining - _rsrp_exclusions(grid, vehicle, remaining, rsrp_th_dbm)


def _filter_with_threshold_loop(grid: ResourceGrid, vehicle: int,
                                candidates: set[tuple[int, int]],
                                params: SpsParams, rsrp_th_dbm: float,
                                log: EventLog) -> tuple[set[tuple[int, int]], int]:
    """Raise the RSRP threshold 3 dB at a time until X% of candidates survive.

    Terminates because sensed RSRP values are finite: once the threshold
    clears the strongest measurement only half-duplex exclusions remain. If
    those alone violate the X% floor, selection proceeds over whatever is
    left (saturation), or over the raw set as a last resort.
    """
    need = math.ceil(params.x_percent / 100.0 * len(candidates))
    half_duplex_free = candidates - _half_duplex_exclusions(grid, vehicle, candidates)
    threshold = rsrp_th_dbm
    raises = 0
    while True:
        remaining = half_duplex_free - _rsrp_exclusions(
            grid, vehicle, half_duplex_free, threshold)
        if len(remaining) >= need:
            return remaining, raises
        peak = max((ev.rsrp_dbm[vehicle] for ev in grid.sensing_log
                    if np.isfinite(ev.rsrp_dbm[vehicle])), default=-math.inf)
        if threshold > peak:
            break
        threshold += params.rsrp_step_db
        raises += 1
    log.emit("sps_saturation", vehicle=vehicle, need=need,
             half_duplex_free=len(half_duplex_free))
    return (half_duplex_free if half_duplex_free else candidates), raises


def candidate_set_after_exclusion(grid: ResourceGrid, vehicle: int,
                                  rri_slots: int, now_slot: int,
                                  params: SpsParams, rsrp_th_dbm: float,
                                  log: EventLog = NULL_LOG
                                  ) -> tuple[set[tuple[int, int]], int]:
    """Selection-window cells surviving exclusion, plus threshold raise count."""
    candidates = build_candidate_set(grid, rri_slots, now_slot, params.t1_slots)
    return _filter_with_threshold_loop(grid, vehicle, candidates, params,
                                       rsrp_th_dbm, log)


def _pick_uniform(cells: set[tuple[int, int]], rng: np.random.Generator) -> tuple[int, int]:
    ordered = sorted(cells)
    return ordered[int(rng.integers(len(ordered)))]


def select_resource(grid: ResourceGrid, vehicle: int, rri_slots: int,
                    now_slot: int, params: SpsParams, rsrp_th_dbm: float,
                    tx_power_w: float, rng: np.random.Generator,
                    log: EventLog = NULL_LOG) -> Reservation:
    """Full Mode 2 selection: candidates, exclusion, X% loop, uniform pick."""
    if rri_slots not in RRI_CHOICES:
        raise ValueError(f"rri must be one of {RRI_CHOICES}, got {rri_slots}")
    remaining, raises = candidate_set_after_exclusion(
        grid, vehicle, rri_slots, now_slot, params, rsrp_th_dbm, log)
    slot, subchannel = _pick_uniform(remaining, rng)
    rc0 = rc0_of(rri_slots)
    reservation = Reservation(owner=vehicle, start_slot=slot, subchannel=subchannel,
                              rri_slots=rri_slots, rc0=rc0, rc_remaining=rc0,
                              tx_power_w=tx_power_w, selected_at_slot=now_slot)
    grid.reserve_cells(reservation)
    n_window = (rri_slots - params.t1_slots + 1) * grid.n_subchannels
    log.emit("sps_select", vehicle=vehicle, slot=slot, subchannel=subchannel,
             rri=rri_slots, threshold_raises=raises,
             excluded=n_window - len(remaining))
    return reservation


def lte_mode4_select(grid: ResourceGrid, vehicle: int, rri_slots: int,
                     now_slot: int, params: SpsParams, rsrp_th_dbm: float,
                     tx_power_w: float, rng: np.random.Generator,
                     log: EventLog = NULL_LOG) -> Reservation:
    """LTE Mode 4 baseline: same pipeline, 1000-slot window, no re-evaluation."""
    if params.mode is not Mode.LTE_MODE4:
        raise ValueError("lte_mode4_select requires mode=LTE_MODE4")
    return select_resource(grid, vehicle, rri_slots, now_slot, params,
                           rsrp_th_dbm, tx_power_w, rng, log)


def on_transmit_opportunity(reservation: Reservation, now_slot: int) -> TxOutcome:
    """Consume one scheduled transmission; reports expiry when RC hits zero."""
    if now_slot != reservation.next_tx_slot:
        raise RuntimeError(
            f"off-schedule transmit: slot {now_slot}, expected {reservation.next_tx_slot}")
    reservation.rc_remaining -= 1
    if reservation.rc_remaining == 0:
        return TxOutcome.COUNTER_EXPIRED
    return TxOutcome.TRANSMIT


def reselect_or_keep(reservation: Reservation, p_rk: float,
                     rng: np.random.Generator) -> KeepOutcome:
    """At RC expiry: keep the same cell with probability p_rk, else reselect.

    On KEEP the counter resets and the schedule continues at the same RRI
    spacing from the last transmission.
    """
    if reservation.rc_remaining != 0:
        raise RuntimeError("reselect_or_keep called before the counter expired")
    if rng.random() < p_rk:
        reservation.start_slot = reservation.last_tx_slot + reservation.rri_slots
        reservation.rc_remaining = reservation.rc0
        return KeepOutcome.KEEP
    return KeepOutcome.RESELECT


def reevaluate(grid: ResourceGrid, vehicle: int, reservation: Reservation,
               z_g: int, params: SpsParams, rsrp_th_dbm: float,
               rng: np.random.Generator,
               log: EventLog = NULL_LOG) -> tuple[ReevalOutcome, Reservation]:
    """Re-check a not-yet-used reservation at slot z_g and move it if conflicted.

    The re-check window runs [z_g + T1, selection_slot + RRI]. A held cell
    that now fails exclusion is replaced by a uniform pick from the surviving
    cells; if nothing survives the original is kept and the conflict logged.
    """
    if params.mode is not Mode.NR_MODE2:
        raise RuntimeError("re-evaluation is a Mode 2 mechanism")
    if z_g >= reservation.start_slot:
        raise RuntimeError("re-evaluation must run before first use")
    lo = z_g + params.t1_slots
    hi = reservation.selected_at_slot + reservation.rri_slots
    if lo > hi or not (lo <= reservation.start_slot <= hi):
        return ReevalOutcome.CONFIRM, reservation
    window = {(slot, j) for slot in range(lo, hi + 1)
              for j in range(grid.n_subchannels)}
    remaining = exclude_candidates(grid, vehicle, window, rsrp_th_dbm)
    held = (reservation.start_slot, reservation.subchannel)
    if held in remaining:
        return ReevalOutcome.CONFIRM, reservation
    if not remaining:
        log.emit("sps_reeval_conflict", vehicle=vehicle, slot=held[0],
                 subchannel=held[1])
        return ReevalOutcome.CONFIRM, reservation
    slot, subchannel = _pick_uniform(remaining, rng)
    moved = replace(reservation, start_slot=slot, subchannel=subchannel)
    grid.reserve_cells(moved)
    log.emit("sps_reeval_moved", vehicle=vehicle, old=held,
             new=(slot, subchannel))
    return ReevalOutcome.MOVED, moved
