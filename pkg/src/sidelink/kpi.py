"""Success criterion, AoI bookkeeping, priority queues, and energy accounting.

Receiver-side AoI lives in an N x N matrix Phi (diagonal pinned to 0) that
only changes at transmit opportunities, so per-slot averages are accumulated
lazily between change points. Queue entries are stored as birth slots; an
entry's age at slot t is t - birth, which makes per-slot aging free.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np


def success_indicator(bandwidth_hz: float, sinr: float, message_bits: float,
                      slot_s: float = 1e-3) -> int:
    """Whole messages deliverable in one slot; success means >= 1.

    floor(W * log2(1 + sinr) * slot / G). The slot factor closes the units
    (rate times time over bits).
    """
    if message_bits <= 0:
        raise ValueError("message_bits must be > 0")
    if sinr < 0:
        raise ValueError("sinr must be >= 0")
    return int(bandwidth_hz * math.log2(1.0 + sinr) * slot_s / message_bits)


def update_rx_aoi(phi: float, u: int, rri: int, head_age: float) -> float:
    """One step of the receiver AoI recursion at a transmit opportunity."""
    if u >= 1:
        return head_age + rri
    return phi + rri


def queue_age_step(ages: np.ndarray, beta: int) -> np.ndarray:
    """Advance a queue's age vector one slot; beta=1 shifts the head out.

    ages[0] is the head (oldest). With beta=1 every position inherits the
    next-younger entry's age before aging; the freed tail slot is left to the
    arrival process.
    """
    ages = np.asarray(ages, dtype=np.float64)
    if beta:
        return ages[1:] + 1.0
    return ages + 1.0


def beta_indicator(t: int, start_slot: int, m: int, rri: int, queue_len: int,
                   capacity: int) -> int:
    """1 iff t is the reservation's m-th transmit slot and the queue is nonempty.

    ceil(q/L) supplies the nonempty gate; the schedule gate is an exact
    slot match rather than the literal floor form, which is 1 for every
    later slot. Priority coupling across the four queues is applied by the
    caller (highest-priority nonempty queue is served).
    """
    if queue_len < 0 or capacity <= 0:
        raise ValueError("queue_len must be >= 0 and capacity > 0")
    on_schedule = t == start_slot + m * rri
    return int(on_schedule and math.ceil(queue_len / capacity) >= 1)


N_MESSAGE_TYPES = 4


class PriorityQueues:
    """Four FIFO queues per vehicle holding message birth slots.

    Queue index 0 is the highest priority. A full queue drops its head
    (the oldest entry) so fresh information survives.
    """

    def __init__(self, n_vehicles: int, capacity: int):
        self.capacity = capacity
        self.queues: list[list[deque]] = [
            [deque() for _ in range(N_MESSAGE_TYPES)] for _ in range(n_vehicles)
        ]

    def arrive(self, vehicle: int, msg_type: int, birth_slot: int) -> None:
        q = self.queues[vehicle][msg_type]
        if len(q) >= self.capacity:
            q.popleft()
        q.append(birth_slot)

    def pop_head_priority(self, vehicle: int, now_slot: int) -> float | None:
        """Serve the highest-priority nonempty queue; returns its head's age."""
        for q in self.queues[vehicle]:
            if q:
                return float(now_slot - q.popleft())
        return None

    def head_ages(self, vehicle: int, now_slot: int) -> list[np.ndarray]:
        return [now_slot - np.array(q, dtype=np.float64) for q in self.queues[vehicle]]


class AoiLedger:
    """Phi matrix plus lazily accumulated per-slot sums.

    `advance_to(t)` charges the current Phi values for the slots since the
    last change; callers must invoke it before mutating a row.

    Besides the full-matrix sums that feed the system average, the ledger
    carries a receiver-restricted view: each row update may supply the mask
    of vehicles currently in communication range, and the masked sums and
    receiver counts are accumulated per slot. Their ratio is the per-receiver
    mean age that a transmitter can actually influence.
    """

    def __init__(self, n_vehicles: int):
        self.n = n_vehicles
        self.phi = np.zeros((n_vehicles, n_vehicles))
        self.row_sums = np.zeros(n_vehicles)
        self.rx_sums = np.zeros(n_vehicles)       # row sums over in-range receivers
        self.rx_counts = np.zeros(n_vehicles)     # current in-range receiver counts
        self._accum_rows = np.zeros(n_vehicles)   # sum over slots of row sums
        self._accum_rx = np.zeros(n_vehicles)
        self._accum_cnt = np.zeros(n_vehicles)
        self._last_slot = 0

    def advance_to(self, t: int) -> None:
        dt = t - self._last_slot
        if dt > 0:
            self._accum_rows += self.row_sums * dt
            self._accum_rx += self.rx_sums * dt
            self._accum_cnt += self.rx_counts * dt
            self._last_slot = t

    def update_row(self, t: int, i: int, new_row: np.ndarray,
                   in_range: np.ndarray | None = None) -> None:
        """Replace row i of Phi at slot t (diagonal forced back to 0).

        `in_range` marks the receivers the row's masked accumulators follow
        until the next update; omitting it counts every other vehicle.
        """
        self.advance_to(t)
        new_row[i] = 0.0
        self.phi[i] = new_row
        self.row_sums[i] = new_row.sum()
        if in_range is None:
            self.rx_sums[i] = self.row_sums[i]
            self.rx_counts[i] = self.n - 1
        else:
            mask = np.asarray(in_range, dtype=bool).copy()
            mask[i] = False
            self.rx_sums[i] = new_row[mask].sum()
            self.rx_counts[i] = int(mask.sum())

    def accumulated_rows(self, t: int) -> np.ndarray:
        """Per-transmitter sums of Phi over slots [0, t)."""
        self.advance_to(t)
        return self._accum_rows.copy()

    def accumulated_rx(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Masked per-transmitter sums and receiver-count integrals over [0, t)."""
        self.advance_to(t)
        return self._accum_rx.copy(), self._accum_cnt.copy()


def avg_aoi(accum_rows: np.ndarray, horizon_slots: int, n_vehicles: int) -> float:
    """System average AoI in slots: (1/T)(1/N^2) sum over slots, i, j."""
    if horizon_slots <= 0:
        raise ValueError("horizon_slots must be > 0")
    return float(accum_rows.sum()) / (horizon_slots * n_vehicles * n_vehicles)


def per_vehicle_mean_aoi(accum_row_i: float, window_slots: int, n_vehicles: int) -> float:
    """Mean receiver AoI for one transmitter over a window, per Phi-bar_i."""
    if window_slots <= 0:
        raise ValueError("window_slots must be > 0")
    return accum_row_i / (window_slots * n_vehicles)


def energy_event(power_w: float, slot_s: float, rc0: int) -> float:
    """Joules charged when a reservation (or keep-renewal) is established."""
    if power_w < 0 or slot_s <= 0 or rc0 < 1:
        raise ValueError("need power_w >= 0, slot_s > 0, rc0 >= 1")
    return power_w * slot_s * rc0


@dataclass
class EnergyLedger:
    """Per-vehicle cumulative joules plus the raw reservation events."""

    n_vehicles: int
    totals: np.ndarray = field(default=None)
    events: list[tuple[int, int, float, float, int]] = field(default_factory=list)
    # events: (slot, vehicle, power_w, slot_s, rc0)

    def __post_init__(self):
        if self.totals is None:
            self.totals = np.zeros(self.n_vehicles)

    def charge(self, slot: int, vehicle: int, power_w: float, slot_s: float,
               rc0: int) -> float:
        e = energy_event(power_w, slot_s, rc0)
        self.totals[vehicle] += e
        self.events.append((slot, vehicle, power_w, slot_s, rc0))
        return e

    def total(self) -> float:
        return float(self.totals.sum())


def avg_energy(total_joules: float, horizon_slots: int, n_vehicles: int) -> float:
    """System average energy: (1/T)(1/N) sum over slots and vehicles."""
    if horizon_slots <= 0:
        raise ValueError("horizon_slots must be > 0")
    return total_joules / (horizon_slots * n_vehicles)
