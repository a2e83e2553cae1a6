"""Episodic MDP wrapper around the sidelink simulator.

One environment owns a world, a resource grid, the KPI ledgers, and the
per-slot engine. Vehicles request actions only at reselection instants
(episode start, or RC expiry resolving to RESELECT); an action fixes the
RRI and transmit power for the whole reservation epoch. Rewards score each
epoch by its normalized energy and mean receiver AoI.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import channel, kpi, scenario, sps
from .events import NULL_LOG, EventLog


class AccessMode(enum.Enum):
    OMA = "OMA"
    NOMA = "NOMA"


@dataclass
class ObjectiveWeights:
    energy: float = 0.6
    aoi: float = 0.4

    def normalized(self) -> tuple[float, float]:
        if self.energy < 0 or self.aoi < 0:
            raise ValueError("objective weights must be nonnegative")
        total = self.energy + self.aoi
        if total == 0:
            raise ValueError("objective weights cannot both be zero")
        return self.energy / total, self.aoi / total


@dataclass
class EnvParams:
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    access: AccessMode = AccessMode.NOMA
    n_subchannels: int = 5
    message_size_bits: float = 2400.0   # 300-byte CAM
    arrival_period_slots: int = 100     # one message per type per period
    queue_capacity: int = 10
    succ_window_slots: int = 500
    p_max_dbm: float = 23.0

    @property
    def p_max_w(self) -> float:
        return channel.dbm_to_watts(self.p_max_dbm)


class RunningMinMax:
    """Tracks the min/max seen so far; maps new values into [0, 1].

    The sample updates the bounds before being scaled, so the first value
    (degenerate range) maps to 0.
    """

    def __init__(self):
        self.lo = math.inf
        self.hi = -math.inf

    def normalize(self, x: float) -> float:
        self.lo = min(self.lo, x)
        self.hi = max(self.hi, x)
        if self.hi <= self.lo:
            return 0.0
        return (x - self.lo) / (self.hi - self.lo)


@dataclass
class VehicleState:
    n_receivers: int
    mean_dist_m: float
    succ_prob: float
    rc0: int

    def as_array(self, n_vehicles: int, rx_range_m: float) -> np.ndarray:
        return np.array([self.n_receivers / n_vehicles,
                         self.mean_dist_m / rx_range_m,
                         self.succ_prob,
                         self.rc0 / 50.0])


@dataclass
class ActionTuple:
    gamma: int          # RRI in slots, one of sps.RRI_CHOICES
    power_w: float


@dataclass
class Transition:
    vehicle: int
    epoch: int
    state: np.ndarray
    action: tuple[int, float]   # (discrete index into RRI_CHOICES, executed power)
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class StepResult:
    needs_action: list[int]
    transitions: list[Transition]
    done: bool


@dataclass
class _PendingEpoch:
    epoch: int
    state: np.ndarray
    action: tuple[int, float]
    start_slot: int
    energy0: float
    aoi_accum0: float
    aoi_rx0: float
    aoi_cnt0: float


class SidelinkEnv:
    """Single-owner state machine; run many instances in parallel for sweeps."""

    def __init__(self, scenario_cfg: scenario.ScenarioConfig,
                 channel_params: channel.ChannelParams | None = None,
                 sps_params: sps.SpsParams | None = None,
                 env_params: EnvParams | None = None,
                 log: EventLog = NULL_LOG):
        scenario_cfg.validate()
        self.scenario_cfg = scenario_cfg
        self.channel_params = channel_params or channel.ChannelParams()
        self.channel_params.validate()
        self.sps_params = sps_params or sps.SpsParams()
        self.sps_params.validate()
        self.params = env_params or EnvParams()
        self.log = log
        self.n = scenario_cfg.n_vehicles
        self.slot_s = scenario_cfg.slot_ms / 1000.0
        self.p_n = channel.noise_power(self.channel_params)
        self.p_max_w = self.params.p_max_w
        # success threshold: u >= 1  <=>  sinr >= 2^(G / (W * slot)) - 1
        self.sinr_min = 2.0 ** (self.params.message_size_bits /
                                (self.channel_params.bandwidth_hz * self.slot_s)) - 1.0
        self._pl_ref_lin = channel.db_to_linear(self.channel_params.ref_loss_db())
        self._pl_exp = self.channel_params.pathloss_exponent
        self.w1, self.w2 = self.params.weights.normalized()
        # reward scales persist across reset() so training sees one range
        self._energy_stat = RunningMinMax()
        self._aoi_stat = RunningMinMax()
        self._episode = -1

    # -- episode lifecycle -------------------------------------------------

    def reset(self, episode: int | None = None) -> list[int]:
        """Fresh world and ledgers; every vehicle needs an initial action.

        Each episode draws from an independent stream keyed by the scenario
        seed and the episode index; by default the index advances per reset.
        """
        cfg = self.scenario_cfg
        self._episode = self._episode + 1 if episode is None else episode
        seq = np.random.SeedSequence((cfg.seed, self._episode))
        world_seed, ch_seed, sps_seed, arr_seed, keep_seed = seq.spawn(5)
        self.world = scenario.init_world(cfg, np.random.default_rng(world_seed))
        self.rng_channel = np.random.default_rng(ch_seed)
        self.rng_sps = np.random.default_rng(sps_seed)
        self.rng_keep = np.random.default_rng(keep_seed)
        rng_arr = np.random.default_rng(arr_seed)

        self.shadowing = channel.ShadowingProcess(self.n, self.channel_params,
                                                  self.rng_channel)
        self.grid = sps.ResourceGrid(self.params.n_subchannels, self.n,
                                     self.sps_params.sense_window())
        self.queues = kpi.PriorityQueues(self.n, self.params.queue_capacity)
        self.aoi = kpi.AoiLedger(self.n)
        for i in range(self.n):
            self.aoi.update_row(0, i, np.zeros(self.n), self._range_mask(i))
        self.energy = kpi.EnergyLedger(self.n)
        self.arrival_phase = rng_arr.integers(
            0, self.params.arrival_period_slots, size=(self.n, kpi.N_MESSAGE_TYPES))

        self.reservations: list[sps.Reservation | None] = [None] * self.n
        self.next_tx = np.full(self.n, np.iinfo(np.int64).max, dtype=np.int64)
        self.pending: list[_PendingEpoch | None] = [None] * self.n
        self.epoch_count = np.zeros(self.n, dtype=np.int64)
        self.succ_events: list[list[tuple[int, int, int]]] = [[] for _ in range(self.n)]
        self.reeval_at: dict[int, list[int]] = {}
        self.episode_rewards: list[float] = []
        self.now = 0
        self._needs: set[int] = set(range(self.n))
        self._done = False
        return sorted(self._needs)

    # -- observation -------------------------------------------------------

    def observe(self, i: int) -> VehicleState:
        receivers, mean_d = scenario.receivers_of(self.world, i)
        succ, att = self._succ_window_counts(i)
        prob = succ / att if att else 1.0
        res = self.reservations[i]
        return VehicleState(n_receivers=int(receivers.size), mean_dist_m=mean_d,
                            succ_prob=prob, rc0=res.rc0 if res else 0)

    def observe_array(self, i: int) -> np.ndarray:
        return self.observe(i).as_array(self.n, self.scenario_cfg.rx_range_m)

    def _succ_window_counts(self, i: int) -> tuple[int, int]:
        horizon = self.now - self.params.succ_window_slots
        events = self.succ_events[i]
        kept = [e for e in events if e[0] >= horizon]
        if len(kept) != len(events):
            self.succ_events[i] = kept
        return sum(e[1] for e in kept), sum(e[2] for e in kept)

    def _range_mask(self, i: int) -> np.ndarray:
        """Vehicles within communication range of i (self included; the
        ledger drops the diagonal)."""
        d = scenario.ring_distances(self.world, i)
        return d <= self.scenario_cfg.rx_range_m

    # -- action application --------------------------------------------------

    def apply_action(self, i: int, gamma: int, power_w: float) -> ActionTuple:
        """Select a resource for vehicle i at a reselection instant."""
        if i not in self._needs:
            raise RuntimeError(f"vehicle {i} is not at a reselection instant")
        if gamma not in sps.RRI_CHOICES:
            raise ValueError(f"gamma must be one of {sps.RRI_CHOICES}, got {gamma}")
        clamped = min(max(power_w, 0.0), self.p_max_w)
        if clamped != power_w:
            self.log.emit("action_clamped", vehicle=i, requested=power_w,
                          executed=clamped)
        state = self.observe_array(i)
        self.grid.prune(self.now)
        select = (sps.lte_mode4_select if self.sps_params.mode is sps.Mode.LTE_MODE4
                  else sps.select_resource)
        reservation = select(self.grid, i, gamma, self.now, self.sps_params,
                             self.channel_params.rsrp_threshold_dbm, clamped,
                             self.rng_sps, self.log)
        rx0, cnt0 = self.aoi.accumulated_rx(self.now)
        self.pending[i] = _PendingEpoch(
            epoch=int(self.epoch_count[i]), state=state,
            action=(sps.RRI_CHOICES.index(gamma), clamped),
            start_slot=self.now, energy0=float(self.energy.totals[i]),
            aoi_accum0=float(self.aoi.accumulated_rows(self.now)[i]),
            aoi_rx0=float(rx0[i]), aoi_cnt0=float(cnt0[i]))
        self.epoch_count[i] += 1
        self.energy.charge(self.now, i, clamped, self.slot_s, reservation.rc0)
        self.reservations[i] = reservation
        self.next_tx[i] = reservation.next_tx_slot
        if self.sps_params.mode is sps.Mode.NR_MODE2:
            z_g = reservation.start_slot - self.sps_params.reeval_lead_slots
            if z_g > self.now:
                self.reeval_at.setdefault(z_g, []).append(i)
        self._needs.discard(i)
        return ActionTuple(gamma=gamma, power_w=clamped)

    # -- per-slot engine -----------------------------------------------------

    def step(self) -> StepResult:
        """Simulate one slot; returns vehicles now needing actions."""
        if self._done:
            raise RuntimeError("episode finished; call reset()")
        t = self.now
        self._arrivals(t)
        expired = self._transmissions(t)
        self._reevaluations(t)
        self.now = t + 1
        scenario.step_mobility(self.world)
        self._done = self.now >= self.scenario_cfg.horizon_slots

        transitions: list[Transition] = []
        for i in expired:
            outcome = sps.reselect_or_keep(self.reservations[i],
                                           self.sps_params.p_rk, self.rng_keep)
            if outcome is sps.KeepOutcome.KEEP:
                res = self.reservations[i]
                self.energy.charge(self.now, i, res.tx_power_w, self.slot_s, res.rc0)
                self.next_tx[i] = res.next_tx_slot
                self.grid.reserve_cells(res)
            else:
                transitions.append(self._close_epoch(i, done=self._done))
                self.reservations[i] = None
                self.next_tx[i] = np.iinfo(np.int64).max
                self._needs.add(i)
        if self._done:
            for i in range(self.n):
                if self.pending[i] is not None:
                    transitions.append(self._close_epoch(i, done=True))
            self._needs.clear()
        self.episode_rewards.extend(tr.reward for tr in transitions)
        return StepResult(needs_action=sorted(self._needs),
                          transitions=transitions, done=self._done)

    def _arrivals(self, t: int) -> None:
        due = (t - self.arrival_phase) % self.params.arrival_period_slots == 0
        for i, n_type in zip(*np.nonzero(due)):
            self.queues.arrive(int(i), int(n_type), t)

    def _transmissions(self, t: int) -> list[int]:
        """Process every reserved opportunity at slot t; returns expired owners."""
        scheduled = np.nonzero(self.next_tx == t)[0]
        if scheduled.size == 0:
            return []
        scheduled = [int(k) for k in scheduled]
        head_ages = {k: self.queues.pop_head_priority(k, t) for k in scheduled}
        active = [k for k in scheduled if head_ages[k] is not None]
        if active:
            self._propagate(t, active, head_ages)
        for k in scheduled:
            if head_ages[k] is None:
                res = self.reservations[k]
                self.aoi.update_row(t, k, self.aoi.phi[k] + res.rri_slots,
                                    self._range_mask(k))
        expired = []
        for k in scheduled:
            res = self.reservations[k]
            outcome = sps.on_transmit_opportunity(res, t)
            if outcome is sps.TxOutcome.COUNTER_EXPIRED:
                expired.append(k)
            else:
                self.next_tx[k] = res.next_tx_slot
        return expired

    def _propagate(self, t: int, active: list[int], head_ages: dict) -> None:
        """Compute received powers, decode, and apply AoI/sensing effects."""
        noma = self.params.access is AccessMode.NOMA
        odo = self.world.odometers()
        rx_range = self.scenario_cfg.rx_range_m
        active_mask = np.zeros(self.n, dtype=bool)
        active_mask[active] = True

        c_rows: dict[int, np.ndarray] = {}
        dist_rows: dict[int, np.ndarray] = {}
        for k in active:
            d = scenario.ring_distances(self.world, k)
            loss = self._pl_ref_lin * np.maximum(d, channel.MIN_PATH_DISTANCE_M) ** self._pl_exp
            shadow_lin = channel.db_to_linear(self.shadowing.sample_row(k, odo))
            h_s = self.rng_channel.exponential(1.0, size=self.n)
            c = h_s * shadow_lin * self.reservations[k].tx_power_w / loss
            c[k] = 0.0
            c_rows[k] = c
            dist_rows[k] = d

        sinr_rows = self._decode(active, c_rows, active_mask) if noma \
            else self._decode_oma(active, c_rows, active_mask)

        for k in active:
            res = self.reservations[k]
            d = dist_rows[k]
            in_range = (d <= rx_range) & ~active_mask
            in_range[k] = False
            success = in_range & (sinr_rows[k] >= self.sinr_min)
            new_row = np.where(success, head_ages[k] + res.rri_slots,
                               self.aoi.phi[k] + res.rri_slots)
            self.aoi.update_row(t, k, new_row, d <= rx_range)
            attempts = int(np.count_nonzero(d <= rx_range)) - 1  # excludes self
            self.succ_events[k].append((t, int(np.count_nonzero(success)), attempts))
            rsrp = channel.watts_to_dbm(np.maximum(c_rows[k], 1e-300))
            rsrp[active_mask] = np.nan
            self.grid.record_transmission(sps.SensedTransmission(
                slot=t, subchannel=res.subchannel, tx_id=k,
                rri_slots=res.rri_slots, rsrp_dbm=rsrp))

    def _decode_oma(self, active, c_rows, active_mask) -> dict[int, np.ndarray]:
        """Plain reception: all co-slot transmissions interfere, sigma-weighted."""
        sinr = {}
        for k in active:
            denom = np.full(self.n, self.p_n)
            sub_k = self.reservations[k].subchannel
            for other in active:
                if other == k:
                    continue
                sig = channel.overlap_sigma(self.channel_params,
                                            self.reservations[other].subchannel, sub_k)
                if sig:
                    denom = denom + sig * c_rows[other]
            sinr[k] = c_rows[k] / denom
        return sinr

    def _decode(self, active, c_rows, active_mask) -> dict[int, np.ndarray]:
        """SIC reception per receiver; single-transmitter slots short-circuit."""
        if len(active) == 1:
            k = active[0]
            return {k: c_rows[k] / self.p_n}
        sinr = {k: np.zeros(self.n) for k in active}
        decodes = lambda s: s >= self.sinr_min
        subch = {k: self.reservations[k].subchannel for k in active}
        for j in range(self.n):
            if active_mask[j]:
                continue
            entries = [channel.RxPowerEntry(tx_id=k, rx_power=float(c_rows[k][j]),
                                            subchannel=subch[k]) for k in active]
            per_tx = channel.sic_decode(self.channel_params, entries, self.p_n, decodes)
            for k, val in per_tx.items():
                sinr[k][j] = val
        return sinr

    def _reevaluations(self, t: int) -> None:
        for i in self.reeval_at.pop(t, ()):
            res = self.reservations[i]
            if res is None or res.next_tx_slot <= t or res.rc_remaining != res.rc0:
                continue
            self.grid.prune(t)
            outcome, updated = sps.reevaluate(
                self.grid, i, res, t, self.sps_params,
                self.channel_params.rsrp_threshold_dbm, self.rng_sps, self.log)
            if outcome is sps.ReevalOutcome.MOVED:
                self.reservations[i] = updated
                self.next_tx[i] = updated.next_tx_slot

    # -- rewards and metrics -------------------------------------------------

    def _close_epoch(self, i: int, done: bool) -> Transition:
        pend = self.pending[i]
        window = max(self.now - pend.start_slot, 1)
        energy_j = float(self.energy.totals[i]) - pend.energy0
        accum = float(self.aoi.accumulated_rows(self.now)[i]) - pend.aoi_accum0
        mean_aoi = kpi.per_vehicle_mean_aoi(accum, window, self.n)
        rx, cnt = self.aoi.accumulated_rx(self.now)
        rx_slots = float(cnt[i]) - pend.aoi_cnt0
        rx_aoi = (float(rx[i]) - pend.aoi_rx0) / rx_slots if rx_slots > 0 else 0.0
        reward = self._reward(energy_j, rx_aoi)
        tr = Transition(vehicle=i, epoch=pend.epoch, state=pend.state,
                        action=pend.action, reward=reward,
                        next_state=self.observe_array(i), done=done)
        self.pending[i] = None
        if self.log.enabled:
            self.log.emit("transition", vehicle=i, epoch=pend.epoch,
                          reward=reward, energy_j=energy_j, mean_aoi=mean_aoi,
                          rx_aoi=rx_aoi, done=done)
        return tr

    def _reward(self, energy_j: float, rx_aoi_slots: float) -> float:
        """Negative weighted sum of min-max normalized epoch costs.

        The AoI cost is the epoch's mean age per in-range receiver, the part
        of the age field the owner's transmissions can influence. It and the
        epoch's charged joules are each normalized against the range observed
        so far on this instance, which persists across episodes, so both
        terms span [0, 1] over reachable outcomes and the reward lies in
        [-(w1+w2), 0].
        """
        e_norm = self._energy_stat.normalize(energy_j)
        aoi_norm = self._aoi_stat.normalize(rx_aoi_slots)
        return -(self.w1 * e_norm + self.w2 * aoi_norm)

    def metrics(self) -> dict[str, float]:
        """System averages over the elapsed horizon."""
        t = max(self.now, 1)
        accum = self.aoi.accumulated_rows(t)
        return {
            "avg_aoi_slots": kpi.avg_aoi(accum, t, self.n),
            "avg_energy_j": kpi.avg_energy(self.energy.total(), t, self.n),
            "mean_reward": (float(np.mean(self.episode_rewards))
                            if self.episode_rewards else 0.0),
        }


def run_episode(env: SidelinkEnv, policy, explore: bool = False,
                on_transition=None, episode: int | None = None) -> dict[str, float]:
    """Drive one full episode: observe, act, step until the horizon."""
    needs = env.reset(episode)
    while True:
        for i in needs:
            obs = env.observe_array(i)
            gamma, power = policy.action(obs, i, int(env.epoch_count[i]), explore)
            env.apply_action(i, gamma, power)
        result = env.step()
        if on_transition is not None:
            for tr in result.transitions:
                on_transition(tr)
        needs = result.needs_action
        if result.done:
            return env.metrics()
