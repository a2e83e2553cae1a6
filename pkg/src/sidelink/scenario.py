"""Road geometry, vehicle placement, and constant-speed mobility.

The road is a 1-D ring of length D: vehicles that pass either end wrap
around, so the vehicle count stays constant for a whole run. Lane indices
are bookkeeping only; path distance is longitudinal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ScenarioConfig:
    n_vehicles: int
    road_length_m: float = 500.0
    rsu_range_m: float = 250.0      # carried as metadata, not used in any formula
    rx_range_m: float = 150.0       # max distance at which a vehicle counts as receiver
    v_min_mps: float = 60.0 / 3.6
    v_max_mps: float = 80.0 / 3.6
    n_lanes_per_direction: int = 2
    slot_ms: float = 1.0
    horizon_slots: int = 5000
    seed: int = 0

    def validate(self) -> None:
        if self.n_vehicles < 2:
            raise ConfigError(f"n_vehicles must be >= 2, got {self.n_vehicles}")
        if self.road_length_m <= 0:
            raise ConfigError(f"road_length_m must be > 0, got {self.road_length_m}")
        if not (0 < self.rx_range_m <= self.road_length_m):
            raise ConfigError(
                f"rx_range_m must be in (0, road_length_m], got {self.rx_range_m}"
            )
        if self.v_min_mps > self.v_max_mps:
            raise ConfigError(
                f"v_min_mps ({self.v_min_mps}) exceeds v_max_mps ({self.v_max_mps})"
            )
        if self.slot_ms != 1.0:
            raise ConfigError("slot_ms is fixed at 1 ms (subframe granularity)")
        if self.horizon_slots <= 0:
            raise ConfigError(f"horizon_slots must be > 0, got {self.horizon_slots}")


class ConfigError(ValueError):
    """Raised when a configuration violates a documented bound."""


@dataclass
class Vehicle:
    id: int
    position_m: float
    lane: int
    direction: int      # +1 or -1
    speed_mps: float


@dataclass
class World:
    config: ScenarioConfig
    vehicles: list[Vehicle]
    clock_slots: int = 0
    # vectorized mirrors of the per-vehicle fields; these are authoritative
    positions: np.ndarray = field(default=None, repr=False)
    velocities: np.ndarray = field(default=None, repr=False)  # signed, m/s

    def sync_vehicles(self) -> None:
        """Copy the position vector back into the Vehicle records."""
        for v in self.vehicles:
            v.position_m = float(self.positions[v.id])

    def odometers(self) -> np.ndarray:
        """Cumulative distance travelled by each vehicle, in meters."""
        dt_s = self.config.slot_ms / 1000.0
        return np.abs(self.velocities) * (self.clock_slots * dt_s)


def init_world(config: ScenarioConfig,
               rng: np.random.Generator | None = None) -> World:
    """Place vehicles uniformly on the ring, assign lanes/directions evenly."""
    config.validate()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = config.n_vehicles
    positions = rng.uniform(0.0, config.road_length_m, size=n)
    speeds = rng.uniform(config.v_min_mps, config.v_max_mps, size=n)
    lanes_total = 2 * config.n_lanes_per_direction
    vehicles = []
    for i in range(n):
        lane = i % lanes_total
        direction = 1 if lane < config.n_lanes_per_direction else -1
        vehicles.append(
            Vehicle(id=i, position_m=float(positions[i]), lane=lane,
                    direction=direction, speed_mps=float(speeds[i]))
        )
    directions = np.array([v.direction for v in vehicles], dtype=np.float64)
    world = World(config=config, vehicles=vehicles, clock_slots=0,
                  positions=positions.astype(np.float64),
                  velocities=directions * speeds)
    return world


def step_mobility(world: World) -> World:
    """Advance every vehicle one slot; wrap positions modulo road length."""
    dt_s = world.config.slot_ms / 1000.0
    world.positions += world.velocities * dt_s
    np.mod(world.positions, world.config.road_length_m, out=world.positions)
    world.clock_slots += 1
    return world


def ring_distances(world: World, i: int) -> np.ndarray:
    """Wrap-aware distance from vehicle i to every vehicle (0 at i itself)."""
    d = np.abs(world.positions - world.positions[i])
    road = world.config.road_length_m
    return np.minimum(d, road - d)


def receivers_of(world: World, i: int) -> tuple[np.ndarray, float]:
    """Receiver set of vehicle i (indices within rx range) and mean distance.

    Mean distance is 0 when the set is empty.
    """
    d = ring_distances(world, i)
    mask = d <= world.config.rx_range_m
    mask[i] = False
    receivers = np.nonzero(mask)[0]
    mean_d = float(d[receivers].mean()) if receivers.size else 0.0
    return receivers, mean_d
