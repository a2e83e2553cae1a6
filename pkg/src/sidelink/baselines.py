"""Non-learning policies: random assignment and a genetic optimizer.

Both optimize or sample the same hybrid action space as the learned agent
(RRI choice plus transmit power) and are scored with the same weighted
energy/AoI objective, which makes them direct comparison baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import SidelinkEnv, run_episode
from .sps import RRI_CHOICES


class RandomPolicy:
    """Uniform RRI choice and uniform power on every decision epoch."""

    def __init__(self, p_max_w: float, seed: int = 0):
        self.p_max_w = p_max_w
        self.rng = np.random.default_rng(seed)

    def action(self, obs: np.ndarray, vehicle: int, epoch: int,
               explore: bool) -> tuple[int, float]:
        k = int(self.rng.integers(len(RRI_CHOICES)))
        power = float(self.rng.uniform(0.0, self.p_max_w))
        return RRI_CHOICES[k], power


@dataclass
class FixedPolicy:
    """Same (RRI, power) for every vehicle and epoch; a sanity baseline."""
    gamma: int
    power_w: float

    def action(self, obs, vehicle, epoch, explore):
        return self.gamma, self.power_w


@dataclass
class GaConfig:
    population: int = 12
    generations: int = 10
    tournament: int = 3
    crossover_p: float = 0.5
    mutation_p: float = 0.15
    mutation_sigma: float = 0.1     # in normalized power units
    elites: int = 2
    epoch_budget: int = 4           # genes per vehicle; later epochs reuse the last
    eval_episodes: int = 1          # fitness averages over this many fixed draws
    seed: int = 0

    def validate(self) -> None:
        if self.population < 2 or self.elites >= self.population:
            raise ValueError("population must exceed elite count")
        if self.tournament < 1 or self.epoch_budget < 1:
            raise ValueError("tournament and epoch_budget must be >= 1")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be >= 1")


@dataclass
class Chromosome:
    """One gene per (vehicle, epoch slot): an RRI index and normalized power."""
    ks: np.ndarray      # (n_vehicles, epoch_budget) ints in [0, len(RRI_CHOICES))
    xs: np.ndarray      # same shape, floats in [0, 1]
    fitness: float | None = None

    def copy(self) -> "Chromosome":
        return Chromosome(self.ks.copy(), self.xs.copy(), self.fitness)


class ChromosomePolicy:
    def __init__(self, chrom: Chromosome, p_max_w: float):
        self.chrom = chrom
        self.p_max_w = p_max_w

    def action(self, obs, vehicle, epoch, explore):
        g = min(epoch, self.chrom.ks.shape[1] - 1)
        k = int(self.chrom.ks[vehicle, g])
        return RRI_CHOICES[k], float(self.chrom.xs[vehicle, g]) * self.p_max_w


def weighted_objective(metrics: dict[str, float], w_energy: float,
                       w_aoi: float) -> float:
    """The minimized scalar: weighted sum of average energy and average AoI."""
    return w_energy * metrics["avg_energy_j"] + w_aoi * metrics["avg_aoi_slots"]


@dataclass
class GaReport:
    best_objective: list[float] = field(default_factory=list)
    mean_objective: list[float] = field(default_factory=list)


class GeneticOptimizer:
    """Tournament selection, uniform crossover, per-gene mutation, elitism.

    Fitness is evaluated on a fixed episode draw so that scores stay
    comparable across generations and the elite objective is monotone.
    """

    def __init__(self, env: SidelinkEnv, config: GaConfig | None = None,
                 eval_episode: int = 0):
        self.env = env
        self.config = config or GaConfig()
        self.config.validate()
        self.eval_episode = eval_episode
        self.rng = np.random.default_rng(self.config.seed)
        self.w1, self.w2 = env.params.weights.normalized()

    def _random_chromosome(self) -> Chromosome:
        shape = (self.env.n, self.config.epoch_budget)
        return Chromosome(ks=self.rng.integers(len(RRI_CHOICES), size=shape),
                          xs=self.rng.uniform(0.0, 1.0, size=shape))

    def _evaluate(self, chrom: Chromosome) -> float:
        """Deterministic fitness on a fixed episode set; cached per chromosome."""
        if chrom.fitness is None:
            policy = ChromosomePolicy(chrom, self.env.p_max_w)
            scores = []
            for j in range(self.config.eval_episodes):
                metrics = run_episode(self.env, policy,
                                      episode=self.eval_episode + j)
                scores.append(weighted_objective(metrics, self.w1, self.w2))
            chrom.fitness = float(np.mean(scores))
        return chrom.fitness

    def _tournament(self, population: list[Chromosome]) -> Chromosome:
        picks = self.rng.choice(len(population), size=self.config.tournament,
                                replace=False)
        return min((population[i] for i in picks), key=lambda c: c.fitness)

    def _crossover(self, a: Chromosome, b: Chromosome) -> Chromosome:
        take_b = self.rng.random(a.ks.shape) < self.config.crossover_p
        return Chromosome(ks=np.where(take_b, b.ks, a.ks),
                          xs=np.where(take_b, b.xs, a.xs))

    def _mutate(self, chrom: Chromosome) -> Chromosome:
        cfg = self.config
        flip = self.rng.random(chrom.ks.shape) < cfg.mutation_p
        if flip.any():
            chrom.ks = np.where(flip, self.rng.integers(len(RRI_CHOICES),
                                                        size=chrom.ks.shape),
                                chrom.ks)
        jitter = self.rng.normal(0.0, cfg.mutation_sigma, size=chrom.xs.shape)
        mask = self.rng.random(chrom.xs.shape) < cfg.mutation_p
        chrom.xs = np.clip(chrom.xs + mask * jitter, 0.0, 1.0)
        chrom.fitness = None
        return chrom

    def run(self) -> tuple[Chromosome, GaReport]:
        cfg = self.config
        population = [self._random_chromosome() for _ in range(cfg.population)]
        report = GaReport()
        for _ in range(cfg.generations):
            for chrom in population:
                self._evaluate(chrom)
            population.sort(key=lambda c: c.fitness)
            report.best_objective.append(population[0].fitness)
            report.mean_objective.append(
                float(np.mean([c.fitness for c in population])))
            nxt = [population[i].copy() for i in range(cfg.elites)]
            while len(nxt) < cfg.population:
                child = self._crossover(self._tournament(population),
                                        self._tournament(population))
                nxt.append(self._mutate(child))
            population = nxt
        for chrom in population:
            self._evaluate(chrom)
        population.sort(key=lambda c: c.fitness)
        best = population[0]
        report.best_objective.append(best.fitness)
        report.mean_objective.append(
            float(np.mean([c.fitness for c in population])))
        return best, report
