"""Genetic search over declared hyper-parameter schemas.

Elitist GA: the top ceil(rate * n) individuals survive, the rest of the
population is bred from them by uniform crossover and per-gene mutation.
The run stops after ``generations`` generations or once the best fitness
has failed to improve strictly for more than ``stall`` generations.

Fitness functions must be pure functions of the genome: results are
cached per genome and may be computed in worker processes.
"""

from __future__ import annotations

import json
import logging
import math
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Gene:
    name: str
    choices: tuple = ()  # categorical / grid gene
    lo: float | None = None  # bounded numeric gene when choices is empty
    hi: float | None = None
    integer: bool = False

    def __post_init__(self):
        if not self.choices and (self.lo is None or self.hi is None or self.lo > self.hi):
            raise ValueError(f"gene {self.name}: give choices or a bounded range")

    def sample(self, rng: np.random.Generator):
        if self.choices:
            return self.choices[int(rng.integers(len(self.choices)))]
        if self.integer:
            return int(rng.integers(int(self.lo), int(self.hi) + 1))
        return float(rng.uniform(self.lo, self.hi))

    def contains(self, v) -> bool:
        if self.choices:
            return v in self.choices
        return self.lo <= v <= self.hi and (not self.integer or float(v).is_integer())


@dataclass(frozen=True)
class SearchSpace:
    genes: tuple

    def __post_init__(self):
        if not self.genes:
            raise ValueError("search space needs at least one gene")

    @property
    def names(self) -> list[str]:
        return [g.name for g in self.genes]

    def __len__(self) -> int:
        return len(self.genes)

    def sample(self, rng) -> tuple:
        return tuple(g.sample(rng) for g in self.genes)

    def decode(self, genome: Sequence) -> dict:
        return dict(zip(self.names, genome))

    def encode(self, values: dict) -> tuple:
        return tuple(values[n] for n in self.names)

    def valid(self, genome) -> bool:
        return len(genome) == len(self.genes) and all(g.contains(v) for g, v in zip(self.genes, genome))


@dataclass
class GaConfig:
    population: int = 50
    generations: int = 20
    stall: int = 5
    selection_rate: float = 0.3
    crossover_rate: float = 0.8
    mutation_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for r in (self.selection_rate, self.crossover_rate, self.mutation_rate):
            if not 0.0 <= r <= 1.0:
                raise ValueError("GA rates must lie in [0, 1]")
        if self.population < 1 or self.generations < 0 or self.stall < 0:
            raise ValueError("GA sizes must be >= 1")


@dataclass
class GaResult:
    best: tuple
    best_fitness: float
    history: list[float]  # best-so-far after initialization and after each generation
    generations_run: int
    evaluations: int
    initial_fitness: list[float] = field(default_factory=list)
    failures: dict = field(default_factory=dict)
    log: list[dict] = field(default_factory=list)


_WORKER_FN: Callable | None = None


def _worker_eval(genome):
    return _safe_eval(_WORKER_FN, genome)


def _safe_eval(fn, genome) -> tuple[float, str | None]:
    try:
        val = float(fn(genome))
        if not math.isfinite(val):
            return 0.0, f"non-finite fitness {val}"
        return val, None
    except Exception as exc:  # failed evaluations score 0 instead of aborting the run
        return 0.0, f"{type(exc).__name__}: {exc}"


class FitnessCache:
    """Evaluates unseen genomes (optionally in a process pool) and memoises results."""

    def __init__(self, fn: Callable, workers: int = 1):
        self.fn = fn
        self.workers = max(1, int(workers))
        self.values: dict[tuple, float] = {}
        self.failures: dict[tuple, str] = {}
        self._pool = None

    def __enter__(self):
        global _WORKER_FN
        if self.workers > 1:
            _WORKER_FN = self.fn
            self._pool = ProcessPoolExecutor(self.workers, mp_context=mp.get_context("fork"))
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __call__(self, genomes: Sequence[tuple]) -> list[float]:
        todo = list(dict.fromkeys(g for g in genomes if g not in self.values))
        if todo:
            if self._pool is not None and len(todo) > 1:
                results = list(self._pool.map(_worker_eval, todo))
            else:
                results = [_safe_eval(self.fn, g) for g in todo]
            for g, (val, err) in zip(todo, results):
                self.values[g] = val
                if err is not None:
                    self.failures[g] = err
                    log.warning("fitness evaluation failed for %s: %s", g, err)
        return [self.values[g] for g in genomes]


def evolve(config: GaConfig, space: SearchSpace, fitness: Callable[[tuple], float], workers: int = 1,
           describe: Callable[[tuple], Any] | None = None, log_path=None) -> GaResult:
    """Run the GA; ``describe(best)`` adds extra detail to each JSON-lines log record."""
    rng = np.random.default_rng(config.seed)
    n = config.population
    n_elite = max(1, math.ceil(config.selection_rate * n))
    records = []
    with FitnessCache(fitness, workers) as cache:
        pop = [space.sample(rng) for _ in range(n)]
        fit = cache(pop)
        initial = list(fit)
        b = int(np.argmax(fit))
        best, best_fit = pop[b], fit[b]
        history = [best_fit]
        stall = 0
        generation = 0

        def record(gen):
            rec = {"generation": gen, "best_fitness": best_fit, "best": space.decode(best)}
            if describe is not None:
                rec["chosen_per_window"] = describe(best)
            records.append(rec)

        record(0)
        while generation < config.generations:
            generation += 1
            order = sorted(range(len(pop)), key=lambda i: -fit[i])
            elites = [pop[i] for i in order[:n_elite]]
            children = []
            while len(elites) + len(children) < n:
                pa = elites[int(rng.integers(len(elites)))]
                pb = elites[int(rng.integers(len(elites)))]
                if rng.random() < config.crossover_rate:
                    mask = rng.random(len(space)) < 0.5
                    child = [a if m else bb for a, bb, m in zip(pa, pb, mask)]
                else:
                    child = list(pa)
                for gi, gene in enumerate(space.genes):
                    if rng.random() < config.mutation_rate:
                        child[gi] = gene.sample(rng)
                children.append(tuple(child))
            pop = elites + children
            fit = cache(pop)
            b = int(np.argmax(fit))
            if fit[b] > best_fit:
                best, best_fit = pop[b], fit[b]
                stall = 0
            else:
                stall += 1
            history.append(best_fit)
            record(generation)
            if stall > config.stall:
                break
        result = GaResult(best, best_fit, history, generation, len(cache.values), initial,
                          {str(k): v for k, v in cache.failures.items()}, records)
    if log_path is not None:
        write_log(records, log_path)
    return result


def write_log(records: list[dict], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    return str(o)
