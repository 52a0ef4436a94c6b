"""Particle swarm over variable-length architecture genomes.

Particles carry genomes of different lengths, so the global-search term of
the velocity rule first reshapes a copy of the swarm best: under the
default x-reference rule the best is padded with all-zero genes or
truncated at the tail until its conv and pool parts match the current
particle; the gbest-reference variant inverts this, reshaping the particle
(and its personal best) to the swarm best's lengths instead.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError
from .genome import ArchGenome, GeneBounds, init_genome, serialize

log = logging.getLogger(__name__)

X_REFERENCE = "x_reference"
GBEST_REFERENCE = "gbest_reference"

# stream tags: keep init / evaluation / velocity draws independent
_INIT, _EVAL, _VEL = 0, 1, 2


def derive_rng(*keys: int) -> np.random.Generator:
    """Deterministic generator from an integer key path."""
    return np.random.default_rng(list(keys))


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


@dataclass(frozen=True)
class PsoConfig:
    inertia_w: float = 0.72984
    c1: float = 1.496172
    c2: float = 1.496172
    population_size: int = 20
    max_generations: int = 30
    v_max_fraction: float = 0.5
    reference_mode: str = X_REFERENCE
    seed: int = 0

    def validate(self) -> None:
        if self.inertia_w <= 0 or self.c1 <= 0 or self.c2 <= 0:
            raise ConfigError("inertia_w, c1, c2 must be positive")
        if self.population_size < 2:
            raise ConfigError("population_size must be >= 2")
        if self.max_generations < 1:
            raise ConfigError("max_generations must be >= 1")
        if not 0 < self.v_max_fraction <= 1:
            raise ConfigError("v_max_fraction must be in (0, 1]")
        if self.reference_mode not in (X_REFERENCE, GBEST_REFERENCE):
            raise ConfigError(f"unknown reference_mode {self.reference_mode!r}")


class Particle:
    """Position genome, same-shaped velocity, and personal-best memory."""

    def __init__(self, position: ArchGenome):
        self.position = position
        self.velocity_conv = np.zeros((position.n_c, 6))
        self.velocity_pool = np.zeros((position.n_p, 4))
        self.fitness = np.inf
        self.pbest_position = position
        self.pbest_fitness = np.inf

    def check_shapes(self) -> None:
        if (self.velocity_conv.shape != (self.position.n_c, 6)
                or self.velocity_pool.shape != (self.position.n_p, 4)):
            raise AssertionError("velocity shape diverged from position shape")


@dataclass
class Swarm:
    particles: list[Particle]
    gbest_position: ArchGenome
    gbest_fitness: float = np.inf
    generation: int = 0


@dataclass(frozen=True)
class AlignedPair:
    """gBest gene matrices reshaped to a reference particle's lengths."""

    conv: np.ndarray
    pool: np.ndarray


@dataclass
class TrajectoryRecord:
    generation: int
    gbest_fitness: float
    gbest_descriptor: str
    wall_ms: float


@dataclass
class SearchResult:
    gbest_position: ArchGenome
    gbest_fitness: float
    trajectory: list[TrajectoryRecord]
    length_history: list[list[tuple[int, int]]] = field(default_factory=list)


def _resize_rows(mat: np.ndarray, n: int) -> np.ndarray:
    """Truncate tail rows, or append all-zero rows, until mat has n rows."""
    if mat.shape[0] >= n:
        return mat[:n].copy()
    pad = np.zeros((n - mat.shape[0], mat.shape[1]))
    return np.vstack([mat, pad])


def align_to_x(gbest: ArchGenome, x: ArchGenome) -> AlignedPair:
    """Reshape a copy of gBest so its conv/pool parts match x's lengths."""
    return AlignedPair(conv=_resize_rows(gbest.conv_matrix(), x.n_c),
                       pool=_resize_rows(gbest.pool_matrix(), x.n_p))


def velocity_update(p: Particle, gbest: ArchGenome, cfg: PsoConfig,
                    bounds: GeneBounds, rng) -> tuple[np.ndarray, np.ndarray]:
    """Inertia + global + local velocity rule with per-component clamping.

    r1 and r2 are drawn once per call and shared across components.  In
    gbest-reference mode the particle itself (position, velocity, and the
    personal-best copy used here) is first reshaped to gBest's lengths.
    """
    p.check_shapes()
    r1 = float(rng.random())
    r2 = float(rng.random())

    if cfg.reference_mode == GBEST_REFERENCE:
        xc = _resize_rows(p.position.conv_matrix(), gbest.n_c)
        xp = _resize_rows(p.position.pool_matrix(), gbest.n_p)
        p.position = ArchGenome.from_matrices(xc, xp)
        p.velocity_conv = _resize_rows(p.velocity_conv, gbest.n_c)
        p.velocity_pool = _resize_rows(p.velocity_pool, gbest.n_p)
        gc, gp = gbest.conv_matrix(), gbest.pool_matrix()
        pbc = _resize_rows(p.pbest_position.conv_matrix(), gbest.n_c)
        pbp = _resize_rows(p.pbest_position.pool_matrix(), gbest.n_p)
    else:
        xc, xp = p.position.conv_matrix(), p.position.pool_matrix()
        aligned = align_to_x(gbest, p.position)
        gc, gp = aligned.conv, aligned.pool
        # pBest comes from the particle's own memory, so it already has x's shape
        pbc, pbp = p.pbest_position.conv_matrix(), p.pbest_position.pool_matrix()

    w, c1, c2 = cfg.inertia_w, cfg.c1, cfg.c2
    vc = w * p.velocity_conv + c1 * r1 * (gc - xc) + c2 * r2 * (pbc - xc)
    vp = w * p.velocity_pool + c1 * r1 * (gp - xp) + c2 * r2 * (pbp - xp)
    vc_max = cfg.v_max_fraction * bounds.conv_spans()
    vp_max = cfg.v_max_fraction * bounds.pool_spans()
    p.velocity_conv = np.clip(vc, -vc_max, vc_max)
    p.velocity_pool = np.clip(vp, -vp_max, vp_max)
    return p.velocity_conv, p.velocity_pool


def position_update(p: Particle) -> ArchGenome:
    """Move the particle by its velocity; continuous, no clamping here."""
    p.check_shapes()
    p.position = ArchGenome.from_matrices(
        p.position.conv_matrix() + p.velocity_conv,
        p.position.pool_matrix() + p.velocity_pool)
    return p.position


def update_bests(swarm: Swarm, fitnesses: list[float]) -> Swarm:
    """Refresh personal bests and the swarm best; strict improvement only.

    Non-finite fitness counts as +inf, so a failed evaluation can never
    become a best.  Ties keep the incumbent; among equal new minima the
    lowest particle index wins (in-order strict comparison).
    """
    if len(fitnesses) != len(swarm.particles):
        raise ConfigError("one fitness per particle required")
    for p, f in zip(swarm.particles, fitnesses):
        f = float(f) if np.isfinite(f) else np.inf
        p.fitness = f
        if f < p.pbest_fitness:
            p.pbest_fitness = f
            p.pbest_position = p.position
    for p in swarm.particles:
        if p.pbest_fitness < swarm.gbest_fitness:
            swarm.gbest_fitness = p.pbest_fitness
            swarm.gbest_position = p.pbest_position
    return swarm


FitnessFn = Callable[[ArchGenome, int], float]


def _evaluate_all(particles: list[Particle], evaluator: FitnessFn,
                  seed: int, generation: int, n_jobs: int) -> list[float]:
    def one(i: int) -> float:
        eval_seed = derive_seed(seed, _EVAL, generation, i)
        try:
            return float(evaluator(particles[i].position, eval_seed))
        except Exception:
            log.exception("fitness evaluation failed for particle %d "
                          "(generation %d); assigning +inf", i, generation)
            return np.inf

    if n_jobs <= 1:
        return [one(i) for i in range(len(particles))]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(one, range(len(particles))))


def run_search(cfg: PsoConfig, bounds: GeneBounds, evaluator: FitnessFn,
               n_jobs: int = 1) -> SearchResult:
    """Full swarm loop: init, then per generation evaluate / update bests /
    velocity / position.  Deterministic for a fixed seed and evaluator."""
    cfg.validate()
    bounds.validate()
    particles = [Particle(init_genome(bounds, derive_rng(cfg.seed, _INIT, i)))
                 for i in range(cfg.population_size)]
    swarm = Swarm(particles=particles, gbest_position=particles[0].position)
    trajectory: list[TrajectoryRecord] = []
    length_history: list[list[tuple[int, int]]] = []

    for t in range(cfg.max_generations):
        start = time.perf_counter()
        swarm.generation = t
        length_history.append([(p.position.n_c, p.position.n_p) for p in particles])
        fits = _evaluate_all(particles, evaluator, cfg.seed, t, n_jobs)
        update_bests(swarm, fits)
        for i, p in enumerate(particles):
            rng = derive_rng(cfg.seed, _VEL, t, i)
            velocity_update(p, swarm.gbest_position, cfg, bounds, rng)
            position_update(p)
        wall_ms = (time.perf_counter() - start) * 1000.0
        trajectory.append(TrajectoryRecord(
            generation=t, gbest_fitness=swarm.gbest_fitness,
            gbest_descriptor=serialize(swarm.gbest_position), wall_ms=wall_ms))

    return SearchResult(gbest_position=swarm.gbest_position,
                        gbest_fitness=swarm.gbest_fitness,
                        trajectory=trajectory, length_history=length_history)
