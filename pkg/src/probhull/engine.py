"""Probability-prioritized refinement of safe / unsafe / unknown hulls.

The loop keeps three inventories of pairwise interior-disjoint boxes. It
repeatedly pops the unknown hull of largest probability, subdivides it
(regression tree or plain bisection), classifies the pieces and files
them. The safe probability is bracketed by

    L_s = sum of safe masses,   U_s = 1 - sum of unsafe masses.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .bounds import INTERMEDIATE_MODES, Status, Verdict, classify_many
from .errors import ConfigError, InternalConsistencyError, NumericUnderflowError
from .gauss import UNDERFLOW_MASS, BoxRegion, GaussianInput, box_probability, initial_box
from .model import Network, SafetySpec, is_safe_point
from .subdivide import TreeConfig, boundary_aware_sample, build_tree, extract_leaf_regions, longest_dimension

log = logging.getLogger(__name__)

STRATEGIES = ("boundary_aware", "uniform_bab")
TERMINATION_MODES = ("sum", "max")
MASS_TOLERANCE = 1e-9


@dataclass
class Hull:
    region: BoxRegion
    probability: float
    verdict: Verdict | None = None
    generation: int = 0

    @property
    def status(self) -> Status:
        return self.verdict.status if self.verdict is not None else Status.UNKNOWN

    def to_dict(self) -> dict:
        return {
            **self.region.to_dict(),
            "probability": self.probability,
            "status": self.status.value,
            "generation": self.generation,
        }


class HullSets:
    """Safe and unsafe lists plus a max-probability queue of unknown hulls.

    Queue ties are broken by earliest generation, then by the lower corner.
    """

    def __init__(self):
        self.safe: list[Hull] = []
        self.unsafe: list[Hull] = []
        self._heap: list = []
        self._counter = itertools.count()
        self.safe_mass = 0.0
        self.unsafe_mass = 0.0
        self.unknown_mass = 0.0

    def add(self, hull: Hull):
        status = hull.status
        if status is Status.SAFE:
            self.safe.append(hull)
            self.safe_mass += hull.probability
        elif status is Status.UNSAFE:
            self.unsafe.append(hull)
            self.unsafe_mass += hull.probability
        else:
            key = (-hull.probability, hull.generation, tuple(hull.region.lower), next(self._counter))
            heapq.heappush(self._heap, (key, hull))
            self.unknown_mass += hull.probability

    def peek(self) -> Hull | None:
        return self._heap[0][1] if self._heap else None

    def pop(self) -> Hull:
        hull = heapq.heappop(self._heap)[1]
        self.unknown_mass -= hull.probability
        return hull

    @property
    def unknown(self) -> list[Hull]:
        return [entry[1] for entry in sorted(self._heap, key=lambda e: e[0])]

    def __len__(self):
        return len(self.safe) + len(self.unsafe) + len(self._heap)


@dataclass(frozen=True)
class EngineConfig:
    epsilon: float = 0.01
    termination: str = "sum"
    p_min: float = 0.0
    strategy: str = "boundary_aware"
    tree: TreeConfig = field(default_factory=TreeConfig)
    n_initial: int = 1000
    n_iter: int = 100
    worker_count: int = 1
    iteration_cap: int | None = None
    wall_clock_cap: float | None = None
    tail_mass: float = 1e-5
    intermediate: str = "ibp"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")
        if self.p_min < 0:
            raise ConfigError("p_min must be >= 0")
        if self.termination not in TERMINATION_MODES:
            raise ConfigError(f"termination must be one of {TERMINATION_MODES}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        if self.n_initial < 1 or self.n_iter < 1:
            raise ConfigError("sample counts must be >= 1")
        if self.worker_count < 1:
            raise ConfigError("worker_count must be >= 1")
        if self.intermediate not in INTERMEDIATE_MODES:
            raise ConfigError(f"intermediate must be one of {INTERMEDIATE_MODES}")


@dataclass
class VerificationResult:
    lower: float
    upper: float
    hulls: HullSets
    stats: dict

    @property
    def gap(self) -> float:
        return self.upper - self.lower

    @property
    def cap_exit(self) -> bool:
        return self.stats["exit_reason"] in ("iteration_cap", "time_cap")


def assemble_bounds(sets: HullSets):
    """``(L_s, U_s)`` recomputed from the inventories."""
    safe = math.fsum(h.probability for h in sets.safe)
    unsafe = math.fsum(h.probability for h in sets.unsafe)
    unknown = math.fsum(h.probability for h in sets.unknown)
    total = safe + unsafe + unknown
    if total > 1.0 + MASS_TOLERANCE:
        raise InternalConsistencyError(
            f"hull masses sum to {total!r} > 1 (safe={safe!r}, unsafe={unsafe!r}, unknown={unknown!r}); "
            "inventories are not disjoint"
        )
    return safe, 1.0 - unsafe


def uniform_bab_subdivide(hull: Hull, g: GaussianInput, generation: int | None = None):
    """Halve ``hull`` along its longest side (lowest index on ties)."""
    box = hull.region
    dim = longest_dimension(box)
    if box.widths[dim] <= 0:
        raise ConfigError("cannot bisect a degenerate box")
    gen = hull.generation + 1 if generation is None else generation
    return tuple(Hull(child, box_probability(g, child), None, gen) for child in box.split(dim, float(box.center[dim])))


def _subdivide(hull, net, spec, g, cfg: EngineConfig, rng, n):
    if cfg.strategy == "boundary_aware":
        try:
            batch = boundary_aware_sample(g, net, spec, hull.region, cfg.tree, rng, n)
        except NumericUnderflowError:
            batch = None
        if batch is not None and len(batch):
            leaves = extract_leaf_regions(build_tree(batch, hull.region, g, cfg.tree))
            if len(leaves) > 1:
                return leaves
    dim = longest_dimension(hull.region)
    return list(hull.region.split(dim, float(hull.region.center[dim])))


def _classify_leaves(net, spec, leaves, pool, workers, intermediate="ibp"):
    if pool is None or len(leaves) < 2:
        return classify_many(net, spec, leaves, intermediate)
    size = -(-len(leaves) // workers)
    chunks = [leaves[i : i + size] for i in range(0, len(leaves), size)]
    # map preserves chunk order, so results do not depend on scheduling
    return [v for part in pool.map(lambda c: classify_many(net, spec, c, intermediate), chunks) for v in part]


def _stop_reason(sets: HullSets, cfg: EngineConfig, tail: float):
    top = sets.peek()
    if cfg.termination == "sum":
        if sets.unknown_mass + tail < cfg.epsilon:
            return "converged"
    elif top is None or top.probability < cfg.epsilon:
        return "converged"
    if top is None:
        return "exhausted"
    if top.probability < max(cfg.p_min, UNDERFLOW_MASS):
        return "filtered"
    return None


def verify(net: Network, spec: SafetySpec, g: GaussianInput, cfg: EngineConfig | None = None) -> VerificationResult:
    """Bracket ``P(C f(x) >= a)`` for ``x ~ g``.

    Exits when the termination condition holds, when no unknown hull is
    heavy enough to refine, or when an iteration / wall-clock cap is hit;
    every exit returns a sound interval.
    """
    cfg = cfg or EngineConfig()
    spec.check(net)
    if g.dim != net.input_dim:
        raise ConfigError(f"Gaussian has d={g.dim}, network expects {net.input_dim}")
    start = time.perf_counter()
    root_box, k = initial_box(g, cfg.tail_mass)
    root_mass = box_probability(g, root_box)
    tail = max(0.0, 1.0 - root_mass)

    sets = HullSets()
    sets.add(Hull(root_box, root_mass, None, 0))
    trace = [(0, sets.safe_mass, 1.0 - sets.unsafe_mass, sets.unknown_mass)]
    iterations = 0
    verifier_calls = 0
    seeds = np.random.SeedSequence(g.seed)
    pool = ThreadPoolExecutor(cfg.worker_count) if cfg.worker_count > 1 else None

    try:
        while True:
            reason = _stop_reason(sets, cfg, tail)
            if reason is not None:
                break
            if cfg.iteration_cap is not None and iterations >= cfg.iteration_cap:
                reason = "iteration_cap"
                break
            if cfg.wall_clock_cap is not None and time.perf_counter() - start >= cfg.wall_clock_cap:
                reason = "time_cap"
                break

            hull = sets.pop()
            iterations += 1
            (child_seed,) = seeds.spawn(1)
            rng = np.random.default_rng(child_seed)
            n = cfg.n_initial if iterations == 1 else cfg.n_iter
            leaves = _subdivide(hull, net, spec, g, cfg, rng, n)
            verdicts = _classify_leaves(net, spec, leaves, pool, cfg.worker_count, cfg.intermediate)
            verifier_calls += len(leaves)
            for leaf, verdict in zip(leaves, verdicts):
                sets.add(Hull(leaf, box_probability(g, leaf), verdict, iterations))
            trace.append((iterations, sets.safe_mass, 1.0 - sets.unsafe_mass, sets.unknown_mass))
            log.debug("iter %d: L=%.6f U=%.6f unknown=%.3g", iterations, *trace[-1][1:])
    finally:
        if pool is not None:
            pool.shutdown()

    lower, upper = assemble_bounds(sets)
    top = sets.peek()
    stats = {
        "iterations": iterations,
        "verifier_calls": verifier_calls,
        "wall_time_s": time.perf_counter() - start,
        "exit_reason": reason,
        "tail_mass": cfg.tail_mass,
        "k": k,
        "initial_box": root_box.to_dict(),
        "initial_box_probability": root_mass,
        "unknown_mass": math.fsum(h.probability for h in sets.unknown),
        "max_unknown_probability": top.probability if top is not None else 0.0,
        "trace": trace,
    }
    return VerificationResult(lower, upper, sets, stats)


@dataclass(frozen=True)
class OracleEstimate:
    estimate: float
    lower: float
    upper: float
    n: int
    successes: int
    confidence: float

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "lower": self.lower,
            "upper": self.upper,
            "n": self.n,
            "successes": self.successes,
            "confidence": self.confidence,
        }


def wilson_interval(successes: int, n: int, confidence: float):
    z = float(norm.ppf(0.5 + confidence / 2.0))
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lower = 0.0 if successes == 0 else max(0.0, centre - half)
    upper = 1.0 if successes == n else min(1.0, centre + half)
    return lower, upper


def mc_oracle(
    net: Network,
    spec: SafetySpec,
    g: GaussianInput,
    n: int,
    confidence: float = 0.99,
    rng: np.random.Generator | None = None,
    chunk: int = 100_000,
) -> OracleEstimate:
    """Monte-Carlo estimate of the safe probability with a Wilson interval."""
    if n < 1000:
        raise ConfigError(f"oracle needs n >= 1000 samples, got {n}")
    if not 0.0 < confidence < 1.0:
        raise ConfigError("confidence must lie in (0, 1)")
    rng = rng if rng is not None else g.rng()
    successes = 0
    remaining = n
    while remaining:
        m = min(chunk, remaining)
        x = g.mean + g.std * rng.standard_normal((m, g.dim))
        successes += int(np.count_nonzero(is_safe_point(net, spec, x)))
        remaining -= m
    lower, upper = wilson_interval(successes, n, confidence)
    return OracleEstimate(successes / n, lower, upper, n, successes, confidence)
