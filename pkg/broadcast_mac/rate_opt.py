"""Optimisation over rate regions: exact linear maximisation, frontier tracing and average-rate search."""

import itertools
import logging
import math
from dataclasses import dataclass
from functools import partial
from multiprocessing import Pool
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from broadcast_mac.channel import (
    ChannelModel,
    Index,
    PowerAllocation,
    RateRegion,
    RateVector,
    require_grid_size,
    require_valid,
    restricted_grid,
    simplex_grid,
)
from broadcast_mac.multi_state import DecodeTable, decode_table, multi_state_region
from broadcast_mac.two_state import two_state_terms, baseline_region, region_from_terms, stage_constants
from broadcast_mac.utils import ATOL, DomainError, extra_debug

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 0.02
LADDER_POINTS = 200
REFINE_FLOOR = 1e-4

# The two-layer scheme only carries power on these streams
BASELINE_STREAMS: Tuple[Index, ...] = ((1, 1), (1, 2))


@dataclass(frozen=True)
class LinearOptimum:
    """Optimum of a linear objective over a rate region and the vertex attaining it."""

    value: float
    arg: RateVector


def _components(region: RateRegion) -> List[List[Index]]:
    """Groups of rate indices coupled through at least one constraint."""
    parent: Dict[Index, Index] = {}

    def find(i: Index) -> Index:
        while parent.setdefault(i, i) != i:
            i = parent[i]
        return i

    for c in region.constraints:
        first, *rest = c.indices
        for other in rest:
            parent[find(other)] = find(first)
        find(first)

    groups: Dict[Index, List[Index]] = {}
    for i in sorted(parent):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values())


def _best_vertex(a: np.ndarray, b: np.ndarray, weights: np.ndarray) -> Tuple[float, np.ndarray]:
    """Maximises `weights·x` over {x >= 0 : a·x <= b} by enumerating every vertex of the polytope."""
    k, d = a.shape
    rows = np.vstack([a, -np.eye(d)])
    rhs = np.concatenate([b, np.zeros(d)])

    combos = np.array(list(itertools.combinations(range(k + d), d)))
    systems = rows[combos]
    targets = rhs[combos]
    regular = np.abs(np.linalg.det(systems)) > ATOL
    vertices = np.linalg.solve(systems[regular], targets[regular][..., None])[..., 0]

    slack = ATOL * np.maximum(1.0, np.abs(b))
    feasible = np.all(vertices @ a.T <= b + slack, axis=1) & np.all(vertices >= -ATOL, axis=1)
    vertices = np.clip(vertices[feasible], 0.0, None)

    values = vertices @ weights
    best = values.max()
    optimal = vertices[values >= best - ATOL]
    # Lexicographically smallest among the optimal vertices, first coordinate most significant
    order = np.lexsort(optimal.T[::-1])
    return float(best), optimal[order[0]]


def maximize_linear(region: RateRegion, objective: Mapping[Index, float]) -> LinearOptimum:
    """Exact maximum of Σ c_{uv}·R_{uv} over a rate region.

    Coupled rate indices are solved together by vertex enumeration; ties go to the lexicographically smallest
    rate vector.

    Raises:
        DomainError: an objective index is outside the region, a coefficient is negative, or the objective
            rewards a rate no constraint bounds
    """
    ell = region.ell
    for (u, v), c in objective.items():
        if not (1 <= u <= ell and 1 <= v <= ell):
            raise DomainError(f"objective index {(u, v)} outside the {ell}-state region")
        if not c >= 0:
            raise DomainError(f"objective coefficients must be nonnegative, got {c} for {(u, v)}")

    components = _components(region)
    bounded = {i for group in components for i in group}
    for i, c in objective.items():
        if c > 0 and i not in bounded:
            raise DomainError(f"rate {i} is unbounded in this region")

    rates: Dict[Index, float] = {}
    total = 0.0
    for group in components:
        weights = np.array([objective.get(i, 0.0) for i in group], dtype=float)
        position = {i: n for n, i in enumerate(group)}
        members = [c for c in region.constraints if position.keys() >= set(c.indices)]
        a = np.zeros((len(members), len(group)))
        for row, c in enumerate(members):
            for i, coef in c.coeffs:
                a[row, position[i]] = coef
        b = np.array([c.bound for c in members], dtype=float)
        value, x = _best_vertex(a, b, weights)
        total += value
        rates.update({i: float(xi) for i, xi in zip(group, x)})

    return LinearOptimum(total, RateVector.from_mapping(ell, rates))


@dataclass(frozen=True)
class FrontierPoint:
    """A (weak-group, strong-group) sum-rate pair and the allocation attaining it."""

    x: float
    y: float
    allocation: Optional[PowerAllocation]
    scheme: str = "proposed"


def _in_pool(fn: Callable, items: Sequence, workers: int) -> List:
    """`map` that fans out across processes when `workers` > 1, keeping input order."""
    if workers <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    chunksize = max(1, len(items) // (workers * 8))
    with Pool(workers) as pool:
        return pool.map(fn, items, chunksize=chunksize)


def _proposed_corner(m: ChannelModel, pa: PowerAllocation) -> Tuple[float, float]:
    terms = two_state_terms(m, pa)
    mixed = maximize_linear(region_from_terms(terms), {(1, 2): 1.0, (2, 1): 1.0}).value
    return 2 * (terms.r11 + mixed), 2 * terms.r22


def _baseline_corner(m: ChannelModel, pa: PowerAllocation) -> Tuple[float, float]:
    bounds = baseline_region(m, pa)
    return bounds.rw, bounds.rs


def _outer_corner(m: ChannelModel, pa: PowerAllocation) -> Tuple[float, float]:
    a = stage_constants(m, pa)
    return a[3] + a[24] + a[27], 2 * two_state_terms(m, pa).r22


def _corners(
    corner: Callable[[ChannelModel, PowerAllocation], Tuple[float, float]],
    m: ChannelModel,
    allocations: Sequence[PowerAllocation],
    workers: int,
    scheme: str,
) -> List[FrontierPoint]:
    values = _in_pool(partial(corner, m), allocations, workers)
    points = [FrontierPoint(x, y, pa, scheme) for (x, y), pa in zip(values, allocations)]
    logger.debug(f"Evaluated {len(points)} {scheme} allocations")
    return points


def upper_envelope(
    corners: Sequence[FrontierPoint], xs: Optional[Iterable[float]] = None, samples: int = LADDER_POINTS
) -> List[FrontierPoint]:
    """Envelope of the union of rectangles [0, x] × [0, y] spanned by each corner, sampled at `xs`.

    `xs` defaults to `samples` evenly spaced points over [0, max x]. Ties keep the earliest corner.
    """
    if not corners:
        return []
    scheme = corners[0].scheme
    cx = np.array([c.x for c in corners])
    cy = np.array([c.y for c in corners])
    ladder = np.linspace(0.0, cx.max(), samples) if xs is None else np.asarray(list(xs), dtype=float)

    envelope = []
    for x in ladder:
        reach = np.flatnonzero(cx >= x - ATOL)
        if reach.size == 0:
            envelope.append(FrontierPoint(float(x), 0.0, None, scheme))
            continue
        best = reach[np.argmax(cy[reach])]
        envelope.append(FrontierPoint(float(x), float(cy[best]), corners[best].allocation, scheme))
    return envelope


def proposed_corners(m: ChannelModel, resolution: float = DEFAULT_RESOLUTION, workers: int = 1) -> List[FrontierPoint]:
    """Per-allocation frontier corners (2·(r₁₁ + max(R₁₂ + R₂₁)), 2·r₂₂) over the full grid."""
    require_valid(m, ell=2)
    require_grid_size(resolution, 4)
    return _corners(_proposed_corner, m, list(simplex_grid(2, resolution)), workers, "proposed")


def baseline_corners(m: ChannelModel, resolution: float = DEFAULT_RESOLUTION, workers: int = 1) -> List[FrontierPoint]:
    """Per-allocation (R_w, R_s) bounds of the two-layer scheme over the β₁₁ + β₁₂ = 1 split grid."""
    require_valid(m, ell=2)
    return _corners(_baseline_corner, m, list(restricted_grid(2, resolution, BASELINE_STREAMS)), workers, "baseline")


def outer_corners(m: ChannelModel, resolution: float = DEFAULT_RESOLUTION, workers: int = 1) -> List[FrontierPoint]:
    """Per-allocation outer-bound corners (a₃ + a₂₄ + a₂₇, 2·r₂₂) over the full grid."""
    require_valid(m, ell=2)
    require_grid_size(resolution, 4)
    return _corners(_outer_corner, m, list(simplex_grid(2, resolution)), workers, "outer")


def trace_frontier_proposed(
    m: ChannelModel,
    resolution: float = DEFAULT_RESOLUTION,
    xs: Optional[Iterable[float]] = None,
    workers: int = 1,
    samples: int = LADDER_POINTS,
) -> List[FrontierPoint]:
    """Envelope of (R̄_w, R̄_s) = (2(R₁₁ + R₁₂ + R₂₁), 2R₂₂) over every grid allocation."""
    return upper_envelope(proposed_corners(m, resolution, workers), xs, samples)


def trace_frontier_baseline(
    m: ChannelModel,
    resolution: float = DEFAULT_RESOLUTION,
    xs: Optional[Iterable[float]] = None,
    workers: int = 1,
    samples: int = LADDER_POINTS,
) -> List[FrontierPoint]:
    """Envelope of (R_w, R_s) for the two-layer scheme over the split grid."""
    return upper_envelope(baseline_corners(m, resolution, workers), xs, samples)


def trace_frontier_outer(
    m: ChannelModel,
    resolution: float = DEFAULT_RESOLUTION,
    xs: Optional[Iterable[float]] = None,
    workers: int = 1,
    samples: int = LADDER_POINTS,
) -> List[FrontierPoint]:
    """Envelope of the outer-bound corners over the grid."""
    return upper_envelope(outer_corners(m, resolution, workers), xs, samples)


def trace_frontiers(
    m: ChannelModel,
    resolution: float = DEFAULT_RESOLUTION,
    include_outer: bool = False,
    samples: int = LADDER_POINTS,
    workers: int = 1,
) -> Dict[str, List[FrontierPoint]]:
    """Every scheme's envelope, keyed by scheme, on one ladder of `samples` points over the widest x."""
    schemes = [proposed_corners(m, resolution, workers), baseline_corners(m, resolution, workers)]
    if include_outer:
        schemes.append(outer_corners(m, resolution, workers))
    ladder = np.linspace(0.0, max(pt.x for corners in schemes for pt in corners), samples)
    return {corners[0].scheme: upper_envelope(corners, ladder) for corners in schemes}


def dominance_slack(proposed: Sequence[FrontierPoint], baseline: Sequence[FrontierPoint]) -> float:
    """Smallest proposed-minus-baseline gap over envelopes sampled on the same ladder."""
    if len(proposed) != len(baseline):
        raise DomainError("envelopes must be sampled on the same ladder")
    return min(a.y - b.y for a, b in zip(proposed, baseline))


def average_rate(m: ChannelModel, rv: RateVector, p: float) -> float:
    """Two-state average rate 2[R₁₁ + (1-p)(R₁₂ + R₂₁) + (1-p)²R₂₂] with weak-state probability `p`.

    Raises:
        DomainError: `p` outside [0, 1] or a model/rate vector that is not two-state
    """
    if m.ell != 2 or rv.ell != 2:
        raise DomainError("the closed-form average rate is defined for two states only")
    if not 0 <= p <= 1:
        raise DomainError(f"probability must be in [0, 1], got {p}")
    q = 1.0 - p
    return 2 * (rv.rate(1, 1) + q * (rv.rate(1, 2) + rv.rate(2, 1)) + q * q * rv.rate(2, 2))


def average_rate_coefficients(m: ChannelModel, table: Optional[DecodeTable] = None) -> Dict[Index, float]:
    """Expected number of decoded copies of each rate R_{uv}, summed over both users.

    Raises:
        DomainError: the table and the model have different numbers of states
    """
    require_valid(m)
    table = decode_table(m.ell) if table is None else table
    if table.ell != m.ell:
        raise DomainError(f"decode table has {table.ell} states, model has {m.ell}")
    coefficients = {(u, v): 0.0 for u in range(1, m.ell + 1) for v in range(1, m.ell + 1)}
    for p, q in table:
        weight = m.joint_probability(p, q)
        for _, u, v in table.decoded(p, q):
            coefficients[(u, v)] += weight
    return coefficients


def average_rate_general(m: ChannelModel, rv: RateVector, table: Optional[DecodeTable] = None) -> float:
    """Average rate of any decode table: Σ over joint states of probability × decoded rate.

    Raises:
        DomainError: dimensions of model, rates and table disagree
    """
    if rv.ell != m.ell:
        raise DomainError(f"rate vector has {rv.ell} states, model has {m.ell}")
    coefficients = average_rate_coefficients(m, table)
    return math.fsum(c * rv.rate(u, v) for (u, v), c in coefficients.items())


@dataclass(frozen=True)
class AvgRateResult:
    """Best average rate found, with the rates and allocation attaining it."""

    value: float
    rates: RateVector
    allocation: PowerAllocation
    evaluations: int = 0


def _region(m: ChannelModel, pa: PowerAllocation) -> RateRegion:
    if m.ell == 2:
        return region_from_terms(two_state_terms(m, pa))
    return multi_state_region(m, pa)


def _evaluate(m: ChannelModel, coefficients: Mapping[Index, float], pa: PowerAllocation) -> Tuple[float, RateVector]:
    optimum = maximize_linear(_region(m, pa), coefficients)
    return optimum.value, optimum.arg


def _pick(candidates: Iterable[Tuple[float, RateVector, PowerAllocation]]) -> Tuple[float, RateVector, PowerAllocation]:
    """Highest value; ties go to the lexicographically smallest allocation."""
    best: Optional[Tuple[float, RateVector, PowerAllocation]] = None
    for cand in candidates:
        if best is None or cand[0] > best[0] + ATOL:
            best = cand
        elif abs(cand[0] - best[0]) <= ATOL and cand[2].flat() < best[2].flat():
            best = cand
    if best is None:
        raise DomainError("no allocation to evaluate")
    return best


def _refine(
    evaluate: Callable[[PowerAllocation], Tuple[float, RateVector]],
    start: Tuple[float, RateVector, PowerAllocation],
    free: Sequence[Index],
    step: float,
) -> Tuple[Tuple[float, RateVector, PowerAllocation], int]:
    """Pattern search that moves `step` of power between free streams, halving the step when stuck."""
    best = start
    ell = start[2].ell
    positions = [(u - 1) * ell + (v - 1) for u, v in sorted(free)]
    evaluations = 0
    while step >= REFINE_FLOOR:
        flat = list(best[2].flat())
        moves = []
        for i, j in itertools.permutations(positions, 2):
            if flat[i] < step - ATOL or flat[j] + step > 1 + ATOL:
                continue
            moved = list(flat)
            moved[i] = max(0.0, moved[i] - step)
            moved[j] = min(1.0, moved[j] + step)
            pa = PowerAllocation.from_flat(moved)
            value, rates = evaluate(pa)
            evaluations += 1
            moves.append((value, rates, pa))
        candidate = _pick(moves) if moves else best
        if candidate[0] > best[0] + ATOL:
            best = candidate
            extra_debug(logger, f"Refined to {best[0]!r} at {best[2].flat()} (step {step})")
        else:
            step /= 2
    return best, evaluations


def maximize_average_rate(
    m: ChannelModel,
    resolution: float = DEFAULT_RESOLUTION,
    baseline: bool = False,
    refine: bool = True,
    workers: int = 1,
) -> AvgRateResult:
    """Largest average rate over grid allocations and the rate region at each, optionally refined locally.

    With `baseline` only the two-layer allocations (power on W₁₁ and W₁₂ alone) are searched. The full search
    also refines from the best two-layer point, so the proposed optimum never falls below the baseline one.

    Raises:
        DomainError: the baseline is requested for a model that is not two-state
        GridError: bad resolution, or a grid with more than `MAX_GRID_POINTS` allocations
    """
    require_valid(m)
    if baseline and m.ell != 2:
        raise DomainError("the two-layer baseline is defined for two states only")
    coefficients = average_rate_coefficients(m)
    evaluate = partial(_evaluate, m, coefficients)

    every_stream = [(u, v) for u in range(1, m.ell + 1) for v in range(1, m.ell + 1)]
    faces: List[Sequence[Index]] = [BASELINE_STREAMS] if baseline else [every_stream]
    if not baseline and m.ell == 2:
        faces.append(BASELINE_STREAMS)

    finalists = []
    evaluations = 0
    for free in faces:
        require_grid_size(resolution, len(free))
        grid = list(restricted_grid(m.ell, resolution, free))
        scores = _in_pool(evaluate, grid, workers)
        evaluations += len(grid)
        start = _pick((value, rates, pa) for (value, rates), pa in zip(scores, grid))
        if refine:
            start, extra = _refine(evaluate, start, free, resolution)
            evaluations += extra
        finalists.append(start)

    value, rates, allocation = _pick(finalists)
    logger.debug(f"Average rate {'baseline' if baseline else 'proposed'} optimum {value!r} at {allocation.flat()}")
    return AvgRateResult(value, rates, allocation, evaluations)
