"""General ell-state machinery: index sets, interference and bound terms, the achievable region and decode tables.

The interference terms are written with `beta[m][n]` = β_{(m+1)(n+1)}, rows indexed by the first stream index.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterator, List, Optional, Tuple

from broadcast_mac.channel import (
    ChannelModel,
    Constraint,
    Index,
    PowerAllocation,
    RateRegion,
    require_symmetric,
    require_valid,
)
from broadcast_mac.two_state import term_arguments, two_state_region
from broadcast_mac.utils import ATOL, DomainError, extra_debug

logger = logging.getLogger(__name__)

# (user, u, v) names codebook W^user_{uv}
Stream = Tuple[int, int, int]


@dataclass(frozen=True)
class IndexSets:
    """The index sets J₁, J₂ and J₃ of a stream pair (u, v)."""

    j1: Tuple[int, ...]
    j2: Tuple[Index, ...]
    j3: Tuple[Index, ...]


def _check_pair(u: int, v: int, ell: int) -> None:
    if not (1 <= u < v <= ell):
        raise DomainError(f"pair (u, v) = ({u}, {v}) needs 1 <= u < v <= {ell}")


def index_sets(u: int, v: int, ell: int, strict: bool = False) -> IndexSets:
    """Index sets for the pair u < v.

    J₂ defaults to {(j, k): j in u..v-1, k in v..ell}. With `strict` it takes the printed form
    {(j, k): k in u..v-1, j in v+1..ell}, which is empty when v = ell.

    Raises:
        DomainError: unless 1 <= u < v <= ell
    """
    _check_pair(u, v, ell)
    j1 = tuple(range(u, v))
    if strict:
        j2 = tuple((j, k) for k in range(u, v) for j in range(v + 1, ell + 1))
    else:
        j2 = tuple((j, k) for j in range(u, v) for k in range(v, ell + 1))
    j3 = tuple((j, k) for j in range(v, ell + 1) for k in range(j, ell + 1))
    return IndexSets(j1, j2, j3)


def _clip(x: float) -> float:
    return min(1.0, max(0.0, x))


class _Partial:
    """Partial sums of one symmetric allocation."""

    def __init__(self, pa: PowerAllocation):
        require_symmetric(pa)
        self.beta = pa.array()
        self.ell = pa.ell

    def block(self, rows: int, cols: int) -> float:
        """Σ β_mn over m <= rows, n <= cols."""
        return float(self.beta[:rows, :cols].sum())

    def row(self, m: int, cols: int) -> float:
        """Σ β_mn over n <= cols."""
        return float(self.beta[m - 1, :cols].sum())

    def col(self, n: int, rows: int) -> float:
        """Σ β_mn over m <= rows."""
        return float(self.beta[:rows, n - 1].sum())

    def b1(self, j: int, u: int, v: int) -> float:
        return _clip(1.0 - self.block(v - 1, j) - self.row(v, u))

    def b2(self, j: int, u: int, v: int) -> float:
        return _clip(1.0 - self.block(j, v - 1) - self.col(v, u))

    def b3(self, u: int, v: int) -> float:
        return _clip(1.0 - self.block(v - 1, v - 1) - self.row(v, u) - self.col(v, u))

    def b4(self, u: int, v: int) -> float:
        return _clip(1.0 - self.block(u, v - 1) - self.col(v, u))

    def b5(self, u: int, v: int) -> float:
        return _clip(1.0 - self.block(v - 1, u) - self.row(v, u))

    def b7(self, j: int, u: int, v: int) -> float:
        return _clip(1.0 - self.block(j, v - 1) - self.col(v, u))

    def b8(self, u: int, v: int) -> float:
        return _clip(1.0 - self.block(v, u))


def interference_terms(pa: PowerAllocation, u: int, v: int, j: Optional[int] = None) -> Dict[str, float]:
    """Residual interference fractions B₁ … B₈ at (u, v).

    B₃, B₄, B₅ and B₈ are always returned; B₁, B₂, B₆ and B₇ only when `j` is given. Every value lies in [0, 1].

    Raises:
        DomainError: an index is outside 1..ell or the allocation is asymmetric
    """
    ell = pa.ell
    if not (1 <= u <= ell and 1 <= v <= ell) or (j is not None and not 1 <= j <= ell):
        raise DomainError(f"indices (j, u, v) = ({j}, {u}, {v}) outside 1..{ell}")
    sums = _Partial(pa)
    terms = {"B3": sums.b3(u, v), "B4": sums.b4(u, v), "B5": sums.b5(u, v), "B8": sums.b8(u, v)}
    if j is not None:
        terms.update(B1=sums.b1(j, u, v), B2=sums.b2(j, u, v), B6=sums.b1(j, u, v), B7=sums.b7(j, u, v))
    return terms


@dataclass(frozen=True)
class BoundTerms:
    """Bound terms b_i of one pair (u, v), or of one diagonal stream when u == v.

    Terms whose index set is empty are absent from `b`.
    """

    u: int
    v: int
    b: Dict[int, float] = field(default_factory=dict)
    interference: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        """Validates sign and range."""
        if any(not x >= 0 for x in self.b.values()):
            raise DomainError("bound terms must be nonnegative")
        if any(not (0 <= x <= 1) for x in self.interference.values()):
            raise DomainError("interference fractions must lie in [0, 1]")


def bound_terms(
    m: ChannelModel, pa: PowerAllocation, u: int, v: Optional[int] = None, strict: bool = False
) -> BoundTerms:
    """Evaluates b₁ … b₁₀ for a pair u < v, or b₁₁ and b₁₂ for stream (u, u) when `v` is None or equal to `u`.

    Raises:
        DomainError: indices out of range, mismatched model and allocation, or an asymmetric allocation
    """
    require_valid(m)
    require_symmetric(pa, ell=m.ell)
    ell = m.ell
    alpha = m.alpha
    cap = m.cap
    sums = _Partial(pa)
    beta = pa.beta

    if v is None or v == u:
        if not 1 <= u <= ell:
            raise DomainError(f"state {u} outside 1..{ell}")
        b8 = sums.b8(u, u)
        b = {
            11: cap(alpha(u) * beta(u, u), (alpha(u) + alpha(ell)) * b8),
            12: cap(2 * alpha(u) * beta(u, u), 2 * alpha(u) * b8),
        }
        return BoundTerms(u, u, b, {f"B8({u},{u})": b8})

    sets = index_sets(u, v, ell, strict=strict)
    b_uv, b_vu = beta(u, v), beta(v, u)
    b3 = sums.b3(u, v)
    b4 = sums.b4(u, v)
    b5 = sums.b5(u, v)
    interference = {"B3": b3, "B4": b4, "B5": b5}
    b: Dict[int, float] = {}

    if sets.j1:
        b[1] = min(cap(alpha(v) * b_uv, alpha(j) * sums.b1(j, u, v) + alpha(v) * sums.b2(j, u, v)) for j in sets.j1)
        for j in sets.j1:
            interference[f"B1({j})"] = sums.b1(j, u, v)
            interference[f"B2({j})"] = sums.b2(j, u, v)
    b[2] = cap(alpha(v) * b_uv, (alpha(v) + alpha(ell)) * b3)
    b[3] = cap(2 * alpha(v) * b_uv, 2 * alpha(v) * b3)
    b[4] = cap(alpha(u) * b_vu, alpha(ell) * b4 + alpha(u) * b5)
    b[5] = cap(2 * alpha(v) * b_vu, 2 * alpha(v) * b3)

    if sets.j2:
        if strict:
            # Printed form: the weak index is k and the interference arguments follow it
            b[6] = min(
                cap(alpha(j) * b_vu + alpha(k) * b_uv, alpha(j) * sums.b1(k, u, v) + alpha(k) * sums.b7(k, u, v))
                for j, k in sets.j2
            )
        else:
            b[6] = min(
                cap(alpha(j) * b_vu + alpha(k) * b_uv, alpha(j) * sums.b1(j, u, v) + alpha(k) * sums.b7(j, u, v))
                for j, k in sets.j2
            )
    else:
        logger.debug(f"J2({u},{v}) is empty, b6 omitted")

    b[7] = cap(alpha(v) * (b_uv + b_vu), (alpha(v) + alpha(ell)) * b3)
    b[8] = cap(2 * alpha(v) * (b_uv + b_vu), 2 * alpha(v) * b3)
    b[9] = min(cap(alpha(j) * (b_uv + b_vu) + alpha(k) * b_uv, (alpha(j) + alpha(k)) * b3) for j, k in sets.j3)
    b[10] = min(cap(alpha(j) * (b_uv + b_vu) + alpha(k) * b_vu, (alpha(j) + alpha(k)) * b3) for j, k in sets.j3)
    return BoundTerms(u, v, b, interference)


def _min_of(b: Dict[int, float], full: Tuple[int, ...], halved: Tuple[int, ...] = ()) -> float:
    values = [b[i] for i in full if i in b] + [0.5 * b[i] for i in halved if i in b]
    return min(values)


def multi_state_region(m: ChannelModel, pa: PowerAllocation, strict: bool = False) -> RateRegion:
    """Achievable region of the ell-state scheme: five constraints per pair u < v plus one per diagonal stream."""
    require_valid(m)
    require_symmetric(pa, ell=m.ell)
    constraints: List[Constraint] = []

    for u, v in itertools.combinations(range(1, m.ell + 1), 2):
        b = bound_terms(m, pa, u, v, strict=strict).b
        uv, vu = (u, v), (v, u)
        constraints += [
            Constraint.of({uv: 1}, _min_of(b, (1, 2), (3,)), f"R{u}{v}({u},{v})"),
            Constraint.of({vu: 1}, _min_of(b, (4,), (5,)), f"R{v}{u}({u},{v})"),
            Constraint.of({uv: 1, vu: 1}, _min_of(b, (6, 7), (8,)), f"sum({u},{v})"),
            Constraint.of({uv: 2, vu: 1}, b[9], f"2R{u}{v}+R{v}{u}({u},{v})"),
            Constraint.of({uv: 1, vu: 2}, b[10], f"R{u}{v}+2R{v}{u}({u},{v})"),
        ]
        extra_debug(logger, f"Pair ({u},{v}) bounds: {b}")

    for u in range(1, m.ell + 1):
        b = bound_terms(m, pa, u).b
        constraints.append(Constraint.of({(u, u): 1}, _min_of(b, (11,), (12,)), f"R{u}{u}({u})"))

    return RateRegion(m.ell, tuple(constraints))


@dataclass(frozen=True)
class DecodeTable:
    """Streams decoded at each joint state (p, q) = (h₂ state, h₁ state)."""

    ell: int
    sets: Dict[Index, FrozenSet[Stream]]

    def decoded(self, p: int, q: int) -> FrozenSet[Stream]:
        """Streams decoded at (p, q)."""
        return self.sets[(p, q)]

    def streams(self) -> FrozenSet[Stream]:
        """Every stream decoded somewhere."""
        return frozenset().union(*self.sets.values())

    def first_state(self, stream: Stream) -> Index:
        """The state a stream is first decoded at: lowest p + q, then lowest (p, q)."""
        candidates = [state for state, s in self.sets.items() if stream in s]
        if not candidates:
            raise KeyError(stream)
        return min(candidates, key=lambda st: (st[0] + st[1], st))

    def stages(self, p: int, q: int) -> Dict[int, FrozenSet[Stream]]:
        """Streams decoded at (p, q) grouped by decoding stage p' + q' - 1 of their first state (p', q')."""
        grouped: Dict[int, set] = {}
        for stream in self.decoded(p, q):
            fp, fq = self.first_state(stream)
            grouped.setdefault(fp + fq - 1, set()).add(stream)
        return {stage: frozenset(s) for stage, s in sorted(grouped.items())}

    def is_monotone(self) -> bool:
        """True if moving either user to a stronger state never loses a stream."""
        for (p, q), s in self.sets.items():
            if p < self.ell and not s <= self.sets[(p + 1, q)]:
                return False
            if q < self.ell and not s <= self.sets[(p, q + 1)]:
                return False
        return True

    def __iter__(self) -> Iterator[Index]:
        """States in (p, q) order."""
        return iter(sorted(self.sets))


def decode_table(ell: int) -> DecodeTable:
    """Decode sets of the ell-state scheme.

    The set at (p, q) is the union of the sets at (p-1, q-1), (p, q-1) and (p-1, q) plus W¹_{pq} and W²_{qp}.

    Raises:
        DomainError: ell < 1
    """
    if ell < 1:
        raise DomainError(f"ell must be positive, got {ell}")
    sets: Dict[Index, FrozenSet[Stream]] = {}
    for p in range(1, ell + 1):
        for q in range(1, ell + 1):
            parents = [sets.get(k, frozenset()) for k in ((p - 1, q - 1), (p, q - 1), (p - 1, q))]
            sets[(p, q)] = frozenset().union(*parents) | {(1, p, q), (2, q, p)}
    return DecodeTable(ell, sets)


def baseline_decode_table() -> DecodeTable:
    """Decode sets of the two-layer, single-user-adapted scheme at ell = 2.

    Both base layers W_11 are decoded everywhere; user i's second layer W_12 whenever h_i is strong.
    """
    sets: Dict[Index, FrozenSet[Stream]] = {}
    for p in (1, 2):
        for q in (1, 2):
            s = {(1, 1, 1), (2, 1, 1)}
            if q == 2:
                s.add((1, 1, 2))
            if p == 2:
                s.add((2, 1, 2))
            sets[(p, q)] = frozenset(s)
    return DecodeTable(2, sets)


@dataclass(frozen=True)
class ReductionReport:
    """Deviation between each ell-state bound and its two-state counterpart."""

    deviations: Dict[str, float]
    missing: Tuple[str, ...] = ()

    @property
    def max_deviation(self) -> float:
        """Largest deviation, infinite when a term is missing."""
        if self.missing:
            return math.inf
        return max(self.deviations.values(), default=0.0)

    @property
    def passed(self) -> bool:
        """True if every term is present and within tolerance."""
        return self.max_deviation <= ATOL


def reduction_check(m: ChannelModel, pa: PowerAllocation, strict: bool = False) -> ReductionReport:
    """Compares the ell-state bounds against the two-state terms at ell = 2.

    Raises:
        DomainError: the model is not two-state or the allocation is asymmetric
    """
    require_valid(m, ell=2)
    args = term_arguments(m, pa)
    pair = bound_terms(m, pa, 1, 2, strict=strict).b
    weak = bound_terms(m, pa, 1).b
    strong = bound_terms(m, pa, 2).b

    # name -> (ell-state value or None if omitted, two-state value)
    comparisons: Dict[str, Tuple[Optional[float], float]] = {
        "b11(1)": (weak[11], args["r11"][0]),
        "b12(1)/2": (0.5 * weak[12], args["r11"][1]),
        "b1(1,2)": (pair.get(1), args["r12"][0]),
        "b3(1,2)/2": (0.5 * pair[3], args["r12"][1]),
        "b4(1,2)": (pair[4], args["r21"][0]),
        "b5(1,2)/2": (0.5 * pair[5], args["r21"][1]),
        "b6(1,2)": (pair.get(6), args["r1"][0]),
        "b8(1,2)/2": (0.5 * pair[8], args["r1"][1]),
        "b9(1,2)": (pair[9], args["r'12"][0]),
        "b10(1,2)": (pair[10], args["r'21"][0]),
        "min(b11(2),b12(2)/2)": (min(strong[11], 0.5 * strong[12]), args["r22"][0]),
    }

    deviations: Dict[str, float] = {}
    missing: List[str] = []
    for name, (ours, theirs) in comparisons.items():
        if ours is None:
            missing.append(name)
        else:
            deviations[name] = abs(ours - theirs)

    # Region bounds, constraint by constraint in matching order
    two = two_state_region(m, pa)
    multi = multi_state_region(m, pa, strict=strict)
    order = {"r12": 0, "r21": 1, "r1": 2, "r'12": 3, "r'21": 4, "r11": 5, "r22": 6}
    for c in two.constraints:
        deviations[f"region {c.tag}"] = abs(multi.constraints[order[c.tag]].bound - c.bound)

    report = ReductionReport(deviations, tuple(missing))
    extra_debug(logger, f"Reduction check at {pa.flat()}: max deviation {report.max_deviation!r}")
    return report
