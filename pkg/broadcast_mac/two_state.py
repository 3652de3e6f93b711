"""Closed-form terms and regions for the two-state channel (ell = 2).

Joint states are keyed `(p, q)` = (state of h₂², state of h₁²) throughout, the same key `DecodeTable` uses.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from broadcast_mac.channel import (
    ChannelModel,
    Constraint,
    Index,
    PowerAllocation,
    RateRegion,
    RateVector,
    require_symmetric,
    require_valid,
)
from broadcast_mac.utils import ATOL, DomainError

logger = logging.getLogger(__name__)

TWO_STATE_TAGS = ("r11", "r12", "r21", "r1", "r'12", "r'21", "r22")


def _rest(x: float) -> float:
    """1 - x for a simplex fraction, clipped at 0."""
    return max(0.0, 1.0 - x)


@dataclass(frozen=True)
class TwoStateTerms:
    """Bounds of the seven-constraint two-state region, in bits per channel use."""

    r11: float
    r12: float
    r21: float
    r1: float
    r12p: float
    r21p: float
    r22: float

    def as_dict(self) -> Dict[str, float]:
        """Terms keyed by their constraint tag."""
        return dict(zip(TWO_STATE_TAGS, (self.r11, self.r12, self.r21, self.r1, self.r12p, self.r21p, self.r22)))


def term_arguments(m: ChannelModel, pa: PowerAllocation) -> Dict[str, Tuple[float, ...]]:
    """The candidate values each two-state term is the minimum of, keyed by tag.

    Raises:
        DomainError: the model is invalid or not two-state, or the allocation is asymmetric
    """
    require_valid(m, ell=2)
    require_symmetric(pa, ell=2)
    a1, a2 = m.alphas
    b11, b12, b21, b22 = pa.flat()
    cap = m.cap

    # Interference seen by the stage-2 streams in the mixed states
    mixed = a1 * (b12 + b22) + a2 * (b21 + b22)
    return {
        "r11": (cap(a1 * b11, (a1 + a2) * _rest(b11)), 0.5 * cap(2 * a1 * b11, 2 * a1 * _rest(b11))),
        "r12": (cap(a2 * b12, mixed), 0.5 * cap(2 * a2 * b12, 2 * a2 * b22)),
        "r21": (cap(a1 * b21, mixed), 0.5 * cap(2 * a2 * b21, 2 * a2 * b22)),
        "r1": (cap(a1 * b21 + a2 * b12, mixed), 0.5 * cap(2 * a2 * (b12 + b21), 2 * a2 * b22)),
        "r'12": (cap(a2 * (2 * b12 + b21), 2 * a2 * b22),),
        "r'21": (cap(a2 * (b12 + 2 * b21), 2 * a2 * b22),),
        "r22": (0.5 * cap(2 * a2 * b22, 0.0),),
    }


def two_state_terms(m: ChannelModel, pa: PowerAllocation) -> TwoStateTerms:
    """Evaluates r₁₁, r₁₂, r₂₁, r₁, r′₁₂, r′₂₁ and r₂₂ at a symmetric allocation.

    Raises:
        DomainError: the model is invalid or not two-state, or the allocation is asymmetric
    """
    args = term_arguments(m, pa)
    return TwoStateTerms(*(min(args[tag]) for tag in TWO_STATE_TAGS))


def region_from_terms(terms: TwoStateTerms) -> RateRegion:
    """The seven two-state constraints for already evaluated terms."""
    return RateRegion(
        2,
        (
            Constraint.of({(1, 1): 1}, terms.r11, "r11"),
            Constraint.of({(1, 2): 1}, terms.r12, "r12"),
            Constraint.of({(2, 1): 1}, terms.r21, "r21"),
            Constraint.of({(1, 2): 1, (2, 1): 1}, terms.r1, "r1"),
            Constraint.of({(1, 2): 2, (2, 1): 1}, terms.r12p, "r'12"),
            Constraint.of({(1, 2): 1, (2, 1): 2}, terms.r21p, "r'21"),
            Constraint.of({(2, 2): 1}, terms.r22, "r22"),
        ),
    )


def two_state_region(m: ChannelModel, pa: PowerAllocation) -> RateRegion:
    """Achievable region of (R₁₁, R₁₂, R₂₁, R₂₂) for a symmetric two-state allocation."""
    return region_from_terms(two_state_terms(m, pa))


@dataclass(frozen=True)
class StageConstants:
    """Per-state, per-stage successive decoding constants a₁ … a₃₃."""

    a: Tuple[float, ...]

    def __post_init__(self):
        """Validates length and sign."""
        if len(self.a) != 33:
            raise DomainError(f"33 stage constants are required, got {len(self.a)}")
        if any(not x >= 0 for x in self.a):
            raise DomainError("stage constants must be nonnegative")

    def __getitem__(self, i: int) -> float:
        """a_i, 1-based."""
        if not 1 <= i <= 33:
            raise IndexError(i)
        return self.a[i - 1]

    def symmetry_deviation(self) -> float:
        """Largest gap among the identities that hold for symmetric allocations."""
        pairs = ((4, 8), (14, 16), (13, 17), (15, 18), (29, 31), (30, 32))
        return max(abs(self[i] - self[j]) for i, j in pairs)


# Streams decoded at stage 2 of state (α₂, α₂), in the order the a₁₉ … a₃₃ subsets are built from
_STRONG_STAGE2 = ((1, (1, 2)), (1, (2, 1)), (2, (1, 2)), (2, (2, 1)))
_STRONG_SUBSETS: Tuple[Tuple[int, ...], ...] = (
    (0,),
    (1,),
    (2,),
    (3,),
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 2),
    (1, 3),
    (2, 3),
    (0, 1, 2),
    (0, 1, 3),
    (0, 2, 3),
    (1, 2, 3),
    (0, 1, 2, 3),
)


def stage_constants(m: ChannelModel, pa: PowerAllocation) -> StageConstants:
    """Evaluates a₁ … a₃₃; both symmetric and asymmetric allocations are accepted.

    Raises:
        DomainError: the model is invalid or not two-state
    """
    require_valid(m, ell=2)
    if pa.ell != 2:
        raise DomainError(f"a 2-state allocation is required, got ell={pa.ell}")
    a1, a2 = m.alphas
    cap = m.cap

    def b1(u: int, v: int) -> float:
        return pa.beta(u, v, 1)

    def b2(u: int, v: int) -> float:
        return pa.beta(u, v, 2)

    a: List[float] = []

    # Stage 1, one (x1, x2) gain pair per joint state (h₁², h₂²)
    for g1, g2 in ((a1, a1), (a1, a2), (a2, a1), (a2, a2)):
        y = g1 * _rest(b1(1, 1)) + g2 * _rest(b2(1, 1))
        s1, s2 = g1 * b1(1, 1), g2 * b2(1, 1)
        a += [cap(s1, y), cap(s2, y), cap(s1 + s2, y)]

    # Stage 2 in (α₁, α₂): user 1 decodes W¹₂₁, user 2 decodes W²₁₂
    y = a1 * (b1(1, 2) + b1(2, 2)) + a2 * (b2(2, 1) + b2(2, 2))
    s1, s2 = a1 * b1(2, 1), a2 * b2(1, 2)
    a += [cap(s1, y), cap(s2, y), cap(s1 + s2, y)]

    # Stage 2 in (α₂, α₁): user 1 decodes W¹₁₂, user 2 decodes W²₂₁
    y = a2 * (b1(2, 1) + b1(2, 2)) + a1 * (b2(1, 2) + b2(2, 2))
    s1, s2 = a2 * b1(1, 2), a1 * b2(2, 1)
    a += [cap(s1, y), cap(s2, y), cap(s1 + s2, y)]

    # Stage 2 in (α₂, α₂): every nonempty subset of the four mixed streams
    y = a2 * (b1(2, 2) + b2(2, 2))
    fractions = [pa.beta(u, v, user) for user, (u, v) in _STRONG_STAGE2]
    a += [cap(a2 * sum(fractions[i] for i in subset), y) for subset in _STRONG_SUBSETS]

    return StageConstants(tuple(a))


@dataclass(frozen=True)
class BaselineBounds:
    """Bounds on the weak-group and strong-group sum rates of the two-layer scheme."""

    rw: float
    rs: float


def baseline_region(m: ChannelModel, pa: PowerAllocation) -> BaselineBounds:
    """Bounds for the single-user-adapted two-layer scheme, R_w = R¹₁₁ + R²₁₁ and R_s = R¹₁₂ + R²₁₂.

    Raises:
        DomainError: the allocation puts power on W₂₁ or W₂₂
    """
    for user in (1, 2):
        if pa.ell == 2 and (pa.beta(2, 1, user) > ATOL or pa.beta(2, 2, user) > ATOL):
            raise DomainError("the two-layer scheme carries no power on W21 or W22")
    a = stage_constants(m, pa)
    a2 = m.alphas[1]
    rw = min(a[3], a[6], a[9], a[4] + a[8])
    rs = m.cap(a2 * pa.beta(1, 2, 1) + a2 * pa.beta(1, 2, 2), 0.0)
    return BaselineBounds(rw, rs)


def relabelled_baseline(pa: PowerAllocation) -> PowerAllocation:
    """Moves the strong layer of a two-layer allocation (β₁₁, β₁₂, 0, 0) onto W₂₂.

    The result is a symmetric allocation whose two-state region reproduces the two-layer bounds exactly:
    2·r₁₁ equals the R_w bound and 2·r₂₂ equals the R_s bound.
    """
    require_symmetric(pa, ell=2)
    b11, b12, b21, b22 = pa.flat()
    if b21 > ATOL or b22 > ATOL:
        raise DomainError("the two-layer scheme carries no power on W21 or W22")
    return PowerAllocation.two_state(b11, 0.0, 0.0, b12)


@dataclass(frozen=True)
class OuterBound:
    """Per-stream rate caps that contain every achievable symmetric rate vector."""

    cap_R11: float
    cap_R12: float
    cap_R21: float
    cap_R22: float

    def __post_init__(self):
        """Validates sign."""
        if min(self.cap_R11, self.cap_R12, self.cap_R21, self.cap_R22) < 0:
            raise DomainError("outer bound caps must be nonnegative")

    def contains(self, rv: RateVector, atol: float = ATOL) -> bool:
        """True if every rate of `rv` is within its cap."""
        return (
            rv.rate(1, 1) <= self.cap_R11 + atol
            and rv.rate(1, 2) <= self.cap_R12 + atol
            and rv.rate(2, 1) <= self.cap_R21 + atol
            and rv.rate(2, 2) <= self.cap_R22 + atol
        )


def outer_bound(m: ChannelModel, pa: PowerAllocation) -> OuterBound:
    """Outer bound at a symmetric allocation: ½a₃, ½a₂₄, ½a₂₇ and r₂₂."""
    require_symmetric(pa, ell=2)
    a = stage_constants(m, pa)
    r22 = two_state_terms(m, pa).r22
    return OuterBound(0.5 * a[3], 0.5 * a[24], 0.5 * a[27], r22)


@dataclass(frozen=True)
class StageViolation:
    """One successive decoding inequality that does not hold."""

    stage: int
    tag: str
    lhs: float
    bound: float

    def __str__(self):
        """Readable form."""
        return f"stage {self.stage}: {self.tag} needs {self.lhs:.9g} <= {self.bound:.9g}"


@dataclass(frozen=True)
class StateCheck:
    """Outcome of every decoding stage at one joint state."""

    state: Index
    stages: int
    violations: Tuple[StageViolation, ...] = ()

    @property
    def passed(self) -> bool:
        """True if every stage decodes."""
        return not self.violations


@dataclass(frozen=True)
class StagewiseReport:
    """Per-state outcomes of `check_stagewise_feasibility`, keyed (p, q) = (h₂ state, h₁ state)."""

    states: Dict[Index, StateCheck] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        """True if every state passes."""
        return all(s.passed for s in self.states.values())

    def failed_states(self) -> List[Index]:
        """States with at least one violated inequality."""
        return [k for k, s in sorted(self.states.items()) if not s.passed]


_Row = Tuple[int, str, float, float]


def _stage_rows(m: ChannelModel, pa: PowerAllocation, rv: RateVector) -> Dict[Index, List[_Row]]:
    """(stage, tag, lhs, bound) for every inequality, per joint state."""
    a = stage_constants(m, pa)
    r = rv.rate
    a2 = m.alphas[1]
    rows: Dict[Index, List[_Row]] = {}

    # (p, q) = (h₂, h₁); the stage-1 constants are laid out by (h₁, h₂)
    for offset, (p, q) in zip((0, 3, 6, 9), ((1, 1), (2, 1), (1, 2), (2, 2))):
        rows[(p, q)] = [
            (1, f"a{offset + 1}", r(1, 1), a[offset + 1]),
            (1, f"a{offset + 2}", r(1, 1), a[offset + 2]),
            (1, f"a{offset + 3}", 2 * r(1, 1), a[offset + 3]),
        ]

    rows[(2, 1)] += [
        (2, "a13", r(2, 1), a[13]),
        (2, "a14", r(1, 2), a[14]),
        (2, "a15", r(2, 1) + r(1, 2), a[15]),
    ]
    rows[(1, 2)] += [
        (2, "a16", r(1, 2), a[16]),
        (2, "a17", r(2, 1), a[17]),
        (2, "a18", r(1, 2) + r(2, 1), a[18]),
    ]

    stream_rates = [r(u, v) for _, (u, v) in _STRONG_STAGE2]
    for i, subset in enumerate(_STRONG_SUBSETS, start=19):
        rows[(2, 2)].append((2, f"a{i}", sum(stream_rates[j] for j in subset), a[i]))

    b1_22, b2_22 = pa.beta(2, 2, 1), pa.beta(2, 2, 2)
    rows[(2, 2)] += [
        (3, "W1_22", r(2, 2), m.cap(a2 * b1_22, 0.0)),
        (3, "W2_22", r(2, 2), m.cap(a2 * b2_22, 0.0)),
        (3, "W_22 sum", 2 * r(2, 2), m.cap(a2 * (b1_22 + b2_22), 0.0)),
    ]
    return rows


def check_stagewise_feasibility(m: ChannelModel, pa: PowerAllocation, rv: RateVector) -> StagewiseReport:
    """Checks every successive decoding inequality, state by state, for symmetric rates `rv`.

    Infeasibility is reported, never raised.
    """
    if rv.ell != 2:
        raise DomainError(f"a 2-state rate vector is required, got ell={rv.ell}")
    states: Dict[Index, StateCheck] = {}
    for state, rows in _stage_rows(m, pa, rv).items():
        violations = tuple(
            StageViolation(stage, tag, lhs, bound) for stage, tag, lhs, bound in rows if lhs > bound + ATOL
        )
        states[state] = StateCheck(state, max(stage for stage, *_ in rows), violations)
        for v in violations:
            logger.debug(f"State {state} fails {v}")
    return StagewiseReport(states)
