"""Channel model, the capacity term C(x, y) and the allocation/rate/region carriers shared by every module.

Indices follow the stream naming W^i_{uv}: `u` is the state the stream is adapted to for the *other* user,
`v` the state for the transmitting user, both 1-based and in `1..ell`.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from broadcast_mac.utils import ATOL, DomainError, GridError

logger = logging.getLogger(__name__)

Index = Tuple[int, int]
Matrix = Tuple[Tuple[float, ...], ...]

# Largest allocation grid a search may walk
MAX_GRID_POINTS = 5_000_000


def cap_term(x: float, y: float, power: float) -> float:
    """Gaussian rate of signal power `x` under interference `y`: ½·log₂(1 + x / (y + 1/P)).

    Raises:
        DomainError: `x` or `y` is negative, or `power` is not positive
    """
    if not power > 0:
        raise DomainError(f"power must be positive, got {power}")
    if not x >= 0:
        raise DomainError(f"signal term must be nonnegative, got {x}")
    if not y >= 0:
        raise DomainError(f"interference term must be nonnegative, got {y}")
    if x == 0:
        return 0.0
    return 0.5 * math.log2(1.0 + x / (y + 1.0 / power))


@dataclass(frozen=True)
class ChannelModel:
    """Two-user fading MAC whose squared gains take `ell` values with the same distribution for both users.

    Attributes:
        alphas (Tuple[float, ...]): Channel power gains α₁ < … < α_ℓ (linear)
        power (float): Per-user average power P, noise variance normalised to 1
        probs (Tuple[float, ...]): P(h_i² = α_m) for each m
    """

    alphas: Tuple[float, ...]
    power: float
    probs: Tuple[float, ...]

    def __post_init__(self):
        """Normalise sequences to tuples of floats."""
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        object.__setattr__(self, "power", float(self.power))

    @classmethod
    def two_state(cls, alpha1: float, alpha2: float, power: float, p: float) -> "ChannelModel":
        """Two-state model with weak-state probability `p`."""
        return cls((alpha1, alpha2), power, (p, 1.0 - p))

    @property
    def ell(self) -> int:
        """Number of states per user."""
        return len(self.alphas)

    def alpha(self, m: int) -> float:
        """Gain of state `m` (1-based)."""
        return self.alphas[m - 1]

    def joint_probability(self, p: int, q: int) -> float:
        """Probability of the joint state (h₂² = α_p, h₁² = α_q); the users fade independently."""
        return self.probs[p - 1] * self.probs[q - 1]

    def cap(self, x: float, y: float) -> float:
        """`cap_term` at this model's power."""
        return cap_term(x, y, self.power)


@dataclass(frozen=True)
class ModelReport:
    """Outcome of `validate_model`: empty `problems` means the model is valid."""

    problems: Tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        """True if every invariant holds."""
        return not self.problems

    def __str__(self):
        """Turns the report into a human readable form."""
        return "ok" if self.ok else "; ".join(self.problems)


def validate_model(m: ChannelModel) -> ModelReport:
    """Checks every ChannelModel invariant, listing each one that is violated."""
    problems: List[str] = []
    if m.ell < 1:
        problems.append("at least one state is required")
    if len(m.probs) != m.ell:
        problems.append(f"{len(m.probs)} probabilities given for {m.ell} states")
    if not all(math.isfinite(a) for a in m.alphas):
        problems.append("channel gains must be finite")
    elif any(a <= 0 for a in m.alphas):
        problems.append("channel gains must be strictly positive")
    if any(b <= a for a, b in zip(m.alphas, m.alphas[1:])):
        problems.append("channel gains must be strictly increasing")
    if any(not p >= 0 for p in m.probs):
        problems.append("state probabilities must be nonnegative")
    elif m.probs and abs(math.fsum(m.probs) - 1.0) > ATOL:
        problems.append(f"state probabilities sum to {math.fsum(m.probs)!r}, not 1")
    if not (math.isfinite(m.power) and m.power > 0):
        problems.append("power must be positive and finite")
    return ModelReport(tuple(problems))


def require_valid(m: ChannelModel, ell: Optional[int] = None) -> None:
    """Raises `DomainError` unless `m` is valid (and has `ell` states, when given)."""
    report = validate_model(m)
    if not report.ok:
        raise DomainError(f"invalid channel model: {report}")
    if ell is not None and m.ell != ell:
        raise DomainError(f"a {ell}-state model is required, got ell={m.ell}")


def _as_matrix(values: Sequence[Sequence[float]]) -> Matrix:
    return tuple(tuple(float(x) for x in row) for row in values)


@dataclass(frozen=True)
class PowerAllocation:
    """Per-user power fractions β^i_{uv} on the ell×ell simplex.

    `user2` is None for a symmetric allocation, in which case both users use `user1`.
    """

    user1: Matrix
    user2: Optional[Matrix] = None

    def __post_init__(self):
        """Validates the simplex invariants for each user's map."""
        object.__setattr__(self, "user1", _as_matrix(self.user1))
        if self.user2 is not None:
            object.__setattr__(self, "user2", _as_matrix(self.user2))

        for matrix in (self.user1, self.user2):
            if matrix is None:
                continue
            ell = len(matrix)
            if ell < 1 or any(len(row) != ell for row in matrix):
                raise DomainError("power allocation must be a square, non-empty map")
            flat = [x for row in matrix for x in row]
            if any(not (-ATOL <= x <= 1 + ATOL) for x in flat):
                raise DomainError(f"power fractions must lie in [0, 1], got {flat}")
            if abs(math.fsum(flat) - 1.0) > ATOL:
                raise DomainError(f"power fractions must sum to 1, got {math.fsum(flat)!r}")
        if self.user2 is not None and len(self.user2) != len(self.user1):
            raise DomainError("both users' allocations must have the same number of states")

    @classmethod
    def symmetric(cls, betas: Sequence[Sequence[float]]) -> "PowerAllocation":
        """Allocation shared by both users."""
        return cls(_as_matrix(betas))

    @classmethod
    def asymmetric(cls, user1: Sequence[Sequence[float]], user2: Sequence[Sequence[float]]) -> "PowerAllocation":
        """Allocation with one map per user."""
        return cls(_as_matrix(user1), _as_matrix(user2))

    @classmethod
    def from_flat(cls, values: Sequence[float]) -> "PowerAllocation":
        """Symmetric allocation from (β₁₁, β₁₂, …, β_ℓℓ) in row-major order."""
        ell = math.isqrt(len(values))
        if ell * ell != len(values) or ell == 0:
            raise DomainError(f"{len(values)} fractions do not form a square allocation")
        return cls.symmetric([values[r * ell : (r + 1) * ell] for r in range(ell)])

    @classmethod
    def two_state(cls, b11: float, b12: float, b21: float, b22: float) -> "PowerAllocation":
        """Symmetric two-state allocation in (β₁₁, β₁₂, β₂₁, β₂₂) order."""
        return cls.symmetric(((b11, b12), (b21, b22)))

    @property
    def ell(self) -> int:
        """Number of states."""
        return len(self.user1)

    @property
    def is_symmetric(self) -> bool:
        """True if both users use the same map."""
        return self.user2 is None or self.user2 == self.user1

    def beta(self, u: int, v: int, user: int = 1) -> float:
        """β^user_{uv} (1-based indices)."""
        matrix = self.user1 if user == 1 or self.user2 is None else self.user2
        return matrix[u - 1][v - 1]

    def flat(self) -> Tuple[float, ...]:
        """User 1's fractions in row-major order."""
        return tuple(x for row in self.user1 for x in row)

    def array(self, user: int = 1) -> np.ndarray:
        """Copy of one user's map as an ell×ell array."""
        matrix = self.user1 if user == 1 or self.user2 is None else self.user2
        return np.array(matrix, dtype=float)


def require_symmetric(pa: PowerAllocation, ell: Optional[int] = None) -> None:
    """Raises `DomainError` unless `pa` is symmetric (and has `ell` states, when given)."""
    if not pa.is_symmetric:
        raise DomainError("a symmetric power allocation is required")
    if ell is not None and pa.ell != ell:
        raise DomainError(f"a {ell}-state allocation is required, got ell={pa.ell}")


@dataclass(frozen=True)
class RateVector:
    """Symmetric stream rates R_{uv} = R¹_{uv} = R²_{uv} in bits per channel use."""

    rates: Matrix

    def __post_init__(self):
        """Validates nonnegativity."""
        object.__setattr__(self, "rates", _as_matrix(self.rates))
        ell = len(self.rates)
        if ell < 1 or any(len(row) != ell for row in self.rates):
            raise DomainError("rate vector must be a square, non-empty map")
        if any(not x >= 0 for row in self.rates for x in row):
            raise DomainError("rates must be nonnegative")

    @classmethod
    def zeros(cls, ell: int) -> "RateVector":
        """All-zero rates."""
        return cls(tuple((0.0,) * ell for _ in range(ell)))

    @classmethod
    def from_mapping(cls, ell: int, rates: Mapping[Index, float]) -> "RateVector":
        """Rates given only for some indices, the rest are zero."""
        matrix = [[0.0] * ell for _ in range(ell)]
        for (u, v), r in rates.items():
            if not (1 <= u <= ell and 1 <= v <= ell):
                raise DomainError(f"rate index {(u, v)} outside 1..{ell}")
            matrix[u - 1][v - 1] = float(r)
        return cls(_as_matrix(matrix))

    @classmethod
    def two_state(cls, r11: float, r12: float, r21: float, r22: float) -> "RateVector":
        """Two-state rates in (R₁₁, R₁₂, R₂₁, R₂₂) order."""
        return cls(((r11, r12), (r21, r22)))

    @property
    def ell(self) -> int:
        """Number of states."""
        return len(self.rates)

    def rate(self, u: int, v: int) -> float:
        """R_{uv} (1-based indices)."""
        return self.rates[u - 1][v - 1]

    def as_mapping(self) -> Dict[Index, float]:
        """Rates keyed by (u, v)."""
        return {(u, v): self.rate(u, v) for u in range(1, self.ell + 1) for v in range(1, self.ell + 1)}


@dataclass(frozen=True)
class Constraint:
    """One linear inequality Σ c_{uv}·R_{uv} ≤ bound, tagged with the bound that produced it."""

    coeffs: Tuple[Tuple[Index, int], ...]
    bound: float
    tag: str

    @classmethod
    def of(cls, coeffs: Mapping[Index, int], bound: float, tag: str) -> "Constraint":
        """Builds a constraint from a coefficient mapping, dropping zero coefficients."""
        return cls(tuple(sorted((k, int(c)) for k, c in coeffs.items() if c)), float(bound), tag)

    @property
    def indices(self) -> Tuple[Index, ...]:
        """Rate indices with a nonzero coefficient."""
        return tuple(k for k, _ in self.coeffs)

    def lhs(self, rv: RateVector) -> float:
        """Value of the left hand side at `rv`."""
        return math.fsum(c * rv.rate(u, v) for (u, v), c in self.coeffs)

    def holds(self, rv: RateVector, atol: float = ATOL) -> bool:
        """True if `rv` satisfies the inequality within `atol`."""
        return self.lhs(rv) <= self.bound + atol

    def __str__(self):
        """Readable form, e.g. `2R12 + R21 <= 0.81 [r'12]`."""
        terms = " + ".join(f"{'' if c == 1 else c}R{u}{v}" for (u, v), c in self.coeffs)
        return f"{terms} <= {self.bound:.9g} [{self.tag}]"


@dataclass(frozen=True)
class RateRegion:
    """Polyhedron {R ≥ 0 : every constraint holds} for one power allocation."""

    ell: int
    constraints: Tuple[Constraint, ...] = field(default_factory=tuple)

    def __post_init__(self):
        """Validates the region invariants."""
        object.__setattr__(self, "constraints", tuple(self.constraints))
        for c in self.constraints:
            if not c.bound >= -ATOL:
                raise DomainError(f"constraint bound must be nonnegative: {c}")
            if any(coef not in (0, 1, 2) for _, coef in c.coeffs):
                raise DomainError(f"constraint coefficients must be in {{0, 1, 2}}: {c}")
            if any(not (1 <= u <= self.ell and 1 <= v <= self.ell) for u, v in c.indices):
                raise DomainError(f"constraint refers to a rate outside 1..{self.ell}: {c}")

    def __len__(self):
        """Number of constraints."""
        return len(self.constraints)

    def violations(self, rv: RateVector, atol: float = ATOL) -> List[Constraint]:
        """Constraints that `rv` violates."""
        if rv.ell != self.ell:
            raise DomainError(f"rate vector has {rv.ell} states, region has {self.ell}")
        return [c for c in self.constraints if not c.holds(rv, atol)]

    def contains(self, rv: RateVector, atol: float = ATOL) -> bool:
        """True if `rv` lies in the region."""
        return not self.violations(rv, atol)

    def bound(self, tag: str) -> float:
        """Bound of the constraint with the given tag."""
        for c in self.constraints:
            if c.tag == tag:
                return c.bound
        raise KeyError(tag)


def composition_count(ell: int, resolution: float) -> int:
    """Number of points `simplex_grid(ell, resolution)` yields."""
    return grid_point_count(resolution, ell * ell)


def grid_point_count(resolution: float, streams: int) -> int:
    """Number of grid allocations that spread the whole power over `streams` streams."""
    return math.comb(grid_steps(resolution) + streams - 1, streams - 1)


def require_grid_size(resolution: float, streams: int) -> int:
    """Number of grid allocations over `streams` streams.

    Raises:
        GridError: the grid has more than `MAX_GRID_POINTS` allocations
    """
    count = grid_point_count(resolution, streams)
    if count > MAX_GRID_POINTS:
        raise GridError(
            f"a grid step of {resolution} over {streams} streams gives {count} allocations, "
            f"more than the {MAX_GRID_POINTS} a search may visit; use a coarser grid resolution"
        )
    return count


def grid_steps(resolution: float) -> int:
    """Number of `resolution` steps in 1.

    Raises:
        GridError: `resolution` is outside (0, 1] or does not divide 1
    """
    if not (0 < resolution <= 1):
        raise GridError(f"grid resolution must be in (0, 1], got {resolution}")
    steps = round(1.0 / resolution)
    if abs(steps - 1.0 / resolution) > 1e-9:
        raise GridError(f"grid resolution {resolution} does not divide 1 into whole steps")
    return steps


def _compositions(total: int, parts: int) -> Iterator[Tuple[int, ...]]:
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def simplex_grid(ell: int, resolution: float) -> Iterator[PowerAllocation]:
    """Every symmetric allocation whose fractions are multiples of `resolution`.

    Points are yielded in ascending lexicographic order of (β₁₁, β₁₂, …, β_ℓℓ).

    Raises:
        GridError: `resolution` is outside (0, 1] or does not divide 1
        DomainError: `ell` is not positive
    """
    if ell < 1:
        raise DomainError(f"ell must be positive, got {ell}")
    steps = grid_steps(resolution)
    for counts in _compositions(steps, ell * ell):
        yield PowerAllocation.from_flat([k / steps for k in counts])


def restricted_grid(ell: int, resolution: float, free: Sequence[Index]) -> Iterator[PowerAllocation]:
    """Grid points of `simplex_grid` whose mass sits only on the `free` indices.

    The order is the same as `simplex_grid`, restricted to those points.
    """
    steps = grid_steps(resolution)
    ordered = sorted(set(free))
    if any(not (1 <= u <= ell and 1 <= v <= ell) for u, v in ordered):
        raise DomainError(f"free indices {ordered} outside 1..{ell}")
    for counts in _compositions(steps, len(ordered)):
        flat = [0.0] * (ell * ell)
        for (u, v), k in zip(ordered, counts):
            flat[(u - 1) * ell + (v - 1)] = k / steps
        yield PowerAllocation.from_flat(flat)
