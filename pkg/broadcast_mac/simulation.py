"""Seeded Monte Carlo check of the average rate: draws joint fading states and credits the decoded rates."""

import logging
import math
from dataclasses import dataclass, field
from functools import partial
from multiprocessing import Pool
from typing import Dict, List, Optional, Sequence

import numpy as np

from broadcast_mac.channel import ChannelModel, Index, PowerAllocation, RateRegion, RateVector, require_valid
from broadcast_mac.multi_state import DecodeTable, decode_table, multi_state_region
from broadcast_mac.rate_opt import average_rate_general
from broadcast_mac.two_state import two_state_region
from broadcast_mac.utils import DomainError, InfeasibleRatesError, extra_debug

logger = logging.getLogger(__name__)

BLOCK_TRIALS = 65536
GENERATOR = f"numpy.random.Philox/SeedSequence([seed, block])/block={BLOCK_TRIALS}"
DEFAULT_TRIALS = 200_000


@dataclass(frozen=True)
class SimConfig:
    """Inputs of one Monte Carlo run.

    Attributes:
        trials (int): Number of independent fading realisations
        seed (int): Unsigned 64-bit seed, the only source of randomness
        model (ChannelModel): Channel the states are drawn from
        rates (RateVector): Stream rates to credit
        allocation (PowerAllocation): Allocation the rates must be feasible at
        table (DecodeTable): Decode sets to credit; the scheme's own table when None
        workers (int): Processes the blocks are spread over
    """

    trials: int
    seed: int
    model: ChannelModel
    rates: RateVector
    allocation: PowerAllocation
    table: Optional[DecodeTable] = None
    workers: int = 1

    def __post_init__(self):
        """Validates trials and seed."""
        if self.trials < 1:
            raise DomainError(f"trials must be positive, got {self.trials}")
        if not 0 <= self.seed < 2**64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.workers < 1:
            raise DomainError(f"workers must be positive, got {self.workers}")


@dataclass(frozen=True)
class SimReport:
    """Empirical and closed-form average rate of one run."""

    empirical_mean: float
    std_error: float
    formula_value: float
    z_score: float
    per_state_counts: Dict[Index, int]
    trials: int = 0
    seed: int = 0
    generator: str = GENERATOR
    state_rates: Dict[Index, float] = field(default_factory=dict)


def _region(m: ChannelModel, pa: PowerAllocation) -> RateRegion:
    return two_state_region(m, pa) if m.ell == 2 else multi_state_region(m, pa)


def _block_counts(seed: int, probs: Sequence[float], trials: int, block: int) -> np.ndarray:
    """Counts of each joint state (p, q), flattened as (p-1)·ell + (q-1), in one block of trials."""
    ell = len(probs)
    size = min(BLOCK_TRIALS, trials - block * BLOCK_TRIALS)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))
    h2 = rng.choice(ell, size=size, p=probs)
    h1 = rng.choice(ell, size=size, p=probs)
    return np.bincount(h2 * ell + h1, minlength=ell * ell)


def _count_states(cfg: SimConfig) -> np.ndarray:
    blocks = range(math.ceil(cfg.trials / BLOCK_TRIALS))
    count = partial(_block_counts, cfg.seed, cfg.model.probs, cfg.trials)
    if cfg.workers > 1 and len(blocks) > 1:
        with Pool(cfg.workers) as pool:
            per_block: List[np.ndarray] = pool.map(count, blocks)
    else:
        per_block = [count(b) for b in blocks]
    for b, c in enumerate(per_block):
        extra_debug(logger, f"Block {b}: {c.tolist()}")
    return np.sum(per_block, axis=0)


def run_sim(cfg: SimConfig) -> SimReport:
    """Draws `cfg.trials` joint states and compares the mean decoded rate with the closed form.

    Blocks of trials are seeded independently from (seed, block index), so the report does not depend on
    `cfg.workers`.

    Raises:
        InfeasibleRatesError: the rates are outside the region at the allocation (checked before sampling)
        DomainError: the model, rates and table disagree in their number of states
    """
    m, rv = cfg.model, cfg.rates
    require_valid(m)
    if rv.ell != m.ell:
        raise DomainError(f"rate vector has {rv.ell} states, model has {m.ell}")
    violated = _region(m, cfg.allocation).violations(rv)
    if violated:
        raise InfeasibleRatesError([str(c) for c in violated])

    table = decode_table(m.ell) if cfg.table is None else cfg.table
    if table.ell != m.ell:
        raise DomainError(f"decode table has {table.ell} states, model has {m.ell}")
    state_rates = {(p, q): math.fsum(rv.rate(u, v) for _, u, v in table.decoded(p, q)) for p, q in table}

    logger.info(f"Simulating {cfg.trials} fading realisations (seed={cfg.seed})")
    counts = _count_states(cfg)
    ell = m.ell
    per_state = {(p, q): int(counts[(p - 1) * ell + (q - 1)]) for p, q in table}

    rates = np.array([state_rates[k] for k in per_state])
    weights = np.array(list(per_state.values()), dtype=float)
    mean = float(np.dot(weights / cfg.trials, rates))
    if cfg.trials > 1:
        variance = float(np.dot(weights, (rates - mean) ** 2)) / (cfg.trials - 1)
        std_error = math.sqrt(variance / cfg.trials)
    else:
        std_error = 0.0

    formula = average_rate_general(m, rv, table)
    z_score = (mean - formula) / std_error if std_error > 0 else 0.0
    logger.debug(f"Empirical mean {mean!r} ± {std_error!r}, closed form {formula!r}, z={z_score:.3f}")
    return SimReport(mean, std_error, formula, z_score, per_state, cfg.trials, cfg.seed, GENERATOR, state_rates)
