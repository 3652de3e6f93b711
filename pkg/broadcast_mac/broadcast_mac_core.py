"""Main module."""

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from broadcast_mac import notifications
from broadcast_mac.channel import (
    ChannelModel,
    PowerAllocation,
    RateVector,
    grid_steps,
    require_grid_size,
    validate_model,
)
from broadcast_mac.multi_state import reduction_check, decode_table, multi_state_region
from broadcast_mac.output import (
    AVGRATE_HEADER,
    FRONTIER_HEADER,
    allocation_json,
    decode_table_json,
    frontier_json,
    frontier_rows,
    load_rates,
    rates_json,
    region_json,
    resolve_output_path,
    sim_report_json,
    write_csv,
    write_json,
)
from broadcast_mac.rate_opt import (
    LADDER_POINTS,
    dominance_slack,
    maximize_average_rate,
    trace_frontiers,
)
from broadcast_mac.simulation import DEFAULT_TRIALS, SimConfig, run_sim
from broadcast_mac.two_state import (
    two_state_terms,
    check_stagewise_feasibility,
    baseline_region,
    region_from_terms,
    stage_constants,
    outer_bound,
)
from broadcast_mac.utils import ConfigError, DomainError, GridError, InfeasibleRatesError, setup_logging

logger = logging.getLogger(__name__)

COMMANDS = ("region", "baseline", "outer", "frontier", "avgrate", "multistate", "simulate", "check", "reduce-check")
SWEEP_NAMES = ("alpha1", "p")


@dataclass(frozen=True)
class Sweep:
    """A parameter swept from `start` to `stop` (inclusive) in steps of `step`."""

    name: str
    start: float
    stop: float
    step: float

    def __post_init__(self):
        """Validates name and ordering."""
        if self.name not in SWEEP_NAMES:
            raise ConfigError(f"sweep parameter must be one of {', '.join(SWEEP_NAMES)}, got `{self.name}`")
        if not self.start <= self.stop:
            raise ConfigError(f"sweep start {self.start} is above its stop {self.stop}")
        if not self.step > 0:
            raise ConfigError(f"sweep step must be positive, got {self.step}")

    @classmethod
    def parse(cls, value: str) -> "Sweep":
        """Parses `name:start:stop:step`, e.g. `alpha1:0.25:0.95:0.05`."""
        parts = value.split(":")
        if len(parts) != 4:
            raise ConfigError(f"sweep `{value}` must look like name:start:stop:step")
        try:
            start, stop, step = (float(x) for x in parts[1:])
        except ValueError:
            raise ConfigError(f"sweep `{value}` has a bound that is not a number") from None
        return cls(parts[0], start, stop, step)

    def values(self) -> List[float]:
        """Every sweep point; the last one is `stop` when the step divides the range."""
        count = int(math.floor((self.stop - self.start) / self.step + 1e-9))
        return [round(self.start + i * self.step, 12) for i in range(count + 1)]


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration of one command.

    Attributes:
        command (str): One of `COMMANDS`
        alphas (Tuple[float, ...]): Channel gains, linear and strictly increasing
        powers (Tuple[float, ...]): Linear power P; only `frontier` uses more than one
        p (float): Weak-state probability of a two-state model, used when `probs` is not given
        probs (Tuple[float, ...]): State probabilities; uniform for ell > 2 when neither is given
        grid_resolution (float): Step of the allocation grid
        allocation (Tuple[float, ...]): Row-major β₁₁ … β_ℓℓ for single-allocation commands
        sweep (Sweep): Optional sweep for `avgrate`
        rates_file (str): Rates JSON for `check` and `simulate`
        output (str): Output file, `<command>.<format>` when not given
        output_format (str): `json` or `csv`
        output_dir (str): Directory relative output paths are placed in
        seed (int): Seed for `simulate` and the `reduce-check` allocations
        trials (int): Monte Carlo trials
        workers (int): Processes grid evaluation and sampling may use
        refine (bool): Refine the grid optimum with a local search
        strict (bool): Use the printed J₂ index set in the ell-state bounds
        samples (int): Allocations `reduce-check` tests
        backoff (float): Factor the optimal rates are scaled by before `simulate`
        include_outer (bool): Also trace the outer-bound envelope in `frontier`
    """

    command: str
    alphas: Tuple[float, ...] = (0.25, 1.0)
    powers: Tuple[float, ...] = (10.0,)
    p: float = 0.5
    probs: Optional[Tuple[float, ...]] = None
    grid_resolution: float = 0.02
    allocation: Optional[Tuple[float, ...]] = None
    sweep: Optional[Sweep] = None
    rates_file: Optional[str] = None
    output: Optional[str] = None
    output_format: str = "json"
    output_dir: Optional[str] = None
    seed: int = 0
    trials: int = DEFAULT_TRIALS
    workers: int = 1
    refine: bool = True
    strict: bool = False
    samples: int = 200
    backoff: float = 0.99
    include_outer: bool = False

    def __post_init__(self):
        """Validates what can be checked without the command running."""
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command `{self.command}`")
        if self.output_format not in ("json", "csv"):
            raise ConfigError(f"output format must be json or csv, got `{self.output_format}`")
        if not self.powers:
            raise ConfigError("at least one power is required")
        if len(self.powers) > 1 and self.command != "frontier":
            raise ConfigError("only `frontier` accepts several powers")
        if not 0 < self.backoff <= 1:
            raise ConfigError(f"backoff must be in (0, 1], got {self.backoff}")
        if self.workers < 1 or self.samples < 1 or self.trials < 1:
            raise ConfigError("workers, samples and trials must be positive")
        try:
            grid_steps(self.grid_resolution)
            if self.searches_grid:
                require_grid_size(self.grid_resolution, self.ell**2)
        except GridError as e:
            raise ConfigError(f"invalid grid resolution: {e}") from None
        self.model()

    @property
    def ell(self) -> int:
        """Number of channel states."""
        return len(self.alphas)

    @property
    def searches_grid(self) -> bool:
        """True if the command walks the full allocation grid."""
        return self.command in ("frontier", "avgrate") or (self.command == "simulate" and not self.rates_file)

    def model(self, power: Optional[float] = None, **overrides: float) -> ChannelModel:
        """Channel model at `power` (the first configured power by default).

        `alpha1` and `p` overrides replace the weakest gain and the weak-state probability.
        """
        alphas = list(self.alphas)
        if "alpha1" in overrides:
            alphas[0] = overrides["alpha1"]
        p = overrides.get("p", self.p)
        if self.probs is not None and "p" not in overrides:
            probs: Sequence[float] = self.probs
        elif self.ell == 2:
            probs = (p, 1.0 - p)
        else:
            probs = (1.0 / self.ell,) * self.ell
        m = ChannelModel(tuple(alphas), self.powers[0] if power is None else power, tuple(probs))
        report = validate_model(m)
        if not report.ok:
            raise ConfigError(f"invalid channel model: {report}")
        return m

    def power_allocation(self, default: Optional[Sequence[float]] = None) -> PowerAllocation:
        """The configured allocation, else `default`, else uniform."""
        values = self.allocation or default or (1.0 / self.ell**2,) * self.ell**2
        try:
            pa = PowerAllocation.from_flat(values)
        except DomainError as e:
            raise ConfigError(f"invalid allocation: {e}") from None
        if pa.ell != self.ell:
            raise ConfigError(f"allocation has {pa.ell} states, model has {self.ell}")
        return pa

    def require_two_state(self) -> None:
        """Raises `ConfigError` unless the model has two states."""
        if self.ell != 2:
            raise ConfigError(f"`{self.command}` needs a two-state model, got {self.ell} gains")

    def as_dict(self) -> Dict[str, Any]:
        """JSON-ready form, reported with every result."""
        data = asdict(self)
        data["sweep"] = None if self.sweep is None else asdict(self.sweep)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in data.items()}


class BroadcastMac:
    """Runs one command of the rate-region toolkit and writes its result.

    Every command returns its exit status: 0 on success, 1 when a check fails.
    """

    def __init__(
        self,
        config: RunConfig,
        verbose: int = 0,
        color_logging: bool = False,
        apprise_notifiers: Sequence[str] = (),
    ):
        """Configures logging and notifications and logs the resolved configuration.

        Args:
            config (RunConfig): Resolved configuration of the command to run
            verbose (int): How verbose to setup logging, see :func:`setup_logging` for details.
            color_logging (bool): Whether to add color to logging output or not
            apprise_notifiers (Sequence[str]): Apprise URIs for notifications
        """
        setup_logging(verbose, color_logging, apprise_notifiers)
        self.config = config

        logger.debug("Config:")
        for name, value in config.as_dict().items():
            logger.debug(f"  {name}={value!r}")
        logger.debug(f"  {verbose=}")
        logger.debug(f"  {apprise_notifiers=}")

    def run(self) -> int:
        """Dispatches to the configured command."""
        command = getattr(self, self.config.command.replace("-", "_"))
        logger.info(f"Running `{self.config.command}`")
        return command()

    @property
    def output_path(self) -> Path:
        """Where the result file goes."""
        cfg = self.config
        name = cfg.output or f"{cfg.command}.{cfg.output_format}"
        return resolve_output_path(name, cfg.output_dir)

    def _emit(self, result: Dict[str, Any], header: Sequence[str], rows: List[List[Any]]) -> None:
        """Writes `result` as JSON, or `rows` as CSV next to a `.config.json` holding the configuration."""
        path = self.output_path
        if self.config.output_format == "json":
            write_json(path, {"command": self.config.command, "config": self.config.as_dict(), "result": result})
        else:
            write_csv(path, header, rows)
            sidecar = path.with_name(path.name + ".config.json")
            write_json(sidecar, {"command": self.config.command, "config": self.config.as_dict()})

    def _finished(self, summary: str) -> None:
        logger.info(summary)
        notifications.notify_finished(self.config.command, summary)

    def region(self) -> int:
        """Writes the two-state region at the configured allocation."""
        cfg = self.config
        cfg.require_two_state()
        m, pa = cfg.model(), cfg.power_allocation()
        terms = two_state_terms(m, pa)
        region = region_from_terms(terms)
        indices = [(1, 1), (1, 2), (2, 1), (2, 2)]
        rows = [[c.tag, *(dict(c.coeffs).get(i, 0) for i in indices), c.bound] for c in region.constraints]
        self._emit(
            {"allocation": allocation_json(pa), "terms": terms.as_dict(), "constraints": region_json(region)},
            ["tag", "R11", "R12", "R21", "R22", "bound"],
            rows,
        )
        return 0

    def baseline(self) -> int:
        """Writes the two-layer scheme's (R_w, R_s) bounds at the configured split."""
        cfg = self.config
        cfg.require_two_state()
        m, pa = cfg.model(), cfg.power_allocation(default=(0.5, 0.5, 0.0, 0.0))
        try:
            bounds = baseline_region(m, pa)
        except DomainError as e:
            raise ConfigError(str(e)) from None
        constants = stage_constants(m, pa)
        self._emit(
            {"allocation": allocation_json(pa), "rw": bounds.rw, "rs": bounds.rs, "stage_constants": list(constants.a)},
            ["rw", "rs"],
            [[bounds.rw, bounds.rs]],
        )
        return 0

    def outer(self) -> int:
        """Writes the outer-bound caps at the configured allocation."""
        cfg = self.config
        cfg.require_two_state()
        pa = cfg.power_allocation()
        caps = asdict(outer_bound(cfg.model(), pa))
        self._emit({"allocation": allocation_json(pa), **caps}, list(caps), [list(caps.values())])
        return 0

    def frontier(self) -> int:
        """Traces proposed, baseline and (optionally) outer envelopes on one x-ladder per power."""
        cfg = self.config
        cfg.require_two_state()
        rows: List[List[Any]] = []
        records: List[Dict[str, Any]] = []
        slacks: List[Dict[str, float]] = []
        for power in cfg.powers:
            envelopes = trace_frontiers(
                cfg.model(power), cfg.grid_resolution, cfg.include_outer, LADDER_POINTS, cfg.workers
            )
            slack = dominance_slack(envelopes["proposed"], envelopes["baseline"])
            logger.debug(f"P={power}: smallest proposed-minus-baseline gap on the ladder is {slack!r}")
            slacks.append({"power": power, "slack": slack})
            for envelope in envelopes.values():
                rows += frontier_rows(envelope, power)
                records += frontier_json(envelope, power)

        self._emit({"points": records, "dominance_slack": slacks}, FRONTIER_HEADER, rows)
        self._finished(f"Traced {len(rows)} frontier points for P in {list(cfg.powers)}")
        return 0

    def avgrate(self) -> int:
        """Maximum average rate of both schemes at each sweep point."""
        cfg = self.config
        cfg.require_two_state()
        name = cfg.sweep.name if cfg.sweep else "p"
        values = cfg.sweep.values() if cfg.sweep else [cfg.model().probs[0]]

        rows: List[List[Any]] = []
        records: List[Dict[str, Any]] = []
        for value in values:
            try:
                m = cfg.model(**{name: value})
            except ConfigError as e:
                logger.warning(f"Skipping {name}={value}: {e}")
                continue
            proposed = maximize_average_rate(m, cfg.grid_resolution, refine=cfg.refine, workers=cfg.workers)
            base = maximize_average_rate(m, cfg.grid_resolution, baseline=True, refine=cfg.refine, workers=cfg.workers)
            gain = proposed.value - base.value
            logger.info(f"{name}={value}: proposed {proposed.value:.6f}, baseline {base.value:.6f}")
            rows.append([name, value, proposed.value, base.value, gain])
            records.append(
                {
                    "sweep": name,
                    "value": value,
                    "proposed": proposed.value,
                    "baseline": base.value,
                    "gain": gain,
                    "proposed_allocation": allocation_json(proposed.allocation),
                    "proposed_rates": rates_json(proposed.rates),
                    "baseline_allocation": allocation_json(base.allocation),
                    "baseline_rates": rates_json(base.rates),
                }
            )

        self._emit({"rows": records}, AVGRATE_HEADER, rows)
        self._finished(f"Average rates for {len(rows)} {name} values written")
        return 0

    def multistate(self) -> int:
        """Writes the ell-state region at the configured allocation and the decode table with stages."""
        cfg = self.config
        m, pa = cfg.model(), cfg.power_allocation()
        region = multi_state_region(m, pa, strict=cfg.strict)
        table = decode_table(m.ell)
        indices = [(u, v) for u in range(1, m.ell + 1) for v in range(1, m.ell + 1)]
        rows = [[c.tag, *(dict(c.coeffs).get(i, 0) for i in indices), c.bound] for c in region.constraints]
        self._emit(
            {
                "allocation": allocation_json(pa),
                "constraints": region_json(region),
                "decode_table": decode_table_json(table),
            },
            ["tag", *(f"R{u}{v}" for u, v in indices), "bound"],
            rows,
        )
        return 0

    def _simulation_point(self, m: ChannelModel) -> Tuple[RateVector, PowerAllocation]:
        cfg = self.config
        if cfg.rates_file:
            return load_rates(cfg.rates_file, m.ell), cfg.power_allocation()
        best = maximize_average_rate(m, cfg.grid_resolution, refine=cfg.refine, workers=cfg.workers)
        scaled = RateVector(tuple(tuple(r * cfg.backoff for r in row) for row in best.rates.rates))
        logger.info(f"Simulating the optimum {best.value:.6f} scaled by {cfg.backoff}")
        return scaled, best.allocation

    def simulate(self) -> int:
        """Monte Carlo check of the average rate at a rate point."""
        cfg = self.config
        m = cfg.model()
        rv, pa = self._simulation_point(m)
        try:
            report = run_sim(SimConfig(cfg.trials, cfg.seed, m, rv, pa, workers=cfg.workers))
        except InfeasibleRatesError as e:
            logger.error(str(e))
            return 1
        if abs(report.z_score) > 3:
            logger.warning(f"Empirical mean is {report.z_score:.2f} standard errors from the closed form")

        result = {"rates": rates_json(rv), "allocation": allocation_json(pa), **sim_report_json(report)}
        metrics = ["empirical_mean", "std_error", "formula_value", "z_score", "trials", "seed"]
        rows = [[k, result[k]] for k in metrics]
        rows += [[f"count {k}", n] for k, n in result["per_state_counts"].items()]
        self._emit(result, ["metric", "value"], rows)
        self._finished(f"Empirical {report.empirical_mean:.6f} vs closed form {report.formula_value:.6f}")
        return 0

    def check(self) -> int:
        """Checks a rate point against the two-state region and every decoding stage."""
        cfg = self.config
        cfg.require_two_state()
        if not cfg.rates_file:
            raise ConfigError("`check` needs a rates file")
        m, pa = cfg.model(), cfg.power_allocation()
        rv = load_rates(cfg.rates_file, m.ell)

        violated = region_from_terms(two_state_terms(m, pa)).violations(rv)
        stagewise = check_stagewise_feasibility(m, pa, rv)
        feasible = not violated and stagewise.ok

        rows: List[List[Any]] = [["region", "", "", c.tag, c.lhs(rv), c.bound] for c in violated]
        for state, outcome in sorted(stagewise.states.items()):
            rows += [["stage", f"{state[0]},{state[1]}", v.stage, v.tag, v.lhs, v.bound] for v in outcome.violations]
        for c in violated:
            logger.warning(f"Violated {c}")

        self._emit(
            {
                "feasible": feasible,
                "rates": rates_json(rv),
                "allocation": allocation_json(pa),
                "violations": [str(c) for c in violated],
                "stagewise": {
                    f"{p},{q}": {"passed": s.passed, "violations": [str(v) for v in s.violations]}
                    for (p, q), s in sorted(stagewise.states.items())
                },
            },
            ["source", "state", "stage", "tag", "lhs", "bound"],
            rows,
        )
        logger.info("Rates are feasible" if feasible else f"Rates are infeasible ({len(rows)} violations)")
        return 0 if feasible else 1

    def reduce_check(self) -> int:
        """Compares the ell-state bounds with the two-state ones on seeded random allocations."""
        cfg = self.config
        cfg.require_two_state()
        m = cfg.model()
        rng = np.random.default_rng(cfg.seed)
        allocations = [PowerAllocation.two_state(0.0, 0.0, 0.0, 1.0)]
        allocations += [PowerAllocation.from_flat(rng.dirichlet(np.ones(4))) for _ in range(cfg.samples - 1)]

        rows: List[List[Any]] = []
        records: List[Dict[str, Any]] = []
        worst = 0.0
        for i, pa in enumerate(allocations):
            report = reduction_check(m, pa, strict=cfg.strict)
            deviation = report.max_deviation
            worst = max(worst, deviation)
            rows.append([i, *pa.flat(), "inf" if math.isinf(deviation) else deviation, report.passed])
            records.append(
                {
                    "allocation": allocation_json(pa),
                    "max_deviation": None if math.isinf(deviation) else deviation,
                    "missing": list(report.missing),
                    "passed": report.passed,
                }
            )

        passed = all(r["passed"] for r in records)
        self._emit(
            {"passed": passed, "max_deviation": None if math.isinf(worst) else worst, "allocations": records},
            ["index", "b11", "b12", "b21", "b22", "max_deviation", "passed"],
            rows,
        )
        if passed:
            logger.info(f"All {len(allocations)} allocations reduce exactly (max deviation {worst!r})")
        else:
            failed = sum(not r["passed"] for r in records)
            logger.warning(f"Reduction fails on {failed} of {len(allocations)} allocations")
        return 0 if passed else 1

