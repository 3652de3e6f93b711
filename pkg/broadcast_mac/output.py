"""Reading rate/config files and writing CSV/JSON results atomically."""

import csv
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Collection, Dict, Iterable, List, Optional, Sequence

from broadcast_mac.channel import PowerAllocation, RateRegion, RateVector
from broadcast_mac.multi_state import DecodeTable
from broadcast_mac.rate_opt import FrontierPoint
from broadcast_mac.simulation import SimReport
from broadcast_mac.utils import ConfigError

logger = logging.getLogger(__name__)

FRONTIER_HEADER = ["scheme", "x", "y", "power", "b11", "b12", "b21", "b22"]
AVGRATE_HEADER = ["sweep", "value", "proposed", "baseline", "gain"]


def csv_float(x: float) -> str:
    """Plot-grade CSV number, 9 significant digits."""
    return f"{x:.9g}"


def resolve_output_path(path: str, output_dir: Optional[str] = None) -> Path:
    """Relative paths are placed under `output_dir` when it is set."""
    target = Path(path)
    if output_dir and not target.is_absolute():
        target = Path(output_dir) / target
    return target


def _atomic_write(path: Path, text: str) -> None:
    """Writes `text` to a temporary file next to `path`, then renames it over `path`."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.info(f"Wrote {path}")


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Writes a CSV file with a fixed header; floats get 9 significant digits."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([csv_float(v) if isinstance(v, float) else v for v in row])
    _atomic_write(path, buffer.getvalue())


def write_json(path: Path, payload: Dict[str, Any]) -> None:
    """Writes JSON; floats keep their shortest exact repr, so they read back bit-identically."""
    _atomic_write(path, json.dumps(payload, indent=2, allow_nan=False) + "\n")


def _load_json(path: str, what: str) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read {what} `{path}`: {e.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{what} `{path}` is not valid JSON: {e.msg}", (e.lineno, e.colno)) from None


def load_config(path: str, multiple: Collection[str] = ()) -> Dict[str, Any]:
    """Reads a JSON config object whose keys are option names, e.g. `grid_resolution`.

    Dashes in keys are accepted and mapped to underscores, as click names its parameters. Lists are joined
    into comma separated strings, except for the `multiple` keys which stay lists.
    """
    data = _load_json(path, "config file")
    if not isinstance(data, dict):
        raise ConfigError(f"config file `{path}` must contain a JSON object")
    config: Dict[str, Any] = {}
    for key, value in data.items():
        name = key.replace("-", "_")
        if isinstance(value, list) and name not in multiple:
            value = ",".join(str(v) for v in value)
        elif name in multiple and not isinstance(value, list):
            value = [value]
        config[name] = value
    return config


def parse_rates(data: Any, ell: int) -> RateVector:
    """Rates from `{"R11": …, "R12": …}` or `{"rates": [[…], …]}`; missing entries are zero."""
    if isinstance(data, dict) and "rates" in data:
        try:
            rv = RateVector(data["rates"])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"`rates` must be a square list of nonnegative numbers: {e}") from None
        if rv.ell != ell:
            raise ConfigError(f"`rates` is {rv.ell}x{rv.ell} but the model has {ell} states")
        return rv
    if not isinstance(data, dict):
        raise ConfigError("rates must be a JSON object")
    rates = {}
    for key, value in data.items():
        if len(key) != 3 or key[0] != "R" or not key[1:].isdigit():
            raise ConfigError(f"unknown rate key `{key}`, expected e.g. `R12`")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"rate `{key}` must be a number")
        rates[(int(key[1]), int(key[2]))] = float(value)
    try:
        return RateVector.from_mapping(ell, rates)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def load_rates(path: str, ell: int) -> RateVector:
    """Reads a rates file; parse errors carry their line and column."""
    return parse_rates(_load_json(path, "rates file"), ell)


def allocation_json(pa: Optional[PowerAllocation]) -> Optional[Dict[str, Any]]:
    """Allocation as `{"user1": [[…]], "user2": [[…]] | null}`."""
    if pa is None:
        return None
    return {
        "user1": [list(row) for row in pa.user1],
        "user2": None if pa.user2 is None else [list(row) for row in pa.user2],
    }


def rates_json(rv: RateVector) -> List[List[float]]:
    """Rates as a nested list, row u holds R_{u1} … R_{uℓ}."""
    return [list(row) for row in rv.rates]


def region_json(region: RateRegion) -> List[Dict[str, Any]]:
    """Constraints as `{"tag", "coeffs": {"R12": 2, …}, "bound"}` records."""
    return [
        {"tag": c.tag, "coeffs": {f"R{u}{v}": coef for (u, v), coef in c.coeffs}, "bound": c.bound}
        for c in region.constraints
    ]


def decode_table_json(table: DecodeTable) -> List[Dict[str, Any]]:
    """Per-state decode sets and stages; stream (user, u, v) is written `W<user>_<u><v>`."""
    records = []
    for p, q in table:
        stages = table.stages(p, q)
        records.append(
            {
                "state": [p, q],
                "streams": sorted(f"W{i}_{u}{v}" for i, u, v in table.decoded(p, q)),
                "stages": {str(s): sorted(f"W{i}_{u}{v}" for i, u, v in streams) for s, streams in stages.items()},
            }
        )
    return records


def frontier_rows(points: Iterable[FrontierPoint], power: float) -> List[List[Any]]:
    """Rows for `FRONTIER_HEADER`; allocation columns are empty where no allocation reaches x."""
    rows = []
    for pt in points:
        betas: List[Any] = list(pt.allocation.flat()) if pt.allocation is not None else [""] * 4
        rows.append([pt.scheme, pt.x, pt.y, power, *betas])
    return rows


def frontier_json(points: Iterable[FrontierPoint], power: float) -> List[Dict[str, Any]]:
    """Frontier points as records carrying their allocation."""
    return [
        {"scheme": pt.scheme, "x": pt.x, "y": pt.y, "power": power, "allocation": allocation_json(pt.allocation)}
        for pt in points
    ]


def sim_report_json(report: SimReport) -> Dict[str, Any]:
    """SimReport with states written as `"p,q"` keys."""
    return {
        "empirical_mean": report.empirical_mean,
        "std_error": report.std_error,
        "formula_value": report.formula_value,
        "z_score": report.z_score,
        "trials": report.trials,
        "seed": report.seed,
        "generator": report.generator,
        "per_state_counts": {f"{p},{q}": n for (p, q), n in report.per_state_counts.items()},
        "state_rates": {f"{p},{q}": r for (p, q), r in report.state_rates.items()},
    }
