"""Density reports shared by the discrete, amenable and flow verifiers."""
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Optional, Tuple, Union

Number = Union[Fraction, float]

REPORT_COLUMNS = (
    "system",
    "x",
    "epsilon",
    "M",
    "N",
    "count",
    "max_gap",
    "frequency",
    "margin",
)


def encode_number(value: Optional[Number]) -> Any:
    """JSON form: exact rationals as strings, reals as floats."""

    if isinstance(value, Fraction):
        return str(value)
    return value


@dataclass(frozen=True)
class PointDensity:
    """Worst window found for one base point."""

    label: str
    min_frequency: Number
    window: Tuple[Any, Any]
    margin: Number
    count: Number
    max_gap: Optional[int] = None
    mean_frequency: Optional[Number] = None

    def to_payload(self) -> Dict[str, Any]:
        return {
            "x": self.label,
            "min_frequency": encode_number(self.min_frequency),
            "window": [list(w) if isinstance(w, tuple) else w
                       for w in self.window],
            "margin": encode_number(self.margin),
            "count": encode_number(self.count),
            "max_gap": self.max_gap,
            "mean_frequency": encode_number(self.mean_frequency),
        }


@dataclass(frozen=True)
class DensityReport:
    """Per-point windowed minima against a certified lower bound.

    ``certified_bound`` already includes the discretisation slack of the
    window size, so ``margin = min_measured - certified_bound`` must be
    non-negative on any minimal system.
    """

    system: str
    system_digest: str
    entourage: str
    asymptotic_bound: Fraction
    certified_bound: Number
    window: Any
    horizon: Any
    rows: Tuple[PointDensity, ...]
    label: str = "banach"
    continuous: bool = False
    approximate_grid: bool = False
    certificate: Dict[str, Any] = field(default_factory=dict)

    @property
    def min_measured(self) -> Number:
        return min(row.min_frequency for row in self.rows)

    @property
    def margin(self) -> Number:
        return self.min_measured - self.certified_bound

    @property
    def violations(self) -> Tuple[PointDensity, ...]:
        return tuple(row for row in self.rows if row.margin < 0)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_payload(self) -> Dict[str, Any]:
        return {
            "system": self.system,
            "system_digest": self.system_digest,
            "epsilon": self.entourage,
            "label": self.label,
            "continuous": self.continuous,
            "approximate_grid": self.approximate_grid,
            "window": self.window,
            "horizon": self.horizon,
            "asymptotic_bound": encode_number(self.asymptotic_bound),
            "certified_bound": encode_number(self.certified_bound),
            "min_measured": encode_number(self.min_measured),
            "margin": encode_number(self.margin),
            "passed": self.passed,
            "certificate": self.certificate,
            "violations": [row.to_payload() for row in self.violations],
            "points": [row.to_payload() for row in self.rows],
        }

    def csv_rows(self) -> List[Dict[str, Any]]:
        rows = []
        for row in self.rows:
            start, end = row.window
            rows.append(
                {
                    "system": self.system,
                    "x": row.label,
                    "epsilon": self.entourage,
                    "M": _cell(start),
                    "N": _cell(end),
                    "count": encode_number(row.count),
                    "max_gap": "" if row.max_gap is None else row.max_gap,
                    "frequency": encode_number(row.min_frequency),
                    "margin": encode_number(row.margin),
                }
            )
        return rows


def _cell(value: Any) -> Any:
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    return value
