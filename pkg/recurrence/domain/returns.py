"""Return-time sets, gap statistics and windowed Banach lower density."""
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
from loguru import logger

from recurrence.domain.entourage import Entourage
from recurrence.domain.errors import DegenerateWindowError
from recurrence.domain.systems import DynamicalSystem

IntArray = npt.NDArray[np.int64]

DEFAULT_LADDER = (10**2, 10**3, 10**4, 10**5)


@dataclass(frozen=True)
class Window:
    """Half-open integer window ``[start, end)``."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0:
            raise ValueError("window start must be non-negative")
        if self.end <= self.start:
            raise ValueError("window must contain at least one integer")

    def __len__(self) -> int:
        return self.end - self.start


def max_gap(times: Union[Sequence[int], IntArray], window: Window) -> int:
    """Longest visit-free stretch of ``window``."""

    padded = np.concatenate(
        (
            [window.start - 1],
            np.asarray(times, dtype=np.int64),
            [window.end],
        )
    )
    return int(np.diff(padded).max()) - 1


@dataclass(frozen=True, eq=False)
class ReturnProfile:
    """Visits of ``f**n x`` to ``entourage[y]`` for ``n`` in ``window``."""

    base: Any
    target: Any
    entourage: Entourage
    window: Window
    times: IntArray
    max_gap: int

    @property
    def count(self) -> int:
        return int(self.times.size)

    def first_return(self) -> Optional[int]:
        """Smallest positive visit time, if any."""

        positive = self.times[self.times > 0]
        return int(positive[0]) if positive.size else None


def return_set(
    system: DynamicalSystem,
    x: Any,
    y: Any,
    entourage: Entourage,
    window: Window,
) -> ReturnProfile:
    system.ensure_budget(entourage, window.end)
    mask = system.visit_mask(x, y, entourage, window.start, window.end)
    times = np.flatnonzero(mask).astype(np.int64) + window.start
    if not times.size:
        logger.warning(
            "{}: no visits in [{}, {})",
            system.name,
            window.start,
            window.end,
        )
    return ReturnProfile(
        x, y, entourage, window, times, max_gap(times, window)
    )


@dataclass(frozen=True)
class DensityEstimate:
    window_length: int
    horizon: int
    min_frequency: Fraction
    argmin_window: Window


ProfileSource = Union[ReturnProfile, Iterable[int]]


def _indicator(source: ProfileSource, start: int, horizon: int) -> IntArray:
    if isinstance(source, ReturnProfile):
        times = source.times
    else:
        times = np.fromiter(source, dtype=np.int64)
    times = times[(times >= start) & (times < horizon)]
    indicator = np.zeros(horizon - start, dtype=np.int64)
    indicator[times - start] = 1
    return indicator


def _span(
    source: ProfileSource, horizon: int, start: Optional[int]
) -> Tuple[int, int]:
    if not isinstance(source, ReturnProfile):
        return (0 if start is None else start), horizon
    window = source.window
    lo = window.start if start is None else max(start, window.start)
    return lo, min(horizon, window.end)


def banach_lower_density(
    source: ProfileSource,
    window_length: int,
    horizon: int,
    start: Optional[int] = None,
) -> DensityEstimate:
    """Minimum visit frequency over all windows ``[M, M + W)`` inside
    ``[start, horizon)``.

    For a ReturnProfile ``start`` defaults to the start of its scanned
    window and ``horizon`` is clamped to its end; plain visit sets start
    at 0.

    One cumulative pass; this is a finite-horizon estimate only, certified
    lower bounds come from covering certificates.
    """

    start, horizon = _span(source, horizon, start)
    if window_length < 1:
        raise DegenerateWindowError("window length must be positive")
    if horizon - start < window_length:
        raise DegenerateWindowError(
            f"horizon {horizon} leaves no window of length {window_length}",
            window_length=window_length,
            horizon=horizon,
        )
    counts = np.concatenate(
        ([0], np.cumsum(_indicator(source, start, horizon)))
    )
    sliding = counts[window_length:] - counts[:-window_length]
    best = int(np.argmin(sliding))
    corner = start + best
    return DensityEstimate(
        window_length,
        horizon,
        Fraction(int(sliding[best]), window_length),
        Window(corner, corner + window_length),
    )


def density_curve(
    source: ProfileSource,
    horizon: int,
    ladder: Sequence[int] = DEFAULT_LADDER,
    start: Optional[int] = None,
) -> List[DensityEstimate]:
    """``W -> min_frequency(W)`` for the rungs that fit in the horizon."""

    if not isinstance(source, ReturnProfile):
        source = list(source)
    start, horizon = _span(source, horizon, start)
    return [
        banach_lower_density(source, width, horizon, start)
        for width in ladder
        if width <= horizon - start
    ]


def gap_to_density_bound(gap: int) -> Fraction:
    """Lower density guaranteed when every ``gap + 1`` block meets the set."""

    if gap < 0:
        raise ValueError("gap must be non-negative")
    return Fraction(1, gap + 1)


def birkhoff_frequency(profile: ReturnProfile) -> Fraction:
    """Plain ergodic average of visits over the whole window."""

    return Fraction(profile.count, len(profile.window))


def profile_row(
    system: DynamicalSystem, profile: ReturnProfile
) -> Dict[str, Any]:
    return {
        "system": system.name,
        "x": system.describe_point(profile.base),
        "epsilon": profile.entourage.describe(),
        "M": profile.window.start,
        "N": profile.window.end,
        "count": profile.count,
        "max_gap": profile.max_gap,
        "frequency": str(birkhoff_frequency(profile)),
    }


def estimate_row(
    system: DynamicalSystem,
    profile: ReturnProfile,
    estimate: DensityEstimate,
) -> Dict[str, Any]:
    return {
        "system": system.name,
        "x": system.describe_point(profile.base),
        "epsilon": profile.entourage.describe(),
        "M": estimate.argmin_window.start,
        "N": estimate.argmin_window.end,
        "count": int(estimate.min_frequency * estimate.window_length),
        "max_gap": profile.max_gap,
        "frequency": str(estimate.min_frequency),
    }


CSV_COLUMNS = (
    "system",
    "x",
    "epsilon",
    "M",
    "N",
    "count",
    "max_gap",
    "frequency",
)
