"""Linear flows ``t . x = x + t v`` on the 2-torus.

Visits to a max-metric ball are products of per-coordinate arcs, so the
visit set of an orbit is an exact union of intervals.  The only
discretisation is the time-``alpha`` skeleton used for the covering
certificate.
"""
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import partial
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
from loguru import logger
from scipy import integrate

from recurrence.domain.circle import CirclePoint, continued_fraction
from recurrence.domain.covering import (
    BaseGrid,
    CoveringCertificate,
    Mapper,
    torus_covering_K,
)
from recurrence.domain.entourage import Entourage, MetricBall
from recurrence.domain.errors import (
    DegenerateWindowError,
    NotMinimalError,
)
from recurrence.domain.report import DensityReport, PointDensity
from recurrence.domain.systems import (
    BoolArray,
    DynamicalSystem,
    TorusPoint,
    TorusZdAction,
    _require_ball,
    _require_kind,
)

FloatArray = npt.NDArray[np.float64]

# Relative rounding of one float product ``t * v``.
FLOAT_EPS = 2.0**-52
QUADRATURE_STEPS_PER_ALPHA = 100


def _coords(point: TorusPoint) -> FloatArray:
    return np.array([c.to_float() for c in point.coords], dtype=np.float64)


@dataclass(frozen=True)
class LinearFlow(DynamicalSystem):
    """Flow ``t . x = x + t v`` on ``T^2``; ``iterate`` is the time-n map."""

    direction: Tuple[float, float]
    name: str = "flow"

    def __post_init__(self) -> None:
        if len(self.direction) != 2:
            raise ValueError("linear flows live on the 2-torus")
        if not all(math.isfinite(v) for v in self.direction):
            raise ValueError("direction must be finite")

    @classmethod
    def golden(cls, name: str = "golden-flow") -> "LinearFlow":
        return cls((1.0, (math.sqrt(5.0) - 1.0) / 2.0), name)

    @property
    def speed(self) -> float:
        return math.hypot(*self.direction)

    def slope_evidence(self, terms: int = 12) -> Tuple[int, ...]:
        """Partial quotients of the slope; a long expansion with no
        terminating quotient is the (numerical) sign of minimality."""

        v1, v2 = self.direction
        if v1 == 0.0:
            return ()
        return continued_fraction(Fraction(v2) / Fraction(v1), terms)

    def flow(self, t: float, point: TorusPoint) -> TorusPoint:
        _require_kind(point, TorusPoint, self)
        coords = (_coords(point) + t * np.asarray(self.direction)) % 1.0
        return TorusPoint(tuple(CirclePoint.from_float(c) for c in coords))

    def iterate(self, point: TorusPoint, n: int) -> TorusPoint:
        if n < 0:
            raise ValueError("iterate needs n >= 0")
        return self.flow(float(n), point)

    def distance(self, x: TorusPoint, y: TorusPoint) -> float:
        return max(float(a.distance(b)) for a, b in zip(x.coords, y.coords))

    def in_entourage(
        self, entourage: Entourage, x: TorusPoint, y: TorusPoint
    ) -> bool:
        ball = _require_ball(self, entourage)
        return self.distance(x, y) < ball.radius

    def indicator(
        self, x: TorusPoint, y: TorusPoint, ball: MetricBall, times: FloatArray
    ) -> BoolArray:
        """``t . x in ball[y]`` evaluated pointwise at ``times``."""

        start = _coords(x)
        target = _coords(y)
        inside = np.ones(np.shape(times), dtype=np.bool_)
        for j, v in enumerate(self.direction):
            diff = (start[j] - target[j] + times * v) % 1.0
            inside &= np.minimum(diff, 1.0 - diff) < ball.radius
        return inside

    def visit_mask(
        self,
        x: TorusPoint,
        y: TorusPoint,
        entourage: Entourage,
        first: int,
        stop: int,
    ) -> BoolArray:
        ball = _require_ball(self, entourage)
        times = np.arange(first, stop, dtype=np.float64)
        return self.indicator(x, y, ball, times)

    def step_error(self) -> float:
        return FLOAT_EPS * (self.speed + 1.0)

    def skeleton(self, alpha: float) -> TorusZdAction:
        """Time-``alpha`` map as a ``Z``-action on ``T^2``."""

        if alpha <= 0:
            raise ValueError("skeleton time must be positive")
        step = tuple(
            CirclePoint.from_float((alpha * v) % 1.0) for v in self.direction
        )
        error = FLOAT_EPS * (alpha * self.speed + 1.0)
        return TorusZdAction((step,), (error,), f"{self.name}@{alpha:.6g}")

    def descriptor(self) -> Dict[str, Any]:
        return {"kind": "flow", "direction": list(self.direction)}

    def describe_point(self, point: TorusPoint) -> str:
        return "(" + ",".join(repr(c.to_float()) for c in point.coords) + ")"


@dataclass(frozen=True, eq=False)
class VisitIntervals:
    """Disjoint sorted intervals of ``[start, end]`` spent inside the ball."""

    start: float
    end: float
    intervals: FloatArray

    @property
    def total_measure(self) -> float:
        if not len(self.intervals):
            return 0.0
        return float((self.intervals[:, 1] - self.intervals[:, 0]).sum())

    def cumulative(self, times: FloatArray) -> FloatArray:
        """Visit measure inside ``[start, t]`` for every ``t`` in ``times``."""

        if not len(self.intervals):
            return np.zeros(np.shape(times))
        lows, highs = self.intervals[:, 0], self.intervals[:, 1]
        full = np.concatenate(([0.0], np.cumsum(highs - lows)))
        index = np.searchsorted(lows, times, side="right")
        partial_ = np.where(
            index > 0,
            np.minimum(times, highs[np.maximum(index - 1, 0)])
            - lows[np.maximum(index - 1, 0)],
            0.0,
        )
        return full[np.maximum(index - 1, 0)] + np.maximum(partial_, 0.0)

    def measure_between(self, a: float, b: float) -> float:
        values = self.cumulative(np.array([a, b], dtype=np.float64))
        return float(values[1] - values[0])


def _axis_intervals(
    offset: float, velocity: float, radius: float, start: float, end: float
) -> FloatArray:
    """Times in ``[start, end]`` with ``|offset + t v| < radius`` on the
    circle."""

    whole = np.array([[start, end]], dtype=np.float64)
    if radius > 0.5:
        return whole
    if velocity == 0.0:
        distance = min(offset % 1.0, 1.0 - offset % 1.0)
        return whole if distance < radius else np.empty((0, 2))
    low_position = offset + min(start * velocity, end * velocity)
    high_position = offset + max(start * velocity, end * velocity)
    ks = np.arange(
        math.floor(low_position - radius),
        math.ceil(high_position + radius) + 1,
    )
    lows = (ks - radius - offset) / velocity
    highs = (ks + radius - offset) / velocity
    if velocity < 0:
        lows, highs = highs[::-1], lows[::-1]
    lows = np.maximum(lows, start)
    highs = np.minimum(highs, end)
    keep = highs > lows
    return np.stack((lows[keep], highs[keep]), axis=1)


def _intersect(a: FloatArray, b: FloatArray) -> FloatArray:
    """Intersection of two disjoint sorted interval lists."""

    if not len(a) or not len(b):
        return np.empty((0, 2))
    first = np.searchsorted(b[:, 1], a[:, 0], side="right")
    last = np.searchsorted(b[:, 0], a[:, 1], side="left")
    counts = np.maximum(last - first, 0)
    total = int(counts.sum())
    if not total:
        return np.empty((0, 2))
    left = np.repeat(np.arange(len(a)), counts)
    offsets = np.repeat(np.cumsum(counts) - counts, counts)
    right = np.arange(total) - offsets + np.repeat(first, counts)
    lows = np.maximum(a[left, 0], b[right, 0])
    highs = np.minimum(a[left, 1], b[right, 1])
    keep = highs > lows
    return np.stack((lows[keep], highs[keep]), axis=1)


def visit_intervals(
    flow: LinearFlow,
    x: TorusPoint,
    ball: MetricBall,
    start: float,
    end: float,
    target: Optional[TorusPoint] = None,
) -> VisitIntervals:
    """``{t in [start, end] : t . x in ball[target]}``; ``target`` defaults
    to ``x``."""

    if end <= start:
        raise DegenerateWindowError("time window must have positive length")
    flow.ensure_budget(ball, math.ceil(max(abs(start), abs(end))))
    y = x if target is None else target
    offsets = _coords(x) - _coords(y)
    result = None
    for offset, velocity in zip(offsets, flow.direction):
        axis = _axis_intervals(offset, velocity, ball.radius, start, end)
        result = axis if result is None else _intersect(result, axis)
    assert result is not None
    return VisitIntervals(start, end, result)


@dataclass(frozen=True)
class QuadratureEstimate:
    measure: float
    error_bound: float


def _crossing_count(flow: LinearFlow, start: float, end: float) -> int:
    return sum(
        2 * (math.ceil(abs(v) * (end - start)) + 1)
        for v in flow.direction
        if v != 0.0
    )


def quadrature_measure(
    flow: LinearFlow,
    x: TorusPoint,
    ball: MetricBall,
    start: float,
    end: float,
    step: Optional[float] = None,
) -> QuadratureEstimate:
    """Midpoint rule on the visit indicator.

    Each boundary crossing of the indicator costs at most one cell, so the
    error is bounded by ``step`` times the number of crossings.
    """

    if step is None:
        step = ball.radius / (QUADRATURE_STEPS_PER_ALPHA * flow.speed)
    cells = max(1, math.ceil((end - start) / step))
    width = (end - start) / cells
    midpoints = start + (np.arange(cells) + 0.5) * width
    inside = flow.indicator(x, x, ball, midpoints)
    return QuadratureEstimate(
        float(inside.sum()) * width,
        width * _crossing_count(flow, start, end),
    )


def refined_quadrature(
    flow: LinearFlow, x: TorusPoint, ball: MetricBall, start: float, end: float
) -> float:
    """Adaptive quadrature between consecutive per-coordinate crossings.

    Breakpoints come from each coordinate separately and membership is
    evaluated by direct distance, so the result does not depend on the
    interval intersection in ``visit_intervals``.
    """

    points = [start, end]
    for velocity in flow.direction:
        edges = _axis_intervals(0.0, velocity, ball.radius, start, end)
        points.extend(edges.ravel().tolist())
    breaks = np.unique(np.clip(points, start, end))

    def inside(t: float) -> float:
        return float(flow.indicator(x, x, ball, np.array([t]))[0])

    total = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b > a:
            value, _ = integrate.quad(inside, a, b, limit=8)
            total += value
    return total


@dataclass(frozen=True)
class Lemma16Constants:
    """``t . y in delta[x]`` implies ``[t, t + alpha] . y`` stays in
    ``entourage[x]``."""

    entourage: MetricBall
    delta: float
    alpha: float

    def to_payload(self) -> Dict[str, Any]:
        return {
            "epsilon": self.entourage.describe(),
            "delta": self.delta,
            "alpha": self.alpha,
        }


def lemma16_constants(flow: LinearFlow, ball: MetricBall) -> Lemma16Constants:
    speed = flow.speed
    if speed == 0.0:
        raise NotMinimalError(f"{flow.name}: a stationary flow is not minimal")
    return Lemma16Constants(ball, ball.radius / 2, ball.radius / (2 * speed))


@dataclass(frozen=True)
class Lemma16Sample:
    samples: int
    violations: int


def sample_lemma16(
    flow: LinearFlow,
    constants: Lemma16Constants,
    samples: int = 10**4,
    seed: int = 0,
    horizon: float = 100.0,
    probes: int = 17,
) -> Lemma16Sample:
    """Random triples ``(x, t, y)`` with ``t . y`` placed inside
    ``delta[x]``, checked along ``[t, t + alpha]``."""

    rng = np.random.default_rng(seed)
    direction = np.asarray(flow.direction)
    x = rng.random((samples, 2))
    t = rng.random(samples) * horizon
    shift = rng.uniform(-constants.delta, constants.delta, (samples, 2))
    y = (x + shift - t[:, None] * direction) % 1.0
    bad = np.zeros(samples, dtype=np.bool_)
    for s in np.linspace(0.0, constants.alpha, probes):
        moved = (y + (t + s)[:, None] * direction) % 1.0
        diff = (moved - x) % 1.0
        distance = np.minimum(diff, 1.0 - diff).max(axis=1)
        bad |= distance >= constants.entourage.radius
    return Lemma16Sample(samples, int(bad.sum()))


def flow_certified_bound(
    alpha: float, K: int, window_length: float
) -> float:
    """Each skeleton block of ``K + 1`` steps credits one full interval of
    length ``alpha`` inside the window."""

    blocks = math.floor((window_length - alpha) / ((K + 1) * alpha))
    return alpha * max(blocks, 0) / window_length


def _sliding_minimum(
    visits: VisitIntervals, window_length: float
) -> Tuple[float, float]:
    """Least visit measure over ``[a, a + W]`` inside the horizon; the
    measure is piecewise linear in ``a`` so breakpoints suffice."""

    latest = visits.end - window_length
    candidates = [visits.start, latest]
    if len(visits.intervals):
        edges = visits.intervals.ravel()
        candidates.extend(edges.tolist())
        candidates.extend((edges - window_length).tolist())
    starts = np.clip(np.unique(candidates), visits.start, latest)
    measures = visits.cumulative(starts + window_length) - visits.cumulative(
        starts
    )
    best = int(np.argmin(measures))
    return float(measures[best]), float(starts[best])


def _scan_flow_point(
    flow: LinearFlow,
    ball: MetricBall,
    window_length: float,
    horizon: float,
    floor: float,
    point: TorusPoint,
) -> PointDensity:
    visits = visit_intervals(flow, point, ball, 0.0, horizon)
    measure, corner = _sliding_minimum(visits, window_length)
    frequency = measure / window_length
    return PointDensity(
        flow.describe_point(point),
        frequency,
        (corner, corner + window_length),
        frequency - floor,
        measure,
        None,
        visits.total_measure / horizon,
    )


def flow_uniform_bound(
    flow: LinearFlow,
    ball: MetricBall,
    grid: Union[Sequence[TorusPoint], BaseGrid],
    window_length: float,
    horizon: float,
    cover: Optional[MetricBall] = None,
    certificate: Optional[CoveringCertificate] = None,
    mapper: Mapper = map,
) -> DensityReport:
    """Windowed visit measure against the skeleton credit bound."""

    if window_length <= 0 or horizon < window_length:
        raise DegenerateWindowError(
            f"horizon {horizon} leaves no window of length {window_length}",
            window_length=window_length,
            horizon=horizon,
        )
    constants = lemma16_constants(flow, ball)
    skeleton = flow.skeleton(constants.alpha)
    if certificate is None:
        certificate = torus_covering_K(skeleton, cover or ball.third())
    if certificate.entourage.radius > constants.delta:
        raise ValueError(
            f"skeleton cover {certificate.entourage.describe()} exceeds "
            f"delta {constants.delta:g}"
        )
    if certificate.system_digest != skeleton.digest():
        raise ValueError("certificate belongs to a different skeleton")
    flow.ensure_budget(ball, math.ceil(horizon))
    floor = flow_certified_bound(constants.alpha, certificate.K, window_length)
    points = grid.points if isinstance(grid, BaseGrid) else tuple(grid)
    if not points:
        raise ValueError("grid of base points is empty")
    scan = partial(
        _scan_flow_point, flow, ball, window_length, horizon, floor
    )
    rows = tuple(mapper(scan, points))
    report = DensityReport(
        flow.name,
        flow.digest(),
        ball.describe(),
        Fraction(1, certificate.K + 1),
        floor,
        window_length,
        horizon,
        rows,
        label="time-banach",
        continuous=True,
        approximate_grid=True,
        certificate={**certificate.to_payload(), **constants.to_payload()},
    )
    for row in report.violations:
        logger.error(
            "{}: x={} window={} average {:.6g} below {:.6g}",
            flow.name,
            row.label,
            row.window,
            row.min_frequency,
            floor,
        )
    return report
