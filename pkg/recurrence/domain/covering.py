"""Covering constants and the uniform recurrence bound for cascades.

A certificate at entourage ``e`` records a finite ``K`` such that every
orbit segment ``{f**k y : 0 <= k <= K}`` meets ``e[x]`` for all ``x`` and
``y``.  Visits to ``e[x]`` then never leave a gap longer than ``K``, which
bounds the Banach lower density below by ``1 / (K + 1)``.
"""
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import partial
from typing import (
    Any,
    Callable,
    Dict,
    FrozenSet,
    Iterable,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
import numpy.typing as npt
from loguru import logger
from scipy.spatial import cKDTree

from recurrence.domain.circle import (
    SCALE,
    CirclePoint,
    orbit_ticks,
)
from recurrence.domain.entourage import (
    Cylinder,
    Entourage,
    MetricBall,
    parse_entourage,
)
from recurrence.domain.errors import (
    BudgetExceededError,
    CoveringSearchError,
    IncomparablePointsError,
    NotMinimalError,
)
from recurrence.domain.report import DensityReport, PointDensity
from recurrence.domain.returns import (
    Window,
    banach_lower_density,
    birkhoff_frequency,
    return_set,
)
from recurrence.domain.systems import (
    DEFAULT_MAX_WORD_LENGTH,
    DynamicalSystem,
    RotationSystem,
    SubstitutionSystem,
    SymbolicPoint,
    TorusPoint,
    TorusZdAction,
)

Mapper = Callable[[Callable[[Any], Any], Iterable[Any]], Iterator[Any]]

DEFAULT_K_MAX = 10**5
DEFAULT_TORUS_K_MAX = 4096
# Grid cells per radius used by the non-product torus covering test.
GRID_CELLS_PER_RADIUS = 8
# Orbits are converted to floats for the neighbour search.
FLOAT_SLOP = 1e-12
# Largest orbit box the grid search materialises.
MAX_ORBIT_POINTS = 2_000_000


def _digest(values: Iterable[Any]) -> str:
    payload = json.dumps(list(values), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True, eq=False)
class RotationEvidence:
    """Sorted orbit ``{k alpha : 0 <= k <= K}`` in ticks and its gaps."""

    orbit: Tuple[int, ...]
    max_gap: Fraction
    distinct_gaps: Tuple[Fraction, ...]
    witness_gap: Optional[Fraction] = None

    def to_payload(self) -> Dict[str, Any]:
        return {
            "kind": "rotation",
            "points": len(self.orbit),
            "max_gap": str(self.max_gap),
            "distinct_gaps": [str(g) for g in self.distinct_gaps],
            "witness_gap": (
                None if self.witness_gap is None else str(self.witness_gap)
            ),
            "digest": _digest(self.orbit),
        }


@dataclass(frozen=True)
class SubshiftEvidence:
    """Every legal word of ``repetitivity`` symbols contains all
    ``words``."""

    repetitivity: int
    words: Tuple[str, ...]
    witness_word: Optional[str] = None
    witness_missing: Optional[str] = None

    def to_payload(self) -> Dict[str, Any]:
        return {
            "kind": "subshift",
            "repetitivity": self.repetitivity,
            "words": list(self.words),
            "witness_word": self.witness_word,
            "witness_missing": self.witness_missing,
            "digest": _digest(self.words),
        }


@dataclass(frozen=True, eq=False)
class TorusEvidence:
    """Exponent box whose orbit is dense at the certificate radius."""

    method: str
    worst_distance: float
    grid_spacing: Optional[float] = None
    axes: Tuple[RotationEvidence, ...] = ()
    witness_point: Optional[Tuple[float, ...]] = None

    def to_payload(self) -> Dict[str, Any]:
        return {
            "kind": "torus",
            "method": self.method,
            "worst_distance": self.worst_distance,
            "grid_spacing": self.grid_spacing,
            "axes": [axis.to_payload() for axis in self.axes],
            "witness_point": (
                None if self.witness_point is None
                else list(self.witness_point)
            ),
        }


@dataclass(frozen=True, eq=False)
class StoredEvidence:
    """Evidence read back from a saved certificate."""

    payload: Dict[str, Any]

    def to_payload(self) -> Dict[str, Any]:
        return self.payload


Evidence = Union[
    RotationEvidence, SubshiftEvidence, TorusEvidence, StoredEvidence
]


@dataclass(frozen=True, eq=False)
class CoveringCertificate:
    system_digest: str
    entourage: Entourage
    K: int
    evidence: Evidence
    slack: float
    exponents: Tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.K < 0:
            raise ValueError("K must be non-negative")
        if not self.exponents:
            object.__setattr__(self, "exponents", (self.K,))

    @property
    def cardinality(self) -> int:
        """``|K|`` for the exponent box ``prod [0, k_i]``."""

        return math.prod(k + 1 for k in self.exponents)

    def to_payload(self) -> Dict[str, Any]:
        evidence = self.evidence.to_payload()
        return {
            "system_digest": self.system_digest,
            "epsilon": self.entourage.describe(),
            "K": self.K,
            "exponents": list(self.exponents),
            "evidence": evidence,
            "evidence_digest": _digest([evidence]),
            "slack": self.slack,
        }

    @classmethod
    def from_payload(cls, payload: Dict[str, Any]) -> "CoveringCertificate":
        """Rebuild a saved certificate; the evidence digest must match."""

        evidence = payload["evidence"]
        if _digest([evidence]) != payload["evidence_digest"]:
            raise ValueError("certificate evidence digest mismatch")
        return cls(
            payload["system_digest"],
            parse_entourage(payload["epsilon"]),
            int(payload["K"]),
            StoredEvidence(evidence),
            float(payload["slack"]),
            tuple(int(k) for k in payload["exponents"]),
        )


def _gap_ticks(orbit: npt.NDArray[np.uint64]) -> List[int]:
    points = np.sort(orbit)
    inner = np.diff(points).tolist()
    wrap = SCALE - int(points[-1]) + int(points[0])
    return [int(g) for g in inner] + [wrap]


def _max_gap(alpha: int, K: int) -> int:
    return max(_gap_ticks(orbit_ticks(0, alpha, 0, K + 1)))


def rotation_covering_K(
    system: RotationSystem,
    ball: MetricBall,
    k_max: int = DEFAULT_K_MAX,
) -> CoveringCertificate:
    """Smallest ``K`` whose orbit segment leaves no circular gap of
    ``2 * radius`` or more.

    The maximal gap never grows when points are added, so the search is a
    bisection between 0 and ``k_max``.
    """

    if not isinstance(ball, MetricBall):
        raise IncomparablePointsError("rotation covering needs a metric ball")
    limit = 2 * Fraction(ball.radius) * SCALE

    def covers(K: int) -> bool:
        return _max_gap(system.alpha.frac, K) < limit

    if not covers(k_max):
        gap = Fraction(_max_gap(system.alpha.frac, k_max), SCALE)
        raise NotMinimalError(
            f"{system.name}: not minimal at this epsilon; max gap "
            f"{float(gap):.6g} after {k_max} steps is not below "
            f"{2 * ball.radius:g}",
            max_gap=float(gap),
            k_max=k_max,
            continued_fraction=list(system.continued_fraction()),
        )
    low, high = -1, k_max
    while high - low > 1:
        middle = (low + high) // 2
        if covers(middle):
            high = middle
        else:
            low = middle
    K = high
    system.ensure_budget(ball, K)
    orbit = orbit_ticks(0, system.alpha.frac, 0, K + 1)
    gaps = _gap_ticks(orbit)
    widest = Fraction(max(gaps), SCALE)
    slack = ball.radius - float(widest) / 2 - system.accumulated_error(K)
    if slack <= 0:
        raise BudgetExceededError(
            f"{system.name}: covering at K={K} has no slack left",
            K=K,
        )
    witness = (
        Fraction(_max_gap(system.alpha.frac, K - 1), SCALE) if K else None
    )
    logger.debug("{}: K={} at radius {}", system.name, K, ball.radius)
    return CoveringCertificate(
        system.digest(),
        ball,
        K,
        RotationEvidence(
            tuple(int(p) for p in np.sort(orbit)),
            widest,
            tuple(sorted({Fraction(g, SCALE) for g in gaps})),
            witness,
        ),
        slack,
    )


def _contains_all(word: str, needed: FrozenSet[str], depth: int) -> bool:
    return needed <= {
        word[i:i + depth] for i in range(len(word) - depth + 1)
    }


def subshift_covering_K(
    system: SubstitutionSystem,
    cylinder: Cylinder,
    k_max: int = DEFAULT_MAX_WORD_LENGTH,
) -> CoveringCertificate:
    """Smallest ``K`` such that every legal word of ``K + depth`` symbols
    contains every legal word of ``depth`` symbols."""

    if not isinstance(cylinder, Cylinder):
        raise IncomparablePointsError("subshift covering needs a cylinder")
    system.require_primitive()
    depth = cylinder.depth
    limit = depth + k_max
    needed = system.language_words(depth, limit)
    witness_word: Optional[str] = None
    witness_missing: Optional[str] = None
    for K in range(k_max + 1):
        if len(needed) == 1:
            failing: List[str] = []
        else:
            failing = sorted(
                word
                for word in system.language_words(K + depth, limit)
                if not _contains_all(word, needed, depth)
            )
        if not failing:
            logger.debug("{}: repetitivity {} at depth {}",
                         system.name, K + depth, depth)
            return CoveringCertificate(
                system.digest(),
                cylinder,
                K,
                SubshiftEvidence(
                    K + depth,
                    tuple(sorted(needed)),
                    witness_word,
                    witness_missing,
                ),
                0.0,
            )
        witness_word = failing[0]
        witness_missing = max(
            needed - {
                witness_word[i:i + depth]
                for i in range(len(witness_word) - depth + 1)
            }
        )
    raise CoveringSearchError(
        f"{system.name}: no covering within K <= {k_max}; "
        f"{witness_missing!r} still missing from {witness_word!r}",
        missing=witness_missing,
        word=witness_word,
    )


def _box_orbit(action: TorusZdAction, k: int) -> npt.NDArray[np.float64]:
    """Points ``n . 0`` for ``n`` in ``[0, k]^d`` as floats in ``[0, 1)``."""

    ranges = [range(k + 1)] * action.d
    exponents = np.array(list(itertools.product(*ranges)), dtype=np.int64)
    coords = []
    for j in range(action.m):
        total = np.zeros(len(exponents), dtype=np.uint64)
        for i in range(action.d):
            step = np.uint64(action.generators[i][j].frac)
            total = total + exponents[:, i].astype(np.uint64) * step
        coords.append(np.mod(total.astype(np.float64) / SCALE, 1.0))
    return np.stack(coords, axis=1)


def _grid(m: int, cells: int) -> npt.NDArray[np.float64]:
    centres = (np.arange(cells) + 0.5) / cells
    mesh = np.meshgrid(*([centres] * m), indexing="ij")
    return np.stack([axis.ravel() for axis in mesh], axis=1)


def _grid_covering(
    action: TorusZdAction, ball: MetricBall, k_max: int
) -> CoveringCertificate:
    k_max = min(k_max, math.floor(MAX_ORBIT_POINTS ** (1 / action.d)) - 1)
    cells = math.ceil(GRID_CELLS_PER_RADIUS / ball.radius)
    half = 0.5 / cells
    grid = _grid(action.m, cells)

    def worst(k: int) -> Tuple[float, int]:
        tree = cKDTree(_box_orbit(action, k), boxsize=1.0)
        distances, _ = tree.query(grid, p=np.inf)
        index = int(np.argmax(distances))
        return float(distances[index]), index

    def covers(k: int) -> bool:
        return worst(k)[0] + half + FLOAT_SLOP < ball.radius

    low, high = -1, 0
    while not covers(high):
        if high >= k_max:
            distance, index = worst(high)
            raise CoveringSearchError(
                f"{action.name}: orbit box [0, {high}]^{action.d} leaves "
                f"{tuple(grid[index])} at distance {distance:.4g}",
                densest=distance,
                k=high,
            )
        low, high = high, min(max(2 * high, 1), k_max)
    while high - low > 1:
        middle = (low + high) // 2
        if covers(middle):
            high = middle
        else:
            low = middle
    distance, _ = worst(high)
    witness = None
    if high:
        _, index = worst(high - 1)
        witness = tuple(float(v) for v in grid[index])
    exponents = (high,) * action.d
    error = action.vector_error(exponents)
    slack = ball.radius - distance - half - error
    logger.warning(
        "{}: non-product covering certified on a grid of spacing {:.3g}",
        action.name,
        2 * half,
    )
    return CoveringCertificate(
        action.digest(),
        ball,
        high,
        TorusEvidence("grid", distance, 2 * half, (), witness),
        slack,
        exponents,
    )


def torus_covering_K(
    action: TorusZdAction,
    ball: MetricBall,
    k_max: int = DEFAULT_TORUS_K_MAX,
) -> CoveringCertificate:
    """Exponent box ``prod [0, k_i]`` whose orbit meets every ball.

    Product actions reduce to one rotation per coordinate because the
    max-metric ball is a product of arcs; other actions are certified on
    a grid whose cells are smaller than the remaining slack.
    """

    if not isinstance(ball, MetricBall):
        raise IncomparablePointsError("torus covering needs a metric ball")
    if action.is_product():
        axes = [
            rotation_covering_K(
                RotationSystem(
                    generator[i], action.errors[i], f"{action.name}[{i}]"
                ),
                ball,
                k_max,
            )
            for i, generator in enumerate(action.generators)
        ]
        exponents = tuple(axis.K for axis in axes)
        evidence = tuple(
            axis.evidence
            for axis in axes
            if isinstance(axis.evidence, RotationEvidence)
        )
        worst = max(float(e.max_gap) / 2 for e in evidence)
        certificate = CoveringCertificate(
            action.digest(),
            ball,
            max(exponents),
            TorusEvidence("product", worst, None, evidence),
            min(axis.slack for axis in axes),
            exponents,
        )
    else:
        certificate = _grid_covering(action, ball, k_max)
    action.ensure_budget(ball, sum(certificate.exponents))
    return certificate


def covering_certificate(
    system: DynamicalSystem, entourage: Entourage, k_max: Optional[int] = None
) -> CoveringCertificate:
    """Dispatch to the covering search matching ``system``."""

    if isinstance(system, RotationSystem):
        if not isinstance(entourage, MetricBall):
            raise IncomparablePointsError("rotations use metric balls")
        return rotation_covering_K(system, entourage, k_max or DEFAULT_K_MAX)
    if isinstance(system, SubstitutionSystem):
        if not isinstance(entourage, Cylinder):
            raise IncomparablePointsError("subshifts use cylinders")
        return subshift_covering_K(
            system, entourage, k_max or DEFAULT_MAX_WORD_LENGTH
        )
    if isinstance(system, TorusZdAction):
        if not isinstance(entourage, MetricBall):
            raise IncomparablePointsError("torus actions use metric balls")
        return torus_covering_K(
            system, entourage, k_max or DEFAULT_TORUS_K_MAX
        )
    raise IncomparablePointsError(f"no covering search for {system.name}")


def certified_bound(certificate: CoveringCertificate) -> Fraction:
    """``1 / (K + 1)``: lower Banach density of every return-time set."""

    return Fraction(1, certificate.K + 1)


@dataclass(frozen=True)
class BaseGrid:
    """Finite stand-in for the infimum over all base points."""

    points: Tuple[Any, ...]
    approximate: bool
    description: str


def default_grid(
    system: DynamicalSystem, entourage: Entourage, size: Optional[int] = None
) -> BaseGrid:
    if isinstance(system, RotationSystem) and isinstance(
        entourage, MetricBall
    ):
        count = max(math.ceil(10 / entourage.radius), size or 0)
        points = tuple(
            CirclePoint.from_fraction(Fraction(j, count))
            for j in range(count)
        )
        return BaseGrid(points, True, f"uniform:{count}")
    if isinstance(system, SubstitutionSystem) and isinstance(
        entourage, Cylinder
    ):
        return cylinder_grid(system, entourage)
    if isinstance(system, TorusZdAction) and isinstance(
        entourage, MetricBall
    ):
        return torus_grid(system.m, size or 4)
    raise IncomparablePointsError(f"no default grid for {system.name}")


def torus_grid(m: int, per_axis: int) -> BaseGrid:
    """Product grid of ``per_axis`` equally spaced values per coordinate."""

    axis = [
        CirclePoint.from_fraction(Fraction(j, per_axis))
        for j in range(per_axis)
    ]
    points = tuple(
        TorusPoint(tuple(c)) for c in itertools.product(axis, repeat=m)
    )
    return BaseGrid(points, True, f"product:{per_axis}^{m}")


def cylinder_grid(system: SubstitutionSystem, cylinder: Cylinder) -> BaseGrid:
    """One base point in every legal cylinder of the given depth."""

    depth = cylinder.depth
    words = system.language_words(depth, max(depth, DEFAULT_MAX_WORD_LENGTH))
    origin = system.fixed_point()
    length = 64
    while True:
        text = system.prefix(origin, length + depth)
        offsets: Dict[str, int] = {}
        for i in range(length):
            offsets.setdefault(text[i:i + depth], i)
        if words <= offsets.keys():
            break
        length *= 4
    points = tuple(
        SymbolicPoint(origin.seed, origin.generation_depth, offsets[w])
        for w in sorted(words)
    )
    return BaseGrid(points, False, f"cylinders:{depth}")


def check_certificate(
    certificate: CoveringCertificate,
    system: DynamicalSystem,
    ys: Sequence[Any],
    xs: Sequence[Any],
) -> List[Tuple[Any, Any]]:
    """Pairs ``(y, x)`` whose orbit segment misses the certified entourage.

    An empty list is the expected outcome.
    """

    failures = []
    for y in ys:
        for x in xs:
            visits = system.visit_mask(
                y, x, certificate.entourage, 0, certificate.K + 1
            )
            if not visits.any():
                failures.append((y, x))
    return failures


def _scan_point(
    system: DynamicalSystem,
    entourage: Entourage,
    window_length: int,
    horizon: int,
    floor: Fraction,
    point: Any,
) -> PointDensity:
    profile = return_set(system, point, point, entourage, Window(0, horizon))
    estimate = banach_lower_density(profile, window_length, horizon)
    window = estimate.argmin_window
    return PointDensity(
        system.describe_point(point),
        estimate.min_frequency,
        (window.start, window.end),
        estimate.min_frequency - floor,
        int(estimate.min_frequency * window_length),
        profile.max_gap,
        birkhoff_frequency(profile),
    )


def verify_uniform_bound(
    system: DynamicalSystem,
    entourage: Entourage,
    grid: Union[Sequence[Any], BaseGrid],
    window_length: int,
    horizon: int,
    certificate: Optional[CoveringCertificate] = None,
    mapper: Mapper = map,
) -> DensityReport:
    """Scan every base point and compare with ``1/(K+1) - 1/W``.

    Metric systems are certified at a third of the radius and measured at
    the full radius; cylinders are equivalence relations and need no
    shrinking.
    """

    if certificate is None:
        certificate = covering_certificate(system, entourage.third())
    if not entourage.contains(certificate.entourage):
        raise ValueError(
            f"certificate at {certificate.entourage.describe()} does not "
            f"sit inside {entourage.describe()}"
        )
    if certificate.system_digest != system.digest():
        raise ValueError("certificate belongs to a different system")
    system.ensure_budget(entourage, horizon)
    if isinstance(grid, BaseGrid):
        points, approximate = grid.points, grid.approximate
    else:
        points, approximate = tuple(grid), False
    if not points:
        raise ValueError("grid of base points is empty")
    bound = certified_bound(certificate)
    floor = bound - Fraction(1, window_length)
    scan = partial(
        _scan_point, system, entourage, window_length, horizon, floor
    )
    rows = tuple(mapper(scan, points))
    report = DensityReport(
        system.name,
        system.digest(),
        entourage.describe(),
        bound,
        floor,
        window_length,
        horizon,
        rows,
        approximate_grid=approximate,
        certificate=certificate.to_payload(),
    )
    for row in report.violations:
        logger.error(
            "{}: x={} window={} frequency={} below {}",
            system.name,
            row.label,
            row.window,
            row.min_frequency,
            floor,
        )
    return report
