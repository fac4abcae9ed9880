"""Følner boxes in ``Z^d`` and recurrence along translated boxes.

``Z^d`` is abelian, so left and right syndeticity coincide and a
translate ``Kt`` is simply ``K + t``.  Banach density over all Følner
nets is only estimated over translated boxes; reports call this the
box-Banach density.
"""
import enum
import itertools
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from fractions import Fraction
from functools import partial
from typing import (
    Any,
    Dict,
    FrozenSet,
    Iterable,
    List,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

import numpy as np
import numpy.typing as npt
from loguru import logger

from recurrence.domain.covering import (
    BaseGrid,
    CoveringCertificate,
    Mapper,
    torus_covering_K,
)
from recurrence.domain.entourage import MetricBall
from recurrence.domain.errors import BoundViolationError, RegionError
from recurrence.domain.report import DensityReport, PointDensity
from recurrence.domain.returns import gap_to_density_bound
from recurrence.domain.systems import TorusPoint, TorusZdAction

Vector = Tuple[int, ...]
BoolArray = npt.NDArray[np.bool_]
IntArray = npt.NDArray[np.int64]


@dataclass(frozen=True)
class FolnerBox:
    """``corner + prod [0, side_i)``."""

    corner: Vector
    sides: Vector

    def __post_init__(self) -> None:
        if len(self.corner) != len(self.sides) or not self.sides:
            raise ValueError("corner and sides must share a dimension")
        if any(side < 1 for side in self.sides):
            raise ValueError("box sides must be positive")

    @classmethod
    def cube(
        cls, d: int, side: int, corner: Optional[Vector] = None
    ) -> "FolnerBox":
        return cls(corner or (0,) * d, (side,) * d)

    @property
    def d(self) -> int:
        return len(self.sides)

    @property
    def volume(self) -> int:
        return math.prod(self.sides)

    @property
    def upper(self) -> Vector:
        return tuple(c + s for c, s in zip(self.corner, self.sides))

    def translate(self, t: Sequence[int]) -> "FolnerBox":
        return FolnerBox(
            tuple(c + v for c, v in zip(self.corner, t)), self.sides
        )

    def contains_box(self, other: "FolnerBox") -> bool:
        return all(
            a <= b and bu <= au
            for a, b, au, bu in zip(
                self.corner, other.corner, self.upper, other.upper
            )
        )

    def points(self) -> Set[Vector]:
        axes = [range(c, c + s) for c, s in zip(self.corner, self.sides)]
        return set(itertools.product(*axes))

    def as_list(self) -> List[List[int]]:
        return [list(self.corner), list(self.sides)]


def box_ladder(d: int, sizes: Iterable[int]) -> List[FolnerBox]:
    return [FolnerBox.cube(d, size) for size in sizes]


def _overlap(F: FolnerBox, t: Sequence[int]) -> int:
    return math.prod(max(0, side - abs(v)) for side, v in zip(F.sides, t))


def folner_defect(F: FolnerBox, t: Sequence[int]) -> Fraction:
    """``|(t + F) sym.diff. F| / |F|`` by the product formula."""

    if len(t) != F.d:
        raise ValueError("translation has the wrong dimension")
    return Fraction(2 * (F.volume - _overlap(F, t)), F.volume)


def folner_defect_enumerated(F: FolnerBox, t: Sequence[int]) -> Fraction:
    points = F.points()
    moved = F.translate(t).points()
    return Fraction(len(points ^ moved), F.volume)


def folner_set_defect(F: FolnerBox, K: Iterable[Sequence[int]]) -> Fraction:
    """``|KF sym.diff. F| / |F|`` for a finite ``K``, by enumeration."""

    points = F.points()
    grown: Set[Vector] = set()
    for k in K:
        grown |= F.translate(k).points()
    return Fraction(len(grown ^ points), F.volume)


def symmetric_difference_invariance(
    A: Set[Vector], B: Set[Vector], t: Sequence[int]
) -> bool:
    """``|A sym.diff. B| == |(A + t) sym.diff. (B + t)|``."""

    def shift(points: Set[Vector]) -> Set[Vector]:
        return {tuple(p + v for p, v in zip(point, t)) for point in points}

    return len(A ^ B) == len(shift(A) ^ shift(B))


def intersect_translates(
    F: FolnerBox, H: Sequence[Sequence[int]]
) -> Optional[FolnerBox]:
    """``cap_{h in H} (F - h)``, a box or ``None`` when empty."""

    corner = []
    sides = []
    for axis in range(F.d):
        shifts = [h[axis] for h in H]
        low = F.corner[axis] - min(shifts)
        high = F.upper[axis] - max(shifts)
        if high <= low:
            return None
        corner.append(low)
        sides.append(high - low)
    return FolnerBox(tuple(corner), tuple(sides))


@dataclass(frozen=True)
class Lemma42Result:
    holds: bool
    # ``|F| / |cap (F - h)|``; ``math.inf`` when the intersection is empty.
    ratio: Union[Fraction, float]
    intersection: Optional[FolnerBox]


def lemma42_check(F: FolnerBox, H: Sequence[Sequence[int]]) -> Lemma42Result:
    """Whether ``|F| <= 2 |cap_{h in H} (F - h)|``."""

    if not H:
        raise ValueError("H must be non-empty")
    core = intersect_translates(F, H)
    if core is None:
        return Lemma42Result(False, math.inf, None)
    ratio = Fraction(F.volume, core.volume)
    return Lemma42Result(ratio <= 2, ratio, core)


def lemma42_threshold(d: int, H: Sequence[Sequence[int]]) -> int:
    """Smallest cube side ``n`` with ``n**d <= 2 prod (n - span_i)``.

    Each factor ``1 - span_i / n`` grows with ``n``, so every larger cube
    passes too.
    """

    spans = [
        max(h[axis] for h in H) - min(h[axis] for h in H)
        for axis in range(d)
    ]

    def passes(n: int) -> bool:
        return n**d <= 2 * math.prod(max(0, n - s) for s in spans)

    high = max(spans) + 1
    while not passes(high):
        high *= 2
    low = high // 2
    while high - low > 1:
        middle = (low + high) // 2
        if passes(middle):
            high = middle
        else:
            low = middle
    return high if not passes(low) or low < 1 else low


class VisitSet(ABC):
    """Membership oracle for a subset ``B`` of ``Z^d``."""

    d: int

    @abstractmethod
    def mask(self, box: FolnerBox) -> BoolArray:
        """Indicator of ``B`` over ``box`` (array of shape ``box.sides``)."""

    def contains(self, point: Sequence[int]) -> bool:
        box = FolnerBox(tuple(point), (1,) * len(point))
        return bool(self.mask(box).reshape(-1)[0])

    def count(self, box: FolnerBox) -> int:
        return int(self.mask(box).sum())


@dataclass(frozen=True)
class LatticeCosetSet(VisitSet):
    """Union of cosets ``r + prod m_i Z`` for ``r`` in ``residues``."""

    moduli: Vector
    residues: FrozenSet[Vector]

    def __post_init__(self) -> None:
        if any(m < 1 for m in self.moduli):
            raise ValueError("moduli must be positive")
        for residue in self.residues:
            if len(residue) != len(self.moduli):
                raise ValueError("residue has the wrong dimension")

    @property
    def d(self) -> int:  # type: ignore[override]
        return len(self.moduli)

    @classmethod
    def multiples(cls, *moduli: int) -> "LatticeCosetSet":
        return cls(tuple(moduli), frozenset({(0,) * len(moduli)}))

    def density(self) -> Fraction:
        lifted = {
            tuple(r % m for r, m in zip(residue, self.moduli))
            for residue in self.residues
        }
        return Fraction(len(lifted), math.prod(self.moduli))

    def mask(self, box: FolnerBox) -> BoolArray:
        table = np.zeros(self.moduli, dtype=np.bool_)
        for residue in self.residues:
            table[tuple(r % m for r, m in zip(residue, self.moduli))] = True
        axes = [
            np.arange(c, c + s) % m
            for c, s, m in zip(box.corner, box.sides, self.moduli)
        ]
        return np.asarray(table[np.ix_(*axes)])


@dataclass(frozen=True, eq=False)
class ExplicitVisitSet(VisitSet):
    """Visit indicator recorded on a finite ``region``."""

    region: FolnerBox
    indicator: BoolArray

    def __post_init__(self) -> None:
        if self.indicator.shape != self.region.sides:
            raise ValueError("indicator shape must match the region")

    @property
    def d(self) -> int:  # type: ignore[override]
        return self.region.d

    @classmethod
    def from_times(
        cls, times: Iterable[int], start: int, end: int
    ) -> "ExplicitVisitSet":
        indicator = np.zeros(end - start, dtype=np.bool_)
        values = np.fromiter(times, dtype=np.int64)
        values = values[(values >= start) & (values < end)]
        indicator[values - start] = True
        return cls(FolnerBox((start,), (end - start,)), indicator)

    def mask(self, box: FolnerBox) -> BoolArray:
        if not self.region.contains_box(box):
            raise RegionError(
                f"box {box.as_list()} leaves the recorded region "
                f"{self.region.as_list()}"
            )
        slices = tuple(
            slice(c - r, c - r + s)
            for c, r, s in zip(box.corner, self.region.corner, box.sides)
        )
        return self.indicator[slices]


def box_sums(indicator: BoolArray, sides: Sequence[int]) -> IntArray:
    """Counts of ``indicator`` over every placement of a box of ``sides``.

    Entry ``c`` is the count over ``c + prod [0, side_i)``; computed with a
    summed-area table and inclusion-exclusion over the box corners.
    """

    d = indicator.ndim
    if any(s > n for s, n in zip(sides, indicator.shape)):
        raise RegionError("box does not fit in the scanned region")
    table = np.pad(indicator.astype(np.int64), [(1, 0)] * d)
    for axis in range(d):
        table = np.cumsum(table, axis=axis)
    total = np.zeros(
        tuple(n - s + 1 for n, s in zip(indicator.shape, sides)),
        dtype=np.int64,
    )
    for upper in itertools.product((False, True), repeat=d):
        slices = tuple(
            slice(s, None) if up else slice(0, table.shape[axis] - s)
            for axis, (up, s) in enumerate(zip(upper, sides))
        )
        sign = 1 if (d - sum(upper)) % 2 == 0 else -1
        total += sign * table[slices]
    return total


@dataclass(frozen=True)
class SyndeticWitness:
    """``K + t`` meets ``B`` for every ``t`` in ``region``."""

    K: Tuple[Vector, ...]
    region: FolnerBox
    B: VisitSet

    def __post_init__(self) -> None:
        if not self.K:
            raise ValueError("K must be non-empty")
        hit = np.zeros(self.region.sides, dtype=np.bool_)
        for k in self.K:
            hit |= self.B.mask(self.region.translate(k))
        if not hit.all():
            miss = tuple(
                int(v) + c
                for v, c in zip(np.argwhere(~hit)[0], self.region.corner)
            )
            raise ValueError(f"K + {miss} misses B")


@dataclass(frozen=True)
class Lemma43Ladder:
    frequencies: Tuple[Fraction, ...]
    exact_bounds: Tuple[Fraction, ...]
    threshold_index: Optional[int]
    bound: Fraction

    def to_payload(self) -> Dict[str, Any]:
        return {
            "frequencies": [str(f) for f in self.frequencies],
            "exact_bounds": [str(b) for b in self.exact_bounds],
            "threshold_index": self.threshold_index,
            "bound": str(self.bound),
        }


def core_bound(F: FolnerBox, K: Sequence[Sequence[int]]) -> Fraction:
    """``|cap_{k in K} (F - k)| / (|K| |F|)``, a lower bound on
    ``|B cap F| / |F|`` whenever ``K + t`` meets ``B`` on the core."""

    core = intersect_translates(F, K)
    if core is None:
        return Fraction(0)
    return Fraction(core.volume, len(K) * F.volume)


def lemma43_density(
    B: VisitSet, witness: SyndeticWitness, boxes: Sequence[FolnerBox]
) -> Lemma43Ladder:
    """Frequencies ``|B cap F_n| / |F_n|`` against ``1 / (2|K|)``."""

    frequencies = []
    bounds = []
    passing = []
    for box in boxes:
        core = intersect_translates(box, witness.K)
        if not witness.region.contains_box(box) or (
            core is not None and not witness.region.contains_box(core)
        ):
            raise RegionError(
                f"witness region {witness.region.as_list()} does not cover "
                f"box {box.as_list()}"
            )
        frequency = Fraction(B.count(box), box.volume)
        exact = core_bound(box, witness.K)
        if frequency < exact:
            raise BoundViolationError(
                f"frequency {frequency} below {exact} on {box.as_list()}"
            )
        frequencies.append(frequency)
        bounds.append(exact)
        passing.append(lemma42_check(box, witness.K).holds)
    threshold = None
    for index in range(len(boxes)):
        if all(passing[index:]):
            threshold = index
            break
    bound = Fraction(1, 2 * len(witness.K))
    if threshold is not None:
        for frequency, box in zip(frequencies[threshold:], boxes[threshold:]):
            if frequency < bound:
                raise BoundViolationError(
                    f"frequency {frequency} below {bound} on {box.as_list()}"
                )
    return Lemma43Ladder(tuple(frequencies), tuple(bounds), threshold, bound)


def exponent_box(exponents: Sequence[int]) -> Tuple[Vector, ...]:
    return tuple(itertools.product(*(range(k + 1) for k in exponents)))


@dataclass(frozen=True)
class AmenableDensityEstimate:
    """Least visit frequency over every placement of one box."""

    box_sides: Vector
    min_frequency: Fraction
    argmin_corner: Vector
    count: int


def box_banach_density(
    indicator: BoolArray, box_sides: Sequence[int], origin: Vector
) -> AmenableDensityEstimate:
    """Scan ``indicator`` (recorded on the box at ``origin``) with every
    translate of a box of ``box_sides`` that fits inside it."""

    sides = tuple(box_sides)
    counts = box_sums(indicator, sides)
    index = np.unravel_index(int(np.argmin(counts)), counts.shape)
    corner = tuple(int(i) + c for i, c in zip(index, origin))
    count = int(counts[index])
    return AmenableDensityEstimate(
        sides, Fraction(count, math.prod(sides)), corner, count
    )


def _scan_box_point(
    action: TorusZdAction,
    ball: MetricBall,
    sides: Vector,
    horizon: int,
    floor: Fraction,
    point: TorusPoint,
) -> PointDensity:
    origin = (0,) * action.d
    indicator = action.box_visit_mask(
        point, point, ball, origin, (horizon,) * action.d
    )
    estimate = box_banach_density(indicator, sides, origin)
    return PointDensity(
        action.describe_point(point),
        estimate.min_frequency,
        (estimate.argmin_corner, sides),
        estimate.min_frequency - floor,
        estimate.count,
        None,
        Fraction(int(indicator.sum()), indicator.size),
    )


def amenable_uniform_bound(
    action: TorusZdAction,
    ball: MetricBall,
    grid: Union[Sequence[TorusPoint], BaseGrid],
    box_sides: Sequence[int],
    horizon: int,
    certificate: Optional[CoveringCertificate] = None,
    certificate_entourage: Optional[MetricBall] = None,
    mapper: Mapper = map,
) -> DensityReport:
    """Box-Banach density of ``N(x, ball[x])`` over a grid of base points.

    The covering exponent box ``K`` makes every return-time set syndetic
    with ``K + t`` meeting it for all ``t``, so each box ``F`` holds at
    least ``|cap (F - k)| / |K|`` visits.
    """

    sides = tuple(box_sides)
    if len(sides) != action.d:
        raise ValueError(f"box needs {action.d} sides")
    if certificate is None:
        certificate = torus_covering_K(
            action, certificate_entourage or ball.third()
        )
    if not ball.contains(certificate.entourage):
        raise ValueError("certificate radius exceeds the entourage")
    if certificate.system_digest != action.digest():
        raise ValueError("certificate belongs to a different system")
    action.ensure_budget(ball, action.d * (horizon - 1))
    K = exponent_box(certificate.exponents)
    box = FolnerBox((0,) * action.d, sides)
    floor = core_bound(box, K)
    asymptotic = Fraction(1, 2 * len(K))
    if not lemma42_check(box, K).holds:
        logger.warning(
            "{}: box {} has a core under half its volume; certified bound "
            "{} is under 1/(2|K|)",
            action.name,
            sides,
            floor,
        )
    scan = partial(_scan_box_point, action, ball, sides, horizon, floor)
    points = grid.points if isinstance(grid, BaseGrid) else tuple(grid)
    if not points:
        raise ValueError("grid of base points is empty")
    rows = tuple(mapper(scan, points))
    return DensityReport(
        action.name,
        action.digest(),
        ball.describe(),
        asymptotic,
        floor,
        list(sides),
        horizon,
        rows,
        label="box-banach",
        approximate_grid=True,
        certificate=certificate.to_payload(),
    )


class Verdict(enum.Enum):
    AP_CONSISTENT = "AP-consistent"
    NOT_AP = "NOT-AP"


@dataclass(frozen=True)
class ApVerdict:
    verdict: Verdict
    witnesses: Tuple[FolnerBox, ...]
    max_gap: int
    syndetic_bound: Fraction
    densities: Tuple[Tuple[int, Fraction], ...]

    def to_payload(self) -> Dict[str, Any]:
        return {
            "verdict": self.verdict.value,
            "witnesses": [w.as_list() for w in self.witnesses],
            "max_gap": self.max_gap,
            "syndetic_bound": str(self.syndetic_bound),
            "box_banach_density": [
                [size, str(value)] for size, value in self.densities
            ],
        }


def largest_empty_cube(indicator: BoolArray) -> int:
    """Largest side of a cube free of visits (0 if every cell is visited)."""

    low, high = 0, min(indicator.shape)
    while low < high:
        middle = (low + high + 1) // 2
        counts = box_sums(indicator, (middle,) * indicator.ndim)
        if (counts == 0).any():
            low = middle
        else:
            high = middle - 1
    return low


def ap_characterization(
    B: VisitSet, ladder: Sequence[int], region: FolnerBox
) -> ApVerdict:
    """Thick-complement test: a visit-free box at every ladder size means
    box-Banach density zero, hence no syndetic return set."""

    if not ladder:
        raise ValueError("ladder must be non-empty")
    indicator = B.mask(region)
    witnesses = []
    densities = []
    for size in ladder:
        sides = (size,) * region.d
        if any(size > side for side in region.sides):
            raise RegionError(f"size {size} exceeds region {region.as_list()}")
        counts = box_sums(indicator, sides)
        densities.append(
            (size, Fraction(int(counts.min()), math.prod(sides)))
        )
        empty = np.argwhere(counts == 0)
        if empty.size:
            corner = tuple(
                int(v) + c for v, c in zip(empty[0], region.corner)
            )
            witnesses.append(FolnerBox(corner, sides))
    gap = largest_empty_cube(indicator)
    if region.d == 1:
        bound = gap_to_density_bound(gap)
    else:
        bound = Fraction(1, 2 * (gap + 1) ** region.d)
    if len(witnesses) == len(ladder):
        return ApVerdict(
            Verdict.NOT_AP,
            tuple(witnesses),
            gap,
            Fraction(0),
            tuple(densities),
        )
    return ApVerdict(
        Verdict.AP_CONSISTENT, (), gap, bound, tuple(densities)
    )
