"""Concrete compact systems with auditable arithmetic error budgets.

Every system is an immutable descriptor.  Orbit scans are vectorised with
``numpy``; rotation and torus orbits use ``uint64`` fixed point so that the
semigroup law holds bit for bit.
"""
import hashlib
import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import (
    Any,
    Dict,
    FrozenSet,
    List,
    Mapping,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

import numpy as np
import numpy.typing as npt
from loguru import logger
from numpy.lib.stride_tricks import sliding_window_view

from recurrence.domain.circle import (
    ULP,
    CirclePoint,
    circular_ticks,
    continued_fraction,
    orbit_ticks,
    quadratic_fraction,
    radius_ticks,
)
from recurrence.domain.entourage import Cylinder, Entourage, MetricBall
from recurrence.domain.errors import (
    BudgetExceededError,
    IncomparablePointsError,
    NotPrimitiveError,
)

BoolArray = npt.NDArray[np.bool_]

# Error budget may use at most this share of an entourage radius.
BUDGET_SHARE = 0.1
DEFAULT_MAX_WORD_LENGTH = 64


@dataclass(frozen=True)
class SymbolicPoint:
    """Shift of a one-sided fixed point of ``sigma ** generation_depth``."""

    seed: str
    generation_depth: int = 1
    offset: int = 0

    def __post_init__(self) -> None:
        if self.generation_depth < 1:
            raise ValueError("generation_depth must be at least 1")
        if self.offset < 0:
            raise ValueError("offset must be non-negative")


@dataclass(frozen=True)
class TorusPoint:
    coords: Tuple[CirclePoint, ...]


@dataclass(frozen=True)
class AnnulusPoint:
    """Polar point ``(r_level, theta)``; level 0 is the limit circle."""

    level: int
    theta: float

    def __post_init__(self) -> None:
        if self.level < 0:
            raise ValueError("annulus level must be non-negative")


Point = Union[CirclePoint, SymbolicPoint, TorusPoint, AnnulusPoint]


class DynamicalSystem(ABC):
    """A cascade ``f: X -> X`` together with its error ledger."""

    name: str

    @abstractmethod
    def iterate(self, point: Any, n: int) -> Any:
        """Return ``f**n(point)``."""

    @abstractmethod
    def in_entourage(self, entourage: Entourage, x: Any, y: Any) -> bool:
        """Whether ``y`` lies in ``entourage[x]``."""

    @abstractmethod
    def visit_mask(
        self, x: Any, y: Any, entourage: Entourage, first: int, stop: int
    ) -> BoolArray:
        """Indicator of ``f**n x in entourage[y]``, ``first <= n < stop``."""

    @abstractmethod
    def step_error(self) -> float:
        """Worst-case representation error added by one step."""

    @abstractmethod
    def descriptor(self) -> Dict[str, Any]:
        """Canonical JSON-ready description used for digests."""

    @abstractmethod
    def describe_point(self, point: Any) -> str:
        """Short stable label for reports."""

    def accumulated_error(self, steps: int) -> float:
        return steps * self.step_error()

    def ensure_budget(self, entourage: Entourage, steps: int) -> None:
        """Refuse when ``steps`` iterates blur a metric entourage."""

        if not isinstance(entourage, MetricBall):
            return
        error = self.accumulated_error(steps)
        if error > entourage.radius * BUDGET_SHARE:
            raise BudgetExceededError(
                f"{self.name}: error {error:.3g} after {steps} steps exceeds "
                f"{BUDGET_SHARE:g} of radius {entourage.radius:g}",
                steps=steps,
                accumulated_error=error,
                radius=entourage.radius,
            )

    def digest(self) -> str:
        payload = json.dumps(self.descriptor(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _require_ball(system: DynamicalSystem, entourage: Entourage) -> MetricBall:
    if not isinstance(entourage, MetricBall):
        raise IncomparablePointsError(
            f"{system.name} uses metric balls, got {entourage.describe()}"
        )
    return entourage


def _require_kind(point: Any, kind: type, system: DynamicalSystem) -> None:
    if not isinstance(point, kind):
        raise IncomparablePointsError(
            f"{system.name} expects {kind.__name__}, "
            f"got {type(point).__name__}"
        )


@dataclass(frozen=True)
class RotationSystem(DynamicalSystem):
    """Circle rotation ``x -> x + alpha``."""

    alpha: CirclePoint
    alpha_error: float = 0.0
    name: str = "rotation"

    def __post_init__(self) -> None:
        if self.alpha_error < 0:
            raise ValueError("alpha_error must be non-negative")

    @classmethod
    def from_float(
        cls,
        alpha: float,
        alpha_error: float = 2.0**-53,
        name: str = "rotation",
    ) -> "RotationSystem":
        point = CirclePoint.from_float(alpha)
        rounding = abs(point.to_fraction() - Fraction(alpha) % 1)
        return cls(point, alpha_error + float(rounding), name)

    @classmethod
    def from_fraction(
        cls, alpha: Fraction, name: str = "rotation"
    ) -> "RotationSystem":
        point = CirclePoint.from_fraction(alpha)
        return cls(point, float(abs(point.to_fraction() - alpha % 1)), name)

    @classmethod
    def quadratic(
        cls, a: int, b: int, d: int, c: int, name: str = "rotation"
    ) -> "RotationSystem":
        """Rotation by ``(a + b * sqrt(d)) / c``, rounded to one tick."""

        return cls(quadratic_fraction(a, b, d, c), float(ULP), name)

    @classmethod
    def golden(cls, name: str = "golden") -> "RotationSystem":
        return cls.quadratic(-1, 1, 5, 2, name)

    def step_error(self) -> float:
        return self.alpha_error + float(ULP)

    def iterate(self, point: CirclePoint, n: int) -> CirclePoint:
        _require_kind(point, CirclePoint, self)
        if n < 0:
            raise ValueError("iterate needs n >= 0")
        return point + self.alpha.times(n)

    def in_entourage(
        self, entourage: Entourage, x: CirclePoint, y: CirclePoint
    ) -> bool:
        ball = _require_ball(self, entourage)
        _require_kind(x, CirclePoint, self)
        _require_kind(y, CirclePoint, self)
        return x.distance_ticks(y) < radius_ticks(ball.radius)

    def visit_mask(
        self,
        x: CirclePoint,
        y: CirclePoint,
        entourage: Entourage,
        first: int,
        stop: int,
    ) -> BoolArray:
        ball = _require_ball(self, entourage)
        orbit = orbit_ticks(x.frac, self.alpha.frac, first, stop)
        return circular_ticks(orbit, y.frac) < np.uint64(
            radius_ticks(ball.radius)
        )

    def continued_fraction(self, terms: int = 12) -> Tuple[int, ...]:
        return continued_fraction(self.alpha.to_fraction(), terms)

    def descriptor(self) -> Dict[str, Any]:
        return {
            "kind": "rotation",
            "alpha": self.alpha.frac,
            "alpha_error": self.alpha_error,
        }

    def describe_point(self, point: CirclePoint) -> str:
        return repr(point.to_float())


def _encode(word: str) -> npt.NDArray[np.uint32]:
    return np.frombuffer(word.encode("utf-32-le"), dtype=np.uint32)


@lru_cache(maxsize=64)
def _expansion(
    rules: Tuple[Tuple[str, str], ...], seed: str, power: int, bucket: int
) -> str:
    table = str.maketrans(dict(rules))
    word = seed
    target = 1 << bucket
    while len(word) < target:
        grown = word
        for _ in range(power):
            grown = grown.translate(table)
        if len(grown) == len(word):
            raise ValueError(f"seed {seed!r} does not grow under sigma")
        word = grown
    return word


@dataclass(frozen=True)
class SubstitutionSystem(DynamicalSystem):
    """One-sided subshift generated by a substitution on letters."""

    rules: Tuple[Tuple[str, str], ...]
    name: str = "substitution"
    primitive_power: Optional[int] = field(
        init=False, compare=False, default=None
    )

    def __post_init__(self) -> None:
        letters = [letter for letter, _ in self.rules]
        if not letters:
            raise ValueError("substitution needs at least one rule")
        if len(set(letters)) != len(letters):
            raise ValueError("duplicate letters in substitution rules")
        for letter, image in self.rules:
            if len(letter) != 1:
                raise ValueError(f"symbol {letter!r} must be one character")
            if not image:
                raise ValueError(f"image of {letter!r} is empty")
            unknown = set(image) - set(letters)
            if unknown:
                raise ValueError(f"image of {letter!r} uses {sorted(unknown)}")
        if all(len(image) == 1 for _, image in self.rules):
            raise ValueError("substitution does not grow")
        object.__setattr__(self, "primitive_power", self._primitivity())

    @classmethod
    def from_mapping(
        cls, rules: Mapping[str, str], name: str = "substitution"
    ) -> "SubstitutionSystem":
        return cls(tuple(rules.items()), name)

    @classmethod
    def fibonacci(cls) -> "SubstitutionSystem":
        return cls((("0", "01"), ("1", "0")), "fibonacci")

    @classmethod
    def thue_morse(cls) -> "SubstitutionSystem":
        return cls((("0", "01"), ("1", "10")), "thue-morse")

    @property
    def alphabet(self) -> Tuple[str, ...]:
        return tuple(letter for letter, _ in self.rules)

    @property
    def rule_map(self) -> Dict[str, str]:
        return dict(self.rules)

    def incidence_matrix(self) -> npt.NDArray[np.int64]:
        index = {letter: i for i, letter in enumerate(self.alphabet)}
        size = len(index)
        matrix = np.zeros((size, size), dtype=np.int64)
        for letter, image in self.rules:
            for symbol in image:
                matrix[index[letter], index[symbol]] += 1
        return matrix

    def _primitivity(self) -> Optional[int]:
        positive = (self.incidence_matrix() > 0).astype(np.int64)
        power = positive.copy()
        for exponent in range(1, len(self.rules) ** 2 + 1):
            if power.all():
                return exponent
            power = ((power @ positive) > 0).astype(np.int64)
        return None

    def require_primitive(self) -> int:
        if self.primitive_power is None:
            raise NotPrimitiveError(
                f"{self.name}: no power of the incidence matrix up to "
                f"{len(self.rules) ** 2} is positive"
            )
        return self.primitive_power

    def fixed_point(self, offset: int = 0) -> SymbolicPoint:
        """A growing fixed point of some power of the substitution."""

        images = self.rule_map
        for start in self.alphabet:
            seen: List[str] = []
            letter = start
            while letter not in seen:
                seen.append(letter)
                letter = images[letter][0]
            cycle = seen[seen.index(letter):]
            seed = cycle[0]
            power = len(cycle)
            try:
                _expansion(self.rules, seed, power, 2)
            except ValueError:
                continue
            return SymbolicPoint(seed, power, offset)
        raise ValueError(f"{self.name} has no growing fixed point")

    def prefix(self, point: SymbolicPoint, length: int) -> str:
        """The first ``length`` symbols of ``point``."""

        if point.seed not in self.rule_map:
            raise IncomparablePointsError(
                f"{point.seed!r} is not a letter of {self.name}"
            )
        image = point.seed
        for _ in range(point.generation_depth):
            image = _apply(self.rule_map, image)
        if not image.startswith(point.seed):
            raise ValueError(
                f"{point.seed!r} is not a fixed seed of sigma**"
                f"{point.generation_depth}"
            )
        needed = point.offset + length
        bucket = max(needed, 2).bit_length()
        word = _expansion(
            self.rules, point.seed, point.generation_depth, bucket
        )
        return word[point.offset:needed]

    def step_error(self) -> float:
        return 0.0

    def iterate(self, point: SymbolicPoint, n: int) -> SymbolicPoint:
        _require_kind(point, SymbolicPoint, self)
        if n < 0:
            raise ValueError("iterate needs n >= 0")
        return replace(point, offset=point.offset + n)

    def in_entourage(
        self, entourage: Entourage, x: SymbolicPoint, y: SymbolicPoint
    ) -> bool:
        if not isinstance(entourage, Cylinder):
            raise IncomparablePointsError(
                f"{self.name} uses cylinders, got {entourage.describe()}"
            )
        _require_kind(x, SymbolicPoint, self)
        _require_kind(y, SymbolicPoint, self)
        depth = entourage.depth
        return self.prefix(x, depth) == self.prefix(y, depth)

    def visit_mask(
        self,
        x: SymbolicPoint,
        y: SymbolicPoint,
        entourage: Entourage,
        first: int,
        stop: int,
    ) -> BoolArray:
        if not isinstance(entourage, Cylinder):
            raise IncomparablePointsError(
                f"{self.name} uses cylinders, got {entourage.describe()}"
            )
        depth = entourage.depth
        target = _encode(self.prefix(y, depth))
        start = replace(x, offset=x.offset + first)
        symbols = _encode(self.prefix(start, stop - first + depth - 1))
        windows = sliding_window_view(symbols, depth)
        return np.asarray((windows == target).all(axis=1))

    def language_words(
        self, length: int, max_length: int = DEFAULT_MAX_WORD_LENGTH
    ) -> FrozenSet[str]:
        """Factors of ``length`` symbols occurring in the subshift.

        Legal two-letter words are the least set closed under taking
        two-letter factors of images; longer factors then all sit inside
        ``sigma**j`` of a legal two-letter word once every
        ``sigma**j``-block is at least ``length - 1`` long.
        """

        if length < 1:
            raise ValueError("length must be at least 1")
        if length > max_length:
            raise ValueError(f"length {length} exceeds maximum {max_length}")
        self.require_primitive()
        if length == 1:
            return frozenset(self.alphabet)
        images = self.rule_map

        def factors(word: str, size: int) -> Set[str]:
            return {
                word[i:i + size] for i in range(len(word) - size + 1)
            }

        pairs: Set[str] = set()
        for image in images.values():
            pairs |= factors(image, 2)
        frontier = set(pairs)
        while frontier:
            fresh: Set[str] = set()
            for pair in frontier:
                fresh |= factors(_apply(images, pair), 2)
            frontier = fresh - pairs
            pairs |= fresh
        blocks = {letter: letter for letter in self.alphabet}
        while min(len(block) for block in blocks.values()) < length - 1:
            blocks = {a: _apply(images, w) for a, w in blocks.items()}
        words: Set[str] = set()
        for pair in pairs:
            words |= factors(blocks[pair[0]] + blocks[pair[1]], length)
        logger.debug(
            "{}: {} legal words of length {}", self.name, len(words), length
        )
        return frozenset(words)

    def descriptor(self) -> Dict[str, Any]:
        return {"kind": "substitution", "rules": [list(r) for r in self.rules]}

    def describe_point(self, point: SymbolicPoint) -> str:
        return f"{point.seed}^{point.generation_depth}@{point.offset}"


def _apply(images: Mapping[str, str], word: str) -> str:
    return "".join(images[c] for c in word)


@dataclass(frozen=True)
class TorusZdAction(DynamicalSystem):
    """``Z^d`` acting on ``T^m`` by commuting translations."""

    generators: Tuple[Tuple[CirclePoint, ...], ...]
    errors: Tuple[float, ...] = ()
    name: str = "torus"

    def __post_init__(self) -> None:
        if not self.generators:
            raise ValueError("need at least one generator")
        widths = {len(g) for g in self.generators}
        if len(widths) != 1 or 0 in widths:
            raise ValueError("generators must share a positive dimension")
        if not self.errors:
            object.__setattr__(self, "errors", (0.0,) * len(self.generators))
        if len(self.errors) != len(self.generators):
            raise ValueError("one error budget per generator")
        if any(e < 0 for e in self.errors):
            raise ValueError("error budgets must be non-negative")

    @classmethod
    def from_rotations(
        cls, rotations: Sequence[RotationSystem], name: str = "torus"
    ) -> "TorusZdAction":
        """Product action: generator ``i`` rotates coordinate ``i`` only."""

        size = len(rotations)
        zero = CirclePoint(0)
        generators = tuple(
            tuple(r.alpha if j == i else zero for j in range(size))
            for i, r in enumerate(rotations)
        )
        errors = tuple(r.alpha_error for r in rotations)
        return cls(generators, errors, name)

    @property
    def d(self) -> int:
        return len(self.generators)

    @property
    def m(self) -> int:
        return len(self.generators[0])

    def is_product(self) -> bool:
        """Each generator moves exactly its own coordinate."""

        return self.d == self.m and all(
            (g[j].frac != 0) == (i == j)
            for i, g in enumerate(self.generators)
            for j in range(self.m)
        )

    def step_error(self) -> float:
        return max(self.errors) + float(ULP)

    def vector_error(self, n: Sequence[int]) -> float:
        return sum(
            abs(k) * (e + float(ULP)) for k, e in zip(n, self.errors)
        )

    def act(self, point: TorusPoint, n: Sequence[int]) -> TorusPoint:
        """Translate by ``sum n_i g_i``; the acting group is ``Z^d``."""

        _require_kind(point, TorusPoint, self)
        if len(n) != self.d:
            raise ValueError(f"expected a {self.d}-vector")
        coords = list(point.coords)
        for k, generator in zip(n, self.generators):
            coords = [c + g.times(k) for c, g in zip(coords, generator)]
        return TorusPoint(tuple(coords))

    def iterate(self, point: TorusPoint, n: int) -> TorusPoint:
        if self.d != 1:
            raise ValueError("scalar iterate needs a Z-action; use act()")
        if n < 0:
            raise ValueError("iterate needs n >= 0")
        return self.act(point, (n,))

    def in_entourage(
        self, entourage: Entourage, x: TorusPoint, y: TorusPoint
    ) -> bool:
        ball = _require_ball(self, entourage)
        _require_kind(x, TorusPoint, self)
        _require_kind(y, TorusPoint, self)
        limit = radius_ticks(ball.radius)
        return all(
            a.distance_ticks(b) < limit for a, b in zip(x.coords, y.coords)
        )

    def box_visit_mask(
        self,
        x: TorusPoint,
        y: TorusPoint,
        entourage: Entourage,
        corner: Sequence[int],
        sides: Sequence[int],
    ) -> BoolArray:
        """Indicator of ``n.x in entourage[y]`` over a box of ``Z^d``."""

        ball = _require_ball(self, entourage)
        limit = np.uint64(radius_ticks(ball.radius))
        axes = [
            np.arange(c, c + s, dtype=np.int64).astype(np.uint64)
            for c, s in zip(corner, sides)
        ]
        inside = np.ones(tuple(sides), dtype=np.bool_)
        for j in range(self.m):
            total = np.full(tuple(sides), x.coords[j].frac, dtype=np.uint64)
            for i, axis in enumerate(axes):
                shape = [1] * self.d
                shape[i] = len(axis)
                step = np.uint64(self.generators[i][j].frac)
                total = total + (axis * step).reshape(shape)
            inside &= circular_ticks(total, y.coords[j].frac) < limit
        return inside

    def visit_mask(
        self,
        x: TorusPoint,
        y: TorusPoint,
        entourage: Entourage,
        first: int,
        stop: int,
    ) -> BoolArray:
        if self.d != 1:
            raise ValueError("visit_mask scans Z-actions; use box_visit_mask")
        return self.box_visit_mask(x, y, entourage, (first,), (stop - first,))

    def descriptor(self) -> Dict[str, Any]:
        return {
            "kind": "torus",
            "generators": [[c.frac for c in g] for g in self.generators],
            "errors": list(self.errors),
        }

    def describe_point(self, point: TorusPoint) -> str:
        return "(" + ",".join(repr(c.to_float()) for c in point.coords) + ")"


TWO_PI = 2.0 * math.pi


def angular_distance(a: float, b: float) -> float:
    diff = (a - b) % TWO_PI
    return min(diff, TWO_PI - diff)


@dataclass(frozen=True)
class AnnulusSystem(DynamicalSystem):
    """Twist map ``(r, theta) -> (r, theta + r)`` on nested circles.

    Radii are ``r_0 = (1 + alpha) pi`` and ``r_n = (1 + alpha + g_n / n) pi``
    with ``g_n = (n + gamma_shift) / (n + gamma_shift + 1)`` unless pinned by
    ``gamma_overrides``.  Distances use the max of radial and angular gaps.
    """

    alpha: float = math.sqrt(2.0) / 100.0
    gamma_shift: int = 0
    gamma_overrides: Tuple[Tuple[int, Fraction], ...] = ()
    name: str = "annulus"

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.gamma_shift < -1:
            raise ValueError("gamma_shift must be at least -1")

    def gamma(self, n: int) -> Fraction:
        if n < 1:
            raise ValueError("gamma is indexed from 1")
        pinned = dict(self.gamma_overrides)
        if n in pinned:
            return Fraction(pinned[n])
        return Fraction(n + self.gamma_shift, n + self.gamma_shift + 1)

    def radius(self, level: int) -> float:
        if level == 0:
            return (1.0 + self.alpha) * math.pi
        return (1.0 + self.alpha + float(self.gamma(level)) / level) * math.pi

    def step_error(self) -> float:
        return 4.0 * math.ulp(self.radius(0) + 1.0)

    def iterate(self, point: AnnulusPoint, n: int) -> AnnulusPoint:
        _require_kind(point, AnnulusPoint, self)
        if n < 0:
            raise ValueError("iterate needs n >= 0")
        theta = (point.theta + n * self.radius(point.level)) % TWO_PI
        return AnnulusPoint(point.level, theta)

    def distance(self, x: AnnulusPoint, y: AnnulusPoint) -> float:
        radial = abs(self.radius(x.level) - self.radius(y.level))
        return max(radial, angular_distance(x.theta, y.theta))

    def in_entourage(
        self, entourage: Entourage, x: AnnulusPoint, y: AnnulusPoint
    ) -> bool:
        ball = _require_ball(self, entourage)
        _require_kind(x, AnnulusPoint, self)
        _require_kind(y, AnnulusPoint, self)
        return self.distance(x, y) < ball.radius

    def visit_mask(
        self,
        x: AnnulusPoint,
        y: AnnulusPoint,
        entourage: Entourage,
        first: int,
        stop: int,
    ) -> BoolArray:
        ball = _require_ball(self, entourage)
        radial = abs(self.radius(x.level) - self.radius(y.level))
        if radial >= ball.radius:
            return np.zeros(stop - first, dtype=np.bool_)
        n = np.arange(first, stop, dtype=np.float64)
        theta = np.mod(x.theta + n * self.radius(x.level), TWO_PI)
        diff = np.mod(theta - y.theta, TWO_PI)
        return np.asarray(np.minimum(diff, TWO_PI - diff) < ball.radius)

    def equicontinuity_defect(self, n: int, theta: float = 0.0) -> float:
        """Angular gap between ``tau**(2n)`` of ``(r_0, theta)`` and
        ``(r_{2n}, theta)``; it stays near ``gamma_{2n} pi`` while the
        starting points converge."""

        if n < 1:
            raise ValueError("n must be at least 1")
        limit = self.iterate(AnnulusPoint(0, theta), 2 * n)
        near = self.iterate(AnnulusPoint(2 * n, theta), 2 * n)
        return angular_distance(limit.theta, near.theta)

    def defect_formula(self, n: int) -> float:
        return angular_distance(float(self.gamma(2 * n)) * math.pi, 0.0)

    def descriptor(self) -> Dict[str, Any]:
        return {
            "kind": "annulus",
            "alpha": self.alpha,
            "gamma_shift": self.gamma_shift,
            "gamma_overrides": [
                [n, str(g)] for n, g in self.gamma_overrides
            ],
        }

    def describe_point(self, point: AnnulusPoint) -> str:
        return f"r{point.level}:{point.theta!r}"


def iterate(
    system: DynamicalSystem,
    point: Point,
    n: int,
    within: Optional[Entourage] = None,
) -> Point:
    """``f**n(point)``; refuses when ``within`` would be blurred."""

    if within is not None:
        system.ensure_budget(within, n)
    return system.iterate(point, n)  # type: ignore[no-any-return]


def in_entourage(
    system: DynamicalSystem, entourage: Entourage, x: Point, y: Point
) -> bool:
    return system.in_entourage(entourage, x, y)


def language_words(
    system: SubstitutionSystem,
    length: int,
    max_length: int = DEFAULT_MAX_WORD_LENGTH,
) -> FrozenSet[str]:
    return system.language_words(length, max_length)


def equicontinuity_defect(
    system: AnnulusSystem, n: int, theta: float = 0.0
) -> float:
    return system.equicontinuity_defect(n, theta)
