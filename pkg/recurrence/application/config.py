"""Experiment configuration: versioned JSON validated by pydantic."""
import hashlib
import json
import math
import os
from fractions import Fraction
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    model_validator,
)

from recurrence.domain.amenable import LatticeCosetSet
from recurrence.domain.circle import CirclePoint
from recurrence.domain.entourage import Cylinder, Entourage, MetricBall
from recurrence.domain.errors import ConfigError
from recurrence.domain.flow import LinearFlow
from recurrence.domain.systems import (
    AnnulusPoint,
    AnnulusSystem,
    DynamicalSystem,
    RotationSystem,
    SubstitutionSystem,
    SymbolicPoint,
    TorusPoint,
    TorusZdAction,
)

CONFIG_VERSION = 1
GOLDEN = "golden"


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _angle(value: Union[float, str]) -> CirclePoint:
    """``"golden"``, a rational ``"p/q"`` or a float, read modulo 1."""

    if value == GOLDEN:
        return RotationSystem.golden().alpha
    if isinstance(value, str):
        return CirclePoint.from_fraction(Fraction(value))
    return CirclePoint.from_float(value)


class RotationSpec(StrictModel):
    kind: Literal["rotation"]
    alpha: Union[float, str] = GOLDEN
    alpha_error: Optional[float] = Field(default=None, ge=0.0)
    name: str = "rotation"

    def build(self) -> RotationSystem:
        if self.alpha == GOLDEN:
            system = RotationSystem.golden(self.name)
        elif isinstance(self.alpha, str):
            system = RotationSystem.from_fraction(
                Fraction(self.alpha), self.name
            )
        else:
            system = RotationSystem.from_float(self.alpha, name=self.name)
        if self.alpha_error is not None:
            system = RotationSystem(system.alpha, self.alpha_error, self.name)
        return system


class SubstitutionSpec(StrictModel):
    kind: Literal["substitution"]
    preset: Optional[Literal["fibonacci", "thue-morse"]] = None
    rules: Optional[Dict[str, str]] = None
    name: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self) -> "SubstitutionSpec":
        if (self.preset is None) == (self.rules is None):
            raise ValueError("give exactly one of 'preset' or 'rules'")
        return self

    def build(self) -> SubstitutionSystem:
        if self.preset == "fibonacci":
            system = SubstitutionSystem.fibonacci()
        elif self.preset == "thue-morse":
            system = SubstitutionSystem.thue_morse()
        else:
            assert self.rules is not None
            return SubstitutionSystem.from_mapping(
                self.rules, self.name or "substitution"
            )
        if self.name:
            system = SubstitutionSystem(system.rules, self.name)
        return system


class TorusSpec(StrictModel):
    kind: Literal["torus"]
    rotations: Optional[List[Union[float, str]]] = None
    generators: Optional[List[List[Union[float, str]]]] = None
    errors: List[float] = []
    name: str = "torus"

    @model_validator(mode="after")
    def _one_source(self) -> "TorusSpec":
        if (self.rotations is None) == (self.generators is None):
            raise ValueError(
                "give exactly one of 'rotations' or 'generators'"
            )
        return self

    def build(self) -> TorusZdAction:
        if self.rotations is not None:
            size = len(self.rotations)
            steps = [
                [_angle(a) if i == j else CirclePoint(0) for j in range(size)]
                for i, a in enumerate(self.rotations)
            ]
        else:
            assert self.generators is not None
            steps = [[_angle(a) for a in g] for g in self.generators]
        return TorusZdAction(
            tuple(tuple(g) for g in steps), tuple(self.errors), self.name
        )


class FlowSpec(StrictModel):
    kind: Literal["flow"]
    direction: Union[Tuple[float, float], Literal["golden"]] = GOLDEN
    name: str = "flow"

    def build(self) -> LinearFlow:
        if self.direction == GOLDEN:
            return LinearFlow(LinearFlow.golden().direction, self.name)
        assert not isinstance(self.direction, str)
        return LinearFlow(self.direction, self.name)


class AnnulusSpec(StrictModel):
    kind: Literal["annulus"]
    alpha: float = math.sqrt(2.0) / 100.0
    gamma_shift: int = 0
    gamma_overrides: Dict[int, str] = {}
    name: str = "annulus"

    def build(self) -> AnnulusSystem:
        overrides = tuple(
            sorted((n, Fraction(v)) for n, v in self.gamma_overrides.items())
        )
        return AnnulusSystem(
            self.alpha, self.gamma_shift, overrides, self.name
        )


class LatticeSpec(StrictModel):
    """A lattice-coset subset of ``Z^d`` used as a synthetic visit set."""

    kind: Literal["lattice"]
    moduli: List[Annotated[int, Field(ge=1)]]
    residues: List[List[int]]
    name: str = "lattice"

    def build(self) -> LatticeCosetSet:
        return LatticeCosetSet(
            tuple(self.moduli), frozenset(tuple(r) for r in self.residues)
        )


SystemSpec = Annotated[
    Union[
        RotationSpec,
        SubstitutionSpec,
        TorusSpec,
        FlowSpec,
        AnnulusSpec,
        LatticeSpec,
    ],
    Field(discriminator="kind"),
]


class BallSpec(StrictModel):
    kind: Literal["ball"]
    radius: float = Field(gt=0.0)

    def build(self) -> MetricBall:
        return MetricBall(self.radius)


class CylinderSpec(StrictModel):
    kind: Literal["cylinder"]
    depth: int = Field(ge=1)

    def build(self) -> Cylinder:
        return Cylinder(self.depth)


EntourageSpec = Annotated[
    Union[BallSpec, CylinderSpec], Field(discriminator="kind")
]


class SymbolicPointSpec(StrictModel):
    seed: str
    depth: int = Field(default=1, ge=1)
    offset: int = Field(default=0, ge=0)


class GridSpec(StrictModel):
    """``default`` picks the system's natural grid (``size`` may refine
    it); ``points`` lists base points explicitly."""

    kind: Literal["default", "points"] = "default"
    size: Optional[int] = Field(default=None, ge=1)
    points: List[Any] = []


class OutputSpec(StrictModel):
    stem: str = "report"


def _default_workers() -> int:
    return os.cpu_count() or 1


class ExperimentConfig(StrictModel):
    version: Literal[1]
    system: SystemSpec
    entourage: Optional[EntourageSpec] = None
    certificate_entourage: Optional[EntourageSpec] = None
    grid: GridSpec = GridSpec()
    window: float = Field(default=10_000, gt=0)
    horizon: float = Field(default=100_000, gt=0)
    ladder: List[Annotated[int, Field(ge=1)]] = [100, 1_000, 10_000, 100_000]
    box_sides: Optional[List[Annotated[int, Field(ge=1)]]] = None
    translation: Optional[List[int]] = None
    witness: Optional[List[List[int]]] = None
    n_max: int = Field(default=1_000, ge=1)
    samples: int = Field(default=10_000, ge=1)
    k_max: Optional[int] = Field(default=None, ge=0)
    workers: int = Field(default_factory=_default_workers, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    output: OutputSpec = OutputSpec()

    def build_entourage(self) -> Entourage:
        if self.entourage is None:
            raise ConfigError("this command needs an 'entourage'")
        return self.entourage.build()

    def build_certificate_entourage(self) -> Optional[Entourage]:
        if self.certificate_entourage is None:
            return None
        return self.certificate_entourage.build()


def build_system(config: ExperimentConfig) -> DynamicalSystem:
    spec = config.system
    if isinstance(spec, LatticeSpec):
        raise ConfigError("a lattice visit set is not a dynamical system")
    try:
        return spec.build()
    except ValueError as exc:
        raise ConfigError(f"invalid system: {exc}") from exc


def build_point(system: DynamicalSystem, raw: Any) -> Any:
    """Read one configured base point for ``system``."""

    try:
        if isinstance(system, RotationSystem):
            return _angle(raw)
        if isinstance(system, SubstitutionSystem):
            spec = SymbolicPointSpec.model_validate(raw)
            return SymbolicPoint(spec.seed, spec.depth, spec.offset)
        if isinstance(system, (TorusZdAction, LinearFlow)):
            return TorusPoint(tuple(_angle(c) for c in raw))
        if isinstance(system, AnnulusSystem):
            level, theta = raw
            return AnnulusPoint(int(level), float(theta))
    except (TypeError, ValueError, ValidationError) as exc:
        raise ConfigError(f"bad base point {raw!r}: {exc}") from exc
    raise ConfigError(f"no base points for {system.name}")


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Parse and validate a configuration file.

    JSON syntax errors report line and column, schema errors the location
    path of the offending field.
    """

    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: {exc.msg}", line=exc.lineno, column=exc.colno
        ) from exc
    return parse_config(payload)


def parse_config(payload: Any) -> ExperimentConfig:
    if isinstance(payload, dict) and payload.get("version") not in (
        None,
        CONFIG_VERSION,
    ):
        raise ConfigError(
            f"unsupported config version {payload.get('version')!r}",
            expected=CONFIG_VERSION,
        )
    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as exc:
        problems = [
            {
                "loc": ".".join(str(part) for part in error["loc"]),
                "msg": error["msg"],
            }
            for error in exc.errors()
        ]
        raise ConfigError(
            f"invalid configuration: {problems[0]['loc']}: "
            f"{problems[0]['msg']}",
            problems=problems,
        ) from exc


def config_digest(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON dump; ``workers`` is excluded since
    it never changes results."""

    payload = config.model_dump(mode="json", exclude={"workers"})
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
