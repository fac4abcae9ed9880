import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import partial
from typing import (
    Any,
    Callable,
    ContextManager,
    Dict,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
from loguru import logger

from recurrence.application.config import (
    ExperimentConfig,
    LatticeSpec,
    build_point,
    build_system,
    config_digest,
)
from recurrence.application.repositories import ReportRepository
from recurrence.domain.amenable import (
    ExplicitVisitSet,
    FolnerBox,
    LatticeCosetSet,
    SyndeticWitness,
    VisitSet,
    amenable_uniform_bound,
    ap_characterization,
    box_ladder,
    folner_defect,
    folner_set_defect,
    lemma42_check,
    lemma42_threshold,
    lemma43_density,
)
from recurrence.domain.covering import (
    BaseGrid,
    CoveringCertificate,
    Mapper,
    check_certificate,
    covering_certificate,
    default_grid,
    torus_grid,
    verify_uniform_bound,
)
from recurrence.domain.entourage import Entourage, MetricBall
from recurrence.domain.errors import (
    BoundViolationError,
    ConfigError,
    CoveringSearchError,
    IncomparablePointsError,
)
from recurrence.domain.flow import (
    LinearFlow,
    flow_uniform_bound,
    lemma16_constants,
    refined_quadrature,
    sample_lemma16,
    visit_intervals,
)
from recurrence.domain.report import REPORT_COLUMNS, DensityReport
from recurrence.domain.returns import (
    CSV_COLUMNS,
    Window,
    density_curve,
    estimate_row,
    max_gap,
    return_set,
)
from recurrence.domain.systems import (
    AnnulusPoint,
    AnnulusSystem,
    DynamicalSystem,
    RotationSystem,
    SubstitutionSystem,
    TorusZdAction,
)

PoolFactory = Callable[[int], ContextManager[Mapper]]

FOLNER_COLUMNS = (
    "side",
    "volume",
    "defect",
    "lemma42_ratio",
    "frequency",
    "exact_bound",
    "box_banach_density",
    "thick_witness",
)
PROBE_COLUMNS = ("n", "defect", "formula", "deviation", "radius_kept")
# Tolerances for the numerical cross-checks.
PROBE_TOLERANCE = 1e-9
QUADRATURE_TOLERANCE = 1e-6
QUADRATURE_HORIZON = 100.0
# Base points spot-checked when a stored certificate is replayed.
REPLAY_SAMPLE = 16


@contextmanager
def serial_pool(workers: int) -> Iterator[Mapper]:
    """In-process stand-in for a work pool."""

    del workers
    yield map


@dataclass
class RunReport:
    command: str
    config_digest: str
    payload: Dict[str, Any]
    columns: Tuple[str, ...]
    rows: List[Dict[str, Any]]
    passed: bool
    wall_clock: float = field(default=0.0, compare=False)

    def to_payload(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "config_digest": self.config_digest,
            "passed": self.passed,
            **self.payload,
        }


def _whole(value: float, label: str) -> int:
    if float(value) != int(value):
        raise ConfigError(f"'{label}' must be an integer here")
    return int(value)


def _density_rows(
    system: DynamicalSystem,
    entourage: Entourage,
    horizon: int,
    ladder: Sequence[int],
    point: Any,
) -> List[Dict[str, Any]]:
    profile = return_set(system, point, point, entourage, Window(0, horizon))
    return [
        estimate_row(system, profile, estimate)
        for estimate in density_curve(profile, horizon, ladder)
    ]


class ExperimentService:
    """Runs configured experiments and hands results to a repository."""

    def __init__(
        self,
        repository: ReportRepository,
        pool_factory: PoolFactory = serial_pool,
    ) -> None:
        self._repo = repository
        self._pool = pool_factory

    def bound(
        self, config: ExperimentConfig, certificate: Optional[str] = None
    ) -> RunReport:
        """Certify the uniform recurrence bound on a grid of base points."""

        started = time.perf_counter()
        system = build_system(config)
        entourage = config.build_entourage()
        grid = self._grid(config, system, entourage)
        stored = (
            self._replay(certificate, system, entourage, grid)
            if certificate
            else None
        )
        cover = config.build_certificate_entourage()
        logger.info(
            "bound: {} at {} over {} base points",
            system.name,
            entourage.describe(),
            len(grid.points),
        )
        with self._pool(config.workers) as mapper:
            report = self._bound_report(
                config, system, entourage, grid, stored, cover, mapper
            )
        return self._finish(
            "bound",
            config,
            report.to_payload(),
            REPORT_COLUMNS,
            report.csv_rows(),
            report.passed,
            started,
        )

    def _bound_report(
        self,
        config: ExperimentConfig,
        system: DynamicalSystem,
        entourage: Entourage,
        grid: BaseGrid,
        stored: Optional[CoveringCertificate],
        cover: Optional[Entourage],
        mapper: Mapper,
    ) -> DensityReport:
        if isinstance(system, LinearFlow):
            ball = _ball(entourage)
            return flow_uniform_bound(
                system,
                ball,
                grid,
                config.window,
                config.horizon,
                _ball(cover) if cover else None,
                stored,
                mapper,
            )
        window = _whole(config.window, "window")
        horizon = _whole(config.horizon, "horizon")
        if isinstance(system, TorusZdAction) and system.d > 1:
            if config.box_sides is None:
                raise ConfigError("Z^d actions need 'box_sides'")
            return amenable_uniform_bound(
                system,
                _ball(entourage),
                grid,
                config.box_sides,
                horizon,
                stored,
                _ball(cover) if cover else None,
                mapper,
            )
        if not isinstance(
            system, (RotationSystem, SubstitutionSystem, TorusZdAction)
        ):
            raise ConfigError(f"no uniform bound for {system.name}")
        if stored is None:
            stored = covering_certificate(
                system, cover or entourage.third(), config.k_max
            )
            logger.info(
                "certificate: K={} at {}",
                stored.K,
                stored.entourage.describe(),
            )
        return verify_uniform_bound(
            system, entourage, grid, window, horizon, stored, mapper
        )

    def _replay(
        self,
        location: str,
        system: DynamicalSystem,
        entourage: Entourage,
        grid: BaseGrid,
    ) -> CoveringCertificate:
        try:
            certificate = CoveringCertificate.from_payload(
                self._repo.load_certificate(location)
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"unreadable certificate: {exc}") from exc
        if certificate.system_digest != system.digest():
            raise ConfigError("stored certificate is for another system")
        if not entourage.contains(certificate.entourage):
            raise ConfigError(
                f"stored certificate at {certificate.entourage.describe()} "
                f"does not fit {entourage.describe()}"
            )
        if isinstance(system, (RotationSystem, SubstitutionSystem)):
            sample = grid.points[:REPLAY_SAMPLE]
            failures = check_certificate(certificate, system, sample, sample)
            if failures:
                raise CoveringSearchError(
                    f"stored certificate fails on {len(failures)} pairs",
                    failures=len(failures),
                )
        logger.info("certificate: replayed K={}", certificate.K)
        return certificate

    def density(self, config: ExperimentConfig) -> RunReport:
        """Finite-horizon curves ``W -> min frequency`` per base point."""

        started = time.perf_counter()
        horizon = _whole(config.horizon, "horizon")
        if isinstance(config.system, LatticeSpec):
            visits = config.system.build()
            if visits.d != 1:
                raise ConfigError("density curves need a subset of Z")
            rows = _lattice_rows(config.system.name, visits, horizon, config)
            name = config.system.name
        else:
            system = build_system(config)
            if isinstance(system, LinearFlow) or (
                isinstance(system, TorusZdAction) and system.d > 1
            ):
                raise ConfigError("density curves need a Z-action")
            entourage = config.build_entourage()
            grid = self._grid(config, system, entourage)
            scan = partial(
                _density_rows, system, entourage, horizon, config.ladder
            )
            with self._pool(config.workers) as mapper:
                rows = [
                    row for chunk in mapper(scan, grid.points) for row in chunk
                ]
            name = system.name
        logger.info("density: {} rows for {}", len(rows), name)
        payload = {
            "system": name,
            "horizon": horizon,
            "ladder": list(config.ladder),
            "rows": rows,
        }
        return self._finish(
            "density", config, payload, CSV_COLUMNS, rows, True, started
        )

    def folner(self, config: ExperimentConfig) -> RunReport:
        """Følner defects, the box-intersection test and the recurrence
        dichotomy along a ladder of cubes."""

        started = time.perf_counter()
        visits, name = self._visit_set(config)
        d = visits.d if visits is not None else len(config.box_sides or [1])
        boxes = box_ladder(d, config.ladder)
        translation = config.translation or [1] + [0] * (d - 1)
        if len(translation) != d:
            raise ConfigError(f"'translation' must have {d} entries")
        K = [tuple(k) for k in config.witness or []]
        if any(len(k) != d for k in K):
            raise ConfigError(f"'witness' vectors must have {d} entries")
        payload: Dict[str, Any] = {"system": name, "d": d}
        if K:
            payload["lemma42_threshold"] = lemma42_threshold(d, K)
            payload["set_defects"] = [
                str(folner_set_defect(box, K)) for box in boxes
            ]
        ladder = None
        verdict = None
        if visits is not None:
            if K:
                region = _witness_region(boxes, K)
                try:
                    witness = SyndeticWitness(tuple(K), region, visits)
                except ValueError as exc:
                    raise ConfigError(f"invalid witness: {exc}") from exc
                ladder = lemma43_density(visits, witness, boxes)
                payload["lemma43"] = ladder.to_payload()
            region = (
                visits.region
                if isinstance(visits, ExplicitVisitSet)
                else FolnerBox.cube(d, max(config.ladder) * 2)
            )
            verdict = ap_characterization(visits, config.ladder, region)
            payload["dichotomy"] = verdict.to_payload()
        rows = []
        for index, box in enumerate(boxes):
            check = lemma42_check(box, K) if K else None
            row: Dict[str, Any] = {
                "side": box.sides[0],
                "volume": box.volume,
                "defect": str(folner_defect(box, translation)),
                "lemma42_ratio": "" if check is None else str(check.ratio),
                "frequency": "",
                "exact_bound": "",
                "box_banach_density": "",
                "thick_witness": "",
            }
            if ladder is not None:
                row["frequency"] = str(ladder.frequencies[index])
                row["exact_bound"] = str(ladder.exact_bounds[index])
            if verdict is not None:
                row["box_banach_density"] = str(verdict.densities[index][1])
                witnesses = {w.sides[0]: w for w in verdict.witnesses}
                if box.sides[0] in witnesses:
                    corner = witnesses[box.sides[0]].corner
                    row["thick_witness"] = " ".join(str(c) for c in corner)
            rows.append(row)
        payload["rows"] = rows
        logger.info("folner: {} boxes in Z^{}", len(boxes), d)
        return self._finish(
            "folner", config, payload, FOLNER_COLUMNS, rows, True, started
        )

    def _visit_set(
        self, config: ExperimentConfig
    ) -> Tuple[Optional[VisitSet], str]:
        spec = config.system
        if isinstance(spec, LatticeSpec):
            return spec.build(), spec.name
        if config.entourage is None:
            return None, spec.name or spec.kind
        system = build_system(config)
        if not isinstance(
            system, (RotationSystem, SubstitutionSystem)
        ) and not (isinstance(system, TorusZdAction) and system.d == 1):
            raise ConfigError("visit sets are read from Z-actions")
        entourage = config.build_entourage()
        horizon = _whole(config.horizon, "horizon")
        point = self._grid(config, system, entourage).points[0]
        profile = return_set(
            system, point, point, entourage, Window(0, horizon)
        )
        logger.info(
            "folner: visit set of {} with max gap {}",
            system.describe_point(point),
            max_gap(profile.times, profile.window),
        )
        return (
            ExplicitVisitSet.from_times(profile.times, 0, horizon),
            system.name,
        )

    def flow(self, config: ExperimentConfig) -> RunReport:
        """Continuous-time bound plus the sampling and quadrature checks."""

        started = time.perf_counter()
        system = build_system(config)
        if not isinstance(system, LinearFlow):
            raise ConfigError("the flow command needs a 'flow' system")
        ball = _ball(config.build_entourage())
        grid = self._grid(config, system, ball)
        constants = lemma16_constants(system, ball)
        sample = sample_lemma16(
            system, constants, config.samples, config.seed
        )
        if sample.violations:
            raise BoundViolationError(
                f"flow constants failed on {sample.violations} samples"
            )
        start = grid.points[0]
        end = min(float(config.horizon), QUADRATURE_HORIZON)
        exact = visit_intervals(system, start, ball, 0.0, end).total_measure
        oracle = refined_quadrature(system, start, ball, 0.0, end)
        relative = abs(exact - oracle) / max(oracle, end * 1e-12)
        if relative > QUADRATURE_TOLERANCE:
            raise BoundViolationError(
                f"visit measure {exact} disagrees with quadrature {oracle}"
            )
        cover = config.build_certificate_entourage()
        with self._pool(config.workers) as mapper:
            report = flow_uniform_bound(
                system,
                ball,
                grid,
                config.window,
                config.horizon,
                _ball(cover) if cover else None,
                None,
                mapper,
            )
        payload = report.to_payload()
        payload["lemma16"] = {
            **constants.to_payload(),
            "samples": sample.samples,
            "violations": sample.violations,
            "seed": config.seed,
        }
        payload["quadrature"] = {
            "window": [0.0, end],
            "exact": exact,
            "oracle": oracle,
            "relative_error": relative,
        }
        return self._finish(
            "flow",
            config,
            payload,
            REPORT_COLUMNS,
            report.csv_rows(),
            report.passed,
            started,
        )

    def probe(self, config: ExperimentConfig) -> RunReport:
        """Equicontinuity defect of the annulus map for ``n <= n_max``."""

        started = time.perf_counter()
        system = build_system(config)
        if not isinstance(system, AnnulusSystem):
            raise ConfigError("the probe command needs an 'annulus' system")
        rows = []
        worst = 0.0
        for n in range(1, config.n_max + 1):
            defect = system.equicontinuity_defect(n)
            formula = system.defect_formula(n)
            deviation = abs(defect - formula)
            worst = max(worst, deviation)
            moved = system.iterate(AnnulusPoint(2 * n, 0.0), 2 * n)
            rows.append(
                {
                    "n": n,
                    "defect": defect,
                    "formula": formula,
                    "deviation": deviation,
                    "radius_kept": moved.level == 2 * n,
                }
            )
        kept = all(row["radius_kept"] for row in rows)
        passed = worst <= PROBE_TOLERANCE and kept
        logger.info("probe: worst deviation {:.3g}", worst)
        payload = {
            "system": system.name,
            "system_digest": system.digest(),
            "n_max": config.n_max,
            "max_deviation": worst,
            "tolerance": PROBE_TOLERANCE,
            "radius_invariant": kept,
            "rows": rows,
        }
        return self._finish(
            "probe", config, payload, PROBE_COLUMNS, rows, passed, started
        )

    def _grid(
        self,
        config: ExperimentConfig,
        system: DynamicalSystem,
        entourage: Entourage,
    ) -> BaseGrid:
        spec = config.grid
        if spec.kind == "points":
            if not spec.points:
                raise ConfigError("'grid.points' is empty")
            points = tuple(build_point(system, raw) for raw in spec.points)
            return BaseGrid(points, False, f"points:{len(points)}")
        if isinstance(system, LinearFlow):
            return torus_grid(2, spec.size or 4)
        try:
            return default_grid(system, entourage, spec.size)
        except IncomparablePointsError as exc:
            raise ConfigError(f"{exc}; list 'grid.points'") from exc

    def _finish(
        self,
        command: str,
        config: ExperimentConfig,
        payload: Dict[str, Any],
        columns: Sequence[str],
        rows: List[Dict[str, Any]],
        passed: bool,
        started: float,
    ) -> RunReport:
        run = RunReport(
            command,
            config_digest(config),
            payload,
            tuple(columns),
            rows,
            passed,
            time.perf_counter() - started,
        )
        stem = config.output.stem
        self._repo.save_report(stem, run.to_payload())
        self._repo.save_rows(stem, run.columns, run.rows)
        self._repo.save_timing(
            stem,
            {
                "command": command,
                "config_digest": run.config_digest,
                "wall_clock_seconds": run.wall_clock,
                "workers": config.workers,
            },
        )
        logger.info(
            "{}: {} in {:.2f}s",
            command,
            "passed" if passed else "FAILED",
            run.wall_clock,
        )
        return run


def _ball(entourage: Entourage) -> MetricBall:
    if not isinstance(entourage, MetricBall):
        raise ConfigError("this system needs a metric ball entourage")
    return entourage


def _witness_region(
    boxes: Sequence[FolnerBox], K: Sequence[Sequence[int]]
) -> FolnerBox:
    """Smallest box holding every ladder box and its ``K``-cores."""

    d = boxes[0].d
    low = [min(0, -max(k[i] for k in K)) for i in range(d)]
    high = [max(b.upper[i] for b in boxes) for i in range(d)]
    return FolnerBox(
        tuple(low), tuple(h - lo for h, lo in zip(high, low))
    )


def _lattice_rows(
    name: str,
    visits: LatticeCosetSet,
    horizon: int,
    config: ExperimentConfig,
) -> List[Dict[str, Any]]:
    indicator = visits.mask(FolnerBox((0,), (horizon,)))
    times = np.flatnonzero(indicator)
    gap = max_gap(times, Window(0, horizon))
    rows = []
    for estimate in density_curve(times, horizon, config.ladder):
        rows.append(
            {
                "system": name,
                "x": "-",
                "epsilon": "-",
                "M": estimate.argmin_window.start,
                "N": estimate.argmin_window.end,
                "count": int(
                    estimate.min_frequency * estimate.window_length
                ),
                "max_gap": gap,
                "frequency": str(estimate.min_frequency),
            }
        )
    return rows
