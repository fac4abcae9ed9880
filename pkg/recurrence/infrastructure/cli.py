"""Command line front door: ``bound``, ``density``, ``folner``, ``flow``
and ``probe``.

Exit status: 0 ok, 1 bound violation, 2 configuration error, 3 error
budget refusal, 4 not minimal or no covering found, 5 any other refusal.
"""
import json
from pathlib import Path
from typing import Any, Callable, Dict, NoReturn, Optional, Sequence

import click
from loguru import logger

from recurrence.application.config import ExperimentConfig, load_config
from recurrence.application.services import RunReport
from recurrence.domain.errors import (
    BoundViolationError,
    ConfigError,
    RecurrenceError,
)
from recurrence.infrastructure.services import FileExperimentService

EXIT_CODES = {
    "bound-violation": 1,
    "config-error": 2,
    "budget-refusal": 3,
    "not-minimal": 4,
    "not-primitive": 4,
    "covering-refusal": 4,
}
OTHER_REFUSAL = 5
LOG_LEVELS = ["TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR"]


def _configure_logging(level: str) -> None:
    logger.remove()
    logger.enable("recurrence")
    logger.add(
        lambda message: click.echo(message, err=True, nl=False),
        level=level,
        format="{time:HH:mm:ss} | {level: <7} | {message}",
    )


def _refuse(ctx: click.Context, error: RecurrenceError) -> NoReturn:
    click.echo(json.dumps(error.as_payload(), default=str), err=True)
    ctx.exit(EXIT_CODES.get(error.reason, OTHER_REFUSAL))


def _run(
    ctx: click.Context,
    command: str,
    config_path: str,
    out: str,
    workers: Optional[int],
    seed: Optional[int],
    **extra: Any,
) -> None:
    try:
        config = load_config(config_path)
        updates: Dict[str, Any] = {}
        if workers is not None:
            updates["workers"] = workers
        if seed is not None:
            updates["seed"] = seed
        config = ExperimentConfig.model_validate(
            {**config.model_dump(), **updates}
        )
        service = FileExperimentService(out)
        run: RunReport = getattr(service, command)(config, **extra)
    except RecurrenceError as error:
        _refuse(ctx, error)
    except ValueError as error:
        _refuse(ctx, ConfigError(str(error)))
    report = Path(out) / f"{config.output.stem}.json"
    click.echo(
        json.dumps(
            {
                "command": command,
                "config_digest": run.config_digest,
                "passed": run.passed,
                "report": str(report),
            },
            sort_keys=True,
        )
    )
    if not run.passed:
        _refuse(
            ctx,
            BoundViolationError(
                f"{command} found violations; see {report}"
            ),
        )


def _common(function: Callable[..., Any]) -> Callable[..., Any]:
    options = [
        click.option(
            "--config",
            "config_path",
            required=True,
            type=click.Path(exists=True, dir_okay=False),
            help="Experiment configuration (JSON).",
        ),
        click.option(
            "--out",
            default="out",
            show_default=True,
            type=click.Path(file_okay=False),
            help="Directory for reports.",
        ),
        click.option(
            "--workers",
            type=click.IntRange(min=1),
            default=None,
            help="Worker processes (overrides the config).",
        ),
        click.option(
            "--seed",
            type=click.IntRange(min=0, max=2**64 - 1),
            default=None,
            help="Seed for sampling checks (overrides the config).",
        ),
    ]
    for option in reversed(options):
        function = option(function)
    return click.pass_context(function)


@click.group()
@click.option(
    "--log-level",
    type=click.Choice(LOG_LEVELS, case_sensitive=False),
    default="INFO",
    show_default=True,
)
def cli(log_level: str) -> None:
    """Certified recurrence bounds for minimal systems."""

    _configure_logging(log_level.upper())


@cli.command()
@click.option(
    "--certificate",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Replay a stored covering certificate.",
)
@_common
def bound(
    ctx: click.Context,
    config_path: str,
    out: str,
    workers: Optional[int],
    seed: Optional[int],
    certificate: Optional[str],
) -> None:
    """Certify 1/(K+1) against measured window frequencies."""

    _run(
        ctx,
        "bound",
        config_path,
        out,
        workers,
        seed,
        certificate=certificate,
    )


@cli.command()
@_common
def density(
    ctx: click.Context,
    config_path: str,
    out: str,
    workers: Optional[int],
    seed: Optional[int],
) -> None:
    """Minimum window frequency for each window length of the ladder."""

    _run(ctx, "density", config_path, out, workers, seed)


@cli.command()
@_common
def folner(
    ctx: click.Context,
    config_path: str,
    out: str,
    workers: Optional[int],
    seed: Optional[int],
) -> None:
    """Følner defects, box intersections and the recurrence dichotomy."""

    _run(ctx, "folner", config_path, out, workers, seed)


@cli.command()
@_common
def flow(
    ctx: click.Context,
    config_path: str,
    out: str,
    workers: Optional[int],
    seed: Optional[int],
) -> None:
    """Continuous-time bound for a linear flow on the 2-torus."""

    _run(ctx, "flow", config_path, out, workers, seed)


@cli.command()
@_common
def probe(
    ctx: click.Context,
    config_path: str,
    out: str,
    workers: Optional[int],
    seed: Optional[int],
) -> None:
    """Equicontinuity defect of the annulus twist map."""

    _run(ctx, "probe", config_path, out, workers, seed)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        result = cli.main(
            args=argv, prog_name="recurrence", standalone_mode=False
        )
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.Abort:
        return 1
    return int(result or 0)
