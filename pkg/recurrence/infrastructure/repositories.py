import csv
import json
from pathlib import Path
from typing import Any, Dict, Sequence, Union

from loguru import logger

from recurrence.application.repositories import ReportRepository
from recurrence.domain.errors import ConfigError


class FileReportRepository(ReportRepository):
    """Writes ``<stem>.json``, ``<stem>.csv`` and ``<stem>.timing.json``
    under one output directory."""

    def __init__(self, directory: Union[str, Path]) -> None:
        self._directory = Path(directory)

    def _path(self, name: str) -> Path:
        self._directory.mkdir(parents=True, exist_ok=True)
        return self._directory / name

    def _write_json(self, path: Path, payload: Dict[str, Any]) -> None:
        text = json.dumps(payload, sort_keys=True, indent=2)
        path.write_text(text + "\n", encoding="utf-8")
        logger.debug("wrote {}", path)

    def save_report(self, stem: str, payload: Dict[str, Any]) -> None:
        self._write_json(self._path(f"{stem}.json"), payload)

    def save_rows(
        self,
        stem: str,
        columns: Sequence[str],
        rows: Sequence[Dict[str, Any]],
    ) -> None:
        path = self._path(f"{stem}.csv")
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.DictWriter(
                handle, fieldnames=list(columns), lineterminator="\r\n"
            )
            writer.writeheader()
            for row in rows:
                writer.writerow({column: row[column] for column in columns})
        logger.debug("wrote {} rows to {}", len(rows), path)

    def save_timing(self, stem: str, payload: Dict[str, Any]) -> None:
        self._write_json(self._path(f"{stem}.timing.json"), payload)

    def load_certificate(self, location: str) -> Dict[str, Any]:
        """Accepts a bare certificate or a report that embeds one."""

        try:
            payload = json.loads(Path(location).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read {location}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"{location}: {exc.msg}", line=exc.lineno, column=exc.colno
            ) from exc
        if isinstance(payload, dict) and "certificate" in payload:
            payload = payload["certificate"]
        if not isinstance(payload, dict):
            raise ConfigError(f"{location} holds no certificate")
        return payload
