from abc import ABC, abstractmethod
from typing import Any, Dict, Sequence


class ReportRepository(ABC):
    """Abstract sink for run reports.

    Infrastructure implementations decide where and how artifacts are
    stored; the service only hands over JSON-ready payloads and rows.
    """

    @abstractmethod
    def save_report(self, stem: str, payload: Dict[str, Any]) -> None:
        """Persist the self-contained JSON report for ``stem``."""

    @abstractmethod
    def save_rows(
        self,
        stem: str,
        columns: Sequence[str],
        rows: Sequence[Dict[str, Any]],
    ) -> None:
        """Persist a table with a fixed column order."""

    @abstractmethod
    def save_timing(self, stem: str, payload: Dict[str, Any]) -> None:
        """Persist wall-clock data kept apart from the replayable report."""

    @abstractmethod
    def load_certificate(self, location: str) -> Dict[str, Any]:
        """Return a stored certificate payload."""
