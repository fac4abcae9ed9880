from pathlib import Path
from typing import Union

from recurrence.application.services import ExperimentService
from recurrence.infrastructure.pool import process_pool
from recurrence.infrastructure.repositories import FileReportRepository


class FileExperimentService(ExperimentService):
    """Experiment service writing into ``directory`` with a process pool."""

    def __init__(self, directory: Union[str, Path]) -> None:
        super().__init__(FileReportRepository(directory), process_pool)
