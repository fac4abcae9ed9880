from contextlib import contextmanager
from multiprocessing import Pool
from typing import Iterator

from loguru import logger

from recurrence.domain.covering import Mapper


@contextmanager
def process_pool(workers: int) -> Iterator[Mapper]:
    """Order-preserving ``map`` over worker processes.

    A single worker runs in-process with the builtin ``map``.
    """

    if workers <= 1:
        yield map
        return
    logger.debug("starting {} worker processes", workers)
    with Pool(processes=workers) as pool:
        yield pool.imap
