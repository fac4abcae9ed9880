from loguru import logger

# Library use stays quiet; the command line turns logging back on.
logger.disable("recurrence")
