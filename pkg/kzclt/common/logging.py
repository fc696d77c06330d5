import logging
from pathlib import Path

logging.basicConfig(level=logging.INFO, format="[%(name)s] %(message)s")

_level = logging.INFO


def get_logger(name: str):
    """
    Get a logger named after the module file.

    For example in kzclt/brownian/sde.py

        logger = get_logger(__file__)
        logger.info("Simulating 2000 paths")

    Will log:

        > [sde] Simulating 2000 paths
    """

    logger = logging.getLogger(Path(name).stem)
    logger.setLevel(_level)
    return logger


def set_verbose(verbose: bool) -> None:
    """Switch every logger handed out by get_logger to DEBUG (or back to INFO)."""
    global _level
    _level = logging.DEBUG if verbose else logging.INFO
    for logger in logging.Logger.manager.loggerDict.values():
        if isinstance(logger, logging.Logger):
            logger.setLevel(_level)
