"""
Logging setup for the redapt command and scripts.

Library modules only call ``logging.getLogger(__name__)``; handlers are
attached here, to the ``redapt`` package logger, once per command.
"""

import logging
import os

from tqdm import tqdm

PACKAGE_LOGGER = 'redapt'
DEFAULT_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class TqdmHandler(logging.StreamHandler):
    """Console handler that writes through tqdm so active progress bars stay intact."""

    def emit(self, record):
        try:
            tqdm.write(self.format(record), file=self.stream)
            self.flush()
        except Exception:
            self.handleError(record)


def setup_logging(log_file=None, level=logging.INFO, format_string=None):
    """
    Configure the ``redapt`` logger.

    Args:
        log_file: optional path of a log file; its directory is created if needed
        level: level for the package logger and its handlers
        format_string: record format (default: time - name - level - message)

    Returns:
        logging.Logger: the package logger
    """
    formatter = logging.Formatter(format_string or DEFAULT_FORMAT)
    logger = logging.getLogger(PACKAGE_LOGGER)
    # A second call (tests, repeated CLI invocations) replaces the handlers
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    console = TqdmHandler()
    console.setFormatter(formatter)
    logger.addHandler(console)

    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    logger.setLevel(level)
    logger.propagate = False
    return logger
