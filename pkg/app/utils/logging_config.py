import logging
import os
import sys

DEFAULT_LOG_LEVEL = logging.INFO
# Concise, readable format
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
LOG_FILE_NAME = 'run.log'


def setup_logging(level=DEFAULT_LOG_LEVEL, log_dir: str | None = None):
    """Configures root logging for the CLI.

    Console output goes to stdout. When ``log_dir`` is given a ``run.log`` file
    handler is attached as well; result files never receive log lines.
    """
    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    # Remove any existing handlers to avoid duplicate messages on re-configuration
    if root_logger.hasHandlers():
        for handler in root_logger.handlers[:]:
            root_logger.removeHandler(handler)
            handler.close()

    formatter = logging.Formatter(LOG_FORMAT)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        file_handler = logging.FileHandler(os.path.join(log_dir, LOG_FILE_NAME), mode='w', encoding='utf-8')
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)

    # Quiet hypothesis when the test suite reuses this setup
    logging.getLogger('hypothesis').setLevel(logging.WARNING)

    logging.info("Root logging configured.")


def parse_log_level(log_level_name: str | None) -> int:
    """Translate a level name into the numeric level; raises ValueError on junk."""
    if log_level_name is None:
        return DEFAULT_LOG_LEVEL
    numeric_log_level = getattr(logging, str(log_level_name).upper(), None)
    if not isinstance(numeric_log_level, int):
        raise ValueError(f'Invalid log level: {log_level_name}')
    return numeric_log_level
