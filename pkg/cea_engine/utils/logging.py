"""Engine-wide logger: colored console output plus an optional timestamped log file."""
import logging
import os
import sys
from datetime import datetime

from dotenv import load_dotenv

load_dotenv()

DATETIME = datetime.now().strftime('%Y-%m-%d-%H%M%S')
LOG_DIR = os.environ.get("CEA_ENGINE_LOG_DIR")
LOG_FILE = os.path.join(LOG_DIR, f"cea-engine-{DATETIME}.log") if LOG_DIR else None
LOG_LEVEL = os.environ.get("CEA_ENGINE_LOG_LEVEL", "INFO").upper()

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(name)s - %(message)s'


class ColoredFormatter(logging.Formatter):
    """Console formatter that colors each record by level when stderr is a terminal."""

    LEVEL_COLORS = {
        logging.DEBUG: '\033[36m',
        logging.INFO: '\033[32m',
        logging.WARNING: '\033[33m',
        logging.ERROR: '\033[31m',
        logging.CRITICAL: '\033[35m',
    }
    RESET = '\033[0m'

    def __init__(self, fmt=LOG_FORMAT, use_color=None):
        super().__init__(fmt)
        self.use_color = sys.stderr.isatty() if use_color is None else use_color

    def format(self, record):
        text = super().format(record)
        color = self.LEVEL_COLORS.get(record.levelno)
        if self.use_color and color:
            return f"{color}{text}{self.RESET}"
        return text


def setup_logger(name, log_file=LOG_FILE, level=LOG_LEVEL, console=True):
    """Set up a logger with console output and an optional log file.

    Args:
        name (str): Name of the logger
        log_file (str | None): Path to the log file; no file handler when None
        level (int | str): Logging level (default: CEA_ENGINE_LOG_LEVEL or INFO)
        console (bool): Whether to output logs to stderr (default: True)

    Returns:
        logging.Logger: Configured logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.propagate = False

    # Clear existing handlers to avoid duplicate logging
    if logger.hasHandlers():
        logger.handlers.clear()

    if log_file:
        os.makedirs(os.path.dirname(log_file) or ".", exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(level)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(file_handler)

    if console:
        console_handler = logging.StreamHandler()
        console_handler.setLevel(level)
        console_handler.setFormatter(ColoredFormatter())
        logger.addHandler(console_handler)

    return logger


def set_level(level):
    """Change the level of the shared engine logger and its handlers."""
    logger.setLevel(level)
    for handler in logger.handlers:
        handler.setLevel(level)


logger = setup_logger('CEA_Engine_Logger')
