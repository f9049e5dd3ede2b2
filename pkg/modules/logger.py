# modules/logger.py

import logging
import os
from datetime import datetime
from dotenv import load_dotenv

class ColorFormatter(logging.Formatter):
    """Custom formatter that adds color to console log output."""
    COLORS = {
        "DEBUG": "\033[94m",  # Blue
        "INFO": "\033[92m",  # Green
        "WARNING": "\033[93m",  # Yellow
        "ERROR": "\033[91m",  # Red
        "CRITICAL": "\033[95m",  # Magenta
    }
    RESET = "\033[0m"

    def format(self, record):
        # Work on a copy so the file handler keeps the plain level name
        record = logging.makeLogRecord(record.__dict__)
        color = self.COLORS.get(record.levelname, self.RESET)
        record.levelname = f"{color}{record.levelname}{self.RESET}"
        return super().format(record)

load_dotenv()

def to_bool(value):
    """Convert string to boolean."""
    return str(value).lower() in ("1", "true", "yes", "on")

DEBUG_MODE = to_bool(os.getenv("DEBUG", "false"))
LOG_TO_FILE = to_bool(os.getenv("OS2_LOG_TO_FILE", "true"))
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def setup_logger(log_folder=None, level=logging.INFO, to_file=None):
    """
    Sets up the os2 logger with file and console handlers.
    If DEBUG mode is active, level is set to DEBUG.

    :param log_folder: Folder for log files (defaults to $OS2_LOG_DIR or "logs")
    :param level: Logging level
    :param to_file: Write a timestamped log file (defaults to $OS2_LOG_TO_FILE)
    """
    if level == logging.INFO and DEBUG_MODE:
        level = logging.DEBUG
    if log_folder is None:
        log_folder = os.getenv("OS2_LOG_DIR", "logs")
    if to_file is None:
        to_file = LOG_TO_FILE

    logger = logging.getLogger("os2")
    logger.setLevel(level)
    logger.propagate = False

    # Remove existing handlers to avoid duplicates
    if logger.hasHandlers():
        logger.handlers.clear()

    if to_file:
        os.makedirs(log_folder, exist_ok=True)
        now = datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
        log_file = os.path.join(log_folder, f"os2_{now}.log")
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setLevel(level)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
        logger.addHandler(file_handler)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(ColorFormatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    logger.addHandler(console_handler)

    return logger


def set_level(level):
    """Change the level of the os2 logger and all of its handlers."""
    logger.setLevel(level)
    for handler in logger.handlers:
        handler.setLevel(level)


# Initialize once
logger = setup_logger()
