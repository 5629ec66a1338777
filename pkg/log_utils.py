import os
import logging
from datetime import datetime

# Handlers installed by the last setup_logging call
_installed_handlers = []

def setup_logging(log_file_prefix, logging_level=logging.INFO, log_dir="logs"):
    """
    Sets up logging configuration for the experiment runner.

    Creates the log directory and configures the root logger to write both to a timestamped
    log file and the console. Calling it again (e.g. several CLI runs in one process) replaces
    the handlers installed by the previous call.

    Args:
        log_file_prefix: String prefix to use in the log filename
        logging_level: Logging level to use (default: logging.INFO)
        log_dir: Directory receiving the log file (default: "logs")

    Returns:
        logger: A configured logging.Logger instance ready for use
    """
    os.makedirs(log_dir, exist_ok=True)

    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    log_file = os.path.join(log_dir, f"{log_file_prefix}_{timestamp}.log")

    root = logging.getLogger()
    for handler in _installed_handlers:
        root.removeHandler(handler)
        handler.close()
    _installed_handlers.clear()

    formatter = logging.Formatter('%(asctime)s - %(levelname)s - %(message)s')
    for handler in (logging.FileHandler(log_file, encoding='utf-8'), logging.StreamHandler()):
        handler.setFormatter(formatter)
        root.addHandler(handler)
        _installed_handlers.append(handler)
    root.setLevel(logging_level)

    logger = logging.getLogger(__name__)
    logger.info(f"Log file created at: {log_file}")
    return logger
