from config.Config import get_config
import logging
import sys
import os
from datetime import datetime
from logging.handlers import RotatingFileHandler

# Logger-name keyword -> area log file prefix. First match wins.
AREA_LOGS = (
    ('synthdata', 'synthdata'),
    ('train', 'train'),
    ('quant', 'quantize'),
    ('hqs', 'hqs'),
    ('inference', 'inference'),
    ('evaluation', 'evaluation'),
    ('metrics', 'evaluation'),
    ('pipeline', 'pipeline'),
    ('parser', 'parser'),
    ('database', 'database'),
)


def get_logger(name: str) -> logging.Logger:
    """
    Get configured logger instance with multiple handlers for different purposes

    Args:
        name: Logger name (usually __name__ from the calling module)

    Returns:
        Configured logger instance
    """
    config = get_config()
    log_dir = config.LOG_DIR
    os.makedirs(log_dir, exist_ok=True)

    date_suffix = datetime.now().strftime('%Y%m%d')
    consolidated_log = os.path.join(log_dir, f"consolidated_{date_suffix}.log")
    error_log = os.path.join(log_dir, f"error_{date_suffix}.log")

    logger = logging.getLogger(name)
    logger.setLevel(logging.DEBUG)
    logger.propagate = False

    # Remove existing handlers to prevent duplicates
    if logger.hasHandlers():
        for handler in list(logger.handlers):
            handler.close()
        logger.handlers.clear()

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - [%(levelname)s] - %(message)s'
    )

    handlers = []

    consolidated_handler = RotatingFileHandler(
        consolidated_log,
        maxBytes=10*1024*1024,  # 10MB
        backupCount=10
    )
    consolidated_handler.setLevel(logging.DEBUG)
    handlers.append(consolidated_handler)

    # Area-specific handler based on logger name
    name_lower = name.lower()
    for keyword, prefix in AREA_LOGS:
        if keyword in name_lower:
            area_handler = RotatingFileHandler(
                os.path.join(log_dir, f"{prefix}_{date_suffix}.log"),
                maxBytes=10*1024*1024,
                backupCount=5
            )
            area_handler.setLevel(logging.DEBUG)
            handlers.append(area_handler)
            break

    error_handler = RotatingFileHandler(
        error_log,
        maxBytes=10*1024*1024,
        backupCount=5
    )
    error_handler.setLevel(logging.ERROR)
    handlers.append(error_handler)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(getattr(logging, str(config.LOG_LEVEL).upper(), logging.INFO))
    handlers.append(console_handler)

    for handler in handlers:
        handler.setFormatter(formatter)
        logger.addHandler(handler)

    return logger
