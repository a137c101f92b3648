import logging
import sys

from app.config import settings


def setup_logging():
    """
    Configures the 'conclave' logger and attaches a stdout handler.
    Safe to call from every entry point; handlers are attached once.
    """
    # 1. Define Format
    log_format = logging.Formatter(
        fmt="%(asctime)s - %(levelname)s - [%(name)s] - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    # 2. Define Handler (Stream to Console)
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(log_format)

    # 3. Setup 'conclave' logger
    logger = logging.getLogger("conclave")
    logger.setLevel(settings.LOG_LEVEL.upper())

    # Prevent duplicate logs if function is called multiple times
    if not logger.handlers:
        logger.addHandler(console_handler)

    # 4. Silence noisy libraries
    logging.getLogger("httpx").setLevel(logging.WARNING)
    logging.getLogger("uvicorn.access").setLevel(logging.WARNING)

    return logger
