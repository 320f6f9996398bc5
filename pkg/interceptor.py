import logging

from loguru import logger

WARNINGS_LOGGER = "py.warnings"


def warning_summary(message: str) -> str:
    """First line of a formatted warning, without the echoed source line."""
    head = message.strip().splitlines()[0] if message.strip() else message
    # "path.py:12: RuntimeWarning: overflow ..." -> "RuntimeWarning: overflow ... (path.py:12)"
    location, sep, rest = head.partition(": ")
    if sep and ":" in location and rest:
        return f"{rest} ({location})"
    return head


class InterceptHandler(logging.Handler):
    """Forwards stdlib logging records to loguru.

    numpy and scipy report through py.warnings once captureWarnings is on; those
    records arrive as multi-line text and are collapsed to one line.
    """

    def emit(self, record: logging.LogRecord) -> None:
        try:
            level = logger.level(record.levelname).name
        except ValueError:
            level = record.levelno

        message = record.getMessage()
        if record.name == WARNINGS_LOGGER:
            message = warning_summary(message)

        frame, depth = logging.currentframe(), 2
        while frame and frame.f_code.co_filename == logging.__file__:
            frame = frame.f_back
            depth += 1

        logger.opt(depth=depth, exception=record.exc_info).bind(origin=record.name).log(
            level, message
        )
