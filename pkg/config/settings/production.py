from loguru import logger

from .base import *  # noqa
from .base import LOGURU_LOGGING

DEBUG = False

# Tracebacks in the error sink must not echo array contents.
for handler in LOGURU_LOGGING["handlers"]:
    if handler.get("diagnose"):
        handler["diagnose"] = False
LOGURU_LOGGING["handlers"][0]["level"] = "WARNING"
logger.configure(**LOGURU_LOGGING)
