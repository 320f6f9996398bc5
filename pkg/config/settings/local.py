from os import getenv, path

from dotenv import load_dotenv
from loguru import logger

from .base import *  # noqa
from .base import BASE_DIR, LOGURU_LOGGING

local_env_file = path.join(BASE_DIR, ".envs", ".env.local")

if path.exists(local_env_file):
    load_dotenv(local_env_file)

DEBUG = getenv("LANDAU_DEBUG", "False") == "True"

if DEBUG:
    LOGURU_LOGGING["handlers"][0]["level"] = "DEBUG"
    logger.configure(**LOGURU_LOGGING)
