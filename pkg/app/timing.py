import time
from contextlib import contextmanager
from functools import wraps
from typing import Dict

from app.logger_config import logger


def measure_execution_time(func):
    @wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.perf_counter()
        try:
            return func(*args, **kwargs)
        finally:
            execution_time = round(time.perf_counter() - start_time, 4)
            logger.debug(f"{func.__name__} executed in {execution_time} seconds")

    return wrapper


class StageTimer:
    """Collects wall-clock seconds per named pipeline stage."""

    def __init__(self):
        self.runtime_s: Dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        logger.info(f"Starting stage '{name}'")
        start_time = time.perf_counter()
        try:
            yield
        finally:
            elapsed = round(time.perf_counter() - start_time, 4)
            self.runtime_s[name] = self.runtime_s.get(name, 0.0) + elapsed
            logger.info(f"Stage '{name}' finished in {elapsed} seconds")
