"""
Common utility functions for the spectral dynamics toolkit
"""

import os
import json
import logging
import time
from datetime import datetime
from functools import wraps
from pathlib import Path
from typing import Dict, Any, Optional

import numpy as np

# Logging setup
def setup_logging(name: str, log_level: str = "INFO", log_file: Optional[str] = None) -> logging.Logger:
    """Set up logging for a component"""
    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, log_level.upper()))

    # Remove existing handlers
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger

# File utilities
def ensure_directory(directory: str) -> str:
    """Ensure directory exists, create if it doesn't"""
    Path(directory).mkdir(parents=True, exist_ok=True)
    return directory

# Data utilities
def to_builtin(obj: Any) -> Any:
    """Convert numpy containers and scalars to plain Python objects"""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, dict):
        return {k: to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_builtin(v) for v in obj]
    return obj

def serialize_data(data: Any, indent: Optional[int] = 2) -> str:
    """Serialize data to JSON string with numpy and datetime handling"""
    def json_serializer(obj):
        if isinstance(obj, datetime):
            return obj.isoformat()
        elif isinstance(obj, Path):
            return str(obj)
        elif isinstance(obj, (np.ndarray, np.generic)):
            return to_builtin(obj)
        elif hasattr(obj, 'to_dict'):
            return obj.to_dict()
        raise TypeError(f"Object of type {type(obj)} is not JSON serializable")

    return json.dumps(to_builtin(data), default=json_serializer, indent=indent)

# Performance utilities
def measure_time(func):
    """Decorator to measure function execution time"""
    @wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.perf_counter()
        result = func(*args, **kwargs)
        execution_time = time.perf_counter() - start_time

        logger = logging.getLogger(func.__module__)
        logger.debug(f"{func.__name__} executed in {execution_time:.4f} seconds")

        return result

    return wrapper

# Error handling utilities
class SpecGFError(Exception):
    """Base exception for toolkit errors"""
    pass

class ConfigurationError(SpecGFError):
    """Configuration-related errors"""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        location = ""
        if key is not None:
            location = f" [key '{key}'" + (f", line {line}]" if line is not None else "]")
        super().__init__(f"{message}{location}")

class InvalidArgumentError(SpecGFError, ValueError):
    """Argument outside an operation's domain"""
    pass

class DecompositionError(SpecGFError):
    """A matrix decomposition failed to converge"""
    pass

class UnsupportedOperationError(SpecGFError):
    """Operation not defined for the given input shape"""
    pass

class DivergenceError(SpecGFError):
    """Iterates became non-finite or exceeded the norm cap"""

    def __init__(self, message: str, step: int, log: Any = None):
        self.step = step
        self.log = log
        super().__init__(f"{message} (step {step})")

class StepSizeError(SpecGFError):
    """Integrator could not keep the loss monotone"""
    pass

class ConvergenceError(SpecGFError):
    """A mode never settled within tolerance"""

    def __init__(self, message: str, mode: Optional[int] = None, last_gap: Optional[float] = None):
        self.mode = mode
        self.last_gap = last_gap
        super().__init__(message)

class AcceptanceError(SpecGFError):
    """One or more acceptance checks failed"""

    def __init__(self, failed: Dict[str, Any]):
        self.failed = failed
        super().__init__(f"Acceptance checks failed: {', '.join(sorted(failed))}")

def handle_error(error: Exception, context: str = "", logger: logging.Logger = None) -> Dict[str, Any]:
    """Handle and format error information"""
    if logger is None:
        logger = logging.getLogger(__name__)

    error_info = {
        'error_type': type(error).__name__,
        'error_message': str(error),
        'context': context,
        'timestamp': datetime.utcnow().isoformat()
    }

    logger.error(f"Error in {context}: {error_info}")

    return error_info
