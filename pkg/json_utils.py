import os
import json
import logging

import numpy as np

import file_utils

logger = logging.getLogger(__name__)

def _to_serializable(value):
    """json.dump fallback for numpy scalars/arrays, enums and paths."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if hasattr(value, "value") and hasattr(value, "name"):  # Enum members
        return value.value
    if isinstance(value, os.PathLike):
        return os.fspath(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")

def load_json_data(file_path):
    """Load data from a JSON file; a missing file gives an empty dict."""
    if not os.path.exists(file_path):
        logger.warning(f"File {file_path} not found!")
        return {}

    try:
        with open(file_path, "r", encoding="utf-8") as f:
            data = json.load(f)
            logger.debug(f"Successfully loaded {file_path}")
            return data
    except Exception as e:
        logger.error(f"Error loading file {file_path}: {e}")
        return {}

def save_to_json_file(data, filename, output_dir=None):
    """Save data in a JSON file. Returns the written path."""
    filename = file_utils.append_dir_to_file_name(file_utils.sanitize_filename(filename), output_dir)

    with open(filename, "w", encoding="utf-8") as file:
        json.dump(data, file, ensure_ascii=False, indent=4, default=_to_serializable)

    logger.info(f"Data saved in the file '{filename}'.")
    return filename
