import os
import re
import logging

import numpy as np

logger = logging.getLogger(__name__)

PGM_MAXVAL = 255

def append_dir_to_file_name(filename, output_dir=None):
    """Append dir to file name and eventually create directory if not exist."""
    if output_dir:  # None/empty string check
        os.makedirs(output_dir, exist_ok=True)
        filename = os.path.join(output_dir, f"{filename}")
    return filename

def sanitize_filename(name):
    """Clean a filename from not allowed char. (for Windows)"""
    return re.sub(r'[<>:"/\\|?*]', '_', name)

##############################
### READ FILE UTILS
##############################

def load_key_value_file(file_path):
    """
    Load a `key = value` configuration file.

    Blank lines and lines starting with '#' are skipped, trailing '#' comments are dropped and
    dashes in keys become underscores so keys line up with argparse destinations.
    Values are returned as strings; conversion is left to the consumer.
    """
    values = {}
    with open(file_path, "r", encoding="utf-8") as f:
        for line_number, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{file_path}:{line_number}: expected 'key = value', got {raw.strip()!r}")
            key, value = line.split("=", 1)
            key = key.strip().replace("-", "_")
            if not key:
                raise ValueError(f"{file_path}:{line_number}: empty key")
            values[key] = value.strip()
    logger.debug(f"Loaded {len(values)} settings from {file_path}")
    return values

def read_pgm(file_path):
    """Read a plain (P2) PGM image as a float array scaled to [0, 1]."""
    with open(file_path, "r", encoding="ascii") as f:
        tokens = []
        for line in f:
            tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{file_path} is not a plain PGM (P2) file")
    try:
        cols, rows, maxval = (int(t) for t in tokens[1:4])
        pixels = np.array([int(t) for t in tokens[4:]], dtype=float)
    except ValueError as e:
        raise ValueError(f"Malformed PGM header or data in {file_path}: {e}") from e
    if pixels.size != rows * cols:
        raise ValueError(f"{file_path}: expected {rows * cols} pixels, found {pixels.size}")
    if maxval <= 0:
        raise ValueError(f"{file_path}: invalid maxval {maxval}")
    return pixels.reshape(rows, cols) / maxval

##############################
### WRITE FILE UTILS
##############################

def write_pgm(image, filename, output_dir=None, vmin=None, vmax=None):
    """
    Save a 2D array as a plain (P2) PGM image.

    Values are min-max scaled to [0, PGM_MAXVAL] (or to [vmin, vmax] when given, clipping outside).
    Returns the written path.
    """
    filename = append_dir_to_file_name(sanitize_filename(filename), output_dir)
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError(f"PGM images must be 2D, got shape {image.shape}")

    low = float(image.min()) if vmin is None else float(vmin)
    high = float(image.max()) if vmax is None else float(vmax)
    if high > low:
        scaled = np.clip((image - low) / (high - low), 0.0, 1.0)
    else:
        scaled = np.zeros_like(image)
    levels = np.rint(scaled * PGM_MAXVAL).astype(int)

    rows, cols = levels.shape
    with open(filename, "w", encoding="ascii", newline="\n") as f:
        f.write(f"P2\n{cols} {rows}\n{PGM_MAXVAL}\n")
        for row in levels:
            f.write(" ".join(str(v) for v in row))
            f.write("\n")

    logger.debug(f"Image saved in the file '{filename}'.")
    return filename
