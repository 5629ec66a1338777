import os
import logging
import csv
import math

logger = logging.getLogger(__name__)

FLOAT_FORMAT = ".12e"

def initialize_file(file_path, fields):
    """Initialize a csv file."""

    directory = os.path.dirname(file_path)
    if directory and not os.path.exists(directory):
        os.makedirs(directory)
        logger.warning(f"Directory {directory} created.")

    file = open(file_path, "w", newline='', encoding="utf-8")

    writer = csv.DictWriter(file, fieldnames=fields, lineterminator="\n")

    writer.writeheader()
    file.flush()

    return file_path, file, writer

def format_value(value):
    """Render a cell; floats use a fixed format so reruns are byte-identical."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return format(value, FLOAT_FORMAT)
    return str(value)

def write_rows(file_path, fields, rows):
    """Write dict rows (restricted to `fields`, in that order) to a fresh csv file."""
    file_path, file, writer = initialize_file(file_path, fields)
    with file:
        for row in rows:
            writer.writerow({field: format_value(row.get(field)) for field in fields})
    logger.info(f"Saved {len(rows)} rows in {file_path}")
    return file_path
