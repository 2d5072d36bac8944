"""
Utility functions for kzcoarsen
Handles input validation, hashing, seeding and deterministic output files
"""

import csv
import hashlib
import json
import math
import os
from datetime import datetime

import numpy as np
from dateutil import parser as date_parser
from dateutil import tz


# ============================================
# Validation
# ============================================

def validate_number(value, name: str, minimum=None, maximum=None,
                    strict_min: bool = False, allow_none: bool = False) -> tuple:
    """
    Validate a real-valued parameter

    Args:
        value: The value to validate
        name: Field path used in the error message
        minimum: Lower bound (inclusive unless strict_min)
        maximum: Upper bound (inclusive)
        strict_min: Reject value == minimum
        allow_none: Accept None as "not set"

    Returns:
        tuple: (is_valid, error_message or None)
    """
    if value is None:
        if allow_none:
            return True, None
        return False, f"{name}: is required"

    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return False, f"{name}: must be a number, got {type(value).__name__}"

    if not math.isfinite(value):
        return False, f"{name}: must be finite"

    if minimum is not None:
        if strict_min and value <= minimum:
            return False, f"{name}: must be > {minimum}"
        if not strict_min and value < minimum:
            return False, f"{name}: must be >= {minimum}"

    if maximum is not None and value > maximum:
        return False, f"{name}: must be <= {maximum}"

    return True, None


def validate_integer(value, name: str, minimum=None, maximum=None, even: bool = False) -> tuple:
    """
    Validate an integer parameter

    Returns:
        tuple: (is_valid, error_message or None)
    """
    if isinstance(value, bool) or not isinstance(value, int):
        return False, f"{name}: must be an integer"

    if minimum is not None and value < minimum:
        return False, f"{name}: must be >= {minimum}"

    if maximum is not None and value > maximum:
        return False, f"{name}: must be <= {maximum}"

    if even and value % 2:
        return False, f"{name}: must be even"

    return True, None


def validate_choice(value, name: str, choices) -> tuple:
    """Validate that value is one of the allowed choices."""
    if value not in choices:
        return False, f"{name}: must be one of {', '.join(map(str, choices))}, got {value!r}"
    return True, None


def validate_number_list(values, name: str, minimum=None, strict_min=False, min_length=1) -> tuple:
    """
    Validate a list of numbers

    Returns:
        tuple: (is_valid, error_message or None)
    """
    if not isinstance(values, list) or len(values) < min_length:
        return False, f"{name}: must be a list with at least {min_length} entries"

    for i, value in enumerate(values):
        ok, message = validate_number(value, f"{name}[{i}]", minimum=minimum, strict_min=strict_min)
        if not ok:
            return False, message

    return True, None


def validate_keys(block: dict, name: str, allowed) -> list:
    """
    Reject unknown keys in a config block

    Returns:
        list: One error message per unknown key
    """
    prefix = f"{name}." if name else ""
    return [f"{prefix}{key}: unknown key" for key in sorted(block) if key not in allowed]


# ============================================
# Hashing and seeding
# ============================================

def hash_bytes(data: bytes) -> str:
    """
    SHA-256 of raw bytes

    Args:
        data: Bytes to hash (a config file, a data file)

    Returns:
        str: Hex digest
    """
    if isinstance(data, str):
        data = data.encode()
    return hashlib.sha256(data).hexdigest()


def hash_file(path: str) -> str:
    """SHA-256 of a file's contents."""
    with open(path, 'rb') as f:
        return hash_bytes(f.read())


def spawn_seeds(seed: int, count: int) -> list:
    """Derive independent child seeds from one master seed."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1)[0]) for child in children]


# ============================================
# Timestamps
# ============================================

def utc_now_iso() -> str:
    """Current UTC time as ISO-8601 with offset."""
    return datetime.now(tz=tz.tzutc()).isoformat()


def seconds_between(start_iso: str, end_iso: str) -> float:
    """Elapsed seconds between two ISO-8601 stamps."""
    return (date_parser.isoparse(end_iso) - date_parser.isoparse(start_iso)).total_seconds()


# ============================================
# Output files
# ============================================

def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        if math.isnan(value):
            return 'nan'
        return value
    if hasattr(value, 'value') and hasattr(value, 'name'):  # enum members
        return value.value
    return value


def write_json(path: str, payload: dict, schema_version: str) -> str:
    """
    Write a versioned JSON artifact with stable key order

    Args:
        path: Destination file
        payload: Mapping to serialise
        schema_version: Stamped into the artifact as "schema_version"

    Returns:
        str: The path written
    """
    document = {'schema_version': schema_version}
    document.update(_jsonable(payload))
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def read_json(path: str) -> dict:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def write_csv(path: str, header, rows) -> str:
    """
    Write a tidy CSV table; floats use repr so reruns are byte-identical

    Args:
        path: Destination file
        header: Column names
        rows: Iterable of row sequences

    Returns:
        str: The path written
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv_columns(path: str) -> dict:
    """
    Read a numeric CSV into a dict of float arrays keyed by column name

    Returns:
        dict: column name -> np.ndarray
    """
    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.reader(f)
        header = next(reader)
        columns = [[] for _ in header]
        for row in reader:
            for i, cell in enumerate(row):
                columns[i].append(float(cell))
    return {name: np.asarray(values) for name, values in zip(header, columns)}
