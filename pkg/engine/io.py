"""CSV and JSON result files."""
import json
import math
from pathlib import Path
from typing import Any, Union

import numpy as np
import pandas as pd


def _plain(value: Any) -> Any:
    """Convert numpy containers and scalars to JSON-native Python objects."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_csv(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    """Write a table with shortest round-trip float formatting.

    Args:
        path: Output path (parent directories are created)
        frame: Table to write, index dropped

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def read_csv(path: Union[str, Path]) -> pd.DataFrame:
    """Read a table written by write_csv.

    Raises:
        FileNotFoundError: If file doesn't exist
        RuntimeError: If file cannot be parsed
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"CSV file not found: {path}")
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except Exception as e:
        raise RuntimeError(f"Failed to read CSV file: {e}") from e


def write_json(path: Union[str, Path], payload: dict) -> Path:
    """Write a report as indented JSON; NaN and infinities become null."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(_plain(payload), f, indent=2, allow_nan=False)
        f.write("\n")
    return path


def read_json(path: Union[str, Path]) -> dict:
    """Read a JSON report.

    Raises:
        FileNotFoundError: If file doesn't exist
        RuntimeError: If file cannot be parsed
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"JSON file not found: {path}")
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise RuntimeError(f"Failed to read JSON file: {e}") from e
