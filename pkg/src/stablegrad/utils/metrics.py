"""Metric persistence: JSONL record streams and CSV tables.

Records are written with sorted keys and repr-exact floats, so a seeded rerun
produces byte-identical files. Wall-clock timings go to their own stream.
"""
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from stablegrad.utils.exceptions import FileOperationError

SCHEMA_VERSION = 1


def to_jsonable(value: Any) -> Any:
    """Plain-JSON view of a value; non-finite floats become None."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def dumps_record(record: Dict[str, Any]) -> str:
    return json.dumps(to_jsonable(record), sort_keys=True, allow_nan=False)


class MetricsWriter:
    """Append-only JSONL stream; every line carries ``schema_version``."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._file = open(self.path, 'w', encoding='utf-8')
        except OSError as e:
            raise FileOperationError(f"Could not open metrics file {self.path}: {e}") from e
        self.count = 0

    def write(self, record: Dict[str, Any]) -> None:
        line = dumps_record({"schema_version": SCHEMA_VERSION, **record})
        self._file.write(line + "\n")
        self.count += 1

    def flush(self) -> None:
        self._file.flush()

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()

    def __enter__(self) -> 'MetricsWriter':
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


def read_jsonl(path: Union[str, Path]) -> List[Dict[str, Any]]:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return [json.loads(line) for line in f if line.strip()]
    except (OSError, json.JSONDecodeError) as e:
        raise FileOperationError(f"Could not read {path}: {e}") from e


def write_json(path: Union[str, Path], data: Dict[str, Any]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(to_jsonable(data), f, indent=2, sort_keys=True, allow_nan=False)
            f.write("\n")
    except OSError as e:
        raise FileOperationError(f"Could not write {path}: {e}") from e
    return path


def write_table(path: Union[str, Path], rows: Iterable[Dict[str, Any]], columns: Optional[Sequence[str]] = None) -> Path:
    """CSV through pandas; ``columns`` fixes the column order."""
    path = Path(path)
    frame = pd.DataFrame([to_jsonable(r) for r in rows], columns=list(columns) if columns else None)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.10g")
    except OSError as e:
        raise FileOperationError(f"Could not write {path}: {e}") from e
    return path


def read_table(path: Union[str, Path]) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FileOperationError(f"Could not read {path}: {e}") from e
