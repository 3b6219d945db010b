"""Utility functions for writing lab artifacts."""
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
import pandas as pd


def to_jsonable(data: Any) -> Any:
    """Convert numpy scalars/arrays and tuples into plain JSON types; non-finite floats become strings."""
    if isinstance(data, dict):
        return {str(k): to_jsonable(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [to_jsonable(v) for v in data]
    if isinstance(data, np.ndarray):
        return to_jsonable(data.tolist())
    if isinstance(data, np.bool_):
        return bool(data)
    if isinstance(data, np.integer):
        return int(data)
    if isinstance(data, (float, np.floating)):
        value = float(data)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return value
    return data


def export_to_json(data: Any, filename) -> str:
    """Export data to a JSON file with sorted keys and a trailing newline."""
    path = Path(filename)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(to_jsonable(data), f, indent=2, sort_keys=True)
        f.write('\n')
    return str(path)


def write_csv(rows: List[Dict[str, Any]], filename, columns: List[str] = None) -> str:
    """Write rows to CSV: header row, comma separated, LF line endings, no index."""
    path = Path(filename)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([to_jsonable(r) for r in rows], columns=columns)
    frame.to_csv(path, index=False, lineterminator='\n')
    return str(path)


def config_digest(data: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON form of a config."""
    canonical = json.dumps(to_jsonable(data), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()
