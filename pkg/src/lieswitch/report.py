"""Report serialization: YAML documents with numbers at 12 significant digits."""

from __future__ import annotations

import math
from enum import Enum
from pathlib import Path

import numpy as np
import yaml


def _sig12(x: float):
    if not math.isfinite(x):
        return str(x)
    return float(f"{x:.12g}")


def clean(obj):
    """Plain Python containers, numpy scalars unwrapped, floats rounded."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _sig12(float(obj))
    return obj


def dump_report(report: dict, path) -> Path:
    """Write ``report``; the ``config`` section is echoed verbatim, the rest rounded."""
    path = Path(path)
    body = {k: (v if k == "config" else clean(v)) for k, v in report.items()}
    text = yaml.safe_dump(body, sort_keys=False, default_flow_style=None, width=100)
    path.write_text(text)
    return path


def read_report(path) -> dict:
    return yaml.safe_load(Path(path).read_text())
