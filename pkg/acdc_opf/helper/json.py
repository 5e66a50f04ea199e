"""
Provide a custom JSON encoder that can serialize additional objects,
in particular numpy values and result objects
"""

import json
from collections.abc import Iterator
from pathlib import Path
from typing import Any

import numpy as np


def _prepare(obj: Any) -> Any:
    # tuples never reach `default`, so result NamedTuples are converted here
    if hasattr(obj, "to_json"):
        return _prepare(obj.to_json())
    if hasattr(obj, "_asdict"):
        return _prepare(obj._asdict())
    if isinstance(obj, dict):
        return {k: _prepare(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_prepare(v) for v in obj]
    return obj


class CustomJSONEncoder(json.JSONEncoder):
    """
    A custom JSON encoder that can serialize additional objects:
      - numpy scalars and arrays (as numbers and lists)
      - complex numbers (as [real, imag] pairs)
      - sets (as sorted lists) and iterators (as lists)
      - paths (as strings)
      - any object having a to_json() method that produces a serializable
        object

    Non-serializable objects are converted to plain strings.
    """

    def iterencode(self, o, _one_shot=False):
        return super().iterencode(_prepare(o), _one_shot)

    def default(self, obj):
        if hasattr(obj, "to_json"):
            return obj.to_json()
        elif isinstance(obj, np.ndarray):
            return obj.tolist()
        elif isinstance(obj, np.integer):
            return int(obj)
        elif isinstance(obj, np.floating):
            return float(obj)
        elif isinstance(obj, np.bool_):
            return bool(obj)
        elif isinstance(obj, complex):
            return [obj.real, obj.imag]
        elif isinstance(obj, set):
            return sorted(obj, key=str)
        elif isinstance(obj, Iterator):
            return list(obj)
        elif isinstance(obj, Path):
            return str(obj)

        try:
            return super().default(obj)
        except TypeError:
            return str(obj)


def dump_json(obj: Any, path: Path) -> None:
    with open(path, "wt", encoding="utf-8") as f:
        json.dump(obj, f, cls=CustomJSONEncoder, indent=2, sort_keys=True)
        f.write("\n")
