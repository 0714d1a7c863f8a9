"""Text-output formatting: floats printed with 17 significant digits so every
text artifact round-trips losslessly."""

import json

import numpy as np

__all__ = ["fmt", "dumps17"]


def fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def dumps17(obj) -> str:
    """JSON with floats at 17 significant digits."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {dumps17(v)}"
                               for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(dumps17(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (float, np.floating)):
        if not np.isfinite(obj):
            return "null"
        return f"{float(obj):.17g}"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    return json.dumps(obj)
