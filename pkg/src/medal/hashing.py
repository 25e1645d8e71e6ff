import hashlib
import json

import numpy as np


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot hash object of type {type(o).__name__}")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_default)


def config_hash(obj, length: int = 16) -> str:
    """Stable short hex digest of a JSON-serialisable configuration."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:length]
