"""
Parameter helpers shared by the model tests.
"""
from typing import Dict, Mapping, Optional, Sequence

import numpy as np


def params_equal(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray]) -> bool:
    """Same names in the same order with identical values."""
    return list(a) == list(b) and all(np.array_equal(a[k], b[k]) for k in a)


def zeros_like_params(params: Mapping[str, np.ndarray], keep: Optional[Sequence[str]] = None) -> Dict[str, np.ndarray]:
    """Zero copies of every parameter except the names in ``keep``."""
    keep = set(keep or ())
    return {name: (value.copy() if name in keep else np.zeros_like(value)) for name, value in params.items()}
