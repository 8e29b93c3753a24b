"""
Matrix types shared by the linear-algebra services
"""

from dataclasses import dataclass
from typing import Any, Dict

import numpy as np

from shared.utils.common import InvalidArgumentError

def as_matrix(m: Any, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array"""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return arr

@dataclass(frozen=True)
class SvdTriple:
    """Compact SVD: left_vectors @ diag(singular_values) @ right_vectors.T"""
    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.singular_values.shape[0])

    def reconstruct(self) -> np.ndarray:
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T

    def to_dict(self) -> Dict[str, Any]:
        return {
            'left_vectors': self.left_vectors.tolist(),
            'singular_values': self.singular_values.tolist(),
            'right_vectors': self.right_vectors.tolist()
        }
