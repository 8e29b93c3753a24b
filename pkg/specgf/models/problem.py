"""
Factorization problem models: target, factor chain and loss value
"""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from shared.utils.common import InvalidArgumentError
from specgf.models.linalg import as_matrix

ORTHONORMAL_TOLERANCE = 1e-10

@dataclass(frozen=True)
class TargetMatrix:
    """Ground-truth Y = u_r diag(sigma) v_r^T with its stored compact SVD"""
    y: np.ndarray
    u_r: np.ndarray
    sigma: np.ndarray
    v_r: np.ndarray
    v_perp: np.ndarray

    @classmethod
    def from_bases(cls, u_r: Any, sigma: Sequence[float], v_full: Any) -> 'TargetMatrix':
        """Build from explicit bases; the first len(sigma) columns of v_full span the row space"""
        u_r = as_matrix(u_r, "u_r")
        v_full = as_matrix(v_full, "v_full")
        sigma = np.asarray(sigma, dtype=np.float64)
        k = sigma.shape[0]
        if sigma.ndim != 1 or k == 0 or np.any(sigma <= 0):
            raise InvalidArgumentError("sigma must be a non-empty list of positive values")
        if u_r.shape[1] != k or v_full.shape[0] != v_full.shape[1] or v_full.shape[1] < k:
            raise InvalidArgumentError("basis shapes do not match sigma")
        if np.abs(u_r.T @ u_r - np.eye(k)).max() > ORTHONORMAL_TOLERANCE:
            raise InvalidArgumentError("u_r columns are not orthonormal")
        if np.abs(v_full.T @ v_full - np.eye(v_full.shape[1])).max() > ORTHONORMAL_TOLERANCE:
            raise InvalidArgumentError("v_full is not orthogonal")
        v_r = v_full[:, :k].copy()
        v_perp = v_full[:, k:].copy()
        y = (u_r * sigma) @ v_r.T
        return cls(y=y, u_r=u_r.copy(), sigma=sigma.copy(), v_r=v_r, v_perp=v_perp)

    @property
    def shape(self):
        return self.y.shape

    @property
    def rank(self) -> int:
        return int(self.sigma.shape[0])

    def to_dict(self) -> Dict[str, Any]:
        return {
            'm': int(self.y.shape[0]),
            'n': int(self.y.shape[1]),
            'sigma': self.sigma.tolist()
        }

@dataclass(frozen=True)
class FactorState:
    """Factor chain [W_L, ..., W_1]; for depth 2 factors[0] is A and factors[1] is B"""
    factors: List[np.ndarray]
    momentum: Optional[List[np.ndarray]] = None
    step_index: int = 0

    def __post_init__(self):
        if len(self.factors) < 2:
            raise InvalidArgumentError("a factor chain needs at least two factors")
        for left, right in zip(self.factors[:-1], self.factors[1:]):
            if left.shape[1] != right.shape[0]:
                raise InvalidArgumentError(
                    f"factor shapes {left.shape} and {right.shape} do not compose")
        if self.momentum is not None:
            if len(self.momentum) != len(self.factors) or any(
                    mom.shape != fac.shape for mom, fac in zip(self.momentum, self.factors)):
                raise InvalidArgumentError("momentum buffers must match factor shapes")

    @property
    def depth(self) -> int:
        return len(self.factors)

    @property
    def rank(self) -> int:
        return int(self.factors[0].shape[1])

    @property
    def a(self) -> np.ndarray:
        return self.factors[0]

    @property
    def b(self) -> np.ndarray:
        return self.factors[-1]

    def with_factors(self, factors: List[np.ndarray], momentum: Optional[List[np.ndarray]] = None,
                     advance: bool = True) -> 'FactorState':
        return replace(self, factors=factors, momentum=momentum,
                       step_index=self.step_index + (1 if advance else 0))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'factors': [w.tolist() for w in self.factors],
            'momentum': [m.tolist() for m in self.momentum] if self.momentum is not None else None,
            'step_index': self.step_index
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'FactorState':
        momentum = data.get('momentum')
        return cls(
            factors=[np.asarray(w, dtype=np.float64) for w in data['factors']],
            momentum=[np.asarray(m, dtype=np.float64) for m in momentum] if momentum is not None else None,
            step_index=int(data.get('step_index', 0))
        )

@dataclass(frozen=True)
class LossValue:
    """Objective value and the Frobenius norm of the residual"""
    value: float
    residual_fro: float
    penalty: float = field(default=0.0)
