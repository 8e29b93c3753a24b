"""
Per-step diagnostics and trajectory logs
"""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from specgf.models.problem import FactorState

def _optional_array(values) -> Optional[np.ndarray]:
    return np.asarray(values, dtype=np.float64) if values is not None else None

@dataclass(frozen=True)
class CoreSnapshot:
    """Core variables X = U_r^T A, Z = B V_r, Z_perp = B V_perp and G = X Z.

    Logs keep the compact form (matrices dropped); `core_variables` returns
    the full one.
    """
    d: np.ndarray
    e: np.ndarray
    off_g_fro: float
    xz_perp_fro: float
    x: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    z_perp: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None

    def compact(self) -> 'CoreSnapshot':
        return replace(self, x=None, z=None, z_perp=None, g=None)

    def to_dict(self) -> Dict[str, Any]:
        data = {
            'd': self.d.tolist(),
            'e': self.e.tolist(),
            'off_g_fro': self.off_g_fro,
            'xz_perp_fro': self.xz_perp_fro
        }
        for name in ('x', 'z', 'z_perp', 'g'):
            value = getattr(self, name)
            if value is not None:
                data[name] = value.tolist()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CoreSnapshot':
        return cls(
            d=np.asarray(data['d'], dtype=np.float64),
            e=np.asarray(data['e'], dtype=np.float64),
            off_g_fro=float(data['off_g_fro']),
            xz_perp_fro=float(data['xz_perp_fro']),
            x=_optional_array(data.get('x')),
            z=_optional_array(data.get('z')),
            z_perp=_optional_array(data.get('z_perp')),
            g=_optional_array(data.get('g'))
        )

@dataclass(frozen=True)
class StepDiagnostics:
    """Snapshot of one logged step"""
    step: int
    time: float
    loss: float
    product_singular_values: Tuple[float, ...]
    core: Optional[CoreSnapshot]
    active_set: Tuple[int, ...]
    effective_rank: float
    balancedness_drift: Optional[float]
    per_factor_fro_norms: Tuple[float, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'step': self.step,
            'time': self.time,
            'loss': self.loss,
            'product_singular_values': list(self.product_singular_values),
            'core': self.core.to_dict() if self.core is not None else None,
            'active_set': list(self.active_set),
            'effective_rank': self.effective_rank,
            'balancedness_drift': self.balancedness_drift,
            'per_factor_fro_norms': list(self.per_factor_fro_norms)
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'StepDiagnostics':
        core = data.get('core')
        return cls(
            step=int(data['step']),
            time=float(data['time']),
            loss=float(data['loss']),
            product_singular_values=tuple(float(v) for v in data['product_singular_values']),
            core=CoreSnapshot.from_dict(core) if core is not None else None,
            active_set=tuple(int(i) for i in data['active_set']),
            effective_rank=float(data['effective_rank']),
            balancedness_drift=float(data['balancedness_drift'])
            if data.get('balancedness_drift') is not None else None,
            per_factor_fro_norms=tuple(float(v) for v in data['per_factor_fro_norms'])
        )

@dataclass
class TrajectoryLog:
    """Ordered diagnostics of one run plus the metadata needed to re-run it"""
    metadata: Dict[str, Any]
    records: List[StepDiagnostics] = field(default_factory=list)
    final_state: Optional[FactorState] = None

    def append(self, record: StepDiagnostics):
        if self.records and record.step <= self.records[-1].step:
            raise ValueError("trajectory steps must be strictly increasing")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def label(self) -> str:
        return str(self.metadata.get('label', 'run'))

    @property
    def eta(self) -> float:
        return float(self.metadata['config']['eta'])

    @property
    def final(self) -> StepDiagnostics:
        return self.records[-1]

    def steps(self) -> np.ndarray:
        return np.array([r.step for r in self.records], dtype=np.int64)

    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.records], dtype=np.float64)

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records], dtype=np.float64)

    def core_matrix(self, attribute: str) -> np.ndarray:
        """Stack a per-mode core attribute ('d' or 'e') into a records x modes array"""
        return np.vstack([getattr(r.core, attribute) for r in self.records])

    def spectra(self, width: Optional[int] = None) -> np.ndarray:
        """Product singular values padded with zeros to a common width"""
        width = width or max((len(r.product_singular_values) for r in self.records), default=0)
        out = np.zeros((len(self.records), width))
        for row, record in enumerate(self.records):
            values = record.product_singular_values[:width]
            out[row, :len(values)] = values
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            'metadata': self.metadata,
            'records': [r.to_dict() for r in self.records],
            'final_state': self.final_state.to_dict() if self.final_state is not None else None
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrajectoryLog':
        final_state = data.get('final_state')
        return cls(
            metadata=data['metadata'],
            records=[StepDiagnostics.from_dict(r) for r in data['records']],
            final_state=FactorState.from_dict(final_state) if final_state is not None else None
        )
