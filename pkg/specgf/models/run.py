"""
Run configuration models
"""

import math
from dataclasses import dataclass, field, asdict, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from shared.utils.common import InvalidArgumentError

DEFAULT_NS_COEFFS = (3.4445, -4.7750, 2.0315)
DEFAULT_NS_ITERATIONS = 5
DEFAULT_SMOOTHING_BETA = 1e-8
DIVERGENCE_NORM_CAP = 1e8

class Method(Enum):
    """Update direction applied to the (momentum) gradient"""
    GD = "GD"
    SPEC_EXACT = "SpecExact"
    SPEC_SMOOTHED = "SpecSmoothed"
    MUON_NS = "MuonNS"

class InitKind(Enum):
    """Initialization family"""
    LORA = "LoRA"
    SPECTRAL = "Spectral"
    EXPLICIT = "Explicit"

@dataclass(frozen=True)
class InitSpec:
    """How the factor chain is initialized"""
    kind: InitKind = InitKind.LORA
    gamma: float = 1e-3
    spectral_sigma_a: Optional[Tuple[float, ...]] = None
    spectral_sigma_b: Optional[Tuple[float, ...]] = None
    explicit_factors: Optional[Tuple[np.ndarray, ...]] = None

    def validate(self) -> List[str]:
        errors = []
        if self.kind is InitKind.LORA and not self.gamma > 0:
            errors.append("gamma must be positive for LoRA initialization")
        if self.kind is InitKind.SPECTRAL and (self.spectral_sigma_a is None or self.spectral_sigma_b is None):
            errors.append("spectral initialization needs both spectral_sigma_a and spectral_sigma_b")
        if self.kind is InitKind.SPECTRAL:
            for diag in (self.spectral_sigma_a or ()) + (self.spectral_sigma_b or ()):
                if not diag > 0:
                    errors.append("spectral diagonals must be positive")
                    break
        if self.kind is InitKind.EXPLICIT and not self.explicit_factors:
            errors.append("explicit initialization needs explicit_factors")
        return errors

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind.value,
            'gamma': self.gamma,
            'spectral_sigma_a': list(self.spectral_sigma_a) if self.spectral_sigma_a is not None else None,
            'spectral_sigma_b': list(self.spectral_sigma_b) if self.spectral_sigma_b is not None else None,
            'explicit_factors': [w.tolist() for w in self.explicit_factors]
            if self.explicit_factors is not None else None
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'InitSpec':
        explicit = data.get('explicit_factors')
        sa = data.get('spectral_sigma_a')
        sb = data.get('spectral_sigma_b')
        return cls(
            kind=InitKind(data.get('kind', InitKind.LORA.value)),
            gamma=float(data.get('gamma', 1e-3)),
            spectral_sigma_a=tuple(float(v) for v in sa) if sa is not None else None,
            spectral_sigma_b=tuple(float(v) for v in sb) if sb is not None else None,
            explicit_factors=tuple(np.asarray(w, dtype=np.float64) for w in explicit)
            if explicit is not None else None
        )

@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs besides the target"""
    method: Method = Method.SPEC_EXACT
    eta: float = 0.01
    mu: float = 0.0
    beta: float = 0.0
    lam: float = 0.0
    max_steps: int = 2000
    stop_loss: float = 0.0
    stop_grad_norm: float = 0.0
    seed: int = 0
    init: InitSpec = field(default_factory=InitSpec)
    depth: int = 2
    rank: Optional[int] = None
    ns_iterations: int = DEFAULT_NS_ITERATIONS
    ns_coeffs: Tuple[float, float, float] = DEFAULT_NS_COEFFS
    log_stride: int = 1
    active_epsilon: Optional[float] = None
    norm_cap: float = DIVERGENCE_NORM_CAP

    def validate(self) -> List[str]:
        """Return a list of constraint violations"""
        errors = []
        if not self.eta > 0:
            errors.append("eta must be positive")
        if not 0.0 <= self.mu <= 1.0:
            errors.append("mu must lie in [0, 1]")
        if self.mu > 0 and self.method not in (Method.MUON_NS, Method.SPEC_EXACT):
            errors.append("momentum is only used with MuonNS or SpecExact")
        if self.beta < 0:
            errors.append("beta must be nonnegative")
        if self.method is Method.SPEC_SMOOTHED and not self.beta > 0:
            errors.append("beta must be positive for SpecSmoothed")
        if self.method is Method.SPEC_EXACT and self.beta != 0:
            errors.append("beta must be 0 for SpecExact")
        if self.lam < 0:
            errors.append("lambda must be nonnegative")
        if self.max_steps < 0:
            errors.append("max_steps must be nonnegative")
        if self.stop_loss < 0 or math.isnan(self.stop_loss):
            errors.append("stop_loss must be nonnegative")
        if self.stop_grad_norm < 0 or math.isnan(self.stop_grad_norm):
            errors.append("stop_grad_norm must be nonnegative")
        if self.depth < 2:
            errors.append("depth must be at least 2")
        if self.rank is not None and self.rank < 1:
            errors.append("rank must be at least 1")
        if self.ns_iterations < 1:
            errors.append("ns_iterations must be at least 1")
        if len(self.ns_coeffs) != 3:
            errors.append("ns_coeffs must have three entries")
        if self.log_stride < 1:
            errors.append("log_stride must be at least 1")
        if self.active_epsilon is not None and not self.active_epsilon > 0:
            errors.append("active_epsilon must be positive")
        errors.extend(self.init.validate())
        return errors

    def ensure_valid(self) -> 'RunConfig':
        errors = self.validate()
        if errors:
            raise InvalidArgumentError("; ".join(errors))
        return self

    def with_updates(self, **changes) -> 'RunConfig':
        return replace(self, **changes)

    @property
    def uses_momentum(self) -> bool:
        return self.mu > 0

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['method'] = self.method.value
        data['init'] = self.init.to_dict()
        data['ns_coeffs'] = list(self.ns_coeffs)
        data['lambda'] = data.pop('lam')
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunConfig':
        data = dict(data)
        if 'lambda' in data:
            data['lam'] = data.pop('lambda')
        if 'method' in data:
            data['method'] = Method(data['method'])
        if 'init' in data and isinstance(data['init'], dict):
            data['init'] = InitSpec.from_dict(data['init'])
        if 'ns_coeffs' in data:
            data['ns_coeffs'] = tuple(float(c) for c in data['ns_coeffs'])
        return cls(**data)
