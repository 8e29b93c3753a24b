"""
Scenario, result and experiment-document models
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

from specgf.models.run import RunConfig
from specgf.models.trajectory import TrajectoryLog

TargetSpec = Tuple[int, int, Tuple[float, ...]]

REFERENCE_TARGET: TargetSpec = (60, 70, (8.0, 5.0, 3.0, 1.5, 0.7))
BASIN_TARGET: TargetSpec = (9, 9, (1.0, 0.5, 0.2, 0.05))

@dataclass(frozen=True)
class Scenario:
    """A named deterministic procedure; (name, seed) fixes every output"""
    name: str
    description: str
    base_config: RunConfig
    target_spec: Optional[TargetSpec]
    runner: Callable[..., 'ScenarioResult']
    sweep: Dict[str, Tuple[Any, ...]] = field(default_factory=dict)
    replicates: int = 1
    summary_stats: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'description': self.description,
            'base_config': self.base_config.to_dict(),
            'target_spec': None if self.target_spec is None else {
                'm': self.target_spec[0],
                'n': self.target_spec[1],
                'sigma': list(self.target_spec[2])
            },
            'sweep': {k: list(v) for k, v in self.sweep.items()},
            'replicates': self.replicates,
            'summary_stats': list(self.summary_stats)
        }

@dataclass(frozen=True)
class BasinResult:
    """Outcome of one basin restart; decrement = initial_distance - final_distance"""
    run_id: str
    converged: bool
    final_loss: float
    initial_distance: float
    final_distance: float
    steps: int = 0

    @property
    def decrement(self) -> float:
        return self.initial_distance - self.final_distance

    def to_dict(self) -> Dict[str, Any]:
        return {
            'run_id': self.run_id,
            'converged': self.converged,
            'final_loss': self.final_loss,
            'initial_distance': self.initial_distance,
            'final_distance': self.final_distance,
            'decrement': self.decrement,
            'steps': self.steps
        }

@dataclass
class ScenarioResult:
    """Logs keyed by run id, summary statistics and named acceptance checks"""
    name: str
    seed: int
    logs: Dict[str, TrajectoryLog] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)
    checks: Dict[str, bool] = field(default_factory=dict)
    tables: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def failed_checks(self) -> List[str]:
        return sorted(name for name, ok in self.checks.items() if not ok)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'seed': self.seed,
            'runs': sorted(self.logs),
            'summary': self.summary,
            'checks': dict(sorted(self.checks.items()))
        }

@dataclass(frozen=True)
class ConfigDocument:
    """Fully resolved experiment document"""
    scenario: Optional[str] = "uniform_growth"
    run: Optional[RunConfig] = None
    target: Optional[TargetSpec] = None
    seed: int = 0
    output_directory: str = "results"
    log_stride: int = 1
    plots: Tuple[str, ...] = ("spectrum", "sqrt_modes", "loss")
    workers: Optional[int] = None
    ci_scale: bool = True
    overrides: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'scenario': self.scenario,
            'run': self.run.to_dict() if self.run is not None else None,
            'target': None if self.target is None else {
                'm': self.target[0], 'n': self.target[1], 'sigma': list(self.target[2])
            },
            'seed': self.seed,
            'output_directory': self.output_directory,
            'log_stride': self.log_stride,
            'plots': list(self.plots),
            'workers': self.workers,
            'ci_scale': self.ci_scale,
            'overrides': dict(self.overrides)
        }
