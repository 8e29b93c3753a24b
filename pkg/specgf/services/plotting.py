"""
Static SVG figures of trajectory logs
"""

import logging
import os
from typing import Dict, List, Sequence, Union

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from shared.utils.common import InvalidArgumentError, ensure_directory  # noqa: E402
from specgf.models.trajectory import TrajectoryLog  # noqa: E402
from specgf.services import diagnostics  # noqa: E402

logger = logging.getLogger(__name__)

PLOT_KINDS = ('spectrum', 'sqrt_modes', 'loss', 'drift', 'nth_root')
# fixed salt keeps generated element ids identical between runs
SVG_HASH_SALT = 'specgf'

LogSet = Union[TrajectoryLog, Sequence[TrajectoryLog], Dict[str, TrajectoryLog]]

def _as_list(logs: LogSet) -> List[TrajectoryLog]:
    if isinstance(logs, TrajectoryLog):
        return [logs]
    if isinstance(logs, dict):
        return [logs[key] for key in sorted(logs)]
    return list(logs)

def _depth(log: TrajectoryLog) -> int:
    return int(log.metadata.get('config', {}).get('depth', 2))

def _plot_spectrum(ax, log: TrajectoryLog, prefix: str):
    spectra = log.spectra()
    for i in range(spectra.shape[1]):
        ax.plot(log.times(), spectra[:, i], label=f'{prefix}sigma_{i + 1}')
    for value in log.metadata.get('target', {}).get('sigma', ()):
        ax.axhline(value, color='0.7', linewidth=0.6, linestyle='--')
    ax.set_ylabel('singular value of product')

def _plot_sqrt_modes(ax, log: TrajectoryLog, prefix: str):
    if any(r.core is None for r in log.records):
        raise InvalidArgumentError(f"log {log.label} has no core variables; use kind 'nth_root'")
    d = np.clip(log.core_matrix('d'), 0.0, None)
    for i in range(d.shape[1]):
        ax.plot(log.times(), np.sqrt(d[:, i]), label=f'{prefix}sqrt(d_{i + 1})')
    ax.set_ylabel('sqrt(d_i)')

def _plot_loss(ax, log: TrajectoryLog, prefix: str):
    losses = log.losses()
    positive = losses > 0
    ax.plot(log.times()[positive], losses[positive], label=prefix.rstrip(': ') or log.label)
    ax.set_yscale('log')
    ax.set_ylabel('loss')

def _plot_drift(ax, log: TrajectoryLog, prefix: str):
    ax.plot(log.times(), diagnostics.balancedness_drift(log), label=prefix.rstrip(': ') or log.label)
    ax.set_ylabel('||A^T A - B B^T - (A^T A - B B^T)(0)||_F')

def _plot_nth_root(ax, log: TrajectoryLog, prefix: str):
    depth = _depth(log)
    roots = diagnostics.nth_root_spectra(log, depth)
    for i in range(roots.shape[1]):
        ax.plot(log.times(), roots[:, i], label=f'{prefix}sigma_{i + 1}^(1/{depth})')
    ax.set_ylabel('singular value ^ (1/L)')

_PLOTTERS = {
    'spectrum': _plot_spectrum,
    'sqrt_modes': _plot_sqrt_modes,
    'loss': _plot_loss,
    'drift': _plot_drift,
    'nth_root': _plot_nth_root
}

def build_figure(logs: LogSet, kind: str) -> Figure:
    """One line per mode (per method for loss and drift), labeled axes and a legend"""
    if kind not in _PLOTTERS:
        raise InvalidArgumentError(f"Unknown plot kind {kind!r}; expected one of {', '.join(PLOT_KINDS)}")
    logs = _as_list(logs)
    if not logs or any(not log.records for log in logs):
        raise InvalidArgumentError("cannot plot an empty log")

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for log in logs:
        prefix = f'{log.label}: ' if len(logs) > 1 else ''
        if kind in ('loss', 'drift') and not prefix:
            prefix = f'{log.label}: '
        _PLOTTERS[kind](ax, log, prefix)
    ax.set_xlabel('time (step x eta)')
    ax.set_title(kind.replace('_', ' '))
    ax.grid(True, linewidth=0.3)
    ax.legend(fontsize='small')
    fig.tight_layout()
    return fig

def emit_plot(logs: LogSet, kind: str, path: str) -> str:
    """Write the figure as byte-deterministic SVG"""
    fig = build_figure(logs, kind)
    directory = os.path.dirname(path)
    if directory:
        ensure_directory(directory)
    try:
        with matplotlib.rc_context({'svg.hashsalt': SVG_HASH_SALT}):
            fig.savefig(path, format='svg', metadata={'Date': None})
    finally:
        plt.close(fig)
    logger.debug(f"Wrote {kind} plot to {path}")
    return path
