"""
Trajectory and scenario serialization: CSV, JSON and summary directories
"""

import json
import logging
import os
from typing import Any, Dict, List

import numpy as np
import pandas as pd

from shared.utils.common import InvalidArgumentError, SpecGFError, ensure_directory, serialize_data
from specgf.models.experiment import ScenarioResult
from specgf.models.trajectory import TrajectoryLog

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'
FIXED_COLUMNS = ('step', 'time', 'loss')
TRAILING_COLUMNS = ('off_g_fro', 'xz_perp_fro', 'active_count', 'effective_rank', 'balancedness_drift')

class TrajectoryIOError(SpecGFError):
    """Reading or writing a trajectory file failed"""

    def __init__(self, message: str, path: str):
        self.path = path
        super().__init__(f"{message}: {path}")

def log_rank(log: TrajectoryLog) -> int:
    """LoRA rank r of the run that produced the log"""
    config = log.metadata.get('config', {})
    target_rank = len(log.metadata.get('target', {}).get('sigma', ()))
    return int(config.get('rank') or target_rank or
               max((len(r.product_singular_values) for r in log.records), default=0))

def csv_columns(rank: int) -> List[str]:
    return (list(FIXED_COLUMNS)
            + [f'sv_{i}' for i in range(1, rank + 1)]
            + [f'd_{i}' for i in range(1, rank + 1)]
            + [f'e_{i}' for i in range(1, rank + 1)]
            + list(TRAILING_COLUMNS))

def to_frame(log: TrajectoryLog) -> pd.DataFrame:
    """One row per record; missing core values (deep chains, k < r) are NaN"""
    rank = log_rank(log)
    rows = []
    for record in log.records:
        row: Dict[str, Any] = {'step': record.step, 'time': record.time, 'loss': record.loss}
        svals = record.product_singular_values
        for i in range(rank):
            row[f'sv_{i + 1}'] = svals[i] if i < len(svals) else 0.0
        core = record.core
        for i in range(rank):
            row[f'd_{i + 1}'] = core.d[i] if core is not None and i < core.d.size else np.nan
            row[f'e_{i + 1}'] = core.e[i] if core is not None and i < core.e.size else np.nan
        row['off_g_fro'] = core.off_g_fro if core is not None else np.nan
        row['xz_perp_fro'] = core.xz_perp_fro if core is not None else np.nan
        row['active_count'] = len(record.active_set)
        row['effective_rank'] = record.effective_rank
        row['balancedness_drift'] = (record.balancedness_drift
                                     if record.balancedness_drift is not None else np.nan)
        rows.append(row)
    frame = pd.DataFrame(rows, columns=csv_columns(rank))
    return frame.astype({'step': 'int64', 'active_count': 'int64'})

def write_csv(log: TrajectoryLog, path: str) -> str:
    """Header plus one row per record, reals at 17 significant digits"""
    directory = os.path.dirname(path)
    if directory:
        ensure_directory(directory)
    try:
        to_frame(log).to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep='')
    except OSError as e:
        raise TrajectoryIOError(f"could not write CSV ({e.strerror})", path) from e
    logger.debug(f"Wrote {len(log)} records to {path}")
    return path

def read_csv(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path, float_precision='round_trip')
    except (OSError, pd.errors.ParserError) as e:
        raise TrajectoryIOError(f"could not read CSV ({e})", path) from e

def write_json(log: TrajectoryLog, path: str) -> str:
    """Full log: metadata, records and the final factor state"""
    directory = os.path.dirname(path)
    if directory:
        ensure_directory(directory)
    try:
        with open(path, 'w', encoding='utf-8') as f:
            f.write(serialize_data(log.to_dict()))
    except OSError as e:
        raise TrajectoryIOError(f"could not write JSON ({e.strerror})", path) from e
    return path

def read_json(path: str) -> TrajectoryLog:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except OSError as e:
        raise TrajectoryIOError(f"could not read JSON ({e.strerror})", path) from e
    except ValueError as e:
        raise TrajectoryIOError(f"malformed JSON ({e})", path) from e
    if not isinstance(data, dict) or 'records' not in data or 'metadata' not in data:
        raise InvalidArgumentError(f"{path} does not hold a trajectory log")
    return TrajectoryLog.from_dict(data)

def _safe_name(run_id: str) -> str:
    return run_id.replace('/', '__')

def _table_frame(table: Any) -> pd.DataFrame:
    if isinstance(table, pd.DataFrame):
        return table
    return pd.DataFrame(list(table))

def write_summary(result: ScenarioResult, directory: str, write_csv_files: bool = True,
                  write_json_files: bool = True) -> Dict[str, Any]:
    """Write summary.json plus one CSV/JSON per log and one CSV per table; returns the written paths.

    Runs are written in sorted run-id order so the directory is identical for
    identical results.
    """
    ensure_directory(directory)
    written: Dict[str, Any] = {'logs': {}, 'tables': {}}
    for run_id in sorted(result.logs):
        log = result.logs[run_id]
        stem = os.path.join(directory, _safe_name(run_id))
        paths = []
        if write_csv_files:
            paths.append(write_csv(log, f'{stem}.csv'))
        if write_json_files:
            paths.append(write_json(log, f'{stem}.json'))
        written['logs'][run_id] = paths

    for name in sorted(result.tables):
        path = os.path.join(directory, f'table_{_safe_name(name)}.csv')
        try:
            _table_frame(result.tables[name]).to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep='')
        except OSError as e:
            raise TrajectoryIOError(f"could not write table ({e.strerror})", path) from e
        written['tables'][name] = path

    summary_path = os.path.join(directory, 'summary.json')
    try:
        with open(summary_path, 'w', encoding='utf-8') as f:
            f.write(serialize_data(result.to_dict()))
    except OSError as e:
        raise TrajectoryIOError(f"could not write summary ({e.strerror})", summary_path) from e
    written['summary'] = summary_path
    logger.info(f"Wrote scenario {result.name} to {directory} ({len(result.logs)} logs, "
                f"{len(result.tables)} tables)")
    return written
