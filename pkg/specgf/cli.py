"""
Command-line interface: run scenarios, list them and plot saved logs
"""

import logging
import os
import sys
from typing import Dict, List, Optional

import click

from shared.utils.common import (
    AcceptanceError, ConfigurationError, DivergenceError, InvalidArgumentError, SpecGFError,
    StepSizeError, UnsupportedOperationError, handle_error, setup_logging
)
from shared.utils.config import get_config_manager
from specgf import __version__
from specgf.models.experiment import ScenarioResult
from specgf.models.trajectory import TrajectoryLog
from specgf.services.document_parser import load_config, parse_config
from specgf.services.experiments import ExperimentService
from specgf.services.plotting import PLOT_KINDS, emit_plot
from specgf.services.trajectory_io import read_json, write_summary

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGENCE = 2
EXIT_CHECK_FAILED = 3

# plots that overlay every run of a scenario in one figure
COMBINED_KINDS = ('loss', 'drift')

def exit_code_for(error: Exception) -> int:
    if isinstance(error, (DivergenceError, StepSizeError)):
        return EXIT_DIVERGENCE
    if isinstance(error, AcceptanceError):
        return EXIT_CHECK_FAILED
    return EXIT_CONFIG

def _configure():
    manager = get_config_manager()
    errors = manager.validate_config()
    if errors:
        raise ConfigurationError("; ".join(errors))
    config = manager.get_config()
    setup_logging('specgf', config.logging.level, config.logging.log_file)
    return config

def _plot_logs(result: ScenarioResult, kinds, directory: str) -> List[str]:
    """Per-run figures, plus one overlay per combined kind; kinds a log cannot show are skipped"""
    written = []
    for kind in kinds:
        if kind in COMBINED_KINDS:
            groups: Dict[str, List[TrajectoryLog]] = {kind: [result.logs[k] for k in sorted(result.logs)]}
        else:
            groups = {f"{run_id.replace('/', '__')}_{kind}": [result.logs[run_id]] for run_id in sorted(result.logs)}
        for name, logs in groups.items():
            path = os.path.join(directory, f'{name}.svg')
            try:
                written.append(emit_plot(logs, kind, path))
            except (InvalidArgumentError, UnsupportedOperationError) as e:
                logger.debug(f"Skipping {kind} plot {name}: {e}")
    return written

def _echo_result(result: ScenarioResult):
    click.echo(f"scenario {result.name} (seed {result.seed}): {len(result.logs)} logs")
    for name, ok in sorted(result.checks.items()):
        click.echo(f"  [{'PASS' if ok else 'FAIL'}] {name}")

@click.group()
@click.version_option(__version__, prog_name='specgf')
def cli():
    """Spectral gradient methods on low-rank matrix factorization"""

@cli.command('run')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help='Experiment document (YAML or key=value)')
@click.option('--scenario', default=None, help='Registered scenario name, or custom')
@click.option('--seed', type=int, default=None, help='Scenario seed')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None, help='Output directory')
@click.option('--check', is_flag=True, help='Exit with status 3 when an acceptance check fails')
@click.option('--full-scale', is_flag=True, help='Use full replicate counts for the basin experiment')
def run_command(config_path: Optional[str], scenario: Optional[str], seed: Optional[int],
                out_dir: Optional[str], check: bool, full_scale: bool):
    """Run a scenario and write logs, plots and summary.json"""
    try:
        system = _configure()
        document = load_config(config_path) if config_path else parse_config('')
        result = ExperimentService().run_document(document, scenario, seed, full_scale)
        directory = os.path.join(out_dir or document.output_directory, result.name, f'seed_{result.seed}')

        write_summary(result, directory, system.output.write_csv, system.output.write_json)
        _plot_logs(result, document.plots, directory)
        _echo_result(result)

        failed = result.failed_checks()
        if check and failed:
            raise AcceptanceError({key: result.checks[key] for key in failed})
    except SpecGFError as e:
        handle_error(e, context='run', logger=logger)
        click.echo(f"error: {e}", err=True)
        sys.exit(exit_code_for(e))
    sys.exit(EXIT_OK)

@cli.command('list-scenarios')
def list_scenarios():
    """List registered scenarios"""
    for entry in ExperimentService().list_scenarios():
        click.echo(f"{entry['name']:<18} {entry['description']}")

@cli.command('plot')
@click.option('--kind', type=click.Choice(PLOT_KINDS), required=True)
@click.option('--in', 'inputs', type=click.Path(exists=True, dir_okay=False), multiple=True, required=True,
              help='Trajectory JSON written by run (repeat to overlay)')
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), required=True, help='SVG file')
def plot_command(kind: str, inputs, out_path: str):
    """Render saved trajectory logs as SVG"""
    try:
        _configure()
        logs = [read_json(path) for path in inputs]
        emit_plot(logs, kind, out_path)
    except SpecGFError as e:
        handle_error(e, context='plot', logger=logger)
        click.echo(f"error: {e}", err=True)
        sys.exit(exit_code_for(e))
    click.echo(out_path)
