"""Tests for experiment document parsing"""

import pytest

from shared.utils.common import ConfigurationError
from shared.utils.config import reset_config_manager
from specgf.models.experiment import REFERENCE_TARGET
from specgf.models.run import InitKind, Method
from specgf.services.document_parser import load_config, parse_config

def test_empty_document_resolves_to_defaults():
    document = parse_config('')

    assert document.scenario == 'uniform_growth'
    assert document.run is None
    assert document.seed == 0
    assert document.output_directory == 'results'
    assert document.plots == ('spectrum', 'sqrt_modes', 'loss')
    assert document.ci_scale is True
    assert document.overrides == {}

def test_run_keys_select_a_custom_run():
    document = parse_config("method=SpecSmoothed\nmax_steps=10\n")

    assert document.scenario == 'custom'
    assert document.run.method is Method.SPEC_SMOOTHED
    assert document.run.beta == 1e-8
    assert document.run.max_steps == 10
    assert document.run.init.kind is InitKind.LORA
    assert document.target == REFERENCE_TARGET

def test_key_value_lists_and_comments():
    document = parse_config(
        "# small target\n"
        "scenario=custom\n"
        "seed=3  # trailing note\n"
        "target_m=4\n"
        "target_n=3\n"
        "target_sigma=2,1\n"
        "plots=loss,drift\n"
    )

    assert document.seed == 3
    assert document.run.seed == 3
    assert document.target == (4, 3, (2.0, 1.0))
    assert document.plots == ('loss', 'drift')

def test_single_plot_kind_becomes_a_list():
    assert parse_config("plots=loss").plots == ('loss',)

def test_yaml_document_with_numeric_text():
    document = parse_config(
        "scenario: custom\n"
        "method: GD\n"
        "eta: 1e-2\n"
        "spectral_sigma_a: [0.1, 0.2]\n"
        "spectral_sigma_b: [0.1, 0.2]\n"
        "init: Spectral\n"
        "target_sigma: [3, 1]\n"
    )

    assert document.run.eta == pytest.approx(0.01)
    assert document.run.init.kind is InitKind.SPECTRAL
    assert document.run.init.spectral_sigma_a == (0.1, 0.2)

def test_constraint_violation_names_key_and_line():
    with pytest.raises(ConfigurationError) as excinfo:
        parse_config("method=SpecSmoothed\nbeta=-1\n")

    assert excinfo.value.key == 'beta'
    assert excinfo.value.line == 2

def test_unknown_key_is_rejected():
    with pytest.raises(ConfigurationError, match='unknown key') as excinfo:
        parse_config("seed=1\ncolour=red\n")

    assert excinfo.value.key == 'colour'
    assert excinfo.value.line == 2

def test_type_mismatch_is_rejected():
    with pytest.raises(ConfigurationError) as excinfo:
        parse_config("scenario: custom\nmax_steps: many\n")

    assert excinfo.value.key == 'max_steps'
    assert excinfo.value.line == 2

def test_duplicate_key_is_rejected():
    with pytest.raises(ConfigurationError, match='duplicate') as excinfo:
        parse_config("seed=1\nseed=2\n")

    assert excinfo.value.line == 2

@pytest.mark.parametrize("text,key", [
    ("method=SpecExact\nbeta=0.5\n", 'beta'),
    ("method=GD\nmu=0.5\n", 'mu'),
    ("init=Spectral\nspectral_sigma_a=0.1\n", 'spectral_sigma_a'),
])
def test_run_validation_maps_messages_to_keys(text, key):
    with pytest.raises(ConfigurationError) as excinfo:
        parse_config(text)

    assert excinfo.value.key == key

def test_run_keys_need_the_custom_scenario():
    with pytest.raises(ConfigurationError) as excinfo:
        parse_config("scenario=basin\neta=0.1\n")

    assert excinfo.value.key == 'eta'

def test_scenario_options_pass_through():
    document = parse_config("scenario=basin\nbase_runs=3\nperturbations=4\nworkers=2\nci_scale=false\n")

    assert document.overrides == {'base_runs': 3, 'perturbations': 4}
    assert document.workers == 2
    assert document.ci_scale is False

def test_malformed_yaml_reports_a_line():
    with pytest.raises(ConfigurationError) as excinfo:
        parse_config("scenario: custom\nplots: [loss, drift\n")

    assert excinfo.value.line is not None

def test_load_config_reads_a_file(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text("scenario=rank1_ode\nseed=2\n")

    assert load_config(str(path)).scenario == 'rank1_ode'
    with pytest.raises(ConfigurationError):
        load_config(str(tmp_path / 'missing.cfg'))

def test_system_output_section_supplies_document_defaults(tmp_path):
    (tmp_path / 'specgf.yaml').write_text(
        "output:\n"
        "  directory: artifacts\n"
        "  log_stride: 5\n"
        "  plots: [loss]\n"
    )
    reset_config_manager()

    document = parse_config("method=GD\n")

    assert document.output_directory == 'artifacts'
    assert document.log_stride == 5
    assert document.run.log_stride == 5
    assert document.plots == ('loss',)
    assert parse_config("log_stride=2\nplots=drift\n").plots == ('drift',)

def test_unknown_plot_kind_in_system_file_is_rejected(tmp_path):
    (tmp_path / 'specgf.yaml').write_text("output:\n  plots: [loss, heatmap]\n")
    reset_config_manager()

    with pytest.raises(ConfigurationError) as info:
        parse_config('')
    assert info.value.key == 'plots'

def test_infinite_stop_loss_is_accepted_as_off():
    document = parse_config("stop_loss=inf\nmax_steps=10\n")

    assert document.run.stop_loss == float('inf')
