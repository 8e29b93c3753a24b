"""
Experiment document parsing.

A document is a flat mapping written either as YAML or as `key=value` lines
(`#` starts a comment). Unknown keys, type mismatches and constraint
violations raise ConfigurationError naming the key and its line.

Defaults (every key is optional):

    key                 default            meaning
    scenario            uniform_growth     registered scenario, or `custom` for a single run
    seed                0                  scenario seed; also seeds the target and init
    output_directory    output.directory   where CSV, JSON, SVG and summary.json go
    log_stride          output.log_stride  record every k-th step (custom runs)
    plots               output.plots       spectrum,sqrt_modes,loss unless the system file says otherwise
    workers             SPECGF_WORKERS / 1 thread-pool size for sweeps
    ci_scale            true               reduced basin replicate counts
    orthogonalizer      exact              momentum sweep: exact | newton_schulz
    base_runs, perturbations               basin replicate overrides
    method              SpecExact          custom run: GD | SpecExact | SpecSmoothed | MuonNS
    eta 0.01, mu 0, beta (1e-8 for SpecSmoothed, else 0), lambda 0,
    max_steps 2000, stop_loss 0 (off, as is inf), stop_grad_norm 0 (off, as is inf),
    init LoRA, gamma 1e-3, spectral_sigma_a, spectral_sigma_b,
    depth 2, rank (target rank), ns_iterations 5, ns_coeffs (3.4445, -4.7750, 2.0315),
    active_epsilon (0.05 sigma_min)
    target_m 60, target_n 70, target_sigma 8,5,3,1.5,0.7   custom-run target
"""

import logging
import re
from typing import Any, Dict, List, Optional, Tuple

import yaml
from jsonschema import Draft7Validator

from shared.utils.common import ConfigurationError, InvalidArgumentError
from shared.utils.config import get_config
from specgf.models.experiment import REFERENCE_TARGET, ConfigDocument
from specgf.models.run import DEFAULT_SMOOTHING_BETA, InitKind, InitSpec, Method, RunConfig
from specgf.services.plotting import PLOT_KINDS

logger = logging.getLogger(__name__)

CUSTOM_SCENARIO = 'custom'
KEY_VALUE_LINE = re.compile(r'^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=(.*)$')

_NUMBER = {'type': 'number'}
_POSITIVE = {'type': 'number', 'exclusiveMinimum': 0}
_NONNEGATIVE = {'type': 'number', 'minimum': 0}
_COUNT = {'type': 'integer', 'minimum': 1}
_POSITIVE_LIST = {'type': 'array', 'minItems': 1, 'items': _POSITIVE}

DOCUMENT_SCHEMA = {
    'type': 'object',
    'additionalProperties': False,
    'properties': {
        'scenario': {'type': 'string', 'minLength': 1},
        'seed': {'type': 'integer', 'minimum': 0},
        'output_directory': {'type': 'string', 'minLength': 1},
        'log_stride': _COUNT,
        'plots': {'type': 'array', 'items': {'enum': list(PLOT_KINDS)}},
        'workers': _COUNT,
        'ci_scale': {'type': 'boolean'},
        'orthogonalizer': {'enum': ['exact', 'newton_schulz']},
        'base_runs': _COUNT,
        'perturbations': _COUNT,
        'method': {'enum': [m.value for m in Method]},
        'eta': _POSITIVE,
        'mu': {'type': 'number', 'minimum': 0, 'maximum': 1},
        'beta': _NONNEGATIVE,
        'lambda': _NONNEGATIVE,
        'max_steps': {'type': 'integer', 'minimum': 0},
        'stop_loss': _NONNEGATIVE,
        'stop_grad_norm': _NONNEGATIVE,
        'init': {'enum': [InitKind.LORA.value, InitKind.SPECTRAL.value]},
        'gamma': _POSITIVE,
        'spectral_sigma_a': _POSITIVE_LIST,
        'spectral_sigma_b': _POSITIVE_LIST,
        'depth': {'type': 'integer', 'minimum': 2},
        'rank': _COUNT,
        'ns_iterations': _COUNT,
        'ns_coeffs': {'type': 'array', 'minItems': 3, 'maxItems': 3, 'items': _NUMBER},
        'active_epsilon': _POSITIVE,
        'target_m': _COUNT,
        'target_n': _COUNT,
        'target_sigma': _POSITIVE_LIST
    }
}

RUN_KEYS = ('method', 'eta', 'mu', 'beta', 'lambda', 'max_steps', 'stop_loss', 'stop_grad_norm',
            'init', 'gamma', 'spectral_sigma_a', 'spectral_sigma_b', 'depth', 'rank',
            'ns_iterations', 'ns_coeffs', 'active_epsilon')
TARGET_KEYS = ('target_m', 'target_n', 'target_sigma')
OPTION_KEYS = ('orthogonalizer', 'base_runs', 'perturbations')

# leading word of a RunConfig validation message -> document key
_VALIDATION_KEYS = {'momentum': 'mu', 'spectral': 'spectral_sigma_a', 'explicit': 'init'}

def _parse_scalar(raw: str) -> Any:
    text = raw.strip()
    if ',' in text and not text.startswith('['):
        return [_parse_scalar(part) for part in text.split(',') if part.strip()]
    try:
        return yaml.safe_load(text) if text else None
    except yaml.YAMLError:
        return text

def _is_key_value(lines: List[str]) -> bool:
    content = [line for line in lines if line.strip() and not line.lstrip().startswith('#')]
    return bool(content) and all(KEY_VALUE_LINE.match(line) for line in content)

def _read_key_value(lines: List[str]) -> Tuple[Dict[str, Any], Dict[str, int]]:
    data, line_numbers = {}, {}
    for number, line in enumerate(lines, start=1):
        stripped = line.split('#', 1)[0]
        if not stripped.strip():
            continue
        match = KEY_VALUE_LINE.match(stripped)
        key, raw = match.group(1), match.group(2)
        if key in data:
            raise ConfigurationError("duplicate key", key=key, line=number)
        data[key] = _parse_scalar(raw)
        line_numbers[key] = number
    return data, line_numbers

def _read_yaml(text: str) -> Tuple[Dict[str, Any], Dict[str, int]]:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        raise ConfigurationError(f"malformed document: {getattr(e, 'problem', e)}",
                                 line=mark.line + 1 if mark is not None else None) from e
    if data is None:
        return {}, {}
    if not isinstance(data, dict) or not isinstance(node, yaml.MappingNode):
        raise ConfigurationError("document must be a flat mapping of keys to values", line=1)
    line_numbers = {key_node.value: key_node.start_mark.line + 1 for key_node, _ in node.value}
    return data, line_numbers

def _coerce(data: Dict[str, Any]) -> Dict[str, Any]:
    """YAML reads 1e-8 as a string; numeric schema entries accept numeric text"""
    properties = DOCUMENT_SCHEMA['properties']
    out = {}
    for key, value in data.items():
        expected = properties.get(key, {})
        kind = expected.get('type')
        if kind == 'array' and not isinstance(value, list) and value is not None:
            value = [value]
        if kind == 'number' or (kind == 'array' and expected.get('items', {}).get('type') == 'number'):
            value = _to_number(value)
        out[key] = value
    return out

def _to_number(value: Any) -> Any:
    if isinstance(value, list):
        return [_to_number(v) for v in value]
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value

def _check_schema(data: Dict[str, Any], line_numbers: Dict[str, int]):
    for key in data:
        if key not in DOCUMENT_SCHEMA['properties']:
            raise ConfigurationError("unknown key", key=key, line=line_numbers.get(key))

    errors = sorted(Draft7Validator(DOCUMENT_SCHEMA).iter_errors(data),
                    key=lambda e: line_numbers.get(e.path[0], 0) if e.path else 0)
    if errors:
        error = errors[0]
        key = str(error.path[0]) if error.path else None
        raise ConfigurationError(f"invalid value: {error.message}", key=key, line=line_numbers.get(key))

def _optional_int(value: Any) -> Optional[int]:
    return int(value) if value is not None else None

def _run_config(data: Dict[str, Any], seed: int, log_stride: int) -> RunConfig:
    method = Method(data.get('method', Method.SPEC_EXACT.value))
    beta = data.get('beta')
    if beta is None:
        beta = DEFAULT_SMOOTHING_BETA if method is Method.SPEC_SMOOTHED else 0.0

    kind = InitKind(data.get('init', InitKind.LORA.value))
    sa, sb = data.get('spectral_sigma_a'), data.get('spectral_sigma_b')
    init = InitSpec(
        kind=kind,
        gamma=float(data.get('gamma', 1e-3)),
        spectral_sigma_a=tuple(sa) if sa is not None else None,
        spectral_sigma_b=tuple(sb) if sb is not None else None
    )
    fields = {
        'method': method,
        'beta': float(beta),
        'init': init,
        'seed': seed,
        'log_stride': log_stride,
        'eta': data.get('eta'),
        'mu': data.get('mu'),
        'lam': data.get('lambda'),
        'max_steps': _optional_int(data.get('max_steps')),
        'stop_loss': data.get('stop_loss'),
        'stop_grad_norm': data.get('stop_grad_norm'),
        'depth': _optional_int(data.get('depth')),
        'rank': _optional_int(data.get('rank')),
        'ns_iterations': _optional_int(data.get('ns_iterations')),
        'ns_coeffs': tuple(data['ns_coeffs']) if 'ns_coeffs' in data else None,
        'active_epsilon': data.get('active_epsilon')
    }
    return RunConfig(**{k: v for k, v in fields.items() if v is not None})

def _validation_key(message: str) -> str:
    word = message.split(' ', 1)[0]
    return _VALIDATION_KEYS.get(word, word)

def parse_config(text: str) -> ConfigDocument:
    """Resolve a document into a ConfigDocument with every default applied"""
    lines = text.splitlines()
    if _is_key_value(lines):
        data, line_numbers = _read_key_value(lines)
    else:
        data, line_numbers = _read_yaml(text)

    data = _coerce(data)
    _check_schema(data, line_numbers)

    run_keys = [key for key in RUN_KEYS + TARGET_KEYS if key in data]
    scenario = data.get('scenario', CUSTOM_SCENARIO if run_keys else 'uniform_growth')
    if run_keys and scenario != CUSTOM_SCENARIO:
        key = run_keys[0]
        raise ConfigurationError(f"run keys need scenario={CUSTOM_SCENARIO}", key=key, line=line_numbers.get(key))

    output = get_config().output
    seed = int(data.get('seed', 0))
    log_stride = int(data.get('log_stride', output.log_stride))
    plots = tuple(data.get('plots', output.plots))
    unknown = [kind for kind in plots if kind not in PLOT_KINDS]
    if unknown:
        raise ConfigurationError(f"unknown plot kinds {unknown}", key='plots', line=line_numbers.get('plots'))
    run: Optional[RunConfig] = None
    target = None
    if scenario == CUSTOM_SCENARIO:
        run = _run_config(data, seed, log_stride)
        for message in run.validate():
            key = _validation_key(message)
            raise ConfigurationError(message, key=key, line=line_numbers.get(key))
        m, n, sigma = REFERENCE_TARGET
        target = (int(data.get('target_m', m)), int(data.get('target_n', n)),
                  tuple(float(s) for s in data.get('target_sigma', sigma)))

    document = ConfigDocument(
        scenario=scenario,
        run=run,
        target=target,
        seed=seed,
        output_directory=data.get('output_directory', output.directory),
        log_stride=log_stride,
        plots=plots,
        workers=data.get('workers'),
        ci_scale=bool(data.get('ci_scale', True)),
        overrides={key: data[key] for key in OPTION_KEYS if key in data}
    )
    logger.info(f"Resolved document: {document.to_dict()}")
    return document

def load_config(path: str) -> ConfigDocument:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise ConfigurationError(f"could not read {path} ({e.strerror})") from e
    except UnicodeDecodeError as e:
        raise InvalidArgumentError(f"{path} is not UTF-8 text") from e
    return parse_config(text)
