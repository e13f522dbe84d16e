"""
Configuration loading functions for the RedApt pipeline.

Provides YAML/JSON loading with line-aware errors, the flat encoder config
format (a nested ``redapt:`` mapping is flattened to ``redapt.*`` keys),
preset resolution and a stable config digest.
"""

import hashlib
import json
import logging
import os

import yaml

from redapt.lengths import ReductionSpec
from redapt.nn.blocks import FeatureExtractorConfig
from redapt.nn.encoder import EncoderConfig, as_positions
from redapt.nn.redapt_block import RedAptSpec
from redapt.presets import PRESETS
from redapt.signals.augment import AugmentPolicy
from redapt.training.optim import OptimizerConfig
from redapt.training.toy import ToyTaskConfig
from redapt.utils.errors import ConfigError

logger = logging.getLogger(__name__)

ENCODER_KEYS = (
    'layers', 'd_model', 'n_heads', 'd_ffn', 'dropout',
    'fe_kernels', 'fe_strides', 'fe_channels',
    'positions', 'reinit_top_k', 'length_adaptor_layers',
    'redapt.k1', 'redapt.s1', 'redapt.p1', 'redapt.k2', 'redapt.s2', 'redapt.p2',
    'redapt.second_cnn', 'redapt.layernorm', 'redapt.gelu',
)


def _flatten_nodes(node, prefix, lines):
    # Record the 1-based line of every (flattened) key
    if not isinstance(node, yaml.MappingNode):
        return
    for key_node, value_node in node.value:
        key = f"{prefix}{key_node.value}"
        lines[key] = key_node.start_mark.line + 1
        if isinstance(value_node, yaml.MappingNode):
            _flatten_nodes(value_node, key + '.', lines)


def _flatten(values, prefix=''):
    flat = {}
    for key, value in values.items():
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{prefix}{key}."))
        else:
            flat[f"{prefix}{key}"] = value
    return flat


def _flag(flat, key, default):
    value = flat.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"must be true or false, got {value!r}", key=key)
    return value


def load_yaml(config_path):
    """
    Load a YAML (or JSON) file.

    Args:
        config_path: path to the file

    Returns:
        (dict of values, dict key -> line number with nested keys dotted)

    Raises:
        ConfigError: missing file or syntax error (with the line)
    """
    if not os.path.exists(config_path):
        raise ConfigError(f"config file not found: {config_path}")
    with open(config_path, 'r') as f:
        text = f.read()
    try:
        values = yaml.safe_load(text) or {}
        node = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"cannot parse {config_path}: {getattr(e, 'problem', e)}", line=line) from e
    if not isinstance(values, dict):
        raise ConfigError(f"{config_path} must contain a mapping at the top level", line=1)
    lines = {}
    _flatten_nodes(node, '', lines)
    return values, lines


def encoder_config_from_dict(values, lines=None, base=None):
    """
    Build an EncoderConfig from flat (or ``redapt:``-nested) keys.

    Args:
        values: mapping of config keys
        lines: optional key -> line map for error messages
        base: EncoderConfig supplying defaults (desk preset if None)

    Raises:
        ConfigError: unknown key or invalid value, naming the key and line
    """
    lines = lines or {}
    flat = _flatten(values)
    for key in flat:
        if key not in ENCODER_KEYS:
            raise ConfigError("unknown encoder config key", key=key, line=lines.get(key))
    base = base or PRESETS['desk']()
    try:
        fe = FeatureExtractorConfig(
            kernels=flat.get('fe_kernels', base.feature_extractor.kernels),
            strides=flat.get('fe_strides', base.feature_extractor.strides),
            channels=int(flat.get('fe_channels', base.feature_extractor.channels)),
        )
        d_model = int(flat.get('d_model', base.d_model))
        b1, b2 = base.redapt.block1, base.redapt.block2
        spec = RedAptSpec(
            channels=d_model,
            block1=ReductionSpec(
                int(flat.get('redapt.k1', b1.k)), int(flat.get('redapt.s1', b1.s)), int(flat.get('redapt.p1', b1.p))
            ),
            block2=ReductionSpec(
                int(flat.get('redapt.k2', b2.k)), int(flat.get('redapt.s2', b2.s)), int(flat.get('redapt.p2', b2.p))
            ),
            enable_second_cnn=_flag(flat, 'redapt.second_cnn', base.redapt.enable_second_cnn),
            enable_layernorm=_flag(flat, 'redapt.layernorm', base.redapt.enable_layernorm),
            enable_gelu=_flag(flat, 'redapt.gelu', base.redapt.enable_gelu),
        )
        positions = flat.get('positions', base.positions)
        return EncoderConfig(
            layers=int(flat.get('layers', base.layers)),
            d_model=d_model,
            n_heads=int(flat.get('n_heads', base.n_heads)),
            d_ffn=int(flat.get('d_ffn', base.d_ffn)),
            dropout=float(flat.get('dropout', base.dropout)),
            feature_extractor=fe,
            redapt=spec,
            positions=as_positions(positions if positions is not None else ()),
            reinit_top_k=int(flat.get('reinit_top_k', base.reinit_top_k)),
            length_adaptor_layers=int(flat.get('length_adaptor_layers', base.length_adaptor_layers)),
        )
    except ConfigError as e:
        if e.line is None and e.key in lines:
            raise ConfigError(str(e).rsplit(' (', 1)[0], key=e.key, line=lines[e.key]) from e
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid encoder config value: {e}") from e


def load_encoder_config(config, positions=None):
    """
    Resolve ``config`` (preset name or YAML/JSON path) to an EncoderConfig.

    Args:
        config: preset name ('desk', 'w2v2-large', 'w2v2-large-adaptor') or file path
        positions: optional override of the configured positions
    """
    if config in PRESETS:
        cfg = PRESETS[config]()
        logger.info(f"Using preset '{config}'")
    else:
        values, lines = load_yaml(config)
        cfg = encoder_config_from_dict(values, lines)
        logger.info(f"Loaded encoder config from {config}")
    if positions is not None:
        cfg = cfg.with_positions(positions)
    return cfg


def encoder_config_to_dict(cfg):
    """Flat key/value form of an EncoderConfig, inverse of encoder_config_from_dict."""
    spec = cfg.redapt
    return {
        'layers': cfg.layers,
        'd_model': cfg.d_model,
        'n_heads': cfg.n_heads,
        'd_ffn': cfg.d_ffn,
        'dropout': cfg.dropout,
        'fe_kernels': list(cfg.feature_extractor.kernels),
        'fe_strides': list(cfg.feature_extractor.strides),
        'fe_channels': cfg.feature_extractor.channels,
        'positions': list(cfg.positions.positions),
        'reinit_top_k': cfg.reinit_top_k,
        'length_adaptor_layers': cfg.length_adaptor_layers,
        'redapt.k1': spec.block1.k, 'redapt.s1': spec.block1.s, 'redapt.p1': spec.block1.p,
        'redapt.k2': spec.block2.k, 'redapt.s2': spec.block2.s, 'redapt.p2': spec.block2.p,
        'redapt.second_cnn': spec.enable_second_cnn,
        'redapt.layernorm': spec.enable_layernorm,
        'redapt.gelu': spec.enable_gelu,
    }


def config_digest(cfg):
    """Short sha256 of the canonical flat config."""
    canonical = json.dumps(encoder_config_to_dict(cfg), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]


def _section(values, lines, name, cls):
    section = values.get(name) or {}
    known = set(cls.__dataclass_fields__)
    for key in section:
        if key not in known:
            raise ConfigError(f"unknown {name} setting", key=f"{name}.{key}", line=lines.get(f"{name}.{key}"))
    return cls(**section)


def load_train_config(config_path):
    """
    Read ``optimizer:`` and ``task:`` sections plus ``steps``/``seed`` from a training YAML.

    Returns:
        (OptimizerConfig, ToyTaskConfig, dict with remaining run settings)
    """
    values, lines = load_yaml(config_path)
    for key in values:
        if key not in ('optimizer', 'task', 'run'):
            raise ConfigError("unknown training config section", key=key, line=lines.get(key))
    return (
        _section(values, lines, 'optimizer', OptimizerConfig),
        _section(values, lines, 'task', ToyTaskConfig),
        dict(values.get('run') or {}),
    )


def load_augment_policy(config_path):
    """Read an AugmentPolicy from the ``augment:`` section of a YAML file."""
    values, lines = load_yaml(config_path)
    section = values.get('augment', values)
    try:
        return AugmentPolicy.from_dict(section)
    except ConfigError as e:
        line = lines.get(f"augment.{e.key}", lines.get(e.key))
        if line is not None and e.line is None:
            raise ConfigError(str(e).rsplit(' (', 1)[0], key=e.key, line=line) from e
        raise
