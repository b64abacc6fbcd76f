import copy
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

from ..models import ModelConfig
from .exceptions import InvalidArgument, UnsupportedFormat, VersionError
from .loss import LossConfig
from .metrics import CompositeCoefficients

SCHEMA_VERSION = 1
LOG_LEVEL_ENV = 'DEMUCS_MR_LOG_LEVEL'


def get_config(cfg, key, default=None):
    node = cfg
    for part in key.split(':'):
        if not isinstance(node, dict) or part not in node:
            return default
        node = node[part]
    return node


def set_config(cfg, key, value):
    parts = key.split(':')
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def setup_default_configs():
    cfg = {'schema_version': SCHEMA_VERSION}
    for key, val in {
        'seed': 0,
        'log_path': 'runs/train.jsonl',
        'model:depth': 5,
        'model:base_channels': 16,
        'model:kernel': 8,
        'model:stride': 4,
        'model:lstm_hidden': None,
        'model:lstm_layers': 2,
        'model:resample_factor': 4,
        'model:mre_enabled': False,
        'model:mre_resolutions': 'encoder',
        'model:freq_channels': [8, 16, 32, 64, 128],
        'model:mrd_enabled': False,
        'model:mrd_head_resolutions': 'conventional',
        'model:causal': True,
        'model:aligner': 'auto',
        'loss:alpha': 0.5,
        'loss:resolutions': 'conventional',
        'loss:per_head_assignment': None,
        'loss:mae_target': 'average',
        'optimizer:kind': 'adam',
        'optimizer:lr': 3e-4,
        'optimizer:betas': [0.9, 0.999],
        'optimizer:eps': 1e-8,
        'optimizer:steps': 1000,
        'optimizer:batch': 4,
        'optimizer:segment_s': 1.0,
        'optimizer:prefetch': 2,
        'data:manifest': 'corpus/manifest.csv',
        'data:out_dir': 'corpus',
        'data:count': 16,
        'data:duration_s': 2.0,
        'data:snr_db': [-5.0, 15.0],
        'data:clean_kinds': ['harmonic-vowel', 'chirp'],
        'data:noise_kinds': ['white', 'pink', 'filtered-babble-surrogate'],
        'checkpoint:path': 'runs/model.ckpt',
        'checkpoint:every': 100,
        'metrics:composite': None,
    }.items():
        set_config(cfg, key, val)
    return cfg


def _merge(base, override):
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def load_config(path=None):
    """Defaults overlaid with the JSON file at ``path`` (if any)."""
    cfg = setup_default_configs()
    if path is None:
        return cfg
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise InvalidArgument(f'config file {path} does not exist') from None
    except json.JSONDecodeError as e:
        raise UnsupportedFormat(f'config file {path} is not valid JSON ({e})') from None
    version = data.get('schema_version')
    if version != SCHEMA_VERSION:
        raise VersionError(f'config schema_version {version!r} is not supported (expected {SCHEMA_VERSION})')
    return _merge(cfg, copy.deepcopy(data))


def save_config(path, cfg):
    with open(path, 'w') as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write('\n')


def setup_logging(level=None):
    level = level or os.environ.get(LOG_LEVEL_ENV, 'WARNING')
    numeric = logging.getLevelName(str(level).upper())
    if not isinstance(numeric, int):
        raise InvalidArgument(f'unknown log level {level!r}')
    logger = logging.getLogger('demucs_mr')
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(name)s: %(message)s'))
        logger.addHandler(handler)
    logger.setLevel(numeric)
    return logger


@dataclass
class OptimizerConfig:
    kind: str = 'adam'
    lr: float = 3e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    steps: int = 1000
    batch: int = 4
    segment_s: float = 1.0
    prefetch: int = 2


@dataclass
class ExperimentConfig:
    model: ModelConfig
    loss: LossConfig
    optimizer: OptimizerConfig
    data: dict
    seed: int
    checkpoint_path: str
    checkpoint_every: int
    log_path: str
    composite: Optional[CompositeCoefficients] = None
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, cfg):
        optimizer = dict(get_config(cfg, 'optimizer'))
        optimizer['betas'] = tuple(optimizer['betas'])
        composite = get_config(cfg, 'metrics:composite')
        return cls(
            model=ModelConfig.from_dict(dict(get_config(cfg, 'model'))),
            loss=LossConfig.from_dict(dict(get_config(cfg, 'loss'))),
            optimizer=OptimizerConfig(**optimizer),
            data=dict(get_config(cfg, 'data')),
            seed=int(get_config(cfg, 'seed')),
            checkpoint_path=get_config(cfg, 'checkpoint:path'),
            checkpoint_every=int(get_config(cfg, 'checkpoint:every')),
            log_path=get_config(cfg, 'log_path'),
            composite=CompositeCoefficients.from_dict(composite) if composite else None,
            raw=cfg,
        )
