import json

import numpy as np
import pytest

from demucs_mr.models import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_model_config():
    def _make(**overrides):
        params = dict(base_channels=4, freq_channels=(2, 2, 2, 2, 2))
        params.update(overrides)
        return ModelConfig(**params)
    return _make


@pytest.fixture
def toy_config_file(tmp_path):
    """Experiment config for a tiny model on a two-file synthetic corpus under tmp_path."""
    def _write(**sections):
        cfg = {
            'schema_version': 1,
            'seed': 7,
            'log_path': str(tmp_path / 'runs' / 'train.jsonl'),
            'model': {'base_channels': 4, 'freq_channels': [2, 2, 2, 2, 2]},
            'optimizer': {'steps': 2, 'batch': 1, 'segment_s': 0.5, 'prefetch': 0},
            'data': {'out_dir': str(tmp_path / 'corpus'), 'manifest': str(tmp_path / 'corpus' / 'manifest.csv'),
                     'count': 2, 'duration_s': 1.0},
            'checkpoint': {'path': str(tmp_path / 'runs' / 'model.ckpt'), 'every': 1},
        }
        for section, values in sections.items():
            if isinstance(values, dict):
                cfg.setdefault(section, {}).update(values)
            else:
                cfg[section] = values
        path = tmp_path / 'config.json'
        path.write_text(json.dumps(cfg))
        return str(path)
    return _write
