import json
import logging

import pytest

from demucs_mr.utils.aligners import get_aligner
from demucs_mr.utils.checks import ExperimentChecks
from demucs_mr.utils.exceptions import InvalidArgument, UnsupportedFormat, VersionError
from demucs_mr.utils.setup import (LOG_LEVEL_ENV, ExperimentConfig, get_config, load_config, save_config,
                                   set_config, setup_default_configs, setup_logging)
from demucs_mr.variants import VARIANT_CLASSES, get_variant, variant_for


@pytest.fixture(autouse=True)
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


class TestConfigTree:
    def test_defaults(self):
        cfg = setup_default_configs()
        assert get_config(cfg, 'schema_version') == 1
        assert get_config(cfg, 'loss:alpha') == 0.5
        assert get_config(cfg, 'optimizer:lr') == 3e-4
        assert get_config(cfg, 'model:causal') is True

    def test_get_missing(self):
        assert get_config({}, 'model:depth', 'fallback') == 'fallback'

    def test_set_creates_sections(self):
        cfg = {}
        set_config(cfg, 'a:b:c', 1)
        assert cfg == {'a': {'b': {'c': 1}}}

    def test_file_overrides_defaults(self, tmp_path):
        path = tmp_path / 'c.json'
        path.write_text(json.dumps({'schema_version': 1, 'loss': {'alpha': 0.25}}))
        cfg = load_config(str(path))
        assert get_config(cfg, 'loss:alpha') == 0.25
        assert get_config(cfg, 'loss:resolutions') == 'conventional'

    def test_save_and_load(self, tmp_path):
        cfg = setup_default_configs()
        set_config(cfg, 'seed', 42)
        save_config(str(tmp_path / 'saved.json'), cfg)
        assert load_config(str(tmp_path / 'saved.json')) == cfg

    def test_schema_version_mismatch(self, tmp_path):
        path = tmp_path / 'old.json'
        path.write_text(json.dumps({'schema_version': 0}))
        with pytest.raises(VersionError):
            load_config(str(path))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text('{schema_version: 1')
        with pytest.raises(UnsupportedFormat):
            load_config(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidArgument):
            load_config(str(tmp_path / 'absent.json'))

    def test_experiment_config(self):
        exp = ExperimentConfig.from_dict(setup_default_configs())
        assert exp.model.base_channels == 16 and exp.optimizer.betas == (0.9, 0.999)
        assert exp.composite is None and exp.checkpoint_every == 100


class TestChecks:
    def test_defaults_pass(self):
        assert ExperimentChecks.perform(setup_default_configs()) == []

    @pytest.mark.parametrize('key,value,fragment', [
        ('loss:alpha', 2.0, 'alpha'),
        ('optimizer:kind', 'sgd', 'adam only'),
        ('optimizer:lr', 0.0, 'lr'),
        ('optimizer:batch', 0, 'batch'),
        ('checkpoint:every', 0, 'every'),
        ('model:depth', 3, 'depth'),
        ('model:resample_factor', 3, 'resample_factor'),
        ('loss:resolutions', 'broadband', 'broadband'),
    ])
    def test_invalid_values(self, key, value, fragment):
        cfg = setup_default_configs()
        set_config(cfg, key, value)
        errors = ExperimentChecks.perform(cfg)
        assert errors and any(fragment in e for e in errors), errors

    def test_mrd_head_mismatch(self):
        cfg = setup_default_configs()
        set_config(cfg, 'model:mrd_enabled', True)
        set_config(cfg, 'loss:per_head_assignment', [2, 1, 0])
        assert any(e.startswith('mrd:') for e in ExperimentChecks.perform(cfg))

    def test_mrd_with_single_loss_resolution(self):
        cfg = setup_default_configs()
        set_config(cfg, 'model:mrd_enabled', True)
        set_config(cfg, 'loss:resolutions', 'single-32ms')
        assert any(e.startswith('mrd:') for e in ExperimentChecks.perform(cfg))

    def test_unknown_aligner(self):
        cfg = setup_default_configs()
        set_config(cfg, 'model:mre_enabled', True)
        set_config(cfg, 'model:aligner', 'nearest')
        assert 'invalid aligner: nearest' in ExperimentChecks.perform(cfg)

    def test_interp_aligner_on_causal_model(self):
        cfg = setup_default_configs()
        set_config(cfg, 'model:mre_enabled', True)
        set_config(cfg, 'model:aligner', 'interp')
        assert any('hold' in e for e in ExperimentChecks.perform(cfg))


class TestAligners:
    def test_auto(self):
        assert get_aligner('auto', causal=True).name == 'hold'
        assert get_aligner('auto', causal=False).name == 'interp'

    def test_unknown(self):
        with pytest.raises(InvalidArgument):
            get_aligner('nearest')

    def test_hold_plan(self):
        from fractions import Fraction

        from demucs_mr.utils.dsp import StftConfig
        cfg = StftConfig(8, 4, 8, center_pad=False)
        index, _, mask, _ = get_aligner('hold').plan(6, 10, Fraction(64, 1), cfg)
        # step tau ends at sample 64 * tau; frames are 128 long with a 64 hop
        assert index.tolist() == [0, 0, 0, 1, 2, 3]
        assert mask.tolist() == [0.0, 0.0, 1.0, 1.0, 1.0, 1.0]

    def test_interp_weights_sum_to_one(self):
        from fractions import Fraction

        from demucs_mr.utils.dsp import StftConfig
        _, _, w1, w2 = get_aligner('interp').plan(7, 5, Fraction(16, 4), StftConfig(8, 4, 8))
        assert all(abs(a + b - 1.0) < 1e-12 for a, b in zip(w1, w2))


class TestVariants:
    def test_four_variants(self):
        assert sorted(VARIANT_CLASSES) == ['demucs', 'demucs-mrd', 'demucs-mre', 'demucs-mre-mrd']

    def test_apply(self):
        cfg = get_variant('demucs-mre').apply(setup_default_configs())
        assert get_config(cfg, 'model:mre_enabled') and not get_config(cfg, 'model:mrd_enabled')

    def test_lookup_by_flags(self):
        assert variant_for(True, True).id == 'demucs-mre-mrd'
        assert variant_for(False, False).id == 'demucs'

    def test_read(self):
        info = get_variant('demucs-mrd').read(setup_default_configs())
        assert info['mrd'] and info['head_resolutions'] == 'conventional' and info['mre_resolutions'] is None

    def test_unknown(self):
        with pytest.raises(InvalidArgument):
            get_variant('wavenet')


class TestLogging:
    def test_env_level(self, monkeypatch):
        monkeypatch.setenv(LOG_LEVEL_ENV, 'debug')
        assert setup_logging().level == logging.DEBUG

    def test_explicit_level_wins(self, monkeypatch):
        monkeypatch.setenv(LOG_LEVEL_ENV, 'debug')
        assert setup_logging('ERROR').level == logging.ERROR

    def test_unknown_level(self):
        with pytest.raises(InvalidArgument):
            setup_logging('chatty')
