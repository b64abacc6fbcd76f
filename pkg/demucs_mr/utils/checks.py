import os

from ..models import ModelConfig
from .aligners import _aligners, get_aligner
from .exceptions import DemucsError
from .loss import LossConfig
from .setup import SCHEMA_VERSION, get_config


class ExperimentChecks:
    @staticmethod
    def check_schema_version(cfg):
        if get_config(cfg, 'schema_version') != SCHEMA_VERSION:
            return f'schema_version must be {SCHEMA_VERSION}'

    @staticmethod
    def check_model(cfg):
        try:
            ModelConfig.from_dict(dict(get_config(cfg, 'model', {})))
        except (DemucsError, TypeError) as e:
            return f'model: {getattr(e, "message", e)}'

    @staticmethod
    def check_loss(cfg):
        try:
            LossConfig.from_dict(dict(get_config(cfg, 'loss', {})))
        except (DemucsError, TypeError) as e:
            return f'loss: {getattr(e, "message", e)}'

    @staticmethod
    def check_mrd_heads(cfg):
        if not get_config(cfg, 'model:mrd_enabled'):
            return
        try:
            model = ModelConfig.from_dict(dict(get_config(cfg, 'model')))
            loss = LossConfig.from_dict(dict(get_config(cfg, 'loss')))
            order = loss.assignment(3)
        except (DemucsError, TypeError) as e:
            return f'mrd: {getattr(e, "message", e)}'
        heads = [r.label for r in model.mrd_head_resolutions]
        assigned = [loss.resolutions[i].label for i in order]
        if heads != assigned:
            return f'mrd: head resolutions {heads} do not match loss assignment {assigned}'

    @staticmethod
    def check_aligner(cfg):
        if not get_config(cfg, 'model:mre_enabled'):
            return
        name = get_config(cfg, 'model:aligner', 'auto')
        if name != 'auto' and name not in _aligners:
            return f'invalid aligner: {name}'
        try:
            model = ModelConfig.from_dict(dict(get_config(cfg, 'model')))
        except (DemucsError, TypeError):
            return
        ok, msg = get_aligner(name, model.causal).check_availability(model)
        if not ok:
            return msg

    @staticmethod
    def check_optimizer(cfg):
        opt = get_config(cfg, 'optimizer', {})
        if opt.get('kind') != 'adam':
            return f'optimizer kind {opt.get("kind")!r} is not supported (adam only)'
        if not opt.get('lr', 0) > 0:
            return 'optimizer: lr must be positive'
        if int(opt.get('steps', -1)) < 0:
            return 'optimizer: steps must be non-negative'
        if int(opt.get('batch', 0)) < 1:
            return 'optimizer: batch must be at least 1'
        if not opt.get('segment_s', 0) > 0:
            return 'optimizer: segment_s must be positive'

    @staticmethod
    def check_checkpoint(cfg):
        if int(get_config(cfg, 'checkpoint:every', 0)) < 1:
            return 'checkpoint: every must be at least 1'
        parent = os.path.dirname(os.path.abspath(get_config(cfg, 'checkpoint:path', '')))
        while not os.path.exists(parent):
            parent = os.path.dirname(parent)
        if not os.access(parent, os.W_OK):
            return f'checkpoint directory under {parent} is not writable'

    @staticmethod
    def perform(cfg):
        errors = []
        for attr in dir(ExperimentChecks):
            if attr.startswith('check_'):
                err = getattr(ExperimentChecks, attr)(cfg)
                if err:
                    errors.append(err)
        return errors
