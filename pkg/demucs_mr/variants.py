from .utils.exceptions import InvalidArgument
from .utils.setup import get_config, set_config


class BaseVariant:
    id = None  # Unique identifier, announced in the training log header
    name = None
    mre = False
    mrd = False

    @classmethod
    def apply(cls, cfg):
        set_config(cfg, 'model:mre_enabled', cls.mre)
        set_config(cfg, 'model:mrd_enabled', cls.mrd)
        return cfg

    @classmethod
    def read(cls, cfg):
        return {
            'id': cls.id,
            'name': cls.name,
            'mre': cls.mre,
            'mrd': cls.mrd,
            'mre_resolutions': get_config(cfg, 'model:mre_resolutions') if cls.mre else None,
            'head_resolutions': get_config(cfg, 'model:mrd_head_resolutions') if cls.mrd else None,
        }


class DemucsVariant(BaseVariant):
    id = 'demucs'
    name = 'DEMUCS'


class DemucsMreVariant(BaseVariant):
    id = 'demucs-mre'
    name = 'DEMUCS-MRE'
    mre = True


class DemucsMrdVariant(BaseVariant):
    id = 'demucs-mrd'
    name = 'DEMUCS-MRD'
    mrd = True


class DemucsMreMrdVariant(BaseVariant):
    id = 'demucs-mre-mrd'
    name = 'DEMUCS-MRE-MRD'
    mre = True
    mrd = True


VARIANT_CLASSES = {cls.id: cls for cls in (DemucsVariant, DemucsMreVariant, DemucsMrdVariant, DemucsMreMrdVariant)}


def get_variant(variant_id):
    if variant_id not in VARIANT_CLASSES:
        raise InvalidArgument(f'unknown variant {variant_id!r}, expected one of {sorted(VARIANT_CLASSES)}')
    return VARIANT_CLASSES[variant_id]


def variant_for(mre, mrd):
    for cls in VARIANT_CLASSES.values():
        if cls.mre == bool(mre) and cls.mrd == bool(mrd):
            return cls
