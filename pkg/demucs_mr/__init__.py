from .models import Demucs, ModelConfig, ModelOutput, load_model, save_model
from .variants import VARIANT_CLASSES

__version__ = '0.1.1'

__all__ = ["Demucs", "ModelConfig", "ModelOutput", "load_model", "save_model", "VARIANT_CLASSES"]
