from .model import Warmer, WarmerConfig, WarmerExample
from .tuning import TuningConfig, TuningReport, tune

__all__ = ["Warmer", "WarmerConfig", "WarmerExample", "TuningConfig", "TuningReport", "tune"]
