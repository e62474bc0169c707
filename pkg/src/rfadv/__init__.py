"""rfadv: adversarial attacks against deep-learning RF fingerprint
identification of LoRa devices, on a synthetic desk-scale testbed."""

__version__ = "0.1.0"

from . import attacks, engine, harness, models, receiver, trainer, waveform  # noqa: F401
from ._accel import backend  # noqa: F401
