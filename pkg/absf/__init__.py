"""ABS lab: almost-blank-subframe orchestration with mmWave D2D relay groups."""

__version__ = "0.3.0"
