"""Wideband mmWave MIMO-OFDM channel estimation and localization under beam squint."""

from .channel import SystemConfig, add_noise, narrowband_thresholds, synthesize
from .scene import SceneConfig, build_scene

__all__ = ["SystemConfig", "SceneConfig", "build_scene", "synthesize", "add_noise", "narrowband_thresholds"]
__version__ = "0.1.0"
