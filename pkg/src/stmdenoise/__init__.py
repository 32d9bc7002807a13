"""Physics-based simulation and unpaired adversarial denoising of STM images."""

__version__ = "0.1.0"
