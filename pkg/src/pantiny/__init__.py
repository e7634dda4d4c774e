"""Lightweight pan-sharpening: a numpy autodiff engine, the PanTiny network, losses, metrics,
classical baselines, synthetic data and training harnesses."""

__version__ = "0.1.0"
