"""Patch-based class-conditional diffusion pipeline for labeled synthetic
patterned-wafer inspection images, with metrology and detection-evaluation
machinery for validating the synthetics."""

__version__ = "0.1.0"
