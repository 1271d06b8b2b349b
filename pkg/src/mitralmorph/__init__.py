"""Mitral valve morphometry from multi-label voxel segmentations."""

__version__ = "0.1.0"

ANNULUS = 1
ANTERIOR = 2
POSTERIOR = 3
