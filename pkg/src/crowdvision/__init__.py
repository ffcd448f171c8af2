"""Crowd video analytics toolkit.

Three analysis pipelines over grayscale frame sequences, plus a
cellular-automata crowd simulator that generates ground-truth footage
for validating them end to end:

- flow segmentation and per-segment people counting (``flowseg``)
- source/sink discovery from advected particle tracks (``advection``)
- pedestrian group detection from trajectories (``groups``)
- floor-field CA simulation and rasterization (``simulate``)

Hot pixel kernels run in a compiled extension when available, with a
pure-numpy fallback (see ``crowdvision._kernels``).
"""
from ._kernels import BACKEND_NAME

__version__ = "0.1.0"

__all__ = ["BACKEND_NAME", "__version__"]
