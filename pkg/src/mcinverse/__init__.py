"""Differentiable Monte Carlo direct illumination with inverse texture and probe fitting.

Modules: ``imageio`` (PFM/OBJ/PNG, bilinear textures), ``geometry`` (BVH,
camera rays), ``material`` (Lambert + GGX), ``envlight`` (lat-long probe and
its sampler), ``sampling`` (hashed RNG, MIS), ``render`` (forward AOVs),
``adjoint`` (texel gradients, gradient checks), ``denoise`` (cross-bilateral),
``loss``, ``optimize`` (Adam), ``config`` and ``cli``.
"""

from __future__ import annotations

from ._backend import BACKEND
from .envlight import EnvProbe
from .geometry import Camera
from .imageio import MeshData, Texture2D, load_obj, load_pfm, save_obj, save_pfm
from .material import MaterialTextures
from .optimize import OptimConfig, View
from .render import Scene, render_forward

__version__ = "0.1.0"

__all__ = ["BACKEND", "Camera", "EnvProbe", "MaterialTextures", "MeshData", "OptimConfig",
           "Scene", "Texture2D", "View", "load_obj", "load_pfm", "render_forward",
           "save_obj", "save_pfm", "__version__"]
