"""Gaussian-splat object editing: reconstruction, text-guided SDS editing,
and textured mesh extraction, with diffusion/embedding models behind
pluggable oracle interfaces."""

__version__ = "0.1.0"

from .cameras import Camera, CameraRig, build_camera_rig
from .core import GaussianSplat, ImageBuffer, Scene

__all__ = [
    "Camera",
    "CameraRig",
    "GaussianSplat",
    "ImageBuffer",
    "Scene",
    "build_camera_rig",
    "__version__",
]
