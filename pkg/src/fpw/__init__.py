"""Pedestrian detection in top-view fisheye images via perspective-view composites."""

from .geometry import FisheyeCamera, PatchSpec, ViewFrame, WarpLut
from .compositor import CompositeLayout, CompositeImage
from .rotrect import PolarBox

__all__ = [
    "FisheyeCamera",
    "PatchSpec",
    "ViewFrame",
    "WarpLut",
    "CompositeLayout",
    "CompositeImage",
    "PolarBox",
]

__version__ = "0.1.0"
