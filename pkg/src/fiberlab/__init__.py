"""Fiber-reinforced composites with rigid fibers: recovery sequences for
effective deformations and numerical diagnostics of their rigidity."""

from .geometry import Domain3, FiberLayout, parse_epsilon
from .limit_deformations import DirectorForm, RotationForm, preset, to_director_form, to_rotation_form
from .sequence_builder import build
from .so3 import dist_SO3, project_SO3

__all__ = [
    "Domain3",
    "FiberLayout",
    "parse_epsilon",
    "DirectorForm",
    "RotationForm",
    "preset",
    "to_director_form",
    "to_rotation_form",
    "build",
    "dist_SO3",
    "project_SO3",
]

__version__ = "0.1.0"
