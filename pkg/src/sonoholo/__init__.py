"""Acoustic holography toolkit: propagation, hologram solvers, field analysis and a device link."""

__version__ = "0.1.0"

from .core import ConfigError, MediumConfig, ParticleConfig, Settings, gorkov_constants, load_settings, wavenumber
from .geometry import PointSet, SurfaceMesh, TransducerArray, create_points, load_mesh, mesh_to_board, preset_board
from .propagators import (
    BemModel,
    PistonModel,
    bem_build,
    bem_gradients,
    bem_propagator,
    piston_gradients,
    piston_transfer,
)
from .solvers import (
    Hologram,
    ObjectiveSpec,
    gradient_descent_solve,
    gspat,
    iterative_backpropagation,
    naive,
    wgs,
)
from .analysis import GridSpec, force, gorkov, sample_grid, stiffness
from .devicelink import DeviceFrame, decode_frame, encode_frame, quantize, stream

__all__ = [
    "BemModel",
    "ConfigError",
    "DeviceFrame",
    "GridSpec",
    "Hologram",
    "MediumConfig",
    "ObjectiveSpec",
    "ParticleConfig",
    "PistonModel",
    "PointSet",
    "Settings",
    "SurfaceMesh",
    "TransducerArray",
    "bem_build",
    "bem_gradients",
    "bem_propagator",
    "create_points",
    "decode_frame",
    "encode_frame",
    "force",
    "gorkov",
    "gorkov_constants",
    "gradient_descent_solve",
    "gspat",
    "iterative_backpropagation",
    "load_mesh",
    "load_settings",
    "mesh_to_board",
    "naive",
    "piston_gradients",
    "piston_transfer",
    "preset_board",
    "quantize",
    "sample_grid",
    "stiffness",
    "stream",
    "wavenumber",
    "wgs",
]
