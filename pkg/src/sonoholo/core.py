"""Physical constants, medium and particle properties.

All quantities are SI: metres, pascals, kilograms, seconds, radians.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

# air at 20 degC
DEFAULT_FREQUENCY = 40_000.0
DEFAULT_SOUND_SPEED = 343.0
DEFAULT_DENSITY = 1.204

# expanded polystyrene bead
DEFAULT_PARTICLE_RADIUS = 1e-3
DEFAULT_PARTICLE_DENSITY = 29.0
DEFAULT_PARTICLE_SOUND_SPEED = 900.0

DEFAULT_P_REF = 8.02
DEFAULT_ELEMENT_RADIUS = 4.5e-3

CONFIG_ENV_VAR = "SONOHOLO_CONFIG"


class ConfigError(ValueError):
    """Raised for invalid physical configuration values."""


def _require_positive(obj, *names):
    for name in names:
        value = getattr(obj, name)
        if not (math.isfinite(value) and value > 0):
            raise ConfigError(f"{type(obj).__name__}.{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class MediumConfig:
    """Propagation medium and driving frequency."""

    frequency: float = DEFAULT_FREQUENCY
    sound_speed_medium: float = DEFAULT_SOUND_SPEED
    density_medium: float = DEFAULT_DENSITY

    def __post_init__(self):
        _require_positive(self, "frequency", "sound_speed_medium", "density_medium")

    @property
    def wavenumber(self) -> float:
        return wavenumber(self)

    @property
    def angular_frequency(self) -> float:
        return 2.0 * math.pi * self.frequency

    @property
    def wavelength(self) -> float:
        return self.sound_speed_medium / self.frequency


@dataclass(frozen=True)
class ParticleConfig:
    """Small spherical particle suspended in the field."""

    radius: float = DEFAULT_PARTICLE_RADIUS
    sound_speed_particle: float = DEFAULT_PARTICLE_SOUND_SPEED
    density_particle: float = DEFAULT_PARTICLE_DENSITY

    def __post_init__(self):
        _require_positive(self, "radius", "sound_speed_particle", "density_particle")

    @property
    def volume(self) -> float:
        return 4.0 / 3.0 * math.pi * self.radius**3


def wavenumber(cfg: MediumConfig) -> float:
    """Return k = 2*pi*f/c0 in rad/m."""
    return 2.0 * math.pi * cfg.frequency / cfg.sound_speed_medium


def gorkov_constants(medium: MediumConfig, particle: ParticleConfig) -> tuple[float, float]:
    """Return the monopole and dipole Gor'kov coefficients ``(K1, K2)``.

    ``U = K1 |p|^2 - K2 |grad p|^2``; K1 is in J/Pa^2 and K2 in J*m^2/Pa^2.
    K2 carries the density contrast as ``rho_p - rho0`` so that it is positive for
    particles denser than the medium and pressure nodes become potential wells.
    """
    c0, rho0 = medium.sound_speed_medium, medium.density_medium
    cp, rhop = particle.sound_speed_particle, particle.density_particle
    omega = medium.angular_frequency
    vol = particle.volume
    k1 = 0.25 * vol * (1.0 / (c0**2 * rho0) - 1.0 / (cp**2 * rhop))
    k2 = 0.75 * vol * (rhop - rho0) / (omega**2 * rho0 * (rho0 + 2.0 * rhop))
    return k1, k2


def amplitude_phase(z) -> tuple[np.ndarray, np.ndarray]:
    """Split complex values into amplitude >= 0 and phase in (-pi, pi]."""
    z = np.asarray(z, dtype=complex)
    phase = np.angle(z)
    # np.angle returns -pi for (-1, -0j); fold onto +pi
    phase = np.where(phase <= -math.pi, math.pi, phase)
    return np.abs(z), phase


@dataclass(frozen=True)
class Settings:
    """Everything the CLI reads from a config file."""

    medium: MediumConfig = field(default_factory=MediumConfig)
    particle: ParticleConfig = field(default_factory=ParticleConfig)
    p_ref: float = DEFAULT_P_REF
    element_radius: float = DEFAULT_ELEMENT_RADIUS

    def __post_init__(self):
        _require_positive(self, "p_ref", "element_radius")


# config key -> (section, attribute)
_CONFIG_KEYS = {
    "frequency": ("medium", "frequency"),
    "c0": ("medium", "sound_speed_medium"),
    "rho0": ("medium", "density_medium"),
    "particle_radius": ("particle", "radius"),
    "c_p": ("particle", "sound_speed_particle"),
    "rho_p": ("particle", "density_particle"),
    "p_ref": (None, "p_ref"),
    "transducer_radius": (None, "element_radius"),
}


def settings_from_mapping(values: dict) -> Settings:
    unknown = set(values) - set(_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    medium, particle, top = {}, {}, {}
    for key, raw in values.items():
        section, attr = _CONFIG_KEYS[key]
        try:
            value = float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"config key {key!r} is not a number: {raw!r}") from None
        {"medium": medium, "particle": particle, None: top}[section][attr] = value
    return Settings(medium=MediumConfig(**medium), particle=ParticleConfig(**particle), **top)


def load_settings(path: str | os.PathLike | None = None) -> Settings:
    """Read settings from a JSON document or ``key=value`` lines.

    With no path, falls back to ``$SONOHOLO_CONFIG`` and then to defaults.
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
        if not path:
            return Settings()
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            values = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    else:
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
    return settings_from_mapping(values)


def with_frequency(settings: Settings, frequency: float) -> Settings:
    return replace(settings, medium=replace(settings.medium, frequency=frequency))


__all__ = [
    "ConfigError",
    "MediumConfig",
    "ParticleConfig",
    "Settings",
    "amplitude_phase",
    "gorkov_constants",
    "load_settings",
    "settings_from_mapping",
    "wavenumber",
    "with_frequency",
]
