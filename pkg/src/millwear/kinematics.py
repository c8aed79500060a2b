"""Forward model of the spindle-mounted rotating single-axis sensor.

The sensor sits on the toolholder rotation axis and measures the radial
component of the lab-frame acceleration, so fixed-frame signals are mixed by
the instantaneous rotation angle.  The forward rotation is provided for the
synthetic generator and for analysis; the single measured channel cannot be
inverted (the tangential component is never observed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class RotationState:
    """Spindle rotation: speed in rpm and phase at the first sample."""

    spindle_speed: float
    initial_phase: float = 0.0

    def __post_init__(self):
        if self.spindle_speed <= 0:
            raise ParameterError(
                f"spindle_speed must be positive, got {self.spindle_speed}"
            )

    @property
    def rotation_hz(self) -> float:
        return self.spindle_speed / 60.0


def rotate_to_sensor(
    ax: np.ndarray,
    ay: np.ndarray,
    state: RotationState,
    sample_interval: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Rotate lab-frame accelerations into the rotating (radial, tangential) frame.

    Per sample i at t_i = i * sample_interval:

        phi = initial_phase + 2*pi*rotation_hz*t_i
        a_r = cos(phi)*a_x + sin(phi)*a_y
        a_t = cos(phi)*a_y - sin(phi)*a_x

    The rotation is orthogonal, so a_r^2 + a_t^2 == a_x^2 + a_y^2 per sample.
    """
    ax = np.asarray(ax, dtype=np.float64)
    ay = np.asarray(ay, dtype=np.float64)
    if ax.shape != ay.shape or ax.ndim != 1:
        raise ShapeError(f"ax/ay shape mismatch: {ax.shape} vs {ay.shape}")
    if sample_interval <= 0:
        raise ParameterError("sample_interval must be positive")
    t = np.arange(len(ax)) * sample_interval
    phi = state.initial_phase + 2.0 * np.pi * state.rotation_hz * t
    c, s = np.cos(phi), np.sin(phi)
    ar = c * ax + s * ay
    at = c * ay - s * ax
    return ar, at
