"""Uniform linear array model and steering-vector dictionary.

All angles at the API boundary are in degrees. Derivatives are taken with
respect to the angle in degrees as well, so that Cramer-Rao bounds built on
them come out in deg^2 and can be compared directly with RMSE in degrees.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array with ``n_sensors`` elements spaced ``spacing_wavelengths`` apart."""

    n_sensors: int = 20
    spacing_wavelengths: float = 0.5

    def __post_init__(self):
        if int(self.n_sensors) != self.n_sensors or self.n_sensors < 2:
            raise ValueError(f"n_sensors must be an integer >= 2, got {self.n_sensors}")
        if not self.spacing_wavelengths > 0:
            raise ValueError(f"spacing_wavelengths must be positive, got {self.spacing_wavelengths}")


def _check_angles(theta_degrees):
    theta = np.asarray(theta_degrees, dtype=float)
    if np.any(~np.isfinite(theta)) or np.any(np.abs(theta) > 90.0):
        raise ValueError(f"DOA must lie in [-90, 90] degrees, got {theta_degrees}")
    return theta


def _phase_rate(geometry: ArrayGeometry) -> np.ndarray:
    # 2*pi*(n-1)*d/lambda for n = 1..N
    return 2.0 * np.pi * geometry.spacing_wavelengths * np.arange(geometry.n_sensors)


def steering_vector(geometry: ArrayGeometry, theta_degrees: float) -> np.ndarray:
    """Replica vector ``a(theta)`` with elements ``exp(-j (n-1) 2 pi d/lambda sin(theta))``."""
    theta = _check_angles(theta_degrees)
    if theta.ndim != 0:
        raise ValueError("steering_vector takes a scalar angle; use steering_matrix for several")
    return np.exp(-1j * _phase_rate(geometry) * np.sin(np.deg2rad(theta)))


def steering_matrix(geometry: ArrayGeometry, thetas_degrees) -> np.ndarray:
    """Stack steering vectors for several angles as columns (N x len(thetas))."""
    theta = np.atleast_1d(_check_angles(thetas_degrees))
    return np.exp(-1j * np.outer(_phase_rate(geometry), np.sin(np.deg2rad(theta))))


def steering_derivative(geometry: ArrayGeometry, theta_degrees: float) -> np.ndarray:
    """Derivative of the steering vector with respect to theta **in degrees**.

    Element n is ``-j (n-1) 2 pi d/lambda cos(theta) (pi/180) a_n(theta)``.
    """
    theta = _check_angles(theta_degrees)
    if theta.ndim != 0:
        raise ValueError("steering_derivative takes a scalar angle")
    rad = np.deg2rad(theta)
    a = steering_vector(geometry, float(theta))
    return -1j * _phase_rate(geometry) * np.cos(rad) * (np.pi / 180.0) * a


def steering_derivative_matrix(geometry: ArrayGeometry, thetas_degrees) -> np.ndarray:
    theta = np.atleast_1d(_check_angles(thetas_degrees))
    A = steering_matrix(geometry, theta)
    rate = _phase_rate(geometry)[:, None]
    return -1j * rate * np.cos(np.deg2rad(theta))[None, :] * (np.pi / 180.0) * A


@dataclass(frozen=True)
class Dictionary:
    """Steering vectors on a uniform angular grid from -90 to +90 degrees.

    ``steering`` is N x M; column m is the replica vector for ``grid_degrees[m]``.
    """

    geometry: ArrayGeometry
    grid_degrees: np.ndarray
    steering: np.ndarray = field(repr=False)

    @property
    def n_points(self) -> int:
        return self.grid_degrees.size

    @property
    def resolution(self) -> float:
        """Grid spacing in degrees, ``180/(M-1)``."""
        return 180.0 / (self.n_points - 1)

    def nearest_index(self, theta_degrees: float) -> int:
        return int(np.argmin(np.abs(self.grid_degrees - theta_degrees)))


def build_dictionary(geometry: ArrayGeometry, m_points: int) -> Dictionary:
    """Build the M-point dictionary with grid ``theta_m = -90 + (m-1) * 180/(M-1)``."""
    if int(m_points) != m_points or m_points < 2:
        raise ValueError(f"m_points must be an integer >= 2, got {m_points}")
    m_points = int(m_points)
    # integer numerator, single division: grid points such as -10 come out exact
    steps = m_points - 1
    grid = (180.0 * np.arange(m_points) - 90.0 * steps) / steps
    # column-major: the estimator reads one DOA (column) at a time
    steering = np.asfortranarray(steering_matrix(geometry, grid))
    grid.setflags(write=False)
    steering.setflags(write=False)
    return Dictionary(geometry=geometry, grid_degrees=grid, steering=steering)
