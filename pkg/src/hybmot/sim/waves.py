"""Irregular long-crested sea states from the JONSWAP spectrum.

A sea state is a finite sum of regular wave components with random phases.
Amplitudes are drawn from the JONSWAP spectral density discretized over
[0.5*wp, 3*wp]; the density is rescaled so that the variance carried by
that band equals Hs^2/16, which keeps the realized significant wave height
consistent with the requested one regardless of the truncation.
"""

from dataclasses import dataclass

import numpy as np

GRAVITY = 9.81

# relative frequency band that carries the discretized spectrum
BAND_LO = 0.5
BAND_HI = 3.0


@dataclass(frozen=True)
class SeaState:
    """Superposition of regular wave components plus a mean wind."""

    hs: float                 # significant wave height [m]
    tp: float                 # peak period [s]
    direction: float          # mean wave propagation direction [rad, inertial]
    frequencies: np.ndarray   # [rad/s], shape (N,)
    amplitudes: np.ndarray    # [m], shape (N,)
    phases: np.ndarray        # [rad), shape (N,)
    directions: np.ndarray    # [rad], shape (N,)
    wind_speed: float         # [m/s]
    wind_direction: float     # direction the wind blows toward [rad, inertial]

    @classmethod
    def calm(cls):
        z = np.zeros(1)
        return cls(0.0, 8.0, 0.0, np.array([0.8]), z, z.copy(), z.copy(), 0.0, 0.0)


def jonswap_shape(omega, tp, gamma=3.3):
    """Unscaled JONSWAP spectral shape (Hs normalization applied separately)."""
    omega = np.asarray(omega, dtype=float)
    wp = 2.0 * np.pi / tp
    sigma = np.where(omega <= wp, 0.07, 0.09)
    peak = np.exp(-((omega - wp) ** 2) / (2.0 * (sigma * wp) ** 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        pm = np.where(omega > 0.0, omega ** -5.0 * np.exp(-1.25 * (wp / np.maximum(omega, 1e-300)) ** 4), 0.0)
    return GRAVITY ** 2 * pm * gamma ** peak


def _band_scale(hs, tp, gamma=3.3, n_quad=4096):
    """Scale factor alpha such that int_band alpha*shape = Hs^2/16 (trapezoid)."""
    wp = 2.0 * np.pi / tp
    w = np.linspace(BAND_LO * wp, BAND_HI * wp, n_quad)
    integral = np.trapezoid(jonswap_shape(w, tp, gamma), w)
    return (hs ** 2 / 16.0) / integral


def jonswap_density(omega, hs, tp, gamma=3.3):
    """JONSWAP spectral density S(omega) [m^2 s], normalized over the band."""
    if hs <= 0.0 or tp <= 0.0:
        raise ValueError(f"Hs and Tp must be positive, got Hs={hs}, Tp={tp}")
    return _band_scale(hs, tp, gamma) * jonswap_shape(omega, tp, gamma)


def jonswap_components(hs, tp, n_components, rng, gamma=3.3):
    """Discretize the spectrum into n equally spaced components.

    Frequencies sit at the midpoints of n equal bins covering
    [0.5*wp, 3*wp]; amplitude_i = sqrt(2 S(w_i) dw).  Phases are uniform
    in [0, 2pi).
    """
    if hs <= 0.0 or tp <= 0.0:
        raise ValueError(f"Hs and Tp must be positive, got Hs={hs}, Tp={tp}")
    if n_components < 16:
        raise ValueError(f"need at least 16 components, got {n_components}")
    wp = 2.0 * np.pi / tp
    dw = (BAND_HI - BAND_LO) * wp / n_components
    omega = BAND_LO * wp + (np.arange(n_components) + 0.5) * dw
    amp = np.sqrt(2.0 * jonswap_density(omega, hs, tp, gamma) * dw)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_components)
    return omega, amp, phases
