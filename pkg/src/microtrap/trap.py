"""Far-detuned dipole potential, harmonic frequencies and differential light shift."""
from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import constants as csts

from .errors import DomainError, ModelValidityError

hbar = csts.hbar
k_B = csts.k
c = csts.c

# fine-structure line strengths of the D2 and D1 lines
_W_D2, _W_D1 = 2.0 / 3.0, 1.0 / 3.0


@dataclass(frozen=True)
class AtomSpecies:
    """Constants of one alkali species. Defaults are rubidium-85."""

    name: str = "Rb85"
    mass: float = 1.4100e-25
    d1_wavelength: float = 794.98e-9
    d2_wavelength: float = 780.24e-9
    linewidth: float = 2 * math.pi * 6.07e6
    saturation_intensity: float = 16.7
    hyperfine_splitting: float = 2 * math.pi * 3.036e9

    def __post_init__(self):
        for name in ("mass", "d1_wavelength", "d2_wavelength", "linewidth",
                     "saturation_intensity", "hyperfine_splitting"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        if self.d1_wavelength <= self.d2_wavelength:
            raise DomainError("D1 wavelength must exceed D2 wavelength")


RB85 = AtomSpecies()


@dataclass(frozen=True)
class TrapParameters:
    depth: float
    radial_frequency: float
    axial_frequency: float
    differential_shift: float
    dephasing_tau: float

    @property
    def depth_uk(self) -> float:
        return self.depth / k_B * 1e6


def _detunings(wavelength: float, species: AtomSpecies) -> tuple[float, float]:
    """Angular detunings from the D2 and D1 lines (negative = red)."""
    d2 = 2 * math.pi * c * (1 / wavelength - 1 / species.d2_wavelength)
    d1 = 2 * math.pi * c * (1 / wavelength - 1 / species.d1_wavelength)
    return d2, d1


def _inverse_detuning_sum(wavelength: float, species: AtomSpecies) -> float:
    """Line-strength weighted ``sum_k w_k / |Delta_k|``, with validity checks."""
    if wavelength <= 0:
        raise DomainError("wavelength must be positive")
    d2, d1 = _detunings(wavelength, species)
    if wavelength <= species.d1_wavelength:
        raise ModelValidityError(
            f"wavelength {wavelength * 1e9:.2f} nm is not red of the D1 line "
            f"({species.d1_wavelength * 1e9:.2f} nm)")
    guard = 100 * species.linewidth
    if min(abs(d1), abs(d2)) < guard:
        raise ModelValidityError(
            f"wavelength {wavelength * 1e9:.3f} nm lies within 100 linewidths of resonance")
    return _W_D2 / abs(d2) + _W_D1 / abs(d1)


def peak_intensity(power: float, waist: float) -> float:
    return 2 * power / (math.pi * waist ** 2)


def dipole_depth(power: float, waist: float, wavelength: float,
                 species: AtomSpecies = RB85) -> float:
    """Depth (J, positive) of the attractive dipole potential at the focus.

    Two-level rotating-wave result summed over the D1 and D2 lines with
    weights 1/3 and 2/3.
    """
    if power < 0:
        raise DomainError("power must be >= 0")
    if waist <= 0:
        raise DomainError("waist must be positive")
    s = _inverse_detuning_sum(wavelength, species)
    i0 = peak_intensity(power, waist)
    return hbar * species.linewidth ** 2 / 8 * i0 / species.saturation_intensity * s


def rayleigh_range(waist: float, wavelength: float) -> float:
    return math.pi * waist ** 2 / wavelength


def trap_frequencies(depth: float, waist: float, wavelength: float,
                     species: AtomSpecies = RB85) -> tuple[float, float]:
    """Harmonic ``(radial, axial)`` angular frequencies at the trap bottom."""
    if depth < 0:
        raise DomainError("depth must be >= 0")
    z_r = rayleigh_range(waist, wavelength)
    w_r = math.sqrt(4 * depth / (species.mass * waist ** 2))
    w_z = math.sqrt(2 * depth / (species.mass * z_r ** 2))
    return w_r, w_z


def differential_shift(depth: float, wavelength: float,
                       species: AtomSpecies = RB85) -> float:
    """Clock-transition light shift at the trap bottom (rad/s).

    The hyperfine splitting enters relative to the effective detuning, which
    is the harmonic mean of the two line detunings weighted by strength.
    """
    if depth < 0:
        raise DomainError("depth must be >= 0")
    s = _inverse_detuning_sum(wavelength, species)
    inv_delta_eff = s / (_W_D2 + _W_D1)
    return depth / hbar * species.hyperfine_splitting * inv_delta_eff


def dephasing_tau(depth: float, atom_temperature: float, delta0: float,
                  kappa: float = 0.5) -> float:
    """Time constant of the thermal Ramsey envelope ``[1 + (t/tau)^2]^-3/2``.

    Returns ``inf`` at zero temperature.
    """
    if depth <= 0 or delta0 <= 0:
        raise DomainError("depth and differential shift must be positive")
    if not 0.0 < kappa <= 1.0:
        raise DomainError("kappa must lie in (0, 1]")
    if atom_temperature < 0:
        raise DomainError("temperature must be >= 0")
    if atom_temperature == 0:
        return math.inf
    return depth / (kappa * delta0 * k_B * atom_temperature)


def default_temperature(depth: float) -> float:
    """Assumed atom temperature, one tenth of the depth."""
    return depth / (10 * k_B)


def trap_parameters(power: float, waist: float, wavelength: float,
                    species: AtomSpecies = RB85, atom_temperature: float | None = None,
                    kappa: float = 0.5) -> TrapParameters:
    u = dipole_depth(power, waist, wavelength, species)
    if u == 0:
        return TrapParameters(0.0, 0.0, 0.0, 0.0, math.inf)
    w_r, w_z = trap_frequencies(u, waist, wavelength, species)
    d0 = differential_shift(u, wavelength, species)
    t_at = default_temperature(u) if atom_temperature is None else atom_temperature
    return TrapParameters(u, w_r, w_z, d0, dephasing_tau(u, t_at, d0, kappa))
