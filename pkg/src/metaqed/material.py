"""Scatterer material models and point-dipole polarizabilities.

A sphere is reduced to its electric and magnetic dipole response, with
polarizabilities taken from the first Mie coefficients,

    alpha_E = i * (6 pi / k^3) * a_1,      alpha_M = i * (6 pi / k^3) * b_1.

Both are in nm^3 and defined such that p = eps0 * alpha_E * E and the
radiative optical theorem reads Im(-1/alpha) = k^3/(6 pi) for a lossless
particle.  In the small-size limit alpha_E -> 4 pi R^3 (eps-1)/(eps+2).
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import spherical_jn, spherical_yn

from .constants import wavenumber


@dataclass(frozen=True)
class MaterialModel:
    """Dispersive permittivity model, either Drude metal or constant index.

    kind : "drude" or "constant"
    eps_inf, plasma_energy, damping_energy : Drude parameters in eV
    refractive_index : real index for kind="constant"
    """

    kind: str
    eps_inf: float = 1.0
    plasma_energy: float = 0.0
    damping_energy: float = 0.0
    refractive_index: float = 1.0

    @classmethod
    def drude(cls, eps_inf, plasma_energy, damping_energy):
        return cls(kind="drude", eps_inf=eps_inf, plasma_energy=plasma_energy,
                   damping_energy=damping_energy)

    @classmethod
    def constant_index(cls, refractive_index):
        return cls(kind="constant", refractive_index=refractive_index)


def permittivity(material, omega):
    """Relative permittivity at photon energy omega (eV)."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise ValueError("photon energy must be positive")
    if material.kind == "drude":
        wp2 = material.plasma_energy**2
        return material.eps_inf - wp2 / (omega**2 + 1j * material.damping_energy * omega)
    if material.kind == "constant":
        return np.full_like(omega, material.refractive_index**2, dtype=complex)
    raise ValueError(f"unknown material kind {material.kind!r}")


@dataclass(frozen=True)
class DipolePolarizability:
    """Electric and magnetic dipole polarizabilities in nm^3."""

    alpha_E: complex
    alpha_M: complex


def _riccati_psi(n, z):
    """psi_n(z) = z j_n(z) and derivative, complex argument allowed."""
    j = spherical_jn(n, z)
    jp = spherical_jn(n, z, derivative=True)
    return z * j, j + z * jp


def _riccati_xi(n, z):
    """xi_n(z) = z h_n^(1)(z) and derivative."""
    j = spherical_jn(n, z)
    jp = spherical_jn(n, z, derivative=True)
    y = spherical_yn(n, z)
    yp = spherical_yn(n, z, derivative=True)
    h = j + 1j * y
    hp = jp + 1j * yp
    return z * h, h + z * hp


def mie_dipole_coefficients(material, radius, omega):
    """First Mie coefficients (a1, b1) of a sphere in vacuum.

    radius in nm, omega in eV.  The refractive index m = sqrt(eps) uses the
    principal branch (Im m >= 0 for absorbing media).
    """
    k = wavenumber(omega)
    x = k * radius
    m = np.sqrt(permittivity(material, omega) + 0j)
    mx = m * x

    psi_x, dpsi_x = _riccati_psi(1, x + 0j)
    psi_mx, dpsi_mx = _riccati_psi(1, mx)
    xi_x, dxi_x = _riccati_xi(1, x + 0j)

    a1 = (m * psi_mx * dpsi_x - psi_x * dpsi_mx) / (m * psi_mx * dxi_x - xi_x * dpsi_mx)
    b1 = (psi_mx * dpsi_x - m * psi_x * dpsi_mx) / (psi_mx * dxi_x - m * xi_x * dpsi_mx)
    return a1, b1


def mie_dipole_polarizabilities(material, radius, omega):
    """Point-dipole polarizabilities of a sphere, from first Mie coefficients."""
    k = wavenumber(omega)
    a1, b1 = mie_dipole_coefficients(material, radius, omega)
    pref = 6j * np.pi / k**3
    return DipolePolarizability(alpha_E=complex(pref * a1), alpha_M=complex(pref * b1))


def silver_drude():
    """Drude silver calibrated so the small-sphere dipole resonance sits at 3.5 eV.

    Re eps(3.5 eV) = -2 exactly with these parameters.
    """
    return MaterialModel.drude(eps_inf=4.0, plasma_energy=np.sqrt(73.515),
                               damping_energy=0.05)
