"""Unit system and physical constants.

Internally hbar = 1, energies are in eV, lengths in nm, dipole moments in
units of the elementary charge times nm (e nm).  All electromagnetic
prefactors are folded into the few numbers below so no SI factor appears
anywhere else.

Derivations (CODATA 2018, e and c exact):
    HBAR_C      = hbar*c/e * 1e9                        [eV nm]
    COULOMB     = e^2/(4 pi eps0) / (e * 1e-9)          [eV nm]
    HBAR_EV_FS  = hbar/e * 1e15                         [eV fs]
    DEBYE       = 1 D = 1e-21/c C m -> / (e * 1e-9)     [e nm]
    FLUX_CONST  = c*eps0/(2 e) * 1e-15                  [see photon_flux]
"""

import numpy as np

HBAR_C = 197.3269804  # eV nm
HBAR_EV_FS = 0.6582119569  # eV fs, converts rates: rate[1/fs] = energy[eV]/HBAR_EV_FS
COULOMB = 1.4399645478  # eV nm, e^2/(4 pi eps0)
DEBYE = 0.020819434  # e nm

# J(k, w) = SPECTRAL_PREFACTOR * d^2 [e nm]^2 * k^2 [1/nm^2] * G_AH [1/nm], in eV.
# Comes from mu0 w^2/(pi hbar) = k^2 e^2/(pi hbar eps0) picking up 4*pi*COULOMB.
SPECTRAL_PREFACTOR = 4.0 * COULOMB

# Photon flux of a plane wave, flux[1/(nm^2 fs)] = FLUX_CONST * E^2 / omega,
# with E the field amplitude in eV/(e nm) and omega the photon energy in eV.
FLUX_CONST = 8.2837897


def wavenumber(omega):
    """Free-space wavenumber k = omega/(hbar c) in 1/nm for omega in eV."""
    return omega / HBAR_C


def free_space_decay_rate(omega, dipole):
    """Spontaneous emission rate of a point dipole in vacuum, in eV.

    Parameters
    ----------
    omega : float
        Transition energy in eV.
    dipole : float
        Transition dipole moment in e nm.
    """
    k = wavenumber(omega)
    return (4.0 / 3.0) * COULOMB * dipole**2 * k**3


def photon_flux(field_amplitude, omega):
    """Photon flux of a plane wave in 1/(nm^2 fs).

    field_amplitude is the electric field amplitude in eV/(e nm), omega the
    photon energy in eV.
    """
    return FLUX_CONST * np.abs(field_amplitude) ** 2 / omega


def field_from_flux(flux, omega):
    """Inverse of photon_flux: field amplitude in eV/(e nm)."""
    return np.sqrt(flux * omega / FLUX_CONST)
