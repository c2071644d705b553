"""Reciprocal-space spectral density of periodic emitter arrays coupled to a
nanoparticle lattice, band-path scans, and the plane-wave transmission
diagnostic.

The spectral density couples emitter h to h' through the anti-Hermitian part
of the Bloch Green tensor,

    J_{hh'} = PREF * d_h d_h' * k^2 * e^{-i k_par.(rho_h - rho_h')}
              * n_h . G_AH(k_par, r_h, r_h', omega) . n_h',

with dipole moments in e nm and one folded unit constant PREF (see
constants.SPECTRAL_PREFACTOR) chosen so that in the dilute limit the golden
rule Gamma = 2 pi J reproduces the free-space decay rate.  J is reported in
eV and is Hermitian positive semidefinite at real frequency.
"""

from dataclasses import dataclass, field

import numpy as np

from .constants import DEBYE, SPECTRAL_PREFACTOR, wavenumber
from .greens import (DomainError, Environment, EwaldConvergenceError,
                     EwaldParams, GreensError, SingularityError,
                     _check_outside, _engine, _interaction_6x6,
                     _lattice_offset, _rows_cols, _site_blocks,
                     effective_polarizability)
from .lattice import bz_path, path_arclength, reciprocal_points_in_radius

__all__ = [
    "EmitterSpec", "SpectralDensitySample", "BandScanResult",
    "spectral_density", "band_scan", "plane_wave_transmission",
    "transmission_orders", "DiffractionOrder",
]

# band_scan poisoned-cell error codes
OK = 0
ERR_CONVERGENCE = 1
ERR_SINGULAR = 2
ERR_NUMERIC = 3


@dataclass(frozen=True)
class EmitterSpec:
    """One emitter of the periodic array.

    position : (3,) nm within the unit cell.
    dipole_moment : Debye.
    orientation : unit 3-vector.
    transition_energy : eV (used by the driven-dynamics layer).
    """

    position: tuple
    dipole_moment: float
    orientation: tuple
    transition_energy: float

    def __post_init__(self):
        pos = tuple(float(x) for x in self.position)
        n = np.asarray(self.orientation, dtype=float)
        if len(pos) != 3 or n.shape != (3,):
            raise DomainError("emitter position and orientation must be 3D")
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise DomainError("emitter orientation must be a unit vector")
        if self.dipole_moment <= 0:
            raise DomainError("dipole moment must be positive")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", tuple(float(x) for x in n))

    @property
    def dipole_enm(self):
        return self.dipole_moment * DEBYE


@dataclass(frozen=True)
class SpectralDensitySample:
    """J(k_par, omega): N_E x N_E complex Hermitian matrix in eV."""

    k_par: tuple
    omega: float
    J: np.ndarray


def _validate_emitters(emitters, environment):
    emitters = tuple(emitters)
    if not emitters:
        raise DomainError("no emitters")
    for em in emitters:
        _check_outside(environment.lattice, environment.scatterers, em.position)
    return emitters


def _pair_green_forward(k_par, r, r_prime, omega, environment, alpha_eff,
                        rows, cols, site_cache):
    """G(k_par, r, r', omega) with the coincident free part regularized.

    rows/cols are the per-position observation/source 3x6 / 6x3 stacks used
    to reuse one dressed-polarizability solve across all emitter pairs.
    """
    lattice = environment.lattice
    ewald = environment.ewald
    k = wavenumber(omega)
    dr = np.asarray(r, float) - np.asarray(r_prime, float)
    R0 = _lattice_offset(lattice, dr[:2]) if abs(dr[2]) < 1e-12 else None
    if R0 is not None:
        if "S" not in site_cache:
            site_cache["S"] = _site_blocks(k_par, omega, lattice, ewald)[0]
        free = np.exp(1j * (np.asarray(k_par, float) @ R0)) * site_cache["S"]
    else:
        dyad, _ = _engine(k_par, dr, omega, lattice, ewald)
        free = dyad
    if alpha_eff is None:
        return free
    return free + rows @ (k * k * alpha_eff) @ cols


def spectral_density(k_par, omega, emitters, environment):
    """Spectral density matrix J(k_par, omega) for an emitter array, in eV."""
    if omega <= 0:
        raise DomainError("omega must be positive")
    emitters = _validate_emitters(emitters, environment)
    lattice = environment.lattice
    scatterers = tuple(environment.scatterers)
    ewald = environment.ewald
    k = wavenumber(omega)
    kpar = np.asarray(k_par, dtype=float)
    H = len(emitters)

    alpha_eff = None
    rows = [None] * H
    cols = [None] * H
    if scatterers:
        alpha_eff = effective_polarizability(k_par, omega, scatterers,
                                             lattice, ewald)
        for h, em in enumerate(emitters):
            rl, cl = _rows_cols(k_par, em.position, omega, scatterers,
                                lattice, ewald)
            rows[h] = np.hstack(rl)
            cols[h] = np.vstack(cl)

    site_cache = {}
    G = np.empty((H, H, 3, 3), complex)
    for h in range(H):
        for hp in range(H):
            G[h, hp] = _pair_green_forward(
                k_par, emitters[h].position, emitters[hp].position, omega,
                environment, alpha_eff, rows[h], cols[hp], site_cache)

    J = np.empty((H, H), complex)
    for h in range(H):
        nh = np.asarray(emitters[h].orientation)
        rh = np.asarray(emitters[h].position[:2])
        for hp in range(H):
            nhp = np.asarray(emitters[hp].orientation)
            rhp = np.asarray(emitters[hp].position[:2])
            AH = (G[h, hp] - G[hp, h].conj().T) / 2j
            phase = np.exp(-1j * (kpar @ (rh - rhp)))
            J[h, hp] = (SPECTRAL_PREFACTOR * emitters[h].dipole_enm
                        * emitters[hp].dipole_enm * k * k * phase
                        * (nh @ AH @ nhp))
    J = (J + J.conj().T) / 2  # kill roundoff asymmetry
    return SpectralDensitySample(tuple(kpar), float(omega), J)


@dataclass(frozen=True)
class BandScanResult:
    """Rectangular scan of J over a sampled band path and frequency grid.

    J has shape (N_k, N_omega, N_E, N_E); cells that failed to evaluate hold
    NaN and a nonzero error code (poisoned-cell policy).
    """

    k_points: np.ndarray
    arclength: np.ndarray
    omegas: np.ndarray
    J: np.ndarray
    error_codes: np.ndarray
    labels: tuple = field(default=())

    def sample(self, i, j):
        return SpectralDensitySample(tuple(self.k_points[i]),
                                     float(self.omegas[j]), self.J[i, j])


def scan_cell(k_par, omega, emitters, environment):
    """One scan cell: (J matrix, error code); never raises on evaluation."""
    try:
        s = spectral_density(k_par, omega, emitters, environment)
        if not np.all(np.isfinite(s.J)):
            raise FloatingPointError("non-finite spectral density")
        return s.J, OK
    except EwaldConvergenceError:
        code = ERR_CONVERGENCE
    except SingularityError:
        code = ERR_SINGULAR
    except (FloatingPointError, np.linalg.LinAlgError):
        code = ERR_NUMERIC
    H = len(tuple(emitters))
    return np.full((H, H), np.nan + 0j), code


def band_scan(path, omega_grid, emitters, environment):
    """Scan J over a KPath x frequency grid; poisons failed cells."""
    emitters = _validate_emitters(emitters, environment)
    ks = bz_path(environment.lattice, path)
    omegas = np.asarray(omega_grid, dtype=float)
    if omegas.ndim != 1 or len(omegas) == 0:
        raise DomainError("empty frequency grid")
    s = path_arclength(ks)
    H = len(emitters)
    J = np.empty((len(ks), len(omegas), H, H), complex)
    codes = np.zeros((len(ks), len(omegas)), dtype=np.int8)
    for i, kp in enumerate(ks):
        for j, w in enumerate(omegas):
            J[i, j], codes[i, j] = scan_cell(kp, w, emitters, environment)
    return BandScanResult(k_points=ks, arclength=s, omegas=omegas, J=J,
                          error_codes=codes, labels=path.labels)


# ---------------------------------------------------------------------------
# plane-wave transmission diagnostic


@dataclass(frozen=True)
class DiffractionOrder:
    """One propagating order: reciprocal vector, up/down amplitudes, kz."""

    g: tuple
    e_up: np.ndarray
    e_down: np.ndarray
    kz: float


def _polarization_frame(kpar, k):
    """(s_hat, p_up, p_down, k_up) unit frame for the incident direction."""
    q = np.linalg.norm(kpar)
    kz = np.sqrt(k * k - q * q)
    if q < 1e-12 * k:
        qhat = np.array([1.0, 0.0, 0.0])
    else:
        qhat = np.array([kpar[0] / q, kpar[1] / q, 0.0])
    shat = np.array([-qhat[1], qhat[0], 0.0])
    k_up = np.array([kpar[0], kpar[1], kz]) / k
    k_down = np.array([kpar[0], kpar[1], -kz]) / k
    p_up = np.cross(shat, k_up)
    p_down = np.cross(shat, k_down)
    return shat, p_up, p_down, k_up


def plane_wave_drive_vector(kpar, kz, e_vec, scatterers):
    """Incident (E, H) 6-vector per site for a unit up-going plane wave.

    Full site phases e^{i(k_par.rho + kz z)} are kept so the vector pairs
    directly with effective_polarizability.
    """
    k3 = np.array([kpar[0], kpar[1], kz])
    h_vec = np.cross(k3, e_vec) / np.linalg.norm(k3)
    b = np.zeros(6 * len(scatterers), complex)
    for i, sc in enumerate(scatterers):
        pos = np.asarray(sc.position)
        ph = np.exp(1j * (kpar @ pos[:2] + kz * pos[2]))
        b[6 * i:6 * i + 3] = e_vec * ph
        b[6 * i + 3:6 * i + 6] = h_vec * ph
    return b


def transmission_orders(omega, k_par, polarization, scatterers, lattice,
                        ewald=EwaldParams()):
    """Zeroth-order t, r and the full list of propagating diffraction orders.

    Geometry: unit plane wave travelling +z, scatterer lattice near z = 0.
    t and r are co-polarized amplitudes; the order list carries full complex
    field vectors for energy bookkeeping.
    """
    scatterers = tuple(scatterers)
    k = wavenumber(omega)
    kpar = np.asarray(k_par, dtype=float)
    q0 = np.linalg.norm(kpar)
    if q0 >= k:
        raise DomainError("evanescent incidence: |k_par| must be below k")
    kz0 = np.sqrt(k * k - q0 * q0)
    shat, p_up, p_down, k_up = _polarization_frame(kpar, k)
    if polarization == "s":
        eps_in, eps_tr, eps_re = shat, shat, shat
    elif polarization == "p":
        eps_in, eps_tr, eps_re = p_up, p_up, p_down
    else:
        raise DomainError("polarization must be 's' or 'p'")

    if not scatterers:
        order = DiffractionOrder((0.0, 0.0), np.zeros(3, complex),
                                 np.zeros(3, complex), kz0)
        return 1.0 + 0j, 0.0 + 0j, [order]

    alpha = effective_polarizability(k_par, omega, scatterers, lattice, ewald)
    b = plane_wave_drive_vector(kpar, kz0, eps_in, scatterers)
    um = alpha @ b

    area = lattice.cell_area
    gpts = reciprocal_points_in_radius(lattice, k + q0)
    orders = []
    t = r = 0.0 + 0j
    for g in gpts:
        qg = kpar + g
        qn2 = qg @ qg
        if qn2 >= k * k * (1 - 1e-12):
            continue  # evanescent or grazing order carries no far-field flux
        kzg = np.sqrt(k * k - qn2)
        e_ud = []
        for sgn in (+1.0, -1.0):
            kvec = np.array([qg[0], qg[1], sgn * kzg])
            khat = kvec / k
            U = np.zeros(3, complex)
            M = np.zeros(3, complex)
            for i, sc in enumerate(scatterers):
                pos = np.asarray(sc.position)
                ph = np.exp(-1j * (qg @ pos[:2] + sgn * kzg * pos[2]))
                U += um[6 * i:6 * i + 3] * ph
                M += um[6 * i + 3:6 * i + 6] * ph
            amp = (1j * k * k / (2 * area * kzg)) * (
                U - khat * (khat @ U) - np.cross(khat, M))
            e_ud.append(amp)
        orders.append(DiffractionOrder(tuple(g), e_ud[0], e_ud[1], kzg))
        if g @ g < 1e-24:
            t = 1.0 + eps_tr @ e_ud[0]
            r = eps_re @ e_ud[1]
    return t, r, orders


def plane_wave_transmission(omega, k_par, polarization, scatterers, lattice,
                            ewald=EwaldParams()):
    """Zeroth-order transmission and reflection amplitudes (t, r)."""
    t, r, _ = transmission_orders(omega, k_par, polarization, scatterers,
                                  lattice, ewald)
    return t, r
