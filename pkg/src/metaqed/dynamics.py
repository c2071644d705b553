"""Driven steady states and polariton dispersions of the fitted mode-emitter
system.

The laser is a plane wave travelling toward +z.  Its effect on the lattice
modes is folded into the local drive seen by each emitter: the incoming wave
is propagated through the dressed nanoparticle lattice to the emitter
position, and only the emitters are driven in the reduced model.  In-plane
Bloch phases e^{i k_par . rho} are factored out of all returned field
amplitudes.

Frames: polariton dispersions are reported in the lab frame (set the drive
frequency to 0 in effective_hamiltonian); driven steady states live in the
frame rotating at the drive frequency, where the mode matrix is shifted by
-omega_L on the diagonal.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .constants import wavenumber
from .greens import (DomainError, EwaldConvergenceError, SingularityError,
                     _check_outside, _rows_cols, effective_polarizability)
from .spectral import plane_wave_drive_vector

__all__ = [
    "DriveSpec", "CoherentState", "PolaritonBranches", "LocalFieldMap",
    "driven_field_at_emitter", "rabi_frequencies", "effective_hamiltonian",
    "coherent_steady_state", "local_field_map", "polariton_dispersion",
]


@dataclass(frozen=True)
class DriveSpec:
    """Plane-wave drive.

    omega : photon energy, eV.
    k_par : in-plane wavevector (2,), 1/nm; must lie inside the light cone.
    amplitude : electric field amplitude in eV/(e nm), numerically V/nm.
    polarization : unit 3-vector (complex allowed), transverse to the
        propagation direction (k_par, +kz).
    """

    omega: float
    k_par: tuple
    amplitude: float
    polarization: tuple

    def __post_init__(self):
        if self.omega <= 0:
            raise DomainError("drive photon energy must be positive")
        if self.amplitude <= 0:
            raise DomainError("drive amplitude must be positive")
        kp = np.asarray(self.k_par, dtype=float)
        if kp.shape != (2,):
            raise DomainError("drive k_par must be a 2-vector")
        pol = np.asarray(self.polarization, dtype=complex)
        if pol.shape != (3,):
            raise DomainError("drive polarization must be a 3-vector")
        if abs(np.linalg.norm(pol) - 1.0) > 1e-8:
            raise DomainError("drive polarization must be a unit vector")
        k = wavenumber(self.omega)
        q2 = kp @ kp
        if q2 > k * k:
            raise DomainError("evanescent drive: need omega >= hbar c |k_par|")
        khat = np.array([kp[0], kp[1], np.sqrt(max(k * k - q2, 0.0))]) / k
        if abs(pol @ khat) > 1e-6:
            raise DomainError("drive polarization must be transverse")
        object.__setattr__(self, "k_par", tuple(float(x) for x in kp))
        object.__setattr__(self, "polarization", tuple(complex(x) for x in pol))

    @property
    def kz(self):
        k = wavenumber(self.omega)
        kp = np.asarray(self.k_par)
        return np.sqrt(max(k * k - kp @ kp, 0.0))


@dataclass(frozen=True)
class CoherentState:
    """Coherent amplitudes of the driven linear steady state.

    modes : complex mode amplitudes a_i.
    emitters : complex emitter amplitudes b_h.
    e_loc : per-emitter local drive Omega_h + (g^T a)_h, eV.
    residual : norm of H_eff.amps + Omega (linear-solve check).
    condition : condition number of H_eff.
    """

    modes: np.ndarray
    emitters: np.ndarray
    e_loc: np.ndarray
    residual: float
    condition: float


def driven_field_at_emitter(drive, emitters, environment):
    """Drive field at each emitter, (N_E, 3) complex in eV/(e nm).

    Sum of the incident plane wave and the field scattered by the dressed
    nanoparticle lattice, with the in-plane phase e^{i k_par . rho_h}
    factored out.  With no scatterers this is amplitude * polarization *
    e^{i kz z_h} exactly.
    """
    emitters = tuple(emitters)
    if not emitters:
        raise DomainError("no emitters")
    lattice = environment.lattice
    scatterers = tuple(environment.scatterers)
    ewald = environment.ewald
    k = wavenumber(drive.omega)
    kpar = np.asarray(drive.k_par, float)
    q2 = kpar @ kpar
    if q2 >= k * k:
        raise DomainError("evanescent drive")
    kz = np.sqrt(k * k - q2)
    pol = np.asarray(drive.polarization, complex)

    out = np.zeros((len(emitters), 3), complex)
    for h, em in enumerate(emitters):
        _check_outside(lattice, scatterers, em.position)
        out[h] = drive.amplitude * pol * np.exp(1j * kz * em.position[2])
    if scatterers:
        alpha = effective_polarizability(kpar, drive.omega, scatterers,
                                         lattice, ewald)
        b = plane_wave_drive_vector(kpar, kz, pol, scatterers)
        um = alpha @ b
        for h, em in enumerate(emitters):
            rows, _ = _rows_cols(kpar, em.position, drive.omega, scatterers,
                                 lattice, ewald)
            e_full = k * k * (np.hstack(rows) @ um)
            rho = np.asarray(em.position[:2], float)
            out[h] += drive.amplitude * e_full * np.exp(-1j * (kpar @ rho))
    return out


def rabi_frequencies(drive, emitters, environment):
    """Per-emitter drive strength Omega_h = d_h n_h . E_h, complex eV."""
    fields = driven_field_at_emitter(drive, emitters, environment)
    d = np.array([em.dipole_enm for em in emitters])
    n = np.array([em.orientation for em in emitters], float)
    return d * np.einsum("hc,hc->h", n, fields)


def effective_hamiltonian(model, emitters, omega_drive, gamma_nr=0.0):
    """Non-Hermitian (N_M+N_E) x (N_M+N_E) matrix of the linear system.

    Block form [[mode_matrix - omega_drive - i diag(kappa)/2, conj(g)],
                [g^T, diag(omega_E) - omega_drive - i gamma_nr/2]].
    omega_drive = 0 gives the lab frame used for dispersions; a nonzero
    value moves to the frame rotating at the drive frequency.  gamma_nr is
    an optional nonradiative emitter decay (eV) regularizing dark states.
    """
    emitters = tuple(emitters)
    nm, ne = model.n_modes, model.n_emitters
    if len(emitters) != ne:
        raise DomainError("emitter count does not match the fitted model")
    if gamma_nr < 0:
        raise DomainError("nonradiative rate must be nonnegative")
    dim = nm + ne
    H = np.zeros((dim, dim), complex)
    H[:nm, :nm] = model.htilde() - omega_drive * np.eye(nm)
    H[:nm, nm:] = np.conj(model.g)
    H[nm:, :nm] = model.g.T
    w_e = np.array([em.transition_energy for em in emitters], float)
    H[nm:, nm:] = np.diag(w_e - omega_drive - 0.5j * gamma_nr)
    return H


def coherent_steady_state(h_eff, rabi):
    """Steady-state amplitudes amps = -h_eff^{-1} . (0, ..., 0, rabi).

    rabi holds the per-emitter drive strengths; mode slots are not driven
    directly (the drive reaches them only through the emitters).  The local
    field seen by emitter h is e_loc_h = rabi_h + (g^T a)_h, read off the
    lower-left block of h_eff.
    """
    h_eff = np.asarray(h_eff, complex)
    rabi = np.atleast_1d(np.asarray(rabi, complex))
    dim = h_eff.shape[0]
    ne = rabi.shape[0]
    nm = dim - ne
    if h_eff.shape != (dim, dim) or nm < 0:
        raise DomainError("drive vector longer than the system dimension")
    cond = np.linalg.cond(h_eff)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularityError(f"singular effective Hamiltonian, cond={cond:.2e}")
    omega_vec = np.concatenate([np.zeros(nm, complex), rabi])
    amps = -np.linalg.solve(h_eff, omega_vec)
    # one refinement step keeps the residual at the backward-stable floor
    amps -= np.linalg.solve(h_eff, h_eff @ amps + omega_vec)
    residual = float(np.linalg.norm(h_eff @ amps + omega_vec))
    a, b = amps[:nm], amps[nm:]
    e_loc = rabi + h_eff[nm:, :nm] @ a
    return CoherentState(a, b, e_loc, residual, float(cond))


@dataclass(frozen=True)
class LocalFieldMap:
    """|e_loc| normalized by the free-space drive strength, per (k, omega).

    values[i, j, h] = |e_loc_h| / |d_h (n_h . pol) E_in| at k-point i and
    drive frequency omegas[j]; NaN where no fitted model exists or the
    drive cannot propagate.
    """

    k_points: np.ndarray
    arclength: np.ndarray
    omegas: np.ndarray
    values: np.ndarray


def local_field_map(fits, emitters, omegas, drive, environment=None):
    """Normalized local-field strength over fitted k-points x drive grid.

    fits : rows from the band-path fit (k_par, arclength, model, report).
    environment : when given, the drive is propagated through the
        nanoparticle lattice at every (k, omega) cell; otherwise the bare
        plane wave drives the emitters and the map reduces to the fitted
        model response.
    """
    emitters = tuple(emitters)
    fits = list(fits)
    omegas = np.asarray(omegas, float)
    ne = len(emitters)
    d = np.array([em.dipole_enm for em in emitters])
    n = np.array([em.orientation for em in emitters], float)
    z = np.array([em.position[2] for em in emitters], float)
    pol = np.asarray(drive.polarization, complex)
    proj = n @ pol
    free_mag = np.abs(d * proj) * drive.amplitude
    free_mag = np.where(free_mag > 0, free_mag, np.nan)

    values = np.full((len(fits), omegas.size, ne), np.nan)
    for i, row in enumerate(fits):
        if row.model is None:
            continue
        kp = np.asarray(row.k_par, float)
        for j, w in enumerate(omegas):
            try:
                if environment is not None:
                    cell = replace(drive, omega=float(w), k_par=tuple(kp))
                    om = rabi_frequencies(cell, emitters, environment)
                else:
                    k = wavenumber(w)
                    q2 = kp @ kp
                    if q2 >= k * k:
                        continue
                    kz = np.sqrt(k * k - q2)
                    om = d * proj * drive.amplitude * np.exp(1j * kz * z)
                h_eff = effective_hamiltonian(row.model, emitters, float(w))
                state = coherent_steady_state(h_eff, om)
            except (DomainError, SingularityError, EwaldConvergenceError):
                continue
            values[i, j] = np.abs(state.e_loc) / free_mag
    k_points = np.array([row.k_par for row in fits], float)
    arclength = np.array([row.arclength for row in fits], float)
    return LocalFieldMap(k_points, arclength, omegas, values)


@dataclass(frozen=True)
class PolaritonBranches:
    """Lab-frame eigenvalue branches of the fitted linear system along k.

    eigenvalues[i, m]: complex branch m at k-point i (NaN where unfitted);
    Re = branch energy in eV, -2 Im = linewidth.  photon_fraction is the
    eigenvector weight on the mode slots.  Branches are connected across k
    by maximal eigenvector overlap, ties broken by smaller energy jump.
    """

    k_points: np.ndarray
    arclength: np.ndarray
    eigenvalues: np.ndarray
    photon_fraction: np.ndarray

    @property
    def energies(self):
        return self.eigenvalues.real

    @property
    def widths(self):
        return -2.0 * self.eigenvalues.imag


def polariton_dispersion(fits, emitters, gamma_nr=0.0):
    """Connected polariton branches from fitted models along a k-path."""
    emitters = tuple(emitters)
    fits = list(fits)
    first = next((row.model for row in fits if row.model is not None), None)
    if first is None:
        raise DomainError("no fitted models on the path")
    dim = first.n_modes + first.n_emitters
    lam_out = np.full((len(fits), dim), np.nan + 0j)
    frac_out = np.full((len(fits), dim), np.nan)
    prev_vecs = None
    prev_lam = None
    for i, row in enumerate(fits):
        if row.model is None:
            continue
        nm = row.model.n_modes
        H = effective_hamiltonian(row.model, emitters, 0.0, gamma_nr)
        lam, V = np.linalg.eig(H)
        V = V / np.linalg.norm(V, axis=0, keepdims=True)
        if prev_vecs is None:
            order = np.argsort(lam.real)
        else:
            overlap = np.abs(prev_vecs.conj().T @ V) ** 2
            scale = max(np.ptp(lam.real), 1e-12)
            jump = np.abs(lam[None, :] - prev_lam[:, None]) / scale
            _, order = linear_sum_assignment(-overlap + 1e-3 * jump)
        lam_out[i] = lam[order]
        frac_out[i] = np.sum(np.abs(V[:nm, order]) ** 2, axis=0)
        prev_vecs = V[:, order]
        prev_lam = lam[order]
    k_points = np.array([row.k_par for row in fits], float)
    arclength = np.array([row.arclength for row in fits], float)
    return PolaritonBranches(k_points, arclength, lam_out, frac_out)
