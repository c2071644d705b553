"""Photon-pair generation from the coherently driven emitter lattice.

A laser at (omega_L, k_L) prepares a coherent collective-emitter amplitude
delta = <b_{k_L}> and local field E_loc.  At second order of the bosonized
emitter nonlinearity these amplitudes act as a static pump converting laser
photon pairs into excitation pairs at momentum-matched cells
(k, kbar = 2 k_L - k).  The pair problem is a Lindblad master equation in
the joint truncated Fock space of the fitted lossy modes plus the collective
emitter excitation at the two cells; the stationary two-photon emission rate
follows from the joint photon-number correlators weighted by the mode decay
rates.

All energies in eV; the Hamiltonians live in the frame rotating at the
drive frequency, which makes every pump vertex time independent.
"""

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .constants import HBAR_EV_FS, photon_flux, wavenumber
from .dynamics import (coherent_steady_state, effective_hamiltonian,
                       polariton_dispersion, rabi_frequencies)
from .fewmode import FewModeModel
from .greens import (DomainError, EwaldConvergenceError, GreensError,
                     SingularityError)

__all__ = [
    "DegeneracyError", "PairVertices", "PairProblem", "PairRates",
    "PairScanResult", "fock_states", "lowering_operators", "liouvillian",
    "lindblad_steady_state", "holstein_primakoff_vertex", "pair_hamiltonian",
    "pair_steady_state", "two_photon_rate", "pair_scan",
    "CELL_OK", "CELL_DRIVE", "CELL_INTERPOLATED", "CELL_FAILED",
]

CELL_OK = 0
CELL_DRIVE = 1
CELL_INTERPOLATED = 2
CELL_FAILED = 3


class DegeneracyError(GreensError):
    """Stationary state is not unique (undamped dark sector)."""


_BASIS_CACHE = {}
_OPS_CACHE = {}


def fock_states(n_osc, max_total):
    """All occupation tuples of n_osc oscillators with total <= max_total."""
    key = (int(n_osc), int(max_total))
    if key not in _BASIS_CACHE:
        if n_osc < 1 or max_total < 0:
            raise DomainError("need n_osc >= 1 and max_total >= 0")
        states = []
        for total in range(max_total + 1):
            for bars in itertools.combinations(range(total + n_osc - 1), n_osc - 1):
                parts, prev = [], -1
                for b in bars:
                    parts.append(b - prev - 1)
                    prev = b
                parts.append(total + n_osc - 2 - prev)
                states.append(tuple(parts))
        _BASIS_CACHE[key] = tuple(states)
    return _BASIS_CACHE[key]


def lowering_operators(n_osc, max_total):
    """Sparse lowering operators in the total-excitation-truncated basis.

    Returned matrices are shared via a cache; treat them as read-only.
    """
    key = (int(n_osc), int(max_total))
    if key not in _OPS_CACHE:
        states = fock_states(n_osc, max_total)
        index = {s: i for i, s in enumerate(states)}
        dim = len(states)
        ops = []
        for j in range(n_osc):
            rows, cols, vals = [], [], []
            for s, i in index.items():
                if s[j] == 0:
                    continue
                t = list(s)
                t[j] -= 1
                rows.append(index[tuple(t)])
                cols.append(i)
                vals.append(np.sqrt(s[j]))
            ops.append(sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim)))
        _OPS_CACHE[key] = tuple(ops)
    return _OPS_CACHE[key]


def liouvillian(h, collapse, rates):
    """Sparse Lindblad generator acting on column-stacked vec(rho).

    h : sparse Hamiltonian (eV); collapse: sparse jump operators C_j with
    rates r_j >= 0, contributing r (C rho C^dag - {C^dag C, rho}/2).
    """
    h = sp.csr_matrix(h)
    dim = h.shape[0]
    eye = sp.identity(dim, format="csr")
    lv = -1j * (sp.kron(eye, h) - sp.kron(h.T, eye))
    for c, r in zip(collapse, rates):
        if r < 0:
            raise DomainError("Lindblad rates must be nonnegative")
        if r == 0:
            continue
        c = sp.csr_matrix(c)
        n_op = (c.conj().T @ c).tocsr()
        lv = lv + r * (sp.kron(c.conj(), c)
                       - 0.5 * sp.kron(eye, n_op)
                       - 0.5 * sp.kron(n_op.T, eye))
    return lv.tocsr()


def lindblad_steady_state(h, collapse, rates, residual_tol=1e-10):
    """Unique stationary density matrix of the Lindblad generator.

    Solves L vec(rho) = 0 with the vacuum-population row traded for the
    trace constraint, then verifies ||L[rho]||_1 <= residual_tol against the
    untouched generator.  A singular solve or a large residual signals a
    degenerate stationary manifold (undamped dark sector): raised as
    DegeneracyError with the advice to set gamma_nr > 0.
    """
    dim = h.shape[0]
    lv = liouvillian(h, collapse, rates)
    sys = lv.tolil()
    sys[0, :] = 0.0
    for i in range(dim):
        sys[0, i * dim + i] = 1.0
    rhs = np.zeros(dim * dim, dtype=complex)
    rhs[0] = 1.0
    try:
        sol = splu(sys.tocsc()).solve(rhs)
    except RuntimeError as exc:
        raise DegeneracyError(
            "stationary state is not unique; add nonradiative emitter decay "
            "(gamma_nr > 0) to damp the dark sector") from exc
    resid = np.abs(lv @ sol).sum()
    if not np.isfinite(resid) or resid > residual_tol:
        raise DegeneracyError(
            f"stationary-state residual {resid:.2e} exceeds {residual_tol:.2e}; "
            "the generator is (near-)degenerate, set gamma_nr > 0")
    rho = sol.reshape(dim, dim, order="F")
    return 0.5 * (rho + rho.conj().T)


def _single_emitter_column(model):
    if model.n_emitters != 1:
        raise DomainError("pair generation needs single-emitter mode models")
    return model.g[:, 0]


@dataclass(frozen=True)
class PairVertices:
    """Static pump vertices produced by the driven emitter nonlinearity.

    squeeze_photon_*[i]: coefficient of adag_{cell,i} bdag_{other cell};
    squeeze_emitter: coefficient of bdag_k bdag_kbar; bs_photon_*[i]:
    number-conserving coefficient of adag_{cell,i} b_{cell}; bs_emitter:
    real frequency shift added to both emitter cells.  Hermitian conjugates
    are implied.
    """

    squeeze_photon_k: np.ndarray
    squeeze_photon_kbar: np.ndarray
    squeeze_emitter: complex
    bs_photon_k: np.ndarray
    bs_photon_kbar: np.ndarray
    bs_emitter: float


def holstein_primakoff_vertex(model_k, model_kbar, drive_state):
    """Pump vertices from the drive-cell coherent amplitudes.

    drive_state: linear steady state at (omega_L, k_L) carrying the
    collective emitter amplitude delta and the local field E_loc.  Squeezing
    coefficients scale as delta^2 (photon-emitter) and E_loc*delta
    (emitter-emitter, doubled: the two momentum assignments of the
    relabelled pair term coincide); every squeezing term creates total
    in-plane momentum 2 k_L.  Beam-splitter weights carry |delta|^2 and
    E_loc*conj(delta) on momentum-conserving pairs.
    """
    g_k = _single_emitter_column(model_k)
    g_kbar = _single_emitter_column(model_kbar)
    if len(drive_state.emitters) != 1:
        raise DomainError("pair generation needs a single-emitter drive state")
    delta = complex(drive_state.emitters[0])
    e_loc = complex(drive_state.e_loc[0])
    return PairVertices(
        squeeze_photon_k=np.conj(g_k) * delta**2,
        squeeze_photon_kbar=np.conj(g_kbar) * delta**2,
        squeeze_emitter=2.0 * e_loc * delta,
        bs_photon_k=np.conj(g_k) * abs(delta) ** 2,
        bs_photon_kbar=np.conj(g_kbar) * abs(delta) ** 2,
        bs_emitter=2.0 * float(np.real(e_loc * np.conj(delta))),
    )


@dataclass(frozen=True)
class PairProblem:
    """Two-cell pair-generation problem at (k_par, kbar = 2 k_drive - k_par).

    model_k / model_kbar: fitted mode models at the two cells (one emitter
    column each).  drive_state: linear steady state at the drive cell.
    truncation: max total excitations kept in the joint Fock space, >= 2.
    gamma_nr: nonradiative decay of each collective emitter excitation, eV.
    """

    k_par: tuple
    k_drive: tuple
    model_k: FewModeModel
    model_kbar: FewModeModel
    drive_state: object
    omega_drive: float
    emitter: object
    truncation: int = 2
    include_beam_splitter: bool = False
    gamma_nr: float = 0.0

    def __post_init__(self):
        kp = np.asarray(self.k_par, dtype=float)
        kd = np.asarray(self.k_drive, dtype=float)
        if kp.shape != (2,) or kd.shape != (2,):
            raise DomainError("k_par and k_drive must be 2-vectors")
        scale = max(np.linalg.norm(kd), np.linalg.norm(kp), 1e-30)
        if np.linalg.norm(kp - kd) <= 1e-12 * scale:
            raise DomainError("pair cell must differ from the drive cell")
        if int(self.truncation) < 2:
            raise DomainError("truncation must keep at least two excitations")
        if self.omega_drive <= 0:
            raise DomainError("drive frequency must be positive")
        if self.gamma_nr < 0:
            raise DomainError("gamma_nr must be nonnegative")
        _single_emitter_column(self.model_k)
        _single_emitter_column(self.model_kbar)
        object.__setattr__(self, "k_par", tuple(float(x) for x in kp))
        object.__setattr__(self, "k_drive", tuple(float(x) for x in kd))
        object.__setattr__(self, "truncation", int(self.truncation))

    @property
    def k_bar(self):
        kp = np.asarray(self.k_par)
        kd = np.asarray(self.k_drive)
        return tuple(2.0 * kd - kp)

    @property
    def n_oscillators(self):
        return self.model_k.n_modes + self.model_kbar.n_modes + 2


def pair_hamiltonian(problem):
    """Rotating-frame Hamiltonian and jump operators of the pair problem.

    Oscillator order: modes at k, emitter at k, modes at kbar, emitter at
    kbar.  Returns (h, collapse, rates) with sparse h in eV.
    """
    mk, mkb = problem.model_k, problem.model_kbar
    nk, nkb = mk.n_modes, mkb.n_modes
    n_osc = nk + nkb + 2
    ops = lowering_operators(n_osc, problem.truncation)
    dim = ops[0].shape[0]
    be_k, be_kbar = nk, nk + 1 + nkb
    w_l = problem.omega_drive
    w_e = problem.emitter.transition_energy
    vert = holstein_primakoff_vertex(mk, mkb, problem.drive_state)

    h = sp.csr_matrix((dim, dim), dtype=complex)
    for model, off, be in ((mk, 0, be_k), (mkb, nk + 1, be_kbar)):
        w = model.mode_matrix - w_l * np.eye(model.n_modes)
        for i in range(model.n_modes):
            for j in range(model.n_modes):
                if w[i, j] != 0.0:
                    h = h + w[i, j] * (ops[off + i].conj().T @ ops[off + j])
        shift = vert.bs_emitter if problem.include_beam_splitter else 0.0
        h = h + (w_e - w_l + shift) * (ops[be].conj().T @ ops[be])
        g = model.g[:, 0]
        for i in range(model.n_modes):
            h = h + g[i] * (ops[be].conj().T @ ops[off + i])
            h = h + np.conj(g[i]) * (ops[off + i].conj().T @ ops[be])

    def add_pair(c, lower_i, lower_j):
        # c * adag_i adag_j + h.c.
        nonlocal h
        h = h + c * (lower_i.conj().T @ lower_j.conj().T)
        h = h + np.conj(c) * (lower_j @ lower_i)

    for i in range(nk):
        add_pair(vert.squeeze_photon_k[i], ops[i], ops[be_kbar])
    for i in range(nkb):
        add_pair(vert.squeeze_photon_kbar[i], ops[nk + 1 + i], ops[be_k])
    add_pair(vert.squeeze_emitter, ops[be_k], ops[be_kbar])

    if problem.include_beam_splitter:
        for model, off, be in ((mk, 0, be_k), (mkb, nk + 1, be_kbar)):
            bs = vert.bs_photon_k if off == 0 else vert.bs_photon_kbar
            for i in range(model.n_modes):
                h = h + bs[i] * (ops[off + i].conj().T @ ops[be])
                h = h + np.conj(bs[i]) * (ops[be].conj().T @ ops[off + i])

    collapse = [ops[i] for i in range(nk)] + [ops[nk + 1 + i] for i in range(nkb)]
    rates = list(mk.kappa) + list(mkb.kappa)
    if problem.gamma_nr > 0:
        collapse += [ops[be_k], ops[be_kbar]]
        rates += [problem.gamma_nr, problem.gamma_nr]
    return h, collapse, rates


def pair_steady_state(problem, residual_tol=1e-10):
    """Stationary density matrix of the pair problem (truncated Fock basis)."""
    h, collapse, rates = pair_hamiltonian(problem)
    return lindblad_steady_state(h, collapse, rates, residual_tol=residual_tol)


@dataclass(frozen=True)
class PairRates:
    """Stationary pair-emission rates.

    gamma_pairs[i, j] = (kappa_k_i + kappa_kbar_j) <N_k_i N_kbar_j>, eV;
    gamma is their sum.  rate_density = V_d/(4 pi^2) * gamma / hbar in
    1/(nm^2 fs); rate_over_flux2 (nm^2 fs) and rate_over_flux
    (dimensionless) are the drive-normalized diagnostics.
    """

    gamma: float
    gamma_pairs: np.ndarray
    rate_density: float
    v_d: float
    flux_in: float
    rate_over_flux2: float
    rate_over_flux: float


def two_photon_rate(problem, v_d, flux_in, rho=None):
    """Pair-emission rate of the stationary two-cell problem.

    v_d: driven reciprocal-space cell area, 1/nm^2.  flux_in: incident
    photon flux density, 1/(nm^2 fs).  rho: optional precomputed stationary
    state.
    """
    if v_d <= 0:
        raise DomainError("driven cell area v_d must be positive")
    if flux_in <= 0:
        raise DomainError("incident flux must be positive")
    if rho is None:
        rho = pair_steady_state(problem)
    nk, nkb = problem.model_k.n_modes, problem.model_kbar.n_modes
    n_osc = nk + nkb + 2
    states = np.array(fock_states(n_osc, problem.truncation), dtype=float)
    pops = np.real(np.diag(rho))
    occ_k = states[:, :nk]
    occ_kbar = states[:, nk + 1:nk + 1 + nkb]
    corr = occ_k.T @ (pops[:, None] * occ_kbar)
    gamma_pairs = (problem.model_k.kappa[:, None]
                   + problem.model_kbar.kappa[None, :]) * corr
    gamma = float(gamma_pairs.sum())
    rate_density = v_d / (4.0 * np.pi**2) * gamma / HBAR_EV_FS
    return PairRates(
        gamma=gamma, gamma_pairs=gamma_pairs, rate_density=rate_density,
        v_d=float(v_d), flux_in=float(flux_in),
        rate_over_flux2=rate_density / flux_in**2,
        rate_over_flux=rate_density / flux_in,
    )


def _interpolate_model(m0, m1, weight):
    if m0.n_modes != m1.n_modes or m0.n_emitters != m1.n_emitters:
        raise DomainError("cannot interpolate between different mode counts")
    w = float(weight)
    return FewModeModel(
        (1 - w) * m0.mode_matrix + w * m1.mode_matrix,
        (1 - w) * m0.kappa + w * m1.kappa,
        (1 - w) * m0.g + w * m1.g,
    )


def _ray_coordinates(k_points):
    norms = np.linalg.norm(k_points, axis=1)
    direction = k_points[int(np.argmax(norms))]
    direction = direction / np.linalg.norm(direction)
    t = k_points @ direction
    off = k_points - np.outer(t, direction)
    if np.max(np.linalg.norm(off, axis=1)) > 1e-9 * max(norms.max(), 1e-30):
        raise DomainError("pair scan needs k points on a straight ray from Gamma")
    return t, direction


def _model_at(fits, t, target, tol):
    """Model at ray coordinate `target` by exact match or linear interpolation.

    Returns (model, interpolated flag) or (None, False) when out of range or
    the needed rows are unfitted.
    """
    hit = np.where(np.abs(t - target) <= tol)[0]
    if hit.size:
        return fits[int(hit[0])].model, False
    if target < t.min() or target > t.max():
        return None, False
    j = int(np.searchsorted(t, target)) - 1
    m0, m1 = fits[j].model, fits[j + 1].model
    if m0 is None or m1 is None:
        return None, False
    w = (target - t[j]) / (t[j + 1] - t[j])
    try:
        return _interpolate_model(m0, m1, w), True
    except DomainError:
        return None, False


@dataclass(frozen=True)
class PairScanResult:
    """Pair-rate map over (drive frequency, pair momentum cell).

    gamma[i, j]: rate (eV) at omega_L = omegas[i], k = k_points[j]; NaN for
    masked/failed cells.  codes: CELL_OK / CELL_DRIVE (masked k = k_L) /
    CELL_INTERPOLATED (kbar model interpolated) / CELL_FAILED.
    branch_energies[j, m]: lab-frame polariton branches along k for
    overlays; branch_at_drive: branches at the drive cell;
    pair_locus[j, (m, m')]: drive frequencies satisfying
    E_m(k) + E_m'(kbar) = 2 omega_L.  drive_excitation[i]: largest emitter
    amplitude of the linearized drive-cell steady state; the pair vertices
    assume it stays well below one.
    """

    k_points: np.ndarray
    arclength: np.ndarray
    omegas: np.ndarray
    gamma: np.ndarray
    rate_over_flux2: np.ndarray
    codes: np.ndarray
    branch_energies: np.ndarray
    branch_at_drive: np.ndarray
    pair_locus: np.ndarray
    v_d: float
    flux: np.ndarray
    drive_excitation: np.ndarray = None


def pair_scan(fits, drive_index, omegas, emitter, drive, v_d,
              environment=None, truncation=2, include_beam_splitter=False,
              gamma_nr=0.0):
    """Pair-rate map over drive frequencies x fitted momentum cells.

    fits: band-path fit rows on a straight ray from Gamma containing the
    drive cell at `drive_index`.  For every omega_L the linear steady state
    is solved at the drive cell (plane wave `drive` propagated through the
    lattice when `environment` is given, bare otherwise) and feeds the pair
    problem of every other cell; the partner model at kbar = 2 k_L - k is
    looked up by reflection symmetry (J(-k) = J(k) for one emitter) and
    linear interpolation off the grid, flagged CELL_INTERPOLATED.
    """
    fits = list(fits)
    omegas = np.asarray(omegas, dtype=float)
    if omegas.size == 0 or not fits:
        raise DomainError("pair scan needs a nonempty frequency and k grid")
    k_points = np.array([row.k_par for row in fits], dtype=float)
    t, _direction = _ray_coordinates(k_points)
    if not np.all(np.diff(t) > 0):
        raise DomainError("pair scan needs strictly increasing k coordinates")
    drive_index = int(drive_index)
    if not 0 <= drive_index < len(fits):
        raise DomainError("drive_index outside the fitted path")
    model_drive = fits[drive_index].model
    if model_drive is None:
        raise DomainError("no fitted model at the drive cell")
    if not np.allclose(drive.k_par, k_points[drive_index],
                       rtol=0.0, atol=1e-9 * max(np.abs(t).max(), 1e-30)):
        raise DomainError("drive.k_par must sit on the drive cell")

    emitters = (emitter,)
    d_enm = emitter.dipole_enm
    proj = np.asarray(emitter.orientation) @ np.asarray(drive.polarization)
    z_e = emitter.position[2]
    t_l = t[drive_index]
    tol = 1e-9 * max(np.abs(t).max(), 1e-30)

    branches = polariton_dispersion(fits, emitters, gamma_nr=gamma_nr)
    energies = branches.energies
    nb = energies.shape[1]
    branch_at_drive = energies[drive_index].copy()
    # partner-branch energies at |2 t_L - t| by linear interpolation; clamp
    # roundoff excursions past the grid ends so edge rows keep their locus
    target = np.abs(2.0 * t_l - t)
    inside = (target >= t.min() - tol) & (target <= t.max() + tol)
    target_c = np.clip(target, t.min(), t.max())
    part = np.full((len(fits), nb), np.nan)
    for m in range(nb):
        col = energies[:, m]
        good = np.isfinite(col)
        if good.sum() >= 2:
            part[:, m] = np.interp(target_c, t[good], col[good])
    part[~inside] = np.nan
    pair_locus = 0.5 * (energies[:, :, None] + part[:, None, :])
    pair_locus = pair_locus.reshape(len(fits), nb * nb)

    nw, nk_pts = omegas.size, len(fits)
    gamma = np.full((nw, nk_pts), np.nan)
    over2 = np.full((nw, nk_pts), np.nan)
    codes = np.full((nw, nk_pts), CELL_OK, dtype=np.uint8)
    flux = np.array([photon_flux(drive.amplitude, w) for w in omegas])
    excitation = np.full(nw, np.nan)

    partner = []
    for j in range(nk_pts):
        if j == drive_index:
            partner.append((None, False))
            continue
        partner.append(_model_at(fits, t, abs(2.0 * t_l - t[j]), tol))

    # rows whose partner momentum lands exactly on the grid form unordered
    # pairs (j, jm); each pair is solved once and the rate assigned to both
    # rows, so the k <-> 2 k_L - k symmetry holds to the last bit
    mirror = np.full(nk_pts, -1, dtype=int)
    for j in range(nk_pts):
        if j == drive_index:
            continue
        hit = np.where(np.abs(t - abs(2.0 * t_l - t[j])) <= tol)[0]
        if hit.size and int(hit[0]) != j:
            mirror[j] = int(hit[0])
    for j in range(nk_pts):
        jm = mirror[j]
        if jm >= 0 and mirror[jm] != j:
            mirror[j] = -1

    from dataclasses import replace as _replace

    for i, w in enumerate(omegas):
        w = float(w)
        try:
            if environment is not None:
                cell = _replace(drive, omega=w)
                om = rabi_frequencies(cell, emitters, environment)
            else:
                k = wavenumber(w)
                q2 = np.dot(drive.k_par, drive.k_par)
                if q2 >= k * k:
                    raise DomainError("evanescent drive row")
                kz = np.sqrt(k * k - q2)
                om = np.array([d_enm * proj * drive.amplitude
                               * np.exp(1j * kz * z_e)])
            h_eff = effective_hamiltonian(model_drive, emitters, w,
                                          gamma_nr=gamma_nr)
            state = coherent_steady_state(h_eff, om)
        except (DomainError, SingularityError, EwaldConvergenceError):
            codes[i, :] = CELL_FAILED
            codes[i, drive_index] = CELL_DRIVE
            continue
        excitation[i] = float(np.max(np.abs(state.emitters)))
        for j in range(nk_pts):
            if j == drive_index:
                codes[i, j] = CELL_DRIVE
                continue
            jm = mirror[j]
            if 0 <= jm < j:
                gamma[i, j] = gamma[i, jm]
                over2[i, j] = over2[i, jm]
                codes[i, j] = codes[i, jm]
                continue
            model_k = fits[j].model
            model_kbar, interp = partner[j]
            if model_k is None or model_kbar is None:
                codes[i, j] = CELL_FAILED
                continue
            try:
                problem = PairProblem(
                    k_par=tuple(k_points[j]), k_drive=tuple(k_points[drive_index]),
                    model_k=model_k, model_kbar=model_kbar, drive_state=state,
                    omega_drive=w, emitter=emitter, truncation=truncation,
                    include_beam_splitter=include_beam_splitter,
                    gamma_nr=gamma_nr)
                rates = two_photon_rate(problem, v_d, flux[i])
            except (DomainError, DegeneracyError, SingularityError):
                codes[i, j] = CELL_FAILED
                continue
            gamma[i, j] = rates.gamma
            over2[i, j] = rates.rate_over_flux2
            if interp:
                codes[i, j] = CELL_INTERPOLATED

    arclength = np.array([row.arclength for row in fits], dtype=float)
    return PairScanResult(
        k_points=k_points, arclength=arclength, omegas=omegas, gamma=gamma,
        rate_over_flux2=over2, codes=codes, branch_energies=energies,
        branch_at_drive=branch_at_drive, pair_locus=pair_locus,
        v_d=float(v_d), flux=flux, drive_excitation=excitation,
    )
