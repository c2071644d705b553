"""Free-space and Bloch-periodic dyadic Green tensors, Ewald summation,
coupled electric+magnetic dipole scattering on a 2D lattice.

Conventions
-----------
E(r) = mu0 omega^2 G(r, r') p for a point dipole p at r', so the free dyadic
is G0 = (I + grad grad / k^2) e^{ik rho}/(4 pi rho) with k = omega/(hbar c).
The Bloch sum is G(k_par, r, r') = sum_R e^{i k_par.R} G0(r, r' + R).

With the polarizability convention p = eps0 alpha E (alpha in nm^3) the
coupled-dipole blocks carry explicit k^2 factors: writing u = p/eps0 and
m~ = Z0 m, the fields of a dipole pair are

    E  =  k^2 G u + i k C m~,        H~ = -i k C u + k^2 G m~,

where C = curl G is built from the gradient of the same scalar lattice sum.

Ewald split: the scalar sum S(dr) = sum_R e^{i k_par.R} e^{ik|dr-R|}/(4 pi |dr-R|)
is divided at splitting parameter E into a Gaussian-damped real-space part
(complementary error functions of rho E +- ik/2E) and a reciprocal part over
diffraction orders q = k_par + g with vertical propagation e^{i k_z |z|}
smoothed by erfc.  Dyadics follow from analytic derivatives of each term.
"""

import functools
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, erfi

from .constants import wavenumber
from .lattice import LatticeSpec, lattice_points_in_radius, reciprocal_points_in_radius
from .material import MaterialModel, mie_dipole_polarizabilities

SQRT_PI = np.sqrt(np.pi)


class GreensError(RuntimeError):
    pass


class SingularityError(GreensError):
    """Coincident (or lattice-equivalent) points in an unregularized sum."""


class DomainError(GreensError):
    """Evaluation point inside a scatterer, or otherwise out of domain."""


class EwaldConvergenceError(GreensError):
    """Estimated truncation tail above tolerance; carries the tail estimate."""

    def __init__(self, message, tail):
        super().__init__(message)
        self.tail = tail


@dataclass(frozen=True)
class ScattererSpec:
    """A sphere in the unit cell: position (3,) nm, radius nm, material."""

    position: tuple
    radius: float
    material: MaterialModel

    def __post_init__(self):
        pos = tuple(float(x) for x in self.position)
        if len(pos) != 3:
            raise DomainError("scatterer position must be 3D")
        if self.radius <= 0:
            raise DomainError("scatterer radius must be positive")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class EwaldParams:
    """Ewald evaluation controls.

    splitting : nm^-1 or None.  None picks max(sqrt(pi/A), Re k/7): the first
        balances the two sums, the second caps the Gaussian factor
        e^{k^2/4E^2} <= e^{12.25} so large-cell evaluations stay in range.
    real_cutoff, reciprocal_cutoff : dimensionless Gaussian widths kept in
        each sum; terms beyond them are O(e^{-cutoff^2}).
    tol : tail tolerance relative to the k/(6 pi) self-term scale.
    """

    splitting: float | None = None
    real_cutoff: float = 5.5
    reciprocal_cutoff: float = 5.5
    tol: float = 1e-8
    check: bool = True

    def __post_init__(self):
        if self.splitting is not None and self.splitting <= 0:
            raise GreensError("splitting must be positive")
        if self.real_cutoff < 1 or self.reciprocal_cutoff < 1:
            raise GreensError("cutoffs must be >= 1 width")


@dataclass(frozen=True)
class BlochGreenSample:
    """One evaluated Bloch Green tensor (diagnostic container)."""

    k_par: tuple
    omega: float
    r: tuple
    r_prime: tuple
    value: np.ndarray


@dataclass(frozen=True)
class Environment:
    """Periodic optical environment: lattice + scatterers + Ewald controls."""

    lattice: LatticeSpec
    scatterers: tuple = ()
    ewald: EwaldParams = EwaldParams()


def _cross_matrix(v):
    """Matrix [v]_x with [v]_x w = v x w; works on (..., 3) stacks."""
    v = np.asarray(v)
    out = np.zeros(v.shape[:-1] + (3, 3), dtype=v.dtype)
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def free_space_green(r, r_prime, omega):
    """Free-space dyadic G0(r, r', omega), 3x3 complex, nm^-1."""
    dr = np.asarray(r, dtype=float) - np.asarray(r_prime, dtype=float)
    rho = np.linalg.norm(dr)
    if rho == 0.0:
        raise SingularityError("coincident points; use imaginary_self_term")
    k = wavenumber(omega)
    kr = k * rho
    rhat = dr / rho
    g = np.exp(1j * kr) / (4 * np.pi * rho)
    ciso = 1.0 + 1j / kr - 1.0 / kr**2
    crr = -1.0 - 3j / kr + 3.0 / kr**2
    return g * (ciso * np.eye(3) + crr * np.outer(rhat, rhat))


def free_space_curl(r, r_prime, omega):
    """curl_r G0: the electric-magnetic coupling dyadic of a point pair."""
    dr = np.asarray(r, dtype=float) - np.asarray(r_prime, dtype=float)
    rho = np.linalg.norm(dr)
    if rho == 0.0:
        raise SingularityError("coincident points")
    k = wavenumber(omega)
    g = np.exp(1j * k * rho) / (4 * np.pi * rho)
    gprime = (1j * k - 1.0 / rho) * g
    return _cross_matrix(gprime * dr / rho)


def imaginary_self_term(omega):
    """Im G0(r, r, omega) = (k / 6 pi) I, 3x3 real."""
    k = wavenumber(omega)
    return (k / (6 * np.pi)) * np.eye(3)


# ---------------------------------------------------------------------------
# Ewald engine


def _splitting(lattice, k, params):
    if params.splitting is not None:
        return float(params.splitting)
    base = SQRT_PI / np.sqrt(lattice.cell_area)
    return max(base, abs(np.real(k)) / 7.0)


@functools.lru_cache(maxsize=512)
def _real_points(lattice_key, radius, skip_origin):
    lattice = LatticeSpec(a1=lattice_key[0], a2=lattice_key[1])
    pts = lattice_points_in_radius(lattice, radius)
    if skip_origin:
        pts = pts[np.linalg.norm(pts, axis=1) > 1e-12]
    return pts


@functools.lru_cache(maxsize=512)
def _recip_points(lattice_key, radius):
    lattice = LatticeSpec(a1=lattice_key[0], a2=lattice_key[1])
    return reciprocal_points_in_radius(lattice, radius)


def _lattice_key(lattice):
    return (lattice.a1, lattice.a2)


def _round_up(x, quantum):
    return float(np.ceil(x / quantum) * quantum)


def _spatial_part(kpar, dr, k, E, rpts):
    """Gaussian-damped real-space sum: dyadic, gradient, tail estimate."""
    if len(rpts) == 0:
        z3 = np.zeros((3, 3), complex)
        return z3, np.zeros(3, complex), 0.0
    rho_vec = dr[None, :] - np.concatenate([rpts, np.zeros((len(rpts), 1))], axis=1)
    d = np.linalg.norm(rho_vec, axis=1)
    if np.any(d < 1e-12):
        raise SingularityError("evaluation point coincides with a lattice site")
    rhat = rho_vec / d[:, None]
    phase = np.exp(1j * (rpts @ kpar))

    # u_pm = e^{+-ik rho} erfc(rho E +- ik/2E) via scaled erfcx to avoid overflow
    W = np.exp(k * k / (4 * E * E) - d * d * E * E)
    up = erfcx(d * E + 1j * k / (2 * E)) * W
    um = erfcx(d * E - 1j * k / (2 * E)) * W
    A = up + um
    B = up - um
    C = (2 * E / SQRT_PI) * W

    f = A / (8 * np.pi * d)
    Ap = 1j * k * B - 2 * C
    App = -k * k * A + 4 * d * E * E * C
    fp = Ap / (8 * np.pi * d) - A / (8 * np.pi * d**2)
    fpp = (App / (8 * np.pi * d) - 2 * Ap / (8 * np.pi * d**2)
           + 2 * A / (8 * np.pi * d**3))

    ciso = phase * (f + fp / (k * k * d))
    crr = phase * (fpp - fp / d) / (k * k)
    dyad = np.sum(ciso) * np.eye(3) + np.einsum("m,mi,mj->ij", crr, rhat, rhat)
    grad = np.einsum("m,mi->i", phase * fp, rhat)
    # tail: largest scalar term in the outer 15% radius band
    outer = d >= 0.85 * d.max()
    tail = float(np.max(np.abs(f[outer])))
    return dyad, grad, tail


def _spectral_part(kpar, dr, k, E, gpts, area):
    """Reciprocal-space sum over diffraction orders: dyadic, gradient, tail."""
    q = kpar[None, :] + gpts
    q2 = np.sum(q * q, axis=1)
    kz = np.sqrt(k * k - q2 + 0j)
    if np.any(np.abs(kz) < 1e-10 * max(abs(k), 1e-30)):
        raise EwaldConvergenceError(
            "diffraction order at grazing (Rayleigh anomaly collision)", np.inf)
    beta = -1j * kz
    z = dr[2]

    Ws = np.exp(-beta * beta / (4 * E * E) - z * z * E * E)
    vp = erfcx(beta / (2 * E) + z * E) * Ws
    vm = erfcx(beta / (2 * E) - z * E) * Ws
    F = (vp + vm) / (4 * area * beta)
    Fp = (vp - vm) / (4 * area)
    D = (2 * E / SQRT_PI) * Ws
    Fpp = beta * beta * F - D / (2 * area)

    phase = np.exp(1j * (q @ dr[:2]))
    cF = phase * F
    cFp = phase * Fp
    cFpp = phase * Fpp

    dyad = np.zeros((3, 3), complex)
    sF = np.sum(cF)
    for a in range(2):
        for b in range(2):
            dyad[a, b] = -np.sum(q[:, a] * q[:, b] * cF) / (k * k)
        dyad[a, a] += sF
        dyad[a, 2] = dyad[2, a] = 1j * np.sum(q[:, a] * cFp) / (k * k)
    dyad[2, 2] = sF + np.sum(cFpp) / (k * k)

    grad = np.zeros(3, complex)
    grad[0] = 1j * np.sum(q[:, 0] * cF)
    grad[1] = 1j * np.sum(q[:, 1] * cF)
    grad[2] = np.sum(cFp)

    qn = np.sqrt(q2)
    outer = qn >= 0.85 * qn.max()
    tail = float(np.max(np.abs(F[outer]))) if np.any(outer) else 0.0
    return dyad, grad, tail


def _complement_constant(k, E):
    """Dyadic complement of the real-space Ewald term at coincidence.

    comp(rho) = e^{ik rho}/(4 pi rho) - f_Ewald(rho) is even analytic;
    (I + grad grad/k^2) comp -> (c0 + 2 c2/k^2) I at rho = 0, and
    Im(c0 + 2 c2/k^2) = k/(6 pi) exactly for real k.
    """
    X = np.exp(k * k / (4 * E * E))
    ei = erfi(k / (2 * E) + 0j)
    c0 = ((2 * E / SQRT_PI) * X - k * ei + 1j * k) / (4 * np.pi)
    c2 = (k**3 * ei - (2 / SQRT_PI) * (k * k * E + 2 * E**3) * X
          - 1j * k**3) / (24 * np.pi)
    return c0 + 2 * c2 / (k * k)


def _engine(kpar, dr, omega, lattice, params, skip_origin=False):
    """Shared Ewald evaluation: (dyad, grad) of the Bloch scalar sum at dr.

    skip_origin drops the R = 0 real-space term (self-site sums).
    """
    k = wavenumber(omega)
    kpar = np.asarray(kpar, dtype=float)
    dr = np.asarray(dr, dtype=float)
    E = _splitting(lattice, k, params)
    area = lattice.cell_area
    key = _lattice_key(lattice)

    amin = min(np.linalg.norm(lattice.basis, axis=1))
    r_cut = params.real_cutoff / E + np.linalg.norm(dr[:2])
    rpts = _real_points(key, _round_up(r_cut, 0.5 * amin), skip_origin)
    q_cut = np.sqrt(max(np.real(k * k), 0.0) + (2 * E * params.reciprocal_cutoff) ** 2)
    q_cut = q_cut + np.linalg.norm(kpar)
    bmin = 2 * np.pi / max(np.linalg.norm(lattice.basis, axis=1))
    gpts = _recip_points(key, _round_up(q_cut, 0.5 * bmin))

    dyad_s, grad_s, tail_s = _spatial_part(kpar, dr, k, E, rpts)
    dyad_q, grad_q, tail_q = _spectral_part(kpar, dr, k, E, gpts, area)

    if params.check:
        scale = max(abs(k) / (6 * np.pi), 1e-300)
        tail = max(tail_s, tail_q)
        if tail > params.tol * scale:
            raise EwaldConvergenceError(
                f"Ewald tail estimate {tail:.3e} above tolerance", tail)
    return dyad_s + dyad_q, grad_s + grad_q


def _lattice_offset(lattice, dpar):
    """Return R0 if the in-plane vector dpar equals a lattice vector, else None."""
    frac = np.linalg.solve(lattice.basis.T, np.asarray(dpar, float))
    n = np.round(frac)
    if np.max(np.abs(frac - n)) < 1e-9:
        return n @ lattice.basis
    return None


def bloch_free_green(k_par, r, r_prime, omega, lattice, ewald=EwaldParams()):
    """Bloch-periodic free-space Green tensor, 3x3 complex (nm^-1)."""
    dyad, _ = _free_blocks(k_par, r, r_prime, omega, lattice, ewald)
    return dyad


def bloch_free_curl(k_par, r, r_prime, omega, lattice, ewald=EwaldParams()):
    """Bloch-periodic curl block C = curl_r sum_R e^{i k_par.R} G0(r, r'+R)."""
    _, curl = _free_blocks(k_par, r, r_prime, omega, lattice, ewald)
    return curl


def _free_blocks(k_par, r, r_prime, omega, lattice, ewald):
    """(G, C) blocks of the Bloch free sum; C = curl of the scalar sum."""
    dr = np.asarray(r, float) - np.asarray(r_prime, float)
    if abs(dr[2]) < 1e-12 and _lattice_offset(lattice, dr[:2]) is not None:
        raise SingularityError(
            "points coincide modulo the lattice; use regularized_site_sum")
    dyad, grad = _engine(k_par, dr, omega, lattice, ewald)
    return dyad, _cross_matrix(grad)


def regularized_site_sum(k_par, omega, lattice, site=None, ewald=EwaldParams()):
    """Self-site lattice sum with the real divergent part removed.

    S = sum_{R != 0} e^{i k_par.R} G0(-R) + i (k/6 pi) I.  Independent of the
    site position (kept in the signature for call-site clarity).
    """
    S_EE, _ = _site_blocks(k_par, omega, lattice, ewald)
    return S_EE


def _site_blocks(k_par, omega, lattice, ewald):
    """(S_EE, S_EM): regularized dyadic and curl self-site sums."""
    k = wavenumber(omega)
    E = _splitting(lattice, k, ewald)
    dyad, grad = _engine(k_par, np.zeros(3), omega, lattice, ewald,
                         skip_origin=True)
    comp = _complement_constant(k, E)
    S_EE = dyad - comp * np.eye(3) + 1j * (k / (6 * np.pi)) * np.eye(3)
    return S_EE, _cross_matrix(grad)


def validate_scatterers(lattice, scatterers):
    """Reject overlapping spheres (within a cell and across images)."""
    scatterers = tuple(scatterers)
    shifts = [n1 * np.asarray(lattice.a1) + n2 * np.asarray(lattice.a2)
              for n1 in (-1, 0, 1) for n2 in (-1, 0, 1)]
    for i, si in enumerate(scatterers):
        for j, sj in enumerate(scatterers):
            for shift in shifts:
                if i == j and np.linalg.norm(shift) < 1e-12:
                    continue
                d = (np.asarray(si.position) - np.asarray(sj.position)
                     - np.array([shift[0], shift[1], 0.0]))
                if np.linalg.norm(d) <= si.radius + sj.radius:
                    raise DomainError("scatterer spheres overlap")
    return scatterers


def _polarizability_blocks(scatterers, omega):
    """Block-diagonal inverse polarizability, 6N x 6N."""
    n = len(scatterers)
    inv_alpha = np.zeros((6 * n, 6 * n), complex)
    for s, sc in enumerate(scatterers):
        pol = mie_dipole_polarizabilities(sc.material, sc.radius, omega)
        inv_alpha[6 * s:6 * s + 3, 6 * s:6 * s + 3] = np.eye(3) / pol.alpha_E
        inv_alpha[6 * s + 3:6 * s + 6, 6 * s + 3:6 * s + 6] = np.eye(3) / pol.alpha_M
    return inv_alpha


def _interaction_6x6(G, C, k):
    """Fields (E, H~) at one point from a unit (u, m~) source at another."""
    W = np.zeros((6, 6), complex)
    W[:3, :3] = k * k * G
    W[3:, 3:] = k * k * G
    W[:3, 3:] = 1j * k * C
    W[3:, :3] = -1j * k * C
    return W


def effective_polarizability(k_par, omega, scatterers, lattice, ewald=EwaldParams()):
    """Dressed polarizability alpha_eff = (alpha^-1 - S6)^-1, 6N x 6N.

    S6 couples all dipoles in the cell through the regularized self-site sum
    (diagonal blocks) and full Bloch sums (off-diagonal blocks), electric and
    magnetic degrees of freedom included.
    """
    scatterers = validate_scatterers(lattice, scatterers)
    n = len(scatterers)
    if n == 0:
        raise DomainError("no scatterers")
    k = wavenumber(omega)

    S6 = np.zeros((6 * n, 6 * n), complex)
    S_EE, S_EM = _site_blocks(k_par, omega, lattice, ewald)
    # dressing couples a dipole to the *other* sites only: the i k/(6 pi)
    # self-radiation term lives in Im(1/alpha) already (optical theorem)
    S_dress = S_EE - 1j * (k / (6 * np.pi)) * np.eye(3)
    W_self = _interaction_6x6(S_dress, S_EM, k)
    for s in range(n):
        S6[6 * s:6 * s + 6, 6 * s:6 * s + 6] = W_self
    for s in range(n):
        for t in range(n):
            if s == t:
                continue
            dr = np.asarray(scatterers[s].position) - np.asarray(scatterers[t].position)
            G, C = _free_blocks_raw(k_par, dr, omega, lattice, ewald)
            S6[6 * s:6 * s + 6, 6 * t:6 * t + 6] = _interaction_6x6(G, C, k)

    inv_alpha = _polarizability_blocks(scatterers, omega)
    mat = inv_alpha - S6
    cond = np.linalg.cond(mat)
    if cond > 1e12:
        import warnings
        warnings.warn(f"near-singular effective polarizability, cond={cond:.2e}",
                      RuntimeWarning, stacklevel=2)
    return np.linalg.inv(mat)


def _free_blocks_raw(k_par, dr, omega, lattice, ewald):
    """(G, C) at a displacement dr (no coincidence bookkeeping)."""
    dyad, grad = _engine(k_par, dr, omega, lattice, ewald)
    return dyad, _cross_matrix(grad)


def _check_outside(lattice, scatterers, r):
    r = np.asarray(r, float)
    for sc in scatterers:
        d = r - np.asarray(sc.position)
        frac = np.linalg.solve(lattice.basis.T, d[:2])
        frac -= np.round(frac)
        for n1 in (-1, 0, 1):
            for n2 in (-1, 0, 1):
                shift = (frac + [n1, n2]) @ lattice.basis
                if np.sqrt(np.sum(shift**2) + d[2] ** 2) < sc.radius:
                    raise DomainError("point inside a scatterer sphere")


def _rows_cols(k_par, r, omega, scatterers, lattice, ewald):
    """Observation rows [G, (i/k)C] and source columns [G; -(i/k)C] per site."""
    k = wavenumber(omega)
    rows, cols = [], []
    for sc in scatterers:
        dr = np.asarray(r, float) - np.asarray(sc.position)
        G, C = _free_blocks_raw(k_par, dr, omega, lattice, ewald)
        row = np.zeros((3, 6), complex)
        row[:, :3] = G
        row[:, 3:] = (1j / k) * C
        rows.append(row)
        # source at r seen from the site: reversed displacement
        Gs, Cs = _free_blocks_raw(k_par, -dr, omega, lattice, ewald)
        col = np.zeros((6, 3), complex)
        col[:3, :] = Gs
        col[3:, :] = -(1j / k) * Cs
        cols.append(col)
    return rows, cols


def scattered_green(k_par, r, r_prime, omega, scatterers, lattice,
                    ewald=EwaldParams(), alpha_eff=None):
    """Scattered part of the Bloch Green tensor through the dressed dipoles."""
    scatterers = tuple(scatterers)
    if not scatterers:
        return np.zeros((3, 3), complex)
    k = wavenumber(omega)
    if alpha_eff is None:
        alpha_eff = effective_polarizability(k_par, omega, scatterers, lattice, ewald)
    rows, _ = _rows_cols(k_par, r, omega, scatterers, lattice, ewald)
    _, cols = _rows_cols(k_par, r_prime, omega, scatterers, lattice, ewald)
    n = len(scatterers)
    row = np.hstack(rows)
    col = np.vstack(cols)
    return row @ (k * k * alpha_eff) @ col


def bloch_total_green(k_par, r, r_prime, omega, scatterers, lattice,
                      ewald=EwaldParams(), alpha_eff=None):
    """Total Bloch Green tensor G0 + scattered part, 3x3 complex."""
    scatterers = tuple(scatterers)
    _check_outside(lattice, scatterers, r)
    _check_outside(lattice, scatterers, r_prime)
    G = bloch_free_green(k_par, r, r_prime, omega, lattice, ewald)
    if scatterers:
        G = G + scattered_green(k_par, r, r_prime, omega, scatterers, lattice,
                                ewald, alpha_eff)
    return G


def anti_hermitian_part(k_par, r, r_prime, omega, scatterers=(),
                        lattice=None, ewald=EwaldParams(), alpha_eff=None):
    """G_AH = [G(k, r, r') - G(k, r', r)^dagger] / 2i, coincidence-safe.

    When r and r' coincide modulo the lattice (same height), the divergent
    real free-space self part cancels analytically and the regularized
    self-site sum is used for the free contribution.
    """
    if lattice is None:
        raise GreensError("lattice required")
    scatterers = tuple(scatterers)
    r = np.asarray(r, float)
    rp = np.asarray(r_prime, float)
    dr = r - rp
    R0 = _lattice_offset(lattice, dr[:2]) if abs(dr[2]) < 1e-12 else None

    if R0 is not None:
        kpar = np.asarray(k_par, float)
        S_EE = regularized_site_sum(k_par, omega, lattice, ewald=ewald)
        phase = np.exp(1j * (kpar @ R0))
        fwd = phase * S_EE
        bwd = np.conj(phase) * S_EE
        if scatterers:
            _check_outside(lattice, scatterers, r)
            _check_outside(lattice, scatterers, rp)
            if alpha_eff is None:
                alpha_eff = effective_polarizability(k_par, omega, scatterers,
                                                     lattice, ewald)
            fwd = fwd + scattered_green(k_par, r, rp, omega, scatterers,
                                        lattice, ewald, alpha_eff)
            bwd = bwd + scattered_green(k_par, rp, r, omega, scatterers,
                                        lattice, ewald, alpha_eff)
        return (fwd - bwd.conj().T) / 2j

    fwd = bloch_total_green(k_par, r, rp, omega, scatterers, lattice, ewald,
                            alpha_eff)
    bwd = bloch_total_green(k_par, rp, r, omega, scatterers, lattice, ewald,
                            alpha_eff)
    return (fwd - bwd.conj().T) / 2j
