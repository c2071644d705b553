"""Few-mode representation of spectral densities: coupled lossy modes with
emitter couplings, nonlinear fitting, mode-count selection, and continuation
fits along band paths.

The model is a set of N_M photonic modes with real-symmetric mode matrix
omega_ij, per-mode decay kappa_i > 0 and complex couplings g_ih to N_E
emitters.  With H~ = omega - i diag(kappa)/2 the model spectral density is

    J_mod(w)[h,h'] = (1/pi) * sum_ij g*_ih Im[(H~ - w I)^-1]_ij g_jh',

Hermitian PSD for all real w because Im R = R diag(kappa/2) R^dag.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from .greens import DomainError

KAPPA_FLOOR = 1e-9


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class FewModeModel:
    """Lossy-mode model parameters (energies in eV)."""

    mode_matrix: np.ndarray
    kappa: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.mode_matrix, dtype=float)
        k = np.asarray(self.kappa, dtype=float)
        g = np.asarray(self.g, dtype=complex)
        n = len(k)
        if w.shape != (n, n):
            raise DomainError("mode_matrix must be N_M x N_M")
        if not np.allclose(w, w.T, atol=1e-12):
            raise DomainError("mode_matrix must be symmetric")
        if np.any(k <= 0):
            raise DomainError("mode decay rates must be positive")
        if g.ndim != 2 or g.shape[0] != n:
            raise DomainError("couplings must be N_M x N_E")
        object.__setattr__(self, "mode_matrix", w)
        object.__setattr__(self, "kappa", k)
        object.__setattr__(self, "g", g)

    @property
    def n_modes(self):
        return len(self.kappa)

    @property
    def n_emitters(self):
        return self.g.shape[1]

    def htilde(self):
        """Non-Hermitian mode matrix H~ = omega - i diag(kappa)/2."""
        return self.mode_matrix - 0.5j * np.diag(self.kappa)


@dataclass(frozen=True)
class FitReport:
    residual: float
    max_error: float
    n_modes: int
    iterations: int
    converged: bool


def resolvent_spectral_density(htilde, g, omega):
    """J(w) = (1/pi) g^dag [(R - R^dag)/2i] g for arbitrary H~ and g.

    Used for gauge tests; model_spectral_density wraps it for valid models.
    """
    R = np.linalg.inv(htilde - omega * np.eye(len(htilde)))
    imR = (R - R.conj().T) / 2j
    J = g.conj().T @ imR @ g / np.pi
    return (J + J.conj().T) / 2


def model_spectral_density(model, omega):
    """Model spectral density J_mod(omega), N_E x N_E complex Hermitian, eV."""
    return resolvent_spectral_density(model.htilde(), model.g, omega)


def _model_grid(model, omegas):
    """J_mod stacked over a frequency grid: (N_w, N_E, N_E)."""
    omegas = np.asarray(omegas, float)
    ht = model.htilde()
    n = model.n_modes
    A = ht[None, :, :] - omegas[:, None, None] * np.eye(n)[None, :, :]
    R = np.linalg.inv(A)
    imR = (R - np.conj(np.swapaxes(R, 1, 2))) / 2j
    g = model.g
    J = np.einsum("ih,wij,jk->whk", g.conj(), imR, g) / np.pi
    return (J + np.conj(np.swapaxes(J, 1, 2))) / 2


# ---------------------------------------------------------------------------
# parameter packing


def _n_params(n_modes, n_emitters):
    return n_modes * (n_modes + 1) // 2 + n_modes + 2 * n_modes * n_emitters - 1


def _pack(model):
    n, ne = model.n_modes, model.n_emitters
    iu = np.triu_indices(n)
    g = model.g.ravel()
    # gauge: global phase rotated so the first coupling is real
    phase = np.exp(-1j * np.angle(g[0])) if abs(g[0]) > 0 else 1.0
    g = g * phase
    tail = np.empty(2 * (n * ne - 1))
    tail[0::2] = g[1:].real
    tail[1::2] = g[1:].imag
    return np.concatenate([model.mode_matrix[iu],
                           np.log(np.maximum(model.kappa, KAPPA_FLOOR)),
                           [g[0].real], tail])


def _unpack(x, n_modes, n_emitters):
    n, ne = n_modes, n_emitters
    ntri = n * (n + 1) // 2
    w = np.zeros((n, n))
    iu = np.triu_indices(n)
    w[iu] = x[:ntri]
    w = w + np.triu(w, 1).T
    kappa = np.exp(x[ntri:ntri + n])
    gx = x[ntri + n:]
    g = np.empty(n * ne, complex)
    g[0] = gx[0]
    g[1:] = gx[1::2] + 1j * gx[2::2]
    return FewModeModel(w, np.maximum(kappa, KAPPA_FLOOR),
                        g.reshape(n, ne))


def _sample_arrays(samples):
    omegas = np.asarray([float(s[0]) for s in samples])
    J = np.asarray([np.atleast_2d(np.asarray(s[1], complex)) for s in samples])
    if len(omegas) == 0:
        raise DomainError("no samples")
    if len(np.unique(np.round(omegas, 15))) < len(omegas):
        raise DomainError("degenerate frequency grid")
    return omegas, J


def _residual_vector(model, omegas, J, norm):
    d = _model_grid(model, omegas) - J
    return np.concatenate([d.real.reshape(-1), d.imag.reshape(-1)]) / norm


def _misfit(model, omegas, J):
    norm = np.sqrt(np.sum(np.abs(J) ** 2))
    r = _residual_vector(model, omegas, J, norm)
    return float(np.sum(r * r))


def _halfmax_width(oms, trs, j):
    """Full width at half maximum around sample j on a nonuniform grid."""
    half = trs[j] / 2
    left = right = None
    for q in range(j - 1, -1, -1):
        if trs[q] <= half:
            d = trs[q + 1] - trs[q]
            f = (half - trs[q]) / d if d > 0 else 0.0
            left = oms[q] + f * (oms[q + 1] - oms[q])
            break
    for q in range(j + 1, len(trs)):
        if trs[q] <= half:
            d = trs[q - 1] - trs[q]
            f = (half - trs[q]) / d if d > 0 else 0.0
            right = oms[q] + f * (oms[q - 1] - oms[q])
            break
    if left is None and right is None:
        return None
    if left is None:
        return 2.0 * (right - oms[j])
    if right is None:
        return 2.0 * (oms[j] - left)
    return right - left


def initial_model_from_peaks(omegas, J, n_modes):
    """Heuristic start: trace peaks by prominence -> (omega_i, kappa_i, |g|).

    Widths come from half-maximum crossings measured on the actual grid, so
    nonuniformly refined sample sets still give linewidth-accurate starts.
    """
    omegas = np.asarray(omegas, float)
    tr = np.einsum("whh->w", J).real
    tr = np.maximum(tr, 0.0)
    dw = np.median(np.diff(np.sort(omegas)))
    order = np.argsort(omegas)
    oms, trs = omegas[order], tr[order]
    idx, props = find_peaks(trs, prominence=1e-3 * (trs.max() + 1e-300))
    if len(idx) > 0:
        rank = np.argsort(props["prominences"])[::-1]
        idx = idx[rank]
    centers, kaps = [], []
    for i in idx[:n_modes]:
        fwhm = _halfmax_width(oms, trs, i)
        step = oms[min(i + 1, len(oms) - 1)] - oms[max(i - 1, 0)]
        if fwhm is None:
            fwhm = max(dw, 1e-6)
        centers.append(oms[i])
        kaps.append(max(fwhm, 0.5 * step, 1e-12))
    while len(centers) < n_modes:
        # fall back to spreading remaining modes across the window
        q = (len(centers) + 1) / (n_modes + 1)
        centers.append(float(oms[0] + q * (oms[-1] - oms[0])))
        kaps.append(max(0.1 * (oms[-1] - oms[0]), dw, 1e-6))
    ne = J.shape[1]
    g = np.zeros((n_modes, ne), complex)
    for m, (c, kap) in enumerate(zip(centers, kaps)):
        j = np.argmin(np.abs(oms - c))
        diag = np.clip(np.diagonal(J[order][j]).real, 0.0, None)
        g[m] = np.sqrt(diag * np.pi * kap / 2)
    return FewModeModel(np.diag(centers), np.array(kaps), g)


def fit_few_mode(samples, n_modes, init_strategy="peaks", tolerance=1e-6):
    """Least-squares fit of the lossy-mode model to (omega, J) samples.

    init_strategy: "peaks" or a FewModeModel used as the starting point.
    Returns (FewModeModel, FitReport); converged means the relative misfit
    sum ||J_mod - J||^2 / sum ||J||^2 is at or below tolerance.
    """
    omegas, J = _sample_arrays(samples)
    ne = J.shape[1]
    if n_modes < 1:
        raise DomainError("need at least one mode")
    if len(omegas) < 4 * _n_params(n_modes, ne):
        raise DomainError("too few samples for the parameter count")
    if isinstance(init_strategy, FewModeModel):
        start = init_strategy
        if start.n_modes != n_modes or start.n_emitters != ne:
            raise DomainError("initial model shape mismatch")
    elif init_strategy == "peaks":
        start = initial_model_from_peaks(omegas, J, n_modes)
    else:
        raise DomainError(f"unknown init strategy {init_strategy!r}")

    norm = np.sqrt(np.sum(np.abs(J) ** 2))
    if norm == 0:
        raise DomainError("all-zero samples")
    # fit with the frequency origin at the window center: mode-frequency
    # parameters then carry only the detuning, so finite-difference steps
    # (relative to parameter size) stay far below the narrowest linewidth
    shift = float(np.mean(omegas))
    eye = np.eye(n_modes)
    start = FewModeModel(start.mode_matrix - shift * eye, start.kappa, start.g)
    omegas_c = omegas - shift
    x0 = _pack(start)
    npar = len(x0)
    lo = np.full(npar, -np.inf)
    hi = np.full(npar, np.inf)
    ntri = n_modes * (n_modes + 1) // 2
    lo[ntri:ntri + n_modes] = np.log(KAPPA_FLOOR)
    x0 = np.clip(x0, lo, hi)

    def fun(x):
        return _residual_vector(_unpack(x, n_modes, ne), omegas_c, J, norm)

    res = least_squares(fun, x0, bounds=(lo, hi), method="trf",
                        max_nfev=500 * (npar + 1), xtol=1e-14, ftol=1e-14,
                        gtol=1e-12)
    fitted = _unpack(res.x, n_modes, ne)
    model = FewModeModel(fitted.mode_matrix + shift * eye, fitted.kappa,
                         fitted.g)
    residual = float(np.sum(res.fun ** 2))
    per_w = _model_grid(model, omegas) - J
    scale = norm / np.sqrt(len(omegas))
    max_err = float(np.max(np.sqrt(np.sum(np.abs(per_w) ** 2, axis=(1, 2))))
                    / scale)
    report = FitReport(residual=residual, max_error=max_err, n_modes=n_modes,
                       iterations=int(res.nfev),
                       converged=bool(residual <= tolerance))
    return model, report


def expanded_start(model, omegas, J):
    """One-mode-larger start seeded where the given model misfits worst.

    The extra mode sits at the frequency of the largest trace misfit with the
    misfit feature's half-maximum width and couplings sized so a lone line of
    that width reaches the missing diagonal height; everything else copies
    the input model.  An n-mode model always contains every (n-1)-mode
    optimum, so polishing from here can only improve on the smaller fit.
    """
    omegas = np.asarray(omegas, float)
    J = np.asarray(J, complex)
    order = np.argsort(omegas)
    oms = omegas[order]
    miss = J[order] - _model_grid(model, oms)
    tr = np.abs(np.einsum("whh->w", miss).real)
    i = int(np.argmax(tr))
    step = oms[min(i + 1, len(oms) - 1)] - oms[max(i - 1, 0)]
    fwhm = _halfmax_width(oms, tr, i)
    if fwhm is None:
        fwhm = oms[-1] - oms[0]
    kap_new = max(fwhm, 0.5 * step, KAPPA_FLOOR)
    diag = np.clip(np.diagonal(miss[i]).real, 0.0, None)
    g_new = np.sqrt(diag * np.pi * kap_new / 2)
    n = model.n_modes
    w = np.zeros((n + 1, n + 1))
    w[:n, :n] = model.mode_matrix
    w[n, n] = oms[i]
    return FewModeModel(w, np.append(model.kappa, kap_new),
                        np.vstack([model.g, g_new[None, :]]))


def fit_few_mode_grown(samples, n_modes, prev=None, tolerance=1e-6):
    """Fit n_modes starting from peaks and, when prev has fewer modes, from
    prev grown one misfit-seeded mode at a time; best residual wins."""
    candidates = []
    if prev is not None and prev.n_modes < n_modes:
        omegas, J = _sample_arrays(samples)
        start = prev
        for _ in range(n_modes - prev.n_modes):
            start = expanded_start(start, omegas, J)
        try:
            candidates.append(fit_few_mode(samples, n_modes, start,
                                           tolerance))
        except (DomainError, FitError, np.linalg.LinAlgError):
            pass
    try:
        candidates.append(fit_few_mode(samples, n_modes, "peaks", tolerance))
    except (DomainError, FitError, np.linalg.LinAlgError):
        if not candidates:
            raise
    return min(candidates, key=lambda mr: mr[1].residual)


def select_mode_count(samples, max_modes, tolerance=1e-6):
    """Smallest mode count whose fit converges; best-residual model otherwise."""
    if max_modes < 1:
        raise DomainError("max_modes must be >= 1")
    best = None
    prev = None
    for n in range(1, max_modes + 1):
        model, report = fit_few_mode_grown(samples, n, prev, tolerance)
        if report.converged:
            return model, report
        if best is None or report.residual < best[1].residual:
            best = (model, report)
        prev = model
    return best


@dataclass(frozen=True)
class PathFitRow:
    k_par: tuple
    arclength: float
    model: FewModeModel | None
    report: FitReport | None


def _row_samples(scan, i, window=None):
    good = scan.error_codes[i] == 0
    omegas = scan.omegas[good]
    J = scan.J[i][good]
    if window is not None:
        lo, hi = window
        sel = (omegas >= lo) & (omegas <= hi)
        omegas, J = omegas[sel], J[sel]
    return list(zip(omegas, J))


def fit_along_path(scan, n_modes, tolerance=1e-6, continuation=True,
                   window_halfwidth=None, max_modes=4):
    """Fit each k point of a band scan; chain fits by continuation.

    n_modes: integer, or "auto" to pick the count at the first fittable k
    via select_mode_count and reuse it along the path.  window_halfwidth
    restricts each row's samples to peak(tr J) +- halfwidth before fitting.
    Rows whose cells are all poisoned (or that fail outright) yield model
    None rather than aborting the path.
    """
    rows = []
    prev = None
    count = None if n_modes == "auto" else int(n_modes)
    for i in range(len(scan.k_points)):
        window = None
        if window_halfwidth is not None:
            good = scan.error_codes[i] == 0
            if np.any(good):
                tr = np.einsum("whh->w", scan.J[i][good]).real
                center = scan.omegas[good][int(np.argmax(tr))]
                window = (center - window_halfwidth, center + window_halfwidth)
        samples = _row_samples(scan, i, window)
        k_par = tuple(scan.k_points[i])
        s = float(scan.arclength[i])
        if len(samples) == 0:
            rows.append(PathFitRow(k_par, s, None, None))
            continue
        try:
            if count is None:
                model, report = select_mode_count(samples, max_modes,
                                                  tolerance)
                count = report.n_modes
            else:
                cands = []
                if continuation and prev is not None:
                    cands.append(fit_few_mode(samples, count, prev, tolerance))
                cands.append(fit_few_mode(samples, count, "peaks", tolerance))
                model, report = min(cands, key=lambda mr: mr[1].residual)
        except (DomainError, FitError, np.linalg.LinAlgError):
            rows.append(PathFitRow(k_par, s, None, None))
            continue
        prev = model
        rows.append(PathFitRow(k_par, s, model, report))
    return rows
