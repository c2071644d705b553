"""Quick-look figures rendered next to the delimited outputs.

These are diagnostic renderings produced straight from the in-memory run
results when a run is invoked with reporting enabled; polished figure
production from the CSV files lives in a separate package.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _log_trace(J):
    tr = np.einsum("kwhh->kw", J).real
    floor = 1e-300
    return np.log10(np.clip(tr, floor, None))


def spectral_density_figure(scan, path):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    z = _log_trace(scan.J)
    pc = ax.pcolormesh(scan.arclength, scan.omegas, z.T, shading="nearest")
    fig.colorbar(pc, ax=ax, label="log10 tr J (eV)")
    ax.set_xlabel("path arclength (1/nm)")
    ax.set_ylabel("photon energy (eV)")
    _save(fig, path)


def fit_curve_figure(omegas, data_trace, curves, path):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(omegas, data_trace, "k.", ms=3, label="tr J")
    for n in sorted(curves):
        ax.plot(omegas, curves[n], label=f"{n}-mode model")
    ax.set_xlabel("photon energy (eV)")
    ax.set_ylabel("tr J (eV)")
    ax.legend()
    _save(fig, path)


def fit_path_figure(fits, path):
    s = np.array([r.arclength for r in fits])
    kap = np.array([r.model.kappa[0] if r.model is not None else np.nan
                    for r in fits])
    g = np.array([abs(r.model.g[0, 0]) if r.model is not None else np.nan
                  for r in fits])
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.semilogy(s, kap, label="kappa_0")
    ax.semilogy(s, g, label="|g_00|")
    ax.set_xlabel("path arclength (1/nm)")
    ax.set_ylabel("rate (eV)")
    ax.legend()
    _save(fig, path)


def dispersion_figure(disp, path):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for m in range(disp.eigenvalues.shape[1]):
        ax.plot(disp.arclength, disp.energies[:, m], label=f"branch {m}")
    ax.set_xlabel("path arclength (1/nm)")
    ax.set_ylabel("branch energy (eV)")
    ax.legend()
    _save(fig, path)


def local_field_figure(mp, disp, path):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    z = np.where(np.isfinite(mp.values[:, :, 0]), mp.values[:, :, 0], np.nan)
    pc = ax.pcolormesh(mp.arclength, mp.omegas, z.T, shading="nearest")
    fig.colorbar(pc, ax=ax, label="|E_loc| / |E_free|")
    for m in range(disp.eigenvalues.shape[1]):
        ax.plot(disp.arclength, disp.energies[:, m], "w--", lw=1)
    ax.set_xlabel("path arclength (1/nm)")
    ax.set_ylabel("drive energy (eV)")
    ax.set_ylim(mp.omegas.min(), mp.omegas.max())
    _save(fig, path)


def pairgen_figure(res, path):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    z = np.where(np.isfinite(res.rate_over_flux2), res.rate_over_flux2,
                 np.nan)
    pc = ax.pcolormesh(res.arclength, res.omegas, z, shading="nearest")
    fig.colorbar(pc, ax=ax, label="rate / flux^2 (nm^2 fs)")
    for q in range(res.pair_locus.shape[1]):
        ax.plot(res.arclength, res.pair_locus[:, q], "w--", lw=1)
    ax.set_xlabel("|k| along the scan ray (1/nm)")
    ax.set_ylabel("drive energy (eV)")
    ax.set_ylim(res.omegas.min(), res.omegas.max())
    _save(fig, path)
