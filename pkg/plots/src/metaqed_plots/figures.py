"""The five figure kinds, built from loaded tables only.

Each builder returns a matplotlib Figure; ``save`` writes it with pinned
fonts and stripped volatile metadata so identical inputs give identical
bytes.  Grids with a single row or column fall back to line plots instead
of degenerate heatmaps.
"""

import os
import re

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
from matplotlib import rc_context  # noqa: E402
from matplotlib.colors import LogNorm, Normalize  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from .tables import PlotDataError, SchemaMismatch, diagonal_trace  # noqa: E402
from .tables import path_tick_labels, path_vertices, pivot  # noqa: E402

_DET_RC = {"svg.hashsalt": "metaqed-plots", "font.family": "DejaVu Sans"}

_UNITS = {"ev": "eV", "invnm": "1/nm", "nm2fs": "nm$^2$ fs",
          "invnm2fs": "1/(nm$^2$ fs)"}


def unit_text(column):
    """Axis unit derived from a column-name suffix, or '' if unitless."""
    tail = column.rsplit("_", 1)[-1]
    return _UNITS.get(tail, "")


def save(fig, out, dpi=150):
    """Render to PNG or SVG by extension; temp-then-rename, no partials."""
    out = os.fspath(out)
    ext = os.path.splitext(out)[1].lower().lstrip(".")
    if ext not in ("png", "svg"):
        raise PlotDataError(f"{out}: unsupported format '{ext}'"
                            " (png and svg only)")
    # the svg backend stamps the creation date unless told not to
    metadata = {"Date": None} if ext == "svg" else None
    tmp = out + ".tmp"
    try:
        with rc_context(_DET_RC):
            fig.savefig(tmp, format=ext, dpi=dpi, metadata=metadata)
        os.replace(tmp, out)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _axes(ylabel="photon energy (eV)"):
    fig = Figure(figsize=(6.0, 4.0), constrained_layout=True)
    ax = fig.add_subplot()
    ax.set_xlabel("path arclength (1/nm)")
    ax.set_ylabel(ylabel)
    return fig, ax


def _color_norm(z, log, vmin, vmax):
    finite = z[np.isfinite(z)]
    if not log:
        return Normalize(vmin=vmin, vmax=vmax)
    pos = finite[finite > 0.0]
    if pos.size == 0:
        raise PlotDataError("log color scale asked for on all-nonpositive"
                            " data; pass a linear scale")
    top = vmax if vmax is not None else float(pos.max())
    # keep at most 10 decades, the interesting structure lives up top
    lo = vmin if vmin is not None else max(float(pos.min()), top * 1e-10)
    return LogNorm(vmin=lo, vmax=top)


def _heatmap(ax, grid, label, log, vmin, vmax):
    """pcolormesh on a full grid, line fallback on a degenerate one.

    Returns True when a quadmesh was drawn (so overlays make sense).
    """
    nk, nw = grid.z.shape
    if nk > 1 and nw > 1:
        norm = _color_norm(grid.z, log, vmin, vmax)
        z = np.ma.masked_invalid(grid.z.T)
        pc = ax.pcolormesh(grid.x, grid.y, z, shading="nearest", norm=norm)
        ax.figure.colorbar(pc, ax=ax, label=label)
        ax.set_xlim(grid.x.min(), grid.x.max())
        ax.set_ylim(grid.y.min(), grid.y.max())
        return True
    # single-k or single-frequency table: draw the one cut we have
    if nw > 1:
        ax.plot(grid.y, grid.z[0], marker=".", lw=1.0)
        ax.set_xlabel(ax.get_ylabel())
    else:
        ax.plot(grid.x, grid.z[:, 0], marker=".", lw=1.0)
    ax.set_ylabel(label)
    if log:
        ax.set_yscale("log")
    return False


def _symmetry_ticks(ax, grid, manifest):
    labels = path_tick_labels(manifest)
    if labels is None:
        return
    idx = path_vertices(grid)
    if len(idx) != len(labels):
        return
    ax.set_xticks([grid.x[i] for i in idx], labels)
    ax.set_xlabel("")


def _dashed_overlay(ax, x, ys, color="w"):
    for y in ys:
        ax.plot(x, y, ls="--", lw=1.0, color=color)


def spectral_map(table, manifest=None, overlay=None, component=None,
                 log=True, vmin=None, vmax=None):
    """Heatmap of the spectral density over the scanned k path.

    component selects one diagonal entry; the default sums them all.
    overlay: a branch table (energy_*_ev columns) drawn as dashed lines.
    """
    if component is None:
        values, _ = diagonal_trace(table)
        label = f"tr J ({unit_text('j_ev')})"
    else:
        name = f"j{component}_{component}_re_ev"
        if name not in table.names:
            raise SchemaMismatch(table.path, [name], table.names)
        values = table[name]
        label = f"J_{component}{component} ({unit_text(name)})"
    grid = pivot(table, values)
    fig, ax = _axes()
    drawn = _heatmap(ax, grid, label, log, vmin, vmax)
    if overlay is not None and drawn:
        _dashed_overlay(ax, overlay["arclength_invnm"],
                        [overlay[n] for n in overlay.family(r"energy_\d+_ev")])
    if drawn:
        _symmetry_ticks(ax, grid, manifest)
    return fig


def spectrum_cuts(table, k_indices=(0,), overlay=None, logy=False):
    """Spectral density against frequency at chosen k cells.

    overlay: a fitted-curve table; its jmod_*_ev model columns are drawn
    dashed over the sampled trace.
    """
    values, _ = diagonal_trace(table)
    kid = table["k_index"].astype(int)
    have = np.unique(kid)
    fig, ax = _axes(f"tr J ({unit_text('j_ev')})")
    ax.set_xlabel("photon energy (eV)")
    for k in k_indices:
        if k not in have:
            raise PlotDataError(
                f"{table.path}: no rows with k_index={k};"
                f" file covers {have.min()}..{have.max()}")
        sel = kid == k
        order = np.argsort(table["omega_ev"][sel])
        ax.plot(table["omega_ev"][sel][order], values[sel][order],
                marker=".", ms=3, lw=1.0, label=f"k cell {k}")
    if overlay is not None:
        w = overlay["omega_ev"]
        for name in overlay.family(r"jmod_\d+_ev"):
            n = re.fullmatch(r"jmod_(\d+)_ev", name).group(1)
            ax.plot(w, overlay[name], ls="--", lw=1.2,
                    label=f"{n}-mode model")
    if logy:
        ax.set_yscale("log")
    ax.legend()
    return fig


def field_map(table, manifest=None, overlay=None, component=0, log=False,
              vmin=None, vmax=None):
    """Driven local-field enhancement map with optional branch overlay.

    The dashed overlay lines are the polariton branches; an anticrossing
    in the map should thread between them.
    """
    name = f"enhancement_{component}"
    if name not in table.names:
        raise SchemaMismatch(table.path, [name], table.names)
    grid = pivot(table, name)
    fig, ax = _axes("drive energy (eV)")
    drawn = _heatmap(ax, grid, "|E_loc| / |E_in|", log, vmin, vmax)
    if overlay is not None and drawn:
        _dashed_overlay(ax, overlay["arclength_invnm"],
                        [overlay[n] for n in overlay.family(r"energy_\d+_ev")])
    if drawn:
        _symmetry_ticks(ax, grid, manifest)
    return fig


def coupling_dispersion(table):
    """Fitted per-mode linewidths and couplings along the k path, log y.

    Rows with a converged flag of 0 are blanked rather than dropped so the
    x axis keeps the scan geometry.
    """
    kappas = table.family(r"kappa_\d+_ev")
    gs = table.family(r"g_abs_\d+_\d+_ev")
    if not kappas or not gs:
        raise SchemaMismatch(table.path, [r"~kappa_\d+_ev",
                                          r"~g_abs_\d+_\d+_ev"], table.names)
    bad = None
    if "converged" in table.names:
        bad = table["converged"] == 0
    x = table["arclength_invnm"]
    fig, ax = _axes(f"rate ({unit_text('kappa_0_ev')})")
    for name in kappas + gs:
        y = table[name].copy()
        if bad is not None:
            y[bad] = np.nan
        m = re.fullmatch(r"kappa_(\d+)_ev", name)
        if m:
            lab = f"kappa_{m.group(1)}"
        else:
            m = re.fullmatch(r"g_abs_(\d+)_(\d+)_ev", name)
            lab = f"|g_{m.group(1)}{m.group(2)}|"
        ax.plot(x, y, marker=".", ms=3, lw=1.0, label=lab)
    ax.set_yscale("log")
    ax.legend()
    return fig


def pair_map(table, manifest=None, overlay=None, quantity="gamma_ev",
             log=True, vmin=None, vmax=None):
    """Pair-emission map over (k cell, drive frequency).

    overlay: the locus table; its locus_*_*_ev curves (the frequency
    matching conditions) are drawn as white dashed lines, and the manifest
    drive-cell branch energies as horizontal ones.
    """
    if quantity not in table.names:
        raise SchemaMismatch(table.path, [quantity], table.names)
    grid = pivot(table, quantity, ykey="omega_l_ev")
    fig, ax = _axes("drive energy (eV)")
    stem, _, tail = quantity.rpartition("_")
    label = stem if stem and tail in _UNITS else quantity
    unit = unit_text(quantity)
    drawn = _heatmap(ax, grid, f"{label} ({unit})" if unit else label,
                     log, vmin, vmax)
    if overlay is not None and drawn:
        _dashed_overlay(ax, overlay["arclength_invnm"],
                        [overlay[n]
                         for n in overlay.family(r"locus_\d+_\d+_ev")])
    if drawn and manifest:
        for w in (manifest.get("diagnostics", {})
                  .get("branches_at_drive_ev") or ()):
            ax.axhline(float(w), ls="--", lw=0.8, color="w")
    return fig
