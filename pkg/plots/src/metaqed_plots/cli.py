"""Figure rendering CLI.

Five figure kinds, each reading the scan CLI's delimited outputs:

    plot spectral-map  --in spectral_density.csv [--overlay dispersion.csv]
    plot spectrum-cut  --in spectral_density.csv [--overlay fit_curve.csv]
    plot field-map     --in local_field.csv      [--overlay branches.csv]
    plot coupling-dispersion --in fit_path.csv
    plot pair-map      --in pairgen.csv          [--overlay pair_locus.csv]

Output format follows the --out extension (png or svg).  Exit codes:
0 success, 1 bad input (missing file, schema mismatch, empty table).
"""

import click

from . import figures
from .tables import PlotDataError, load_manifest, load_table

_BRANCH_SCHEMA = dict(required=("arclength_invnm",),
                      families=(r"energy_\d+_ev",))


def _io_options(fn):
    opts = [
        click.option("--in", "inp", required=True, metavar="CSV",
                     help="Input table written by the scan CLI."),
        click.option("--out", required=True, metavar="IMG",
                     help="Output image path (.png or .svg)."),
        click.option("--manifest", default=None, metavar="JSON",
                     help="Run manifest (default: manifest.json next to"
                          " the input)."),
        click.option("--dpi", type=int, default=150, show_default=True),
        click.option("--xlim", type=float, nargs=2, default=None,
                     help="X axis range."),
        click.option("--ylim", type=float, nargs=2, default=None,
                     help="Y axis range."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _scale_options(fn):
    opts = [
        click.option("--linear", is_flag=True,
                     help="Linear color scale instead of log."),
        click.option("--vmin", type=float, default=None),
        click.option("--vmax", type=float, default=None),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _finish(fig, out, dpi, xlim, ylim):
    ax = fig.axes[0]
    if xlim:
        ax.set_xlim(*xlim)
    if ylim:
        ax.set_ylim(*ylim)
    figures.save(fig, out, dpi=dpi)
    click.echo(f"wrote {out}")


def _run(build, out, dpi, xlim, ylim):
    try:
        _finish(build(), out, dpi, xlim, ylim)
    except PlotDataError as exc:
        click.echo(f"error: {exc}", err=True)
        raise SystemExit(1)
    raise SystemExit(0)


@click.group()
@click.version_option(package_name="metaqed-plots")
def main():
    """Render figures from scan CSV outputs; no physics is recomputed."""


@main.command("spectral-map")
@_io_options
@_scale_options
@click.option("--overlay", default=None, metavar="CSV",
              help="Branch table drawn as dashed lines.")
@click.option("--component", type=int, default=None,
              help="Diagonal entry to map (default: trace).")
def spectral_map_cmd(inp, out, manifest, dpi, xlim, ylim, linear, vmin,
                     vmax, overlay, component):
    """Spectral-density heatmap over the scanned k path."""

    def build():
        table = load_table(inp, required=("k_index", "arclength_invnm",
                                          "omega_ev"))
        over = (load_table(overlay, **_BRANCH_SCHEMA)
                if overlay else None)
        return figures.spectral_map(
            table, manifest=load_manifest(inp, manifest), overlay=over,
            component=component, log=not linear, vmin=vmin, vmax=vmax)

    _run(build, out, dpi, xlim, ylim)


@main.command("spectrum-cut")
@_io_options
@click.option("--k-index", "k_indices", type=int, multiple=True,
              help="k cell(s) to cut at (repeatable; default 0).")
@click.option("--overlay", default=None, metavar="CSV",
              help="Fitted-curve table; model columns drawn dashed.")
@click.option("--logy", is_flag=True, help="Log frequency response axis.")
def spectrum_cut_cmd(inp, out, manifest, dpi, xlim, ylim, k_indices,
                     overlay, logy):
    """Spectral density against frequency at chosen k cells."""

    def build():
        table = load_table(inp, required=("k_index", "omega_ev"))
        over = (load_table(overlay, required=("omega_ev",),
                           families=(r"jmod_\d+_ev",))
                if overlay else None)
        return figures.spectrum_cuts(table, k_indices=k_indices or (0,),
                                     overlay=over, logy=logy)

    _run(build, out, dpi, xlim, ylim)


@main.command("field-map")
@_io_options
@_scale_options
@click.option("--overlay", default=None, metavar="CSV",
              help="Branch table drawn as dashed polariton lines.")
@click.option("--component", type=int, default=0, show_default=True,
              help="Emitter site of the enhancement column.")
@click.option("--log", "log_color", is_flag=True,
              help="Log color scale (default linear for field maps).")
def field_map_cmd(inp, out, manifest, dpi, xlim, ylim, linear, vmin, vmax,
                  overlay, component, log_color):
    """Driven local-field map; dashed overlay shows the branches."""

    def build():
        table = load_table(inp, required=("k_index", "arclength_invnm",
                                          "omega_ev"),
                           families=(r"enhancement_\d+",))
        over = (load_table(overlay, **_BRANCH_SCHEMA)
                if overlay else None)
        return figures.field_map(
            table, manifest=load_manifest(inp, manifest), overlay=over,
            component=component, log=log_color and not linear,
            vmin=vmin, vmax=vmax)

    _run(build, out, dpi, xlim, ylim)


@main.command("coupling-dispersion")
@_io_options
def coupling_dispersion_cmd(inp, out, manifest, dpi, xlim, ylim):
    """Fitted linewidths and couplings along the k path."""

    def build():
        table = load_table(inp, required=("k_index", "arclength_invnm"),
                           families=(r"kappa_\d+_ev", r"g_abs_\d+_\d+_ev"))
        return figures.coupling_dispersion(table)

    _run(build, out, dpi, xlim, ylim)


@main.command("pair-map")
@_io_options
@_scale_options
@click.option("--overlay", default=None, metavar="CSV",
              help="Locus table; matching conditions drawn white dashed.")
@click.option("--quantity", default="gamma_ev", show_default=True,
              type=click.Choice(["gamma_ev", "rate_over_flux2_nm2fs"]),
              help="Column to map.")
def pair_map_cmd(inp, out, manifest, dpi, xlim, ylim, linear, vmin, vmax,
                 overlay, quantity):
    """Pair-emission map with frequency-matching overlays."""

    def build():
        table = load_table(inp, required=("k_index", "arclength_invnm",
                                          "omega_l_ev", quantity))
        over = (load_table(overlay, required=("arclength_invnm",),
                           families=(r"locus_\d+_\d+_ev",))
                if overlay else None)
        return figures.pair_map(
            table, manifest=load_manifest(inp, manifest), overlay=over,
            quantity=quantity, log=not linear, vmin=vmin, vmax=vmax)

    _run(build, out, dpi, xlim, ylim)


if __name__ == "__main__":
    main()
