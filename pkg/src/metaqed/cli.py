"""Command-line interface.

One TOML config file drives every workflow:

    metaqed spectral-density run.toml      J(k, omega) table over a k path
    metaqed fit run.toml [--along-path]    few-mode model at one k / every k
    metaqed dispersion run.toml            polariton branches along the path
    metaqed local-field run.toml           driven local-field map + branches
    metaqed pairgen run.toml               photon-pair rate map + loci

Exit codes: 0 success, 2 finished but some cells are poisoned (NaN rows in
the CSVs), 1 fatal error (schema violation, resume mismatch, bad geometry).
"""

import click

from .config import ConfigError, load_config
from .fewmode import FitError
from .greens import GreensError
from .lattice import GeometryError
from .runio import ResumeMismatch, RunContext, execute


def _common_options(fn):
    opts = [
        click.argument("config_arg", required=False, metavar="[CONFIG]"),
        click.option("--config", "config_opt", default=None,
                     help="Path to the TOML run config."),
        click.option("--out-dir", default=None,
                     help="Output directory (default: [output].dir)."),
        click.option("--threads", type=int, default=1, show_default=True,
                     help="Worker processes for row-parallel stages."),
        click.option("--seed", type=int, default=0, show_default=True,
                     help="Seed recorded in the manifest."),
        click.option("--resume", is_flag=True,
                     help="Reuse row checkpoints from an interrupted run."),
        click.option("--override", "overrides", multiple=True,
                     metavar="SECTION.KEY=VALUE",
                     help="Override a config key (repeatable)."),
        click.option("--report/--no-report", "report", default=None,
                     help="Render quick-look figures next to the CSVs."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _config_path(config_arg, config_opt):
    if config_arg and config_opt and config_arg != config_opt:
        raise ConfigError("config file given both positionally and via"
                          " --config; use one")
    path = config_opt or config_arg
    if not path:
        raise ConfigError("missing config file (pass it positionally or"
                          " via --config)")
    return path


def _dispatch(subcommand, config_arg, config_opt, out_dir, threads, seed,
              resume, overrides, report, along_path=False,
              extra_overrides=()):
    overrides = tuple(overrides) + tuple(extra_overrides)
    try:
        path = _config_path(config_arg, config_opt)
        cfg = load_config(path, overrides, subcommand)
        out = out_dir if out_dir is not None else cfg["output"]["dir"]
        rep = cfg["output"]["report"] if report is None else report
        ctx = RunContext(subcommand, cfg, out, threads=threads, seed=seed,
                         resume=resume, report=rep, overrides=overrides,
                         config_file=path, along_path=along_path)
        result = execute(ctx)
    except ResumeMismatch as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except (ConfigError, GeometryError, GreensError, FitError,
            OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    if result.no_op:
        click.echo("run already complete; nothing to do")
        return 0
    for w in result.warnings:
        click.echo(f"warning: {w}", err=True)
    for name in sorted(result.files):
        click.echo(f"wrote {result.files[name]}")
    for key in sorted(result.diagnostics):
        click.echo(f"{key} = {result.diagnostics[key]}")
    return 2 if result.poisoned else 0


@click.group()
@click.version_option(package_name="metaqed")
def main():
    """Momentum-resolved simulator for emitter arrays on nanostructured
    lattices: spectral densities, few-mode fits, polaritons, photon pairs."""


@main.command("spectral-density")
@_common_options
def spectral_density_cmd(**kw):
    """Scan J(k, omega) over the configured k path and frequency grid."""
    raise SystemExit(_dispatch("spectral-density", **kw))


@main.command("fit")
@click.option("--along-path", is_flag=True,
              help="Fit every k row instead of the single [fit].k_index.")
@_common_options
def fit_cmd(along_path, **kw):
    """Fit the few-mode model to the scanned spectral density."""
    raise SystemExit(_dispatch("fit", along_path=along_path, **kw))


@main.command("dispersion")
@_common_options
def dispersion_cmd(**kw):
    """Polariton branches of the fitted models along the k path."""
    raise SystemExit(_dispatch("dispersion", **kw))


@main.command("local-field")
@_common_options
def local_field_cmd(**kw):
    """Driven local-field map over the k path and frequency grid."""
    raise SystemExit(_dispatch("local-field", **kw))


@main.command("pairgen")
@click.option("--kL", "k_l", type=float, default=None,
              help="Drive momentum in units of pi/a (overrides config).")
@click.option("--Vd-fraction", "vd_fraction", type=float, default=None,
              help="Detection volume as a fraction of the zone volume.")
@click.option("--Ein", "ein", type=float, default=None,
              help="Drive field amplitude in V/nm (overrides config).")
@_common_options
def pairgen_cmd(k_l, vd_fraction, ein, **kw):
    """Photon-pair generation rate map under coherent driving."""
    extra = []
    if k_l is not None:
        extra.append(f"pairgen.k_l_pi_over_a={k_l!r}")
    if vd_fraction is not None:
        extra.append(f"pairgen.v_d_fraction={vd_fraction!r}")
    if ein is not None:
        extra.append(f"drive.amplitude_v_per_nm={ein!r}")
    raise SystemExit(_dispatch("pairgen", extra_overrides=tuple(extra), **kw))


if __name__ == "__main__":
    main()
