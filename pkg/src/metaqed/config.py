"""Run configuration: TOML schema, validation, and object builders.

A run is described by one TOML file whose keys carry explicit unit suffixes
(radius_nm, omega_min_ev, ...) grouped into sections.  The loader validates
the full schema before any compute: unknown sections or keys are rejected
with their dotted path, defaults are filled in, and the resulting plain dict
is embedded verbatim in the run manifest and hashed for resume checks, so an
explicitly written default and an omitted one produce the same run.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python < 3.11
    import tomli as tomllib

from .dynamics import DriveSpec
from .greens import Environment, EwaldParams, ScattererSpec
from .lattice import KPath, LatticeSpec
from .material import MaterialModel, silver_drude
from .spectral import EmitterSpec


class ConfigError(ValueError):
    """Schema violation; the message carries the dotted key path."""


_MISSING = object()


@dataclass(frozen=True)
class _Key:
    check: object
    default: object = _MISSING


def _fail(path, msg, value):
    raise ConfigError(f"{path}: {msg}, got {value!r}")


def _number(value, path, positive=False, nonneg=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, "expected a number", value)
    x = float(value)
    if not np.isfinite(x):
        _fail(path, "expected a finite number", value)
    if positive and x <= 0:
        _fail(path, "expected a positive number", value)
    if nonneg and x < 0:
        _fail(path, "expected a nonnegative number", value)
    return x


def _float(value, path):
    return _number(value, path)


def _positive(value, path):
    return _number(value, path, positive=True)


def _nonneg(value, path):
    return _number(value, path, nonneg=True)


def _int(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, "expected an integer", value)
    if minimum is not None and value < minimum:
        _fail(path, f"expected an integer >= {minimum}", value)
    return int(value)


def _count(value, path):
    return _int(value, path, minimum=1)


def _index(value, path):
    return _int(value, path, minimum=0)


def _bool(value, path):
    if not isinstance(value, bool):
        _fail(path, "expected true or false", value)
    return value


def _choice(*allowed):
    def check(value, path):
        if value not in allowed:
            _fail(path, f"expected one of {sorted(allowed)}", value)
        return value
    return check


def _vec3(value, path):
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        _fail(path, "expected a 3-vector [x, y, z]", value)
    return tuple(_number(x, f"{path}[{i}]") for i, x in enumerate(value))


def _unit3(value, path):
    v = _vec3(value, path)
    n = float(np.linalg.norm(v))
    if abs(n - 1.0) > 1e-6:
        _fail(path, "expected a unit 3-vector", value)
    return tuple(float(x / n) for x in v)


def _vec3_list(value, path):
    if not isinstance(value, list) or len(value) == 0:
        _fail(path, "expected a nonempty list of 3-vectors", value)
    return tuple(_vec3(v, f"{path}[{i}]") for i, v in enumerate(value))


def _waypoints(value, path):
    """Path waypoints: zone-point names or (b1, b2) fraction pairs."""
    if not isinstance(value, list) or len(value) == 0:
        _fail(path, "expected a nonempty list of waypoints", value)
    out = []
    for i, p in enumerate(value):
        here = f"{path}[{i}]"
        if isinstance(p, str):
            out.append(p)
        elif isinstance(p, (list, tuple)) and len(p) == 2:
            out.append(tuple(_number(x, f"{here}[{j}]")
                             for j, x in enumerate(p)))
        else:
            _fail(here, "expected a zone-point name or [f1, f2] fractions", p)
    return tuple(out)


def _modes(value, path):
    if value == "auto":
        return "auto"
    return _int(value, path, minimum=1)


def _int_list(value, path):
    if not isinstance(value, list) or len(value) == 0:
        _fail(path, "expected a nonempty list of integers", value)
    return tuple(_int(v, f"{path}[{i}]", minimum=1)
                 for i, v in enumerate(value))


SCHEMA = {
    "lattice": {
        "kind": _Key(_choice("square"), "square"),
        "a_nm": _Key(_positive),
    },
    "scatterers": {
        "radius_nm": _Key(_positive),
        "positions_nm": _Key(_vec3_list, ((0.0, 0.0, 0.0),)),
    },
    "material": {
        "kind": _Key(_choice("drude", "constant", "silver")),
        "eps_inf": _Key(_positive, None),
        "plasma_energy_ev": _Key(_positive, None),
        "damping_energy_ev": _Key(_nonneg, None),
        "refractive_index": _Key(_positive, None),
    },
    "emitters": {
        "positions_nm": _Key(_vec3_list),
        "dipole_moment_debye": _Key(_positive, 10.0),
        "orientation": _Key(_unit3),
        "transition_energy_ev": _Key(_positive),
    },
    "ewald": {
        "splitting_invnm": _Key(_positive, None),
        "real_cutoff": _Key(_positive, 5.5),
        "reciprocal_cutoff": _Key(_positive, 5.5),
        "tol": _Key(_positive, 1e-8),
        "check": _Key(_bool, True),
    },
    "scan": {
        "path": _Key(_waypoints),
        "samples_per_segment": _Key(_count, 40),
        "omega_min_ev": _Key(_positive),
        "omega_max_ev": _Key(_positive),
        "omega_count": _Key(_count),
        "transmission": _Key(_bool, False),
    },
    "fit": {
        "n_modes": _Key(_modes, 1),
        "compare_n_modes": _Key(_int_list, None),
        "tolerance": _Key(_positive, 1e-6),
        "max_modes": _Key(_count, 4),
        "continuation": _Key(_bool, True),
        "window_halfwidth_ev": _Key(_positive, None),
        "k_index": _Key(_index, 0),
        "refine": _Key(_bool, False),
        "refine_halfwidth_ev": _Key(_positive, None),
        "refine_count": _Key(_count, 101),
        "refine_levels": _Key(_count, 5),
    },
    "drive": {
        "amplitude_v_per_nm": _Key(_positive),
        "polarization": _Key(_unit3),
        "use_environment": _Key(_bool, True),
    },
    "pairgen": {
        "k_l_pi_over_a": _Key(_positive),
        "v_d_fraction": _Key(_positive),
        "omega_min_ev": _Key(_positive),
        "omega_max_ev": _Key(_positive),
        "omega_count": _Key(_count),
        "include_branch_omegas": _Key(_bool, True),
        "truncation": _Key(lambda v, p: _int(v, p, minimum=2), 2),
        "include_beam_splitter": _Key(_bool, False),
        "gamma_nr_ev": _Key(_nonneg, 0.0),
    },
    "output": {
        "dir": _Key(lambda v, p: v if isinstance(v, str) else
                    _fail(p, "expected a string", v), "out"),
        "precision": _Key(lambda v, p: _int(v, p, minimum=1), 9),
        "report": _Key(_bool, False),
    },
}

# sections whose required keys cannot be defaulted, per subcommand
_BASE_SECTIONS = ("lattice", "scatterers", "material", "emitters", "scan")
REQUIRED_SECTIONS = {
    "spectral-density": _BASE_SECTIONS,
    "fit": _BASE_SECTIONS,
    "dispersion": _BASE_SECTIONS,
    "local-field": _BASE_SECTIONS + ("drive",),
    "pairgen": _BASE_SECTIONS + ("drive", "pairgen"),
}

SUBCOMMANDS = tuple(REQUIRED_SECTIONS)


def _check_material(sec):
    kind = sec["kind"]
    need = {"drude": ("plasma_energy_ev", "damping_energy_ev"),
            "constant": ("refractive_index",), "silver": ()}[kind]
    drude_only = ("eps_inf", "plasma_energy_ev", "damping_energy_ev")
    allowed = set(need) | (set(drude_only) if kind == "drude" else set())
    for k in need:
        if sec[k] is None:
            raise ConfigError(f"material.{k}: required for kind={kind!r}")
    for k in drude_only + ("refractive_index",):
        if sec[k] is not None and k not in allowed:
            raise ConfigError(f"material.{k}: not valid for kind={kind!r}")
    if kind == "drude" and sec["eps_inf"] is None:
        sec["eps_inf"] = 1.0


def _check_grid(sec, path):
    if sec["omega_max_ev"] < sec["omega_min_ev"]:
        raise ConfigError(f"{path}.omega_max_ev: must be >= omega_min_ev")


def _check_fit(sec):
    if sec["refine"] and sec["refine_halfwidth_ev"] is None:
        raise ConfigError("fit.refine_halfwidth_ev: required when fit.refine"
                          " is true")


def resolve_config(raw, subcommand):
    """Validate a parsed TOML tree and return the fully resolved config."""
    if subcommand not in REQUIRED_SECTIONS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a table of sections")
    for sec, val in raw.items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]"
                              f" (known: {', '.join(sorted(SCHEMA))})")
        if not isinstance(val, dict):
            _fail(f"[{sec}]", "expected a table of keys", val)
    needed = set(REQUIRED_SECTIONS[subcommand])
    resolved = {}
    for sec, keys in SCHEMA.items():
        given = raw.get(sec)
        has_required = any(spec.default is _MISSING for spec in keys.values())
        if given is None and sec not in needed and has_required:
            continue  # section not used by this subcommand
        given = given or {}
        for k in given:
            if k not in keys:
                raise ConfigError(f"unknown key {sec}.{k}"
                                  f" (known: {', '.join(sorted(keys))})")
        out = {}
        for k, spec in keys.items():
            if k in given:
                out[k] = spec.check(given[k], f"{sec}.{k}")
            elif spec.default is _MISSING:
                raise ConfigError(f"{sec}.{k}: required key missing")
            else:
                out[k] = spec.default
        resolved[sec] = out
    if "material" in resolved:
        _check_material(resolved["material"])
    _check_grid(resolved["scan"], "scan")
    if "pairgen" in resolved:
        _check_grid(resolved["pairgen"], "pairgen")
    if "fit" in resolved:
        _check_fit(resolved["fit"])
    return resolved


def parse_override(text):
    """Parse one --override of the form section.key=value (TOML literal)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r}: expected section.key=value")
    key, value = text.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"override {text!r}: key must be section.key")
    try:
        parsed = tomllib.loads(f"v = {value.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value.strip()
    return parts[0], parts[1], parsed


def apply_overrides(raw, overrides):
    for text in overrides:
        sec, key, value = parse_override(text)
        raw.setdefault(sec, {})[key] = value
    return raw


def load_config(path, overrides=(), subcommand="spectral-density"):
    """Read, override, and resolve a TOML run config."""
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return resolve_config(apply_overrides(raw, overrides), subcommand)


def config_hash(subcommand, resolved):
    """Stable hash of the resolved run inputs, used by resume checks."""
    blob = json.dumps({"subcommand": subcommand, "config": resolved},
                      sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# builders


def build_material(cfg):
    m = cfg["material"]
    if m["kind"] == "silver":
        return silver_drude()
    if m["kind"] == "drude":
        return MaterialModel.drude(m["eps_inf"], m["plasma_energy_ev"],
                                   m["damping_energy_ev"])
    return MaterialModel.constant_index(m["refractive_index"])


def build_environment(cfg):
    lat = LatticeSpec.square(cfg["lattice"]["a_nm"])
    mat = build_material(cfg)
    sc = tuple(ScattererSpec(pos, cfg["scatterers"]["radius_nm"], mat)
               for pos in cfg["scatterers"]["positions_nm"])
    e = cfg["ewald"]
    ew = EwaldParams(splitting=e["splitting_invnm"],
                     real_cutoff=e["real_cutoff"],
                     reciprocal_cutoff=e["reciprocal_cutoff"],
                     tol=e["tol"], check=e["check"])
    return Environment(lattice=lat, scatterers=sc, ewald=ew)


def build_emitters(cfg):
    e = cfg["emitters"]
    return tuple(EmitterSpec(pos, e["dipole_moment_debye"], e["orientation"],
                             e["transition_energy_ev"])
                 for pos in e["positions_nm"])


def build_kpath(cfg):
    s = cfg["scan"]
    return KPath.from_points(s["path"], s["samples_per_segment"])


def omega_grid(cfg, section="scan"):
    s = cfg[section]
    return np.linspace(s["omega_min_ev"], s["omega_max_ev"], s["omega_count"])


def build_drive(cfg, omega, k_par):
    d = cfg["drive"]
    return DriveSpec(omega=float(omega), k_par=tuple(k_par),
                     amplitude=d["amplitude_v_per_nm"],
                     polarization=d["polarization"])
