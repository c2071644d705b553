"""Run orchestration and persistence for the command-line workflows.

Layout of a run directory:

    <out>/manifest.json         provenance: resolved config, constants,
                                content hashes, stage timings, warnings
    <out>/*.csv                 delimited results (UTF-8, comma, '.')
    <out>/.partial/             per-row checkpoints while a scan runs;
                                removed once the final files land

Every file is written to a temporary name and atomically renamed, so a
crash never leaves a partial CSV.  Scans persist each finished row under
.partial/, which is what --resume picks up; the row files are keyed by a
hash of the resolved config so a resume against an edited config is
refused.  Workers only compute and return arrays; all writes happen in the
orchestrator process.
"""

import hashlib
import json
import math
import os
import shutil
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import (build_drive, build_emitters, build_environment,
                     build_kpath, config_hash, omega_grid, ConfigError)
from .constants import (COULOMB, DEBYE, FLUX_CONST, HBAR_C, HBAR_EV_FS,
                        SPECTRAL_PREFACTOR)
from .dynamics import LocalFieldMap, local_field_map, polariton_dispersion
from .fewmode import (FitError, PathFitRow, fit_along_path, fit_few_mode,
                      fit_few_mode_grown, model_spectral_density,
                      select_mode_count)
from .greens import DomainError, EwaldConvergenceError, SingularityError
from .lattice import bz_path, path_arclength
from .pairgen import CELL_FAILED, CELL_INTERPOLATED, pair_scan
from .spectral import BandScanResult, plane_wave_transmission, scan_cell


class ResumeMismatch(RuntimeError):
    """Resume requested against state from a different resolved config."""


# ---------------------------------------------------------------------------
# formatting and atomic IO


def fmt_float(x, precision=9):
    xf = float(x)
    if math.isnan(xf):
        return "NaN"
    return format(xf, f".{precision}e")


def write_text_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    body = [",".join(header)]
    body.extend(",".join(r) for r in rows)
    write_text_atomic(path, "\n".join(body) + "\n")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# per-row checkpoints


class PartialStore:
    """Row checkpoints under <out>/.partial, keyed by the config hash."""

    def __init__(self, root, run_hash):
        self.dir = Path(root)
        self.hash = run_hash

    def begin(self, resume):
        state = self.dir / "state.json"
        if self.dir.exists():
            ok = False
            try:
                ok = (json.loads(state.read_text())
                      .get("config_hash") == self.hash)
            except (OSError, ValueError):
                ok = False
            if resume and not ok:
                raise ResumeMismatch(
                    f"partial state in {self.dir} was produced by a different"
                    " config; refusing to resume")
            if not resume or not ok:
                # reuse is opt-in: a fresh run recomputes every row
                shutil.rmtree(self.dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        if not state.exists():
            write_text_atomic(state, json.dumps({"config_hash": self.hash}))

    def _path(self, stage, i):
        return self.dir / f"{stage}_{i:05d}.npz"

    def has(self, stage, i):
        return self._path(stage, i).exists()

    def save(self, stage, i, arrays):
        path = self._path(stage, i)
        fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=path.name + ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                np.savez_compressed(fh, **arrays)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def load(self, stage, i):
        with np.load(self._path(stage, i)) as z:
            return {k: z[k] for k in z.files}

    def clear(self):
        shutil.rmtree(self.dir, ignore_errors=True)


def run_rows(jobs, threads=1, store=None, stage="rows"):
    """Evaluate one (func, kwargs) job per row, reusing checkpointed rows.

    Results are persisted (or kept) by row index, so the assembled output
    is independent of completion order and of the worker count.
    """
    n = len(jobs)
    done = {}
    todo = [i for i in range(n)
            if store is None or not store.has(stage, i)]
    if threads <= 1 or len(todo) <= 1:
        for i in todo:
            func, kwargs = jobs[i]
            out = func(**kwargs)
            if store is None:
                done[i] = out
            else:
                store.save(stage, i, out)
    else:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            futures = {}
            for i in todo:
                func, kwargs = jobs[i]
                futures[ex.submit(func, **kwargs)] = i
            for fut in as_completed(futures):
                i = futures[fut]
                out = fut.result()
                if store is None:
                    done[i] = out
                else:
                    store.save(stage, i, out)
    if store is None:
        return [done[i] for i in range(n)]
    return [store.load(stage, i) for i in range(n)]


# ---------------------------------------------------------------------------
# row workers (module level: picklable for the process pool)


def _scan_row(k_par, omegas, emitters, environment):
    H = len(emitters)
    J = np.empty((len(omegas), H, H), complex)
    codes = np.zeros(len(omegas), np.int8)
    for j, w in enumerate(omegas):
        J[j], codes[j] = scan_cell(tuple(k_par), float(w), emitters,
                                   environment)
    return {"J": J, "codes": codes}


def _refine_row(k_par, omegas, J, codes, emitters, environment, halfwidth,
                count, levels):
    """Adaptively resample one row around its dominant spectral line.

    Each level rescans a window centered on the current peak; the window
    shrinks until the half-maximum width covers several samples, so lines
    orders of magnitude narrower than the coarse grid still get resolved.
    """
    good = codes == 0
    out_w, out_J, out_c = [], [], []
    if np.any(good):
        tr = np.einsum("whh->w", J[good]).real
        center = float(omegas[good][int(np.argmax(tr))])
        hw = float(halfwidth)
        for _ in range(int(levels)):
            lo = max(center - hw, 1e-9)
            grid = np.linspace(lo, center + hw, int(count))
            row = _scan_row(k_par, grid, emitters, environment)
            out_w.append(grid)
            out_J.append(row["J"])
            out_c.append(row["codes"])
            g = row["codes"] == 0
            if not np.any(g):
                break
            trf = np.einsum("whh->w", row["J"][g]).real
            peak = int(np.argmax(trf))
            center = float(grid[g][peak])
            step = float(grid[1] - grid[0])
            n_above = int((trf > trf[peak] / 2).sum())
            if n_above >= 8:
                break  # line resolved on this grid
            hw = max(2 * n_above, 8) * step
    if not out_w:
        H = len(emitters)
        return {"omegas": np.zeros(0), "J": np.zeros((0, H, H), complex),
                "codes": np.zeros(0, np.int8)}
    return {"omegas": np.concatenate(out_w), "J": np.concatenate(out_J),
            "codes": np.concatenate(out_c)}


def _local_field_row(fit_row, emitters, omegas, drive, environment):
    mp = local_field_map([fit_row], emitters, omegas, drive,
                         environment=environment)
    return {"values": mp.values[0]}


# ---------------------------------------------------------------------------
# scan + fit building blocks shared with the acceptance suite


def parallel_band_scan(ks, arclength, omegas, emitters, environment,
                       threads=1, store=None, labels=()):
    """band_scan over explicit k rows with a worker pool and checkpoints."""
    jobs = [(_scan_row, dict(k_par=tuple(kp), omegas=omegas,
                             emitters=emitters, environment=environment))
            for kp in ks]
    rows = run_rows(jobs, threads, store, "scan")
    J = np.stack([r["J"] for r in rows])
    codes = np.stack([r["codes"] for r in rows]).astype(np.int8)
    return BandScanResult(k_points=np.asarray(ks, float),
                          arclength=np.asarray(arclength, float),
                          omegas=np.asarray(omegas, float), J=J,
                          error_codes=codes, labels=tuple(labels))


def _row_union(scan, fine, i):
    keep = scan.error_codes[i] == 0
    w = [scan.omegas[keep]]
    J = [scan.J[i][keep]]
    fk = fine[i]["codes"] == 0
    w.append(fine[i]["omegas"][fk])
    J.append(fine[i]["J"][fk])
    w = np.concatenate(w)
    J = np.concatenate(J)
    order = np.argsort(w, kind="stable")
    w, J = w[order], J[order]
    if len(w):  # windows overlap; drop repeat evaluations of the same omega
        keep = np.concatenate([[True], np.diff(np.round(w, 15)) > 0])
        w, J = w[keep], J[keep]
    return w, J


def refined_fit_rows(scan, emitters, environment, fitcfg, threads=1,
                     store=None):
    """Fit every row of a scan after adaptive resampling of narrow lines."""
    n = len(scan.k_points)
    jobs = [(_refine_row, dict(
        k_par=tuple(scan.k_points[i]), omegas=scan.omegas, J=scan.J[i],
        codes=scan.error_codes[i], emitters=emitters,
        environment=environment, halfwidth=fitcfg["refine_halfwidth_ev"],
        count=fitcfg["refine_count"], levels=fitcfg["refine_levels"]))
        for i in range(n)]
    fine = run_rows(jobs, threads, store, "refine")
    rows = []
    samples_by_row = []
    prev = None
    count = None if fitcfg["n_modes"] == "auto" else int(fitcfg["n_modes"])
    for i in range(n):
        w, J = _row_union(scan, fine, i)
        if fitcfg["window_halfwidth_ev"] is not None and len(w):
            tr = np.einsum("whh->w", J).real
            c = w[int(np.argmax(tr))]
            sel = np.abs(w - c) <= fitcfg["window_halfwidth_ev"]
            w, J = w[sel], J[sel]
        samples = list(zip(w, J))
        samples_by_row.append(samples)
        k_par = tuple(scan.k_points[i])
        s = float(scan.arclength[i])
        if not samples:
            rows.append(PathFitRow(k_par, s, None, None))
            continue
        try:
            if count is None:
                model, report = select_mode_count(
                    samples, fitcfg["max_modes"], fitcfg["tolerance"])
                count = report.n_modes
            else:
                cands = []
                if fitcfg["continuation"] and prev is not None:
                    cands.append(fit_few_mode(samples, count, prev,
                                              fitcfg["tolerance"]))
                cands.append(fit_few_mode(samples, count, "peaks",
                                          fitcfg["tolerance"]))
                model, report = min(cands, key=lambda mr: mr[1].residual)
        except (DomainError, FitError, np.linalg.LinAlgError):
            rows.append(PathFitRow(k_par, s, None, None))
            continue
        prev = model
        rows.append(PathFitRow(k_par, s, model, report))
    if fitcfg["continuation"] and count is not None:
        _rescue_backward(rows, samples_by_row, count, fitcfg["tolerance"])
    return rows


def _rescue_backward(rows, samples_by_row, count, tolerance):
    """Refit poor leading rows seeded from their converged right neighbor.

    The forward continuation chain has nothing to seed the first rows with;
    narrow lines there can strand the fitter in a bad minimum.
    """
    for i in range(len(rows) - 2, -1, -1):
        nxt = rows[i + 1]
        if nxt.model is None or not samples_by_row[i]:
            continue
        cur = rows[i]
        bad = (cur.model is None or not cur.report.converged
               or (nxt.report is not None and nxt.report.converged
                   and cur.report.residual > 10 * nxt.report.residual))
        if not bad:
            continue
        try:
            model, report = fit_few_mode(samples_by_row[i], count, nxt.model,
                                         tolerance)
        except (DomainError, FitError, np.linalg.LinAlgError):
            continue
        if cur.model is None or report.residual < cur.report.residual:
            rows[i] = PathFitRow(cur.k_par, cur.arclength, model, report)


def fit_path(scan, emitters, environment, fitcfg, threads=1, store=None):
    if fitcfg["refine"]:
        return refined_fit_rows(scan, emitters, environment, fitcfg,
                                threads, store)
    return fit_along_path(scan, fitcfg["n_modes"], fitcfg["tolerance"],
                          fitcfg["continuation"],
                          fitcfg["window_halfwidth_ev"], fitcfg["max_modes"])


# ---------------------------------------------------------------------------
# artifact writers


def write_scan_csv(path, scan, precision):
    H = scan.J.shape[2]
    pairs = [(h, hp) for h in range(H) for hp in range(h, H)]
    header = ["k_index", "kx_invnm", "ky_invnm", "arclength_invnm",
              "omega_ev"]
    for h, hp in pairs:
        header += [f"j{h}_{hp}_re_ev", f"j{h}_{hp}_im_ev"]
    header.append("error_code")

    def rows():
        for i in range(len(scan.k_points)):
            kx, ky = scan.k_points[i]
            pre = [str(i), fmt_float(kx, precision), fmt_float(ky, precision),
                   fmt_float(scan.arclength[i], precision)]
            for j, w in enumerate(scan.omegas):
                r = pre + [fmt_float(w, precision)]
                M = scan.J[i, j]
                for h, hp in pairs:
                    r += [fmt_float(M[h, hp].real, precision),
                          fmt_float(M[h, hp].imag, precision)]
                r.append(str(int(scan.error_codes[i, j])))
                yield r

    write_csv(path, header, rows())


def write_transmission_csv(path, omegas, t, r, precision):
    header = ["omega_ev", "t_abs2", "r_abs2", "t_re", "t_im", "r_re", "r_im"]

    def rows():
        for w, tv, rv in zip(omegas, t, r):
            yield [fmt_float(w, precision),
                   fmt_float(abs(tv) ** 2, precision),
                   fmt_float(abs(rv) ** 2, precision),
                   fmt_float(tv.real, precision), fmt_float(tv.imag, precision),
                   fmt_float(rv.real, precision), fmt_float(rv.imag, precision)]

    write_csv(path, header, rows())


def model_to_json(model):
    if model is None:
        return None
    return {"mode_matrix_re": model.mode_matrix.real.tolist(),
            "mode_matrix_im": model.mode_matrix.imag.tolist(),
            "kappa": np.asarray(model.kappa, float).tolist(),
            "g_re": model.g.real.tolist(), "g_im": model.g.imag.tolist()}


def report_to_json(report):
    if report is None:
        return None
    return {"residual": float(report.residual),
            "max_error": float(report.max_error),
            "n_modes": int(report.n_modes),
            "iterations": int(report.iterations),
            "converged": bool(report.converged)}


def fit_row_to_json(row):
    return {"k_par": [float(x) for x in row.k_par],
            "arclength": float(row.arclength),
            "model": model_to_json(row.model),
            "report": report_to_json(row.report)}


def write_fit_path_csv(path, fits, n_emitters, precision):
    n_modes = max((r.model.n_modes for r in fits if r.model is not None),
                  default=0)
    header = ["k_index", "kx_invnm", "ky_invnm", "arclength_invnm",
              "n_modes", "converged", "residual", "max_error", "iterations"]
    for m in range(n_modes):
        header += [f"omega_{m}_ev", f"kappa_{m}_ev"]
        header += [f"g_abs_{m}_{h}_ev" for h in range(n_emitters)]

    def rows():
        for i, row in enumerate(fits):
            kx, ky = row.k_par
            r = [str(i), fmt_float(kx, precision), fmt_float(ky, precision),
                 fmt_float(row.arclength, precision)]
            if row.model is None:
                r += ["0", "0", "NaN", "NaN", "0"]
                r += ["NaN"] * (n_modes * (2 + n_emitters))
            else:
                rep = row.report
                r += [str(rep.n_modes), str(int(rep.converged)),
                      fmt_float(rep.residual, precision),
                      fmt_float(rep.max_error, precision),
                      str(int(rep.iterations))]
                for m in range(n_modes):
                    if m < row.model.n_modes:
                        r += [fmt_float(row.model.mode_matrix[m, m].real,
                                        precision),
                              fmt_float(row.model.kappa[m], precision)]
                        r += [fmt_float(abs(row.model.g[m, h]), precision)
                              for h in range(n_emitters)]
                    else:
                        r += ["NaN"] * (2 + n_emitters)
            yield r

    write_csv(path, header, rows())


def write_dispersion_csv(path, disp, precision):
    nb = disp.eigenvalues.shape[1]
    header = ["k_index", "kx_invnm", "ky_invnm", "arclength_invnm"]
    for m in range(nb):
        header += [f"energy_{m}_ev", f"width_{m}_ev", f"photon_fraction_{m}"]

    def rows():
        for i in range(len(disp.k_points)):
            kx, ky = disp.k_points[i]
            r = [str(i), fmt_float(kx, precision), fmt_float(ky, precision),
                 fmt_float(disp.arclength[i], precision)]
            for m in range(nb):
                r += [fmt_float(disp.energies[i, m], precision),
                      fmt_float(disp.widths[i, m], precision),
                      fmt_float(disp.photon_fraction[i, m], precision)]
            yield r

    write_csv(path, header, rows())


def write_local_field_csv(path, mp, precision):
    H = mp.values.shape[2]
    header = ["k_index", "kx_invnm", "ky_invnm", "arclength_invnm",
              "omega_ev"] + [f"enhancement_{h}" for h in range(H)]

    def rows():
        for i in range(len(mp.k_points)):
            kx, ky = mp.k_points[i]
            pre = [str(i), fmt_float(kx, precision), fmt_float(ky, precision),
                   fmt_float(mp.arclength[i], precision)]
            for j, w in enumerate(mp.omegas):
                yield pre + [fmt_float(w, precision)] + [
                    fmt_float(mp.values[i, j, h], precision)
                    for h in range(H)]

    write_csv(path, header, rows())


def write_pairgen_csv(path, res, precision):
    header = ["omega_index", "omega_l_ev", "flux_invnm2fs", "k_index",
              "kx_invnm", "ky_invnm", "arclength_invnm", "gamma_ev",
              "rate_over_flux2_nm2fs", "code"]

    def rows():
        for i, w in enumerate(res.omegas):
            pre = [str(i), fmt_float(w, precision),
                   fmt_float(res.flux[i], precision)]
            for j in range(len(res.k_points)):
                kx, ky = res.k_points[j]
                yield pre + [str(j), fmt_float(kx, precision),
                             fmt_float(ky, precision),
                             fmt_float(res.arclength[j], precision),
                             fmt_float(res.gamma[i, j], precision),
                             fmt_float(res.rate_over_flux2[i, j], precision),
                             str(int(res.codes[i, j]))]

    write_csv(path, header, rows())


def write_pair_locus_csv(path, res, precision):
    nb = res.branch_energies.shape[1]
    header = ["k_index", "kx_invnm", "ky_invnm", "arclength_invnm"]
    header += [f"branch_{m}_ev" for m in range(nb)]
    header += [f"locus_{m}_{mp}_ev" for m in range(nb) for mp in range(nb)]

    def rows():
        for j in range(len(res.k_points)):
            kx, ky = res.k_points[j]
            r = [str(j), fmt_float(kx, precision), fmt_float(ky, precision),
                 fmt_float(res.arclength[j], precision)]
            r += [fmt_float(res.branch_energies[j, m], precision)
                  for m in range(nb)]
            r += [fmt_float(res.pair_locus[j, q], precision)
                  for q in range(res.pair_locus.shape[1])]
            yield r

    write_csv(path, header, rows())


# ---------------------------------------------------------------------------
# run context


@dataclass
class ExecResult:
    files: dict = field(default_factory=dict)
    poisoned: int = 0
    warnings: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    no_op: bool = False


class RunContext:
    """One CLI run: output paths, checkpoints, timings, manifest."""

    def __init__(self, subcommand, cfg, out_dir, threads=1, seed=0,
                 resume=False, report=False, overrides=(), config_file=None,
                 along_path=False):
        self.subcommand = subcommand
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.threads = max(1, int(threads))
        self.seed = int(seed)
        self.resume = bool(resume)
        self.report = bool(report)
        self.overrides = list(overrides)
        self.config_file = config_file
        self.along_path = bool(along_path)
        key = subcommand + ("+along-path" if along_path else "")
        self.hash = config_hash(key, cfg)
        self.precision = cfg["output"]["precision"]
        self.store = PartialStore(self.out_dir / ".partial", self.hash)
        self._store_ready = False
        self.warnings = []
        self.stages = {}
        self.outputs = {}
        self.files = {}
        self.diagnostics = {}

    def is_complete(self):
        """A finished run with this config hash already sits in out_dir."""
        mpath = self.out_dir / "manifest.json"
        if not mpath.exists():
            return False
        try:
            man = json.loads(mpath.read_text())
        except (OSError, ValueError):
            return False
        if man.get("config_hash") != self.hash:
            raise ResumeMismatch(
                f"{mpath} records a different config hash; refusing to"
                " resume (rerun without --resume to overwrite)")
        return bool(man.get("complete"))

    def ensure_store(self):
        if not self._store_ready:
            self.store.begin(self.resume)
            self._store_ready = True
        return self.store

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        yield
        self.stages[name] = round(time.perf_counter() - t0, 3)

    def warn(self, msg):
        self.warnings.append(msg)

    def path(self, name):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def add_output(self, path):
        path = Path(path)
        self.outputs[path.name] = sha256_file(path)
        self.files[path.name] = path

    def finish(self, poisoned):
        man = {
            "tool": "metaqed",
            "version": __version__,
            "subcommand": self.subcommand,
            "created_utc": datetime.now(timezone.utc).isoformat(
                timespec="seconds"),
            "seed": self.seed,
            "threads": self.threads,
            "overrides": self.overrides,
            "config": self.cfg,
            "config_hash": self.hash,
            "constants": {
                "hbar_c_ev_nm": HBAR_C,
                "coulomb_ev_nm": COULOMB,
                "debye_e_nm": DEBYE,
                "hbar_ev_fs": HBAR_EV_FS,
                "flux_amplitude_const": FLUX_CONST,
                "spectral_prefactor_ev_nm": SPECTRAL_PREFACTOR,
            },
            "input_hashes": ({Path(self.config_file).name:
                              sha256_file(self.config_file)}
                             if self.config_file else {}),
            "stages_s": self.stages,
            "warnings": self.warnings,
            "poisoned_cells": int(poisoned),
            "outputs": self.outputs,
            "diagnostics": self.diagnostics,
            "complete": True,
        }
        write_text_atomic(self.path("manifest.json"),
                          json.dumps(man, indent=2, sort_keys=True,
                                     default=list) + "\n")
        self.files["manifest.json"] = self.out_dir / "manifest.json"
        self.store.clear()


# ---------------------------------------------------------------------------
# pipelines


def _scan_stage(ctx, env, emitters, restrict_to=None):
    kpath = build_kpath(ctx.cfg)
    ks = bz_path(env.lattice, kpath)
    s = path_arclength(ks)
    if restrict_to is not None:
        if not 0 <= restrict_to < len(ks):
            raise ConfigError(
                f"fit.k_index: {restrict_to} outside the {len(ks)}-point"
                " scan path")
        ks, s = ks[restrict_to:restrict_to + 1], s[restrict_to:restrict_to + 1]
    omegas = omega_grid(ctx.cfg)
    store = ctx.ensure_store()
    with ctx.stage("scan"):
        scan = parallel_band_scan(ks, s, omegas, emitters, env, ctx.threads,
                                  store, kpath.labels)
    bad = int((scan.error_codes != 0).sum())
    if bad:
        ctx.warn(f"{bad} of {scan.error_codes.size} scan cells failed and"
                 " hold NaN")
    return scan, bad


def _fit_stage(ctx, scan, emitters, env):
    with ctx.stage("fit"):
        fits = fit_path(scan, emitters, env, ctx.cfg["fit"], ctx.threads,
                        ctx.ensure_store())
    missing = sum(1 for r in fits if r.model is None)
    if missing:
        ctx.warn(f"{missing} of {len(fits)} k rows have no fitted model")
    return fits, missing


def run_spectral_density(ctx):
    env = build_environment(ctx.cfg)
    emitters = build_emitters(ctx.cfg)
    scan, poisoned = _scan_stage(ctx, env, emitters)
    with ctx.stage("write"):
        out = ctx.path("spectral_density.csv")
        write_scan_csv(out, scan, ctx.precision)
        ctx.add_output(out)
    if ctx.cfg["scan"]["transmission"]:
        with ctx.stage("transmission"):
            t = np.full(len(scan.omegas), np.nan + 0j)
            r = np.full(len(scan.omegas), np.nan + 0j)
            bad = 0
            for j, w in enumerate(scan.omegas):
                try:
                    t[j], r[j] = plane_wave_transmission(
                        float(w), (0.0, 0.0), "s", env.scatterers,
                        env.lattice, env.ewald)
                except (DomainError, SingularityError,
                        EwaldConvergenceError, FloatingPointError,
                        np.linalg.LinAlgError):
                    bad += 1
            if bad:
                ctx.warn(f"{bad} transmission samples failed and hold NaN")
                poisoned += bad
            out = ctx.path("transmission.csv")
            write_transmission_csv(out, scan.omegas, t, r, ctx.precision)
            ctx.add_output(out)
            ctx.diagnostics["transmission_polarization"] = "s"
            ctx.diagnostics["transmission_k_par_invnm"] = [0.0, 0.0]
    if ctx.report:
        from . import report
        out = ctx.path("report_spectral_density.png")
        report.spectral_density_figure(scan, out)
        ctx.add_output(out)
    return poisoned


def run_fit(ctx):
    env = build_environment(ctx.cfg)
    emitters = build_emitters(ctx.cfg)
    fitcfg = ctx.cfg["fit"]
    if ctx.along_path:
        scan, poisoned = _scan_stage(ctx, env, emitters)
        fits, missing = _fit_stage(ctx, scan, emitters, env)
        with ctx.stage("write"):
            out = ctx.path("fit_path.json")
            write_text_atomic(out, json.dumps(
                [fit_row_to_json(r) for r in fits], indent=2,
                sort_keys=True) + "\n")
            ctx.add_output(out)
            out = ctx.path("fit_path.csv")
            write_fit_path_csv(out, fits, len(emitters), ctx.precision)
            ctx.add_output(out)
        if ctx.report:
            from . import report
            out = ctx.path("report_fit_path.png")
            report.fit_path_figure(fits, out)
            ctx.add_output(out)
        return poisoned + missing

    scan, poisoned = _scan_stage(ctx, env, emitters,
                                 restrict_to=fitcfg["k_index"])
    fits, missing = _fit_stage(ctx, scan, emitters, env)
    row = fits[0]
    counts = list(fitcfg["compare_n_modes"] or ())
    if not counts:
        counts = [row.model.n_modes if row.model is not None
                  else (1 if fitcfg["n_modes"] == "auto"
                        else fitcfg["n_modes"])]
    good = scan.error_codes[0] == 0
    w_win, j_win = scan.omegas[good], scan.J[0][good]
    if fitcfg["window_halfwidth_ev"] is not None and len(w_win):
        # same restriction the row fit applies, so residuals of different
        # mode counts are measured on identical samples
        tr = np.einsum("whh->w", j_win).real
        center = w_win[int(np.argmax(tr))]
        sel = np.abs(w_win - center) <= fitcfg["window_halfwidth_ev"]
        w_win, j_win = w_win[sel], j_win[sel]
    samples = list(zip(w_win, j_win))
    entry = {"k_par": [float(x) for x in row.k_par],
             "arclength": float(row.arclength), "fits": {}}
    curves = {}
    with ctx.stage("compare"):
        prev = None
        for n in sorted(set(counts)):
            if row.model is not None and n == row.model.n_modes:
                model, rep = row.model, row.report
            elif samples:
                try:
                    model, rep = fit_few_mode_grown(samples, n, prev,
                                                    fitcfg["tolerance"])
                except (DomainError, FitError, np.linalg.LinAlgError):
                    model, rep = None, None
            else:
                model, rep = None, None
            if model is not None:
                prev = model
            entry["fits"][str(n)] = {"model": model_to_json(model),
                                     "report": report_to_json(rep)}
            if model is not None:
                curves[n] = np.array(
                    [np.trace(model_spectral_density(model, w)).real
                     for w in scan.omegas])
    with ctx.stage("write"):
        out = ctx.path("fit.json")
        write_text_atomic(out, json.dumps(entry, indent=2, sort_keys=True)
                          + "\n")
        ctx.add_output(out)
        header = ["omega_ev", "j_trace_ev"] + [f"jmod_{n}_ev" for n in counts]
        data_tr = np.einsum("whh->w", scan.J[0]).real

        def rows():
            for j, w in enumerate(scan.omegas):
                r = [fmt_float(w, ctx.precision),
                     fmt_float(data_tr[j] if scan.error_codes[0, j] == 0
                               else np.nan, ctx.precision)]
                for n in counts:
                    v = curves.get(n)
                    r.append(fmt_float(v[j] if v is not None else np.nan,
                                       ctx.precision))
                yield r

        out = ctx.path("fit_curve.csv")
        write_csv(out, header, rows())
        ctx.add_output(out)
    if ctx.report:
        from . import report
        out = ctx.path("report_fit.png")
        report.fit_curve_figure(scan.omegas, data_tr, curves, out)
        ctx.add_output(out)
    return poisoned + missing


def run_dispersion(ctx):
    env = build_environment(ctx.cfg)
    emitters = build_emitters(ctx.cfg)
    scan, poisoned = _scan_stage(ctx, env, emitters)
    fits, missing = _fit_stage(ctx, scan, emitters, env)
    with ctx.stage("dispersion"):
        disp = polariton_dispersion(fits, emitters)
    with ctx.stage("write"):
        out = ctx.path("dispersion.csv")
        write_dispersion_csv(out, disp, ctx.precision)
        ctx.add_output(out)
        out = ctx.path("fit_path.csv")
        write_fit_path_csv(out, fits, len(emitters), ctx.precision)
        ctx.add_output(out)
    if ctx.report:
        from . import report
        out = ctx.path("report_dispersion.png")
        report.dispersion_figure(disp, out)
        ctx.add_output(out)
    return poisoned + missing


def run_local_field(ctx):
    env = build_environment(ctx.cfg)
    emitters = build_emitters(ctx.cfg)
    scan, poisoned = _scan_stage(ctx, env, emitters)
    fits, missing = _fit_stage(ctx, scan, emitters, env)
    omegas = scan.omegas
    drive = build_drive(ctx.cfg, omegas[0], (0.0, 0.0))
    drive_env = env if ctx.cfg["drive"]["use_environment"] else None
    with ctx.stage("local_field"):
        jobs = [(_local_field_row, dict(fit_row=row, emitters=emitters,
                                        omegas=omegas, drive=drive,
                                        environment=drive_env))
                for row in fits]
        rows = run_rows(jobs, ctx.threads, ctx.ensure_store(), "localfield")
        values = np.stack([r["values"] for r in rows])
        mp = LocalFieldMap(scan.k_points, scan.arclength, omegas, values)
    with ctx.stage("dispersion"):
        disp = polariton_dispersion(fits, emitters)
    with ctx.stage("write"):
        out = ctx.path("local_field.csv")
        write_local_field_csv(out, mp, ctx.precision)
        ctx.add_output(out)
        out = ctx.path("branches.csv")
        write_dispersion_csv(out, disp, ctx.precision)
        ctx.add_output(out)
        out = ctx.path("fit_path.csv")
        write_fit_path_csv(out, fits, len(emitters), ctx.precision)
        ctx.add_output(out)
    if ctx.report:
        from . import report
        out = ctx.path("report_local_field.png")
        report.local_field_figure(mp, disp, out)
        ctx.add_output(out)
    return poisoned + missing


def run_pairgen(ctx):
    env = build_environment(ctx.cfg)
    emitters = build_emitters(ctx.cfg)
    if len(emitters) != 1:
        raise ConfigError("emitters.positions_nm: pair generation needs"
                          " exactly one emitter per unit cell")
    pg = ctx.cfg["pairgen"]
    scan, poisoned = _scan_stage(ctx, env, emitters)
    fits, missing = _fit_stage(ctx, scan, emitters, env)

    k_l = pg["k_l_pi_over_a"] * np.pi / ctx.cfg["lattice"]["a_nm"]
    t = np.linalg.norm(scan.k_points, axis=1)
    drive_index = int(np.argmin(np.abs(t - k_l)))
    if abs(t[drive_index] - k_l) > 1e-9 * max(t.max(), 1e-30):
        raise ConfigError(
            "pairgen.k_l_pi_over_a: drive momentum must lie on the scan"
            f" k grid (nearest cell off by {abs(t[drive_index] - k_l):.3e}"
            " 1/nm)")

    omegas = omega_grid(ctx.cfg, "pairgen")
    with ctx.stage("dispersion"):
        disp = polariton_dispersion(fits, emitters, pg["gamma_nr_ev"])
    if pg["include_branch_omegas"]:
        at_drive = disp.energies[drive_index]
        omegas = np.unique(np.concatenate(
            [omegas, at_drive[np.isfinite(at_drive)]]))

    if pg["gamma_nr_ev"] > 0:
        ctx.warn(f"nonradiative emitter decay gamma_nr_ev ="
                 f" {pg['gamma_nr_ev']} included")
    v_d = pg["v_d_fraction"] * (2 * np.pi) ** 2 / env.lattice.cell_area
    drive = build_drive(ctx.cfg, omegas[0], tuple(scan.k_points[drive_index]))
    drive_env = env if ctx.cfg["drive"]["use_environment"] else None
    with ctx.stage("pairgen"):
        res = pair_scan(fits, drive_index, omegas, emitters[0], drive, v_d,
                        environment=drive_env, truncation=pg["truncation"],
                        include_beam_splitter=pg["include_beam_splitter"],
                        gamma_nr=pg["gamma_nr_ev"])
    n_interp = int((res.codes == CELL_INTERPOLATED).sum())
    n_failed = int((res.codes == CELL_FAILED).sum())
    if n_interp:
        ctx.warn(f"{n_interp} pair cells used a linearly interpolated"
                 " partner model")
    if n_failed:
        ctx.warn(f"{n_failed} pair cells failed and hold NaN")
    poisoned += n_failed

    exc = res.drive_excitation[np.isfinite(res.drive_excitation)]
    peak_exc = float(exc.max()) if exc.size else float("nan")
    if peak_exc > 0.1:
        ctx.warn(f"drive-cell emitter amplitude reaches {peak_exc:.3g};"
                 " the linearized pair vertices need |<sigma>| << 1, reduce"
                 " drive.amplitude_v_per_nm")
    finite = res.rate_over_flux2[np.isfinite(res.rate_over_flux2)]
    peak = float(finite.max()) if finite.size else float("nan")
    ctx.diagnostics.update({
        "v_d_invnm2": v_d,
        "flux_range_invnm2fs": [float(res.flux.min()),
                                float(res.flux.max())],
        "branches_at_drive_ev": [float(x) for x in
                                 disp.energies[drive_index]],
        "drive_index": drive_index,
        "max_drive_excitation": peak_exc,
        "max_rate_over_flux2_nm2fs": peak,
        "max_rate_over_flux2_cm2fs": peak * 1e-14,
    })
    with ctx.stage("write"):
        out = ctx.path("pairgen.csv")
        write_pairgen_csv(out, res, ctx.precision)
        ctx.add_output(out)
        out = ctx.path("pair_locus.csv")
        write_pair_locus_csv(out, res, ctx.precision)
        ctx.add_output(out)
    if ctx.report:
        from . import report
        out = ctx.path("report_pairgen.png")
        report.pairgen_figure(res, out)
        ctx.add_output(out)
    return poisoned + missing


PIPELINES = {
    "spectral-density": run_spectral_density,
    "fit": run_fit,
    "dispersion": run_dispersion,
    "local-field": run_local_field,
    "pairgen": run_pairgen,
}


def execute(ctx):
    """Run one subcommand end to end; returns files/warnings/poison count."""
    if ctx.resume and ctx.is_complete():
        return ExecResult(no_op=True)
    poisoned = PIPELINES[ctx.subcommand](ctx)
    ctx.finish(poisoned)
    return ExecResult(files=ctx.files, poisoned=poisoned,
                      warnings=ctx.warnings, diagnostics=ctx.diagnostics)
