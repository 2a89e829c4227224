"""Config-driven experiment runner.

Usage::

    mfscramble <pipeline> --config FILE [--out DIR] [--threads K] [--dt DT] [--quiet]

Exit codes: 0 success, 2 configuration error, 3 tolerance violation,
4 resource cap exceeded.  Numbers are written with 17 significant digits
and every output file gets a ``<name>.meta.json`` sidecar holding the
resolved configuration and the package version.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .bogoliubov import LPropagator, homogeneous_mode_block, mode_blocks_from_propagator
from .config import PIPELINES, ExperimentConfig
from .errors import ConfigError, NormDriftError, ResourceCapError, ToleranceError
from .hartree import evolve, write_conservation_csv, write_snapshot_binary
from .oracle import MAX_SECTOR_DIM, FockBasis, finite_n_moment, finite_n_otoc, system_for
from .scrambling import (OTOC_PREFACTOR, butterfly_fit, otoc_scalar_series, otoc_symplectic_series,
                         sigma_matrix, wick_moment)
from .space import Field

log = logging.getLogger("mfscramble")

EXIT_OK, EXIT_CONFIG, EXIT_TOLERANCE, EXIT_RESOURCE = 0, 2, 3, 4


def _g(x) -> str:
    return f"{float(x):.17g}"


class _Writer:
    """Writes outputs and their sidecars into one directory."""

    def __init__(self, directory: str, cfg: ExperimentConfig, pipeline: str):
        self.directory = directory
        self.cfg = cfg
        self.pipeline = pipeline
        self.files = []
        os.makedirs(directory, exist_ok=True)

    def _sidecar(self, name: str):
        meta = {"artifact_version": __version__, "file": name, "pipeline": self.pipeline,
                "config": self.cfg.resolved()}
        with open(os.path.join(self.directory, name + ".meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def csv(self, name: str, header, rows):
        path = os.path.join(self.directory, name)
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(v if isinstance(v, str) else _g(v) for v in row) + "\n")
        self._sidecar(name)
        self.files.append(path)

    def json(self, name: str, payload):
        path = os.path.join(self.directory, name)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self._sidecar(name)
        self.files.append(path)

    def raw(self, name: str, write_fn):
        path = os.path.join(self.directory, name)
        write_fn(path)
        self._sidecar(name)
        self.files.append(path)


def _formats(cfg) -> set:
    return {f.strip() for f in cfg.values["output"]["formats"].split(",") if f.strip()}


def _trajectory(cfg):
    space = cfg.build_space()
    phi0 = cfg.build_initial_state(space)
    ev = cfg.values["evolution"]
    log.info("evolving Hartree equation to t=%g with dt=%g", ev["t_max"], ev["dt"])
    return space, phi0, evolve(phi0, ev["t_max"], ev["dt"], ev["scheme"])


def _time_grid(cfg, key="t_step"):
    ev, ex = cfg.values["evolution"], cfg.values["experiment"]
    step = ex[key] if ex[key] is not None else ev["t_max"] / 10.0
    n = step / ev["dt"]
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise ConfigError("t_step must be a multiple of dt", cfg.line("experiment", key))
    count = int(round(ev["t_max"] / step))
    return [round(i * step / ev["dt"]) * ev["dt"] for i in range(count + 1)]


def _experiment_times(cfg, default):
    ex = cfg.values["experiment"]
    times = ex["times"] if ex["times"] is not None else default
    t_max = cfg.values["evolution"]["t_max"]
    for t in times:
        if t > t_max + 1e-12:
            raise ConfigError(f"time {t} exceeds t_max={t_max}", cfg.line("experiment", "times"))
    return list(times)


def _observables(cfg, space):
    return cfg.build_observable("A", space), cfg.build_observable("B", space)


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# -- pipelines ---------------------------------------------------------------

def run_hartree(cfg: ExperimentConfig, out: _Writer, threads: int = 1) -> int:
    space, phi0, traj = _trajectory(cfg)
    ev = cfg.values["evolution"]
    out.csv("hartree.csv", ["t", "mass", "energy"],
            zip(traj.times, traj.mass_series, traj.energy_series))
    if "binary" in _formats(cfg):
        out.raw("snapshots.bin", lambda p: write_snapshot_binary(traj, p))
    mass_drift = float(np.max(np.abs(traj.mass_series - 1.0)))
    e0 = traj.energy_series[0]
    scale = abs(e0) if e0 != 0 else 1.0
    energy_drift = float(np.max(np.abs(traj.energy_series - e0)) / scale)
    summary = {"mass_drift": mass_drift, "relative_energy_drift": energy_drift,
               "t_max": traj.t1, "dt": traj.dt, "steps": traj.n_steps, "scheme": traj.scheme}
    closed = _closed_form_error(cfg, space, phi0, traj)
    if closed is not None:
        summary["closed_form_error"] = closed
    ok = mass_drift <= ev["mass_tol"] and energy_drift <= ev["energy_tol"]
    summary["within_tolerance"] = ok
    out.json("hartree_summary.json", summary)
    if not ok:
        raise ToleranceError(f"conservation violated: mass drift {mass_drift:.3e}, "
                             f"relative energy drift {energy_drift:.3e}")
    return EXIT_OK


def _closed_form_error(cfg, space, phi0, traj):
    """L2 distance to the exact phase-rotating solution for homogeneous and plane-wave starts on a torus."""
    prof = cfg.values["initial_state"]["profile"]
    if prof not in ("homogeneous", "plane_wave") or not space.is_spectral:
        return None
    mode = int(np.argmax(np.abs(space.fft(phi0.amplitudes))))
    rho = 1.0 / space.box_length ** space.dimension
    frequency = space.dispersion[mode] + rho * space.vhat[0]
    exact = phi0 * np.exp(-1j * frequency * traj.t1)
    return (traj.state(traj.t1) - exact).norm()


def run_otoc_series(cfg: ExperimentConfig, out: _Writer, threads: int = 1) -> int:
    space, phi0, traj = _trajectory(cfg)
    A, B = _observables(cfg, space)
    grid = _time_grid(cfg)
    prop = LPropagator(traj)
    log.info("propagating %d time points", len(grid))
    scal = otoc_scalar_series(traj, A, B, grid, prop)
    sym = otoc_symplectic_series(traj, A, B, grid, prop)
    vals = OTOC_PREFACTOR * scal ** 2
    out.csv("otoc.csv", ["t", "scalar", "otoc", "symplectic_form"], zip(grid, scal, vals, sym))
    ex = cfg.values["experiment"]
    if ex["fit_window"] is not None:
        try:
            fit = butterfly_fit(grid, vals, ex["fit_window"])
        except ValueError as exc:
            raise ToleranceError(f"butterfly fit failed: {exc}") from None
        out.json("fit.json", {"rate": fit.rate, "r2": fit.r2, "window": list(fit.window)})
    if ex["times"] is not None:
        times = _experiment_times(cfg, [])
        sig = sigma_matrix(traj, A, times, prop)
        m = sig.dim
        out.csv("sigma.csv", ["i", "j", "re", "im"],
                ((str(i + 1), str(j + 1), sig.entries[i, j].real, sig.entries[i, j].imag)
                 for i in range(m) for j in range(m)))
        w = wick_moment(sig, m)
        out.csv("wick.csv", ["m", "re", "im"], [(str(m), w.real, w.imag)])
    return EXIT_OK


def _require_lattice(cfg, space, what):
    if space.is_spectral:
        raise ConfigError(f"{what} needs the lattice backend", cfg.line("space", "backend"))


def _n_list(cfg):
    ex = cfg.values["experiment"]
    ns = ex["n_list"] if ex["n_list"] is not None else [8, 16, 32, 64]
    cap = ex["max_dim"] if ex["max_dim"] is not None else MAX_SECTOR_DIM
    return ns, cap


def _check_caps(space, ns, cap):
    for N in ns:
        FockBasis(space.n_modes, 1, max_dim=cap)  # validates modes
        dim = math.comb(N + space.n_modes - 1, space.n_modes - 1)
        if dim > cap:
            raise ResourceCapError(f"sector dimension {dim} for N={N} exceeds the cap {cap}")


def run_wick_check(cfg: ExperimentConfig, out: _Writer, threads: int = 1) -> int:
    space, phi0, traj = _trajectory(cfg)
    _require_lattice(cfg, space, "wick-check")
    A = cfg.build_observable("A", space)
    times = _experiment_times(cfg, [0.0, 0.3, 0.6, 0.9])
    m = cfg.values["experiment"]["m"]
    if m is not None and m != len(times):
        raise ConfigError(f"m={m} does not match {len(times)} times", cfg.line("experiment", "m"))
    m = len(times)
    ns, cap = _n_list(cfg)
    _check_caps(space, ns, cap)
    sig = sigma_matrix(traj, A, times)
    w = wick_moment(sig, m)
    dt = cfg.values["evolution"]["dt"]

    def one(N):
        log.info("oracle moment N=%d", N)
        return finite_n_moment(space, N, phi0, A, times, dt=dt)

    vals = _map(one, ns, threads)
    out.csv("wick_check.csv", ["N", "m", "re_oracle", "im_oracle", "re_wick", "im_wick", "abs_error"],
            ((str(N), str(m), v.real, v.imag, w.real, w.imag, abs(v - w)) for N, v in zip(ns, vals)))
    out.csv("sigma.csv", ["i", "j", "re", "im"],
            ((str(i + 1), str(j + 1), sig.entries[i, j].real, sig.entries[i, j].imag)
             for i in range(m) for j in range(m)))
    return EXIT_OK


def _loglog_fit(ns, errs):
    ns, errs = np.asarray(ns, float), np.asarray(errs, float)
    keep = errs > 0
    if np.count_nonzero(keep) < 2:
        return {"order": None, "r2": None}
    x, y = np.log(ns[keep]), np.log(errs[keep])
    slope, icpt = np.polyfit(x, y, 1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum((y - icpt - slope * x) ** 2)) / ss_tot
    return {"order": float(-slope), "r2": r2}


def run_oracle_convergence(cfg: ExperimentConfig, out: _Writer, threads: int = 1) -> int:
    space, phi0, traj = _trajectory(cfg)
    _require_lattice(cfg, space, "oracle-converge")
    A, B = _observables(cfg, space)
    times = _experiment_times(cfg, [traj.t1])
    ns, cap = _n_list(cfg)
    _check_caps(space, ns, cap)
    pred = OTOC_PREFACTOR * otoc_scalar_series(traj, A, B, times) ** 2
    dt = cfg.values["evolution"]["dt"]

    def one(N):
        log.info("oracle OTOC N=%d", N)
        system_for(space, N, phi0, dt)
        return [finite_n_otoc(space, N, phi0, A, B, t, dt=dt) for t in times]

    vals = _map(one, ns, threads)
    rows, fits = [], {}
    for it, t in enumerate(times):
        errs = []
        for N, v in zip(ns, vals):
            e = abs(v[it] - pred[it])
            errs.append(e)
            rows.append((str(N), t, v[it], pred[it], e))
        fits[repr(float(t))] = _loglog_fit(ns, errs)
    rows.sort(key=lambda r: (float(r[1]), int(r[0])))
    out.csv("convergence.csv", ["N", "t", "finite_n_value", "bogoliubov_prediction", "abs_error"], rows)
    out.json("convergence_fit.json", {"fits": fits, "prefactor": OTOC_PREFACTOR})
    return EXIT_OK


def run_bogo_spectrum(cfg: ExperimentConfig, out: _Writer, threads: int = 1) -> int:
    space, phi0, traj = _trajectory(cfg)
    if not space.is_spectral or space.dimension != 1:
        raise ConfigError("bogo-spectrum needs a 1-d spectral torus", cfg.line("space", "backend"))
    if cfg.values["initial_state"]["profile"] != "homogeneous":
        raise ConfigError("bogo-spectrum needs the homogeneous profile", cfg.line("initial_state", "profile"))
    ex = cfg.values["experiment"]
    kmax = min(ex["k_max"], (space.grid_points - 1) // 2)
    modes = list(range(1, kmax + 1))
    times = _experiment_times(cfg, [traj.t1])
    tol = ex["tolerance"] if ex["tolerance"] is not None else 1e-8
    c = phi0.amplitudes[0]
    rho = abs(c) ** 2
    num = mode_blocks_from_propagator(LPropagator(traj), modes, times)
    rows, worst = [], 0.0
    for im, m in enumerate(modes):
        eps = space.dispersion[m]
        omega = math.sqrt(max(eps * (eps + 2.0 * rho * space.vhat[m]), 0.0))
        for it, t in enumerate(times):
            err = float(np.max(np.abs(num[im, it] - homogeneous_mode_block(space, c, m, t))))
            worst = max(worst, err)
            rows.append((str(m), omega, t, err))
    out.csv("bogo_spectrum.csv", ["k", "omega", "t", "max_abs_error"], rows)
    out.json("bogo_summary.json", {"max_abs_error": worst, "tolerance": tol, "within_tolerance": worst <= tol})
    if worst > tol:
        raise ToleranceError(f"mode blocks deviate by {worst:.3e} > {tol:g}")
    return EXIT_OK


RUNNERS = {
    "hartree-run": run_hartree,
    "otoc-series": run_otoc_series,
    "wick-check": run_wick_check,
    "oracle-converge": run_oracle_convergence,
    "bogo-spectrum": run_bogo_spectrum,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfscramble", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="pipeline", required=True)
    for name in PIPELINES:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment file (INI)")
        p.add_argument("--out", help="output directory (overrides [output] directory)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for independent particle numbers")
        p.add_argument("--dt", type=float, help="override the time step")
        p.add_argument("--quiet", action="store_true", help="only report errors")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = ExperimentConfig.from_file(args.config)
        declared = cfg.values["experiment"]["pipeline"]
        if declared is not None and declared != args.pipeline:
            raise ConfigError(f"config declares pipeline {declared!r}, not {args.pipeline!r}",
                              cfg.line("experiment", "pipeline"))
        if args.dt is not None:
            cfg.override_dt(args.dt)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        directory = args.out or cfg.values["output"]["directory"]
        writer = _Writer(directory, cfg, args.pipeline)
        code = RUNNERS[args.pipeline](cfg, writer, args.threads)
        log.info("wrote %d files to %s", len(writer.files), directory)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ToleranceError, NormDriftError) as exc:
        print(f"tolerance violation: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    except ResourceCapError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
