"""``photonsub`` command-line entry point.

Every command writes its tables to ``--out`` (CSV with 12 significant
digits, or JSON) plus ``run.json`` holding the provenance header and the
fully resolved configuration.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from ..counting import TruncationWarning, evolve_counting, raman_moments, trajectory_count_distribution
from ..detection import NOISE_SCALE_FITTED, P2_FITTED, DARK_COUNTS_PER_WINDOW, DetectionParams, ion_statistics
from ..fit import DegenerateDataError, FitOptions, fit_params, simulate_dataset
from ..liouvillian import D, G, W
from ..model import ChainConfig, ConfigError, SuperatomParams
from ..observables import conservation_residual, g2_map, pulse_metrics, raman_integral, simulate
from ..propagator import IntegrationError, run_trajectories
from ..reduced import evolve_rate_equation
from .config import RunConfig, _check_keys, _number, load_config
from .io import Table, provenance, read_dataset, write_dataset, write_sidecar, write_table
from .sweep import OBSERVABLES, SweepAxis, SweepSpec, run_sweep

log = logging.getLogger("photonsub")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_NOCONV = 0, 2, 3, 4


class NumericalFailure(RuntimeError):
    pass


def _population_columns(n):
    return [f"p_{lev}_{i}" for i in range(n) for lev in ("g", "w", "d")]


def _population_values(pops_t):
    return [pops_t[i, lev] for i in range(pops_t.shape[0]) for lev in (G, W, D)]


# ---------------------------------------------------------------------------
# commands; each returns ({name: Table}, extra metadata, exit code)
# ---------------------------------------------------------------------------

def cmd_simulate(rc: RunConfig, args):
    cfg = rc.chain
    _, trace = simulate(cfg)
    t = Table(["time_us", "rate_in_per_us", "rate_out_per_us", "p_ryd"] + _population_columns(cfg.n_sub))
    for k in range(trace.times.size):
        t.append(trace.times[k], trace.rate_in[k], trace.rate_out[k], trace.p_ryd[k],
                 *_population_values(trace.populations[k]))
    m = pulse_metrics(trace)
    metrics = Table(["n_in", "n_out", "n_subtracted", "p_ryd_final", "raman_photons", "conservation_residual"])
    metrics.append(m.n_in, m.n_out, m.n_subtracted, trace.p_ryd[-1], raman_integral(trace, cfg),
                   conservation_residual(cfg, trace))
    return {"trace": t, "metrics": metrics}, {}, EXIT_OK


def cmd_g2(rc: RunConfig, args):
    sec = rc.section("g2")
    _check_keys(sec, {"points", "t_min_us", "t_max_us"}, "g2")
    lo, hi = rc.chain.pulse.support()
    n = int(_number(sec, "points", 36, "g2"))
    if n < 2:
        raise ConfigError("[g2] points must be >= 2")
    grid = np.linspace(_number(sec, "t_min_us", lo, "g2"), _number(sec, "t_max_us", hi, "g2"), n)
    g2 = g2_map(rc.chain, grid)
    t = Table(["t1_us", "t2_us", "g2", "masked"])
    for i, t1 in enumerate(g2.times):
        for j, t2 in enumerate(g2.times):
            t.append(t1, t2, g2.values[i, j], bool(g2.mask[i, j]))
    return {"g2": t}, {}, EXIT_OK


def cmd_count(rc: RunConfig, args):
    sec = rc.section("count")
    _check_keys(sec, {"register_size", "register", "trajectories"}, "count")
    cfg = rc.chain
    tables = {}
    extra = {}
    if sec.get("register", True):
        M = sec.get("register_size")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", TruncationWarning)
            cs = evolve_counting(cfg, M=M)
        extra["register_warnings"] = [str(w.message) for w in caught]
        mean, var = raman_moments(cs)
        mom = Table(["time_us", "raman_mean", "raman_variance"])
        for k in range(cs.times.size):
            mom.append(cs.times[k], mean[k], var[k])
        dist = Table(["m", "probability"])
        for m, p in enumerate(cs.probabilities()[-1]):
            dist.append(m, p)
        tables["raman_moments"] = mom
        tables["raman_distribution"] = dist
        extra["register_size"] = cs.max_count
    if sec.get("trajectories", False):
        ens = run_trajectories(cfg)
        cd = trajectory_count_distribution(ens, float(cfg.t_grid[-1]))
        dist = Table(["m", "probability", "stderr"])
        for m, (p, se) in enumerate(zip(cd.probabilities, cd.stderr)):
            dist.append(m, p, se)
        tables["raman_distribution_traj"] = dist
        extra["trajectory_mean"] = cd.mean
        extra["trajectory_mean_stderr"] = cd.mean_stderr
    return tables, extra, EXIT_OK


def cmd_adiabatic(rc: RunConfig, args):
    cfg = rc.chain
    if cfg.n_sub != 1:
        raise ConfigError("adiabatic needs n_sub = 1")
    rate = evolve_rate_equation(cfg)
    _, trace = simulate(cfg)
    t = Table(["time_us", "rho_gg_rate", "rho_dd_rate", "rho_dd_me", "difference"])
    for k in range(rate.times.size):
        me = trace.populations[k, 0, D]
        t.append(rate.times[k], rate.rho_gg[k], rate.rho_dd[k], me, rate.rho_dd[k] - me)
    return {"adiabatic": t}, {"max_abs_difference": float(np.max(np.abs(rate.rho_dd - trace.populations[:, 0, D])))}, EXIT_OK


def _detection_params(sec, n):
    _check_keys(sec, {"eta", "p2_per_photon", "dark_counts_per_window", "noise_scale"}, "detection")

    def per_site(key, default):
        val = sec.get(key, default)
        vals = list(val) if isinstance(val, (list, tuple)) else [val] * n
        if len(vals) != n:
            raise ConfigError(f"[detection] {key} needs {n} entries")
        return [float(v) for v in vals]

    p2_default = list(P2_FITTED) if n == 3 else 0.0
    scale_default = list(NOISE_SCALE_FITTED) if n == 3 else 1.0
    eta = per_site("eta", 0.2)
    p2 = per_site("p2_per_photon", p2_default)
    dark = per_site("dark_counts_per_window", DARK_COUNTS_PER_WINDOW)
    scale = per_site("noise_scale", scale_default)
    try:
        return [DetectionParams(e, q, d, s) for e, q, d, s in zip(eta, p2, dark, scale)]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_ions(rc: RunConfig, args):
    sec = rc.section("ions")
    _check_keys(sec, {"mean_photons"}, "ions")
    cfg = rc.chain
    det = _detection_params(rc.section("detection"), cfg.n_sub)
    n_ins = sec.get("mean_photons", [cfg.pulse.mean_photons])
    t = Table(["mean_photons_in", "absorber", "p_ryd", "mean", "variance", "q", "q_over_mean"])
    for n_in in n_ins:
        _, trace = simulate(cfg.replace(pulse=cfg.pulse.with_photons(float(n_in))))
        p_ryd = np.clip(trace.populations[-1, :, W] + trace.populations[-1, :, D], 0.0, 1.0)
        st = ion_statistics(p_ryd, float(n_in), det)
        for i in range(cfg.n_sub):
            t.append(float(n_in), i, p_ryd[i], st.per_absorber_mean[i], st.per_absorber_variance[i],
                     st.per_absorber_q[i], st.per_absorber_q_over_mean[i])
        t.append(float(n_in), "all", p_ryd.sum(), st.mean, st.variance, st.q, st.q_over_mean)
    return {"ions": t}, {}, EXIT_OK


def cmd_fit(rc: RunConfig, args):
    sec = rc.section("fit")
    _check_keys(sec, {"manifest", "synthetic_mean_photons", "synthetic_noise", "init_kappa_per_us",
                      "init_gamma_raman_per_us", "init_gamma_d_per_us", "max_iter", "xtol",
                      "write_dataset"}, "fit")
    cfg = rc.chain
    truth = cfg.site_params[0]
    if "manifest" in sec:
        manifest = Path(sec["manifest"])
        if not manifest.is_absolute() and args.config:
            manifest = Path(args.config).parent / manifest
        data = read_dataset(manifest, cfg.pulse, cfg.n_sub)
    else:
        data = simulate_dataset(truth, cfg, sec.get("synthetic_mean_photons", [2.0, 10.0, 30.0]),
                                noise=_number(sec, "synthetic_noise", 0.01, "fit"), seed=rc.seed)
        if sec.get("write_dataset", False):
            write_dataset(data, Path(args.out) / "dataset")
    init = SuperatomParams(kappa=_number(sec, "init_kappa_per_us", truth.kappa, "fit"),
                           gamma_d=_number(sec, "init_gamma_d_per_us", truth.gamma_d, "fit"),
                           gamma_raman=_number(sec, "init_gamma_raman_per_us", max(truth.gamma_raman, 1e-3), "fit"))
    opts = FitOptions(max_iter=int(_number(sec, "max_iter", 500, "fit")), xtol=_number(sec, "xtol", 1e-6, "fit"),
                      solver=cfg.solver)
    try:
        res = fit_params(data, init, opts)
    except DegenerateDataError as exc:
        raise ConfigError(str(exc)) from exc
    t = Table(["kappa_per_us", "gamma_raman_per_us", "gamma_d_per_us", "residual", "initial_residual",
               "iterations", "evaluations", "converged"])
    t.append(res.kappa, res.gamma_raman, res.gamma_d, res.residual, res.initial_residual, res.iterations,
             res.evaluations, res.converged)
    code = EXIT_OK if res.converged else EXIT_NOCONV
    return {"fit": t}, {"optimizer_message": res.message}, code


def _axis(table, where):
    _check_keys(table, {"name", "values", "start", "stop", "num", "spacing"}, where)
    name = table.get("name")
    if "values" in table:
        return SweepAxis(name, tuple(table["values"]))
    try:
        start, stop, num = float(table["start"]), float(table["stop"]), int(table["num"])
    except KeyError as exc:
        raise ConfigError(f"[{where}] needs values or start/stop/num") from exc
    spacing = table.get("spacing", "linear")
    if spacing == "log":
        return SweepAxis.log(name, start, stop, num)
    if spacing == "linear":
        return SweepAxis.linear(name, start, stop, num)
    raise ConfigError(f"[{where}] spacing must be linear or log")


def cmd_sweep(rc: RunConfig, args):
    sec = rc.section("sweep")
    _check_keys(sec, {"axis1", "axis2", "observable"}, "sweep")
    if "axis1" not in sec or "axis2" not in sec:
        raise ConfigError("[sweep] needs axis1 and axis2 tables")
    spec = SweepSpec(_axis(sec["axis1"], "sweep.axis1"), _axis(sec["axis2"], "sweep.axis2"), rc.chain,
                     sec.get("observable", "dark_population"))
    res = run_sweep(spec, threads=rc.threads)
    a1, a2 = res.axis_names
    t = Table([a1, a2, "observable", "value"])
    for v1, v2, val in res.rows:
        t.append(v1, v2, res.observable, val)
    b = Table(["series", "gamma_d", "r_in"])
    for row in res.boundaries:
        b.append(*row)
    diags = [{"row": i, "message": m} for i, m in res.diagnostics]
    code = EXIT_OK
    if diags and len(diags) == len(res.rows):
        code = EXIT_NUMERIC
    return {"sweep": t, "boundaries": b}, {"diagnostics": diags, "observables": sorted(OBSERVABLES)}, code


def cmd_chain(rc: RunConfig, args):
    sec = rc.section("chain_compare")
    _check_keys(sec, {"n_sub", "gamma_raman_per_us", "trajectory_above"}, "chain_compare")
    cfg = rc.chain
    p = cfg.site_params[0]
    ns = [int(n) for n in sec.get("n_sub", [1, 2, 4, 8])]
    grs = [float(g) for g in sec.get("gamma_raman_per_us", [0.0, 0.04])]
    traj_above = int(sec.get("trajectory_above", 4))
    t = Table(["n_sub", "gamma_raman_per_us", "method", "dark_population", "stderr"])
    for gr in grs:
        for n in ns:
            c = ChainConfig(n, SuperatomParams(p.kappa, p.gamma_d, gr), cfg.pulse,
                            t_grid=[cfg.t_grid[0], cfg.t_grid[-1]], solver=cfg.solver)
            if n > traj_above:
                ens = run_trajectories(c)
                total = ens.populations[:, -1, :, D].sum(axis=1)
                t.append(n, gr, "trajectories", total.mean(), total.std(ddof=1) / math.sqrt(total.size))
            else:
                _, tr = simulate(c)
                t.append(n, gr, "master_equation", tr.populations[-1, :, D].sum(), 0.0)
    return {"chain": t}, {}, EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "transmitted rate, populations and pulse metrics"),
    "g2": (cmd_g2, "two-time intensity correlation map of the transmitted light"),
    "count": (cmd_count, "Raman photon counting statistics"),
    "adiabatic": (cmd_adiabatic, "rate-equation limit compared with the master equation"),
    "ions": (cmd_ions, "ion-detection statistics from simulated populations"),
    "fit": (cmd_fit, "fit kappa, Gamma and gamma_D to transmission traces"),
    "sweep": (cmd_sweep, "two-parameter sweep of a final-time observable"),
    "chain": (cmd_chain, "dark population for chains of several lengths"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="photonsub", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML configuration file (defaults used if omitted)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, help="override solver.seed")
        p.add_argument("--threads", type=int, help="worker processes for sweeps and trajectories")
        p.add_argument("--format", choices=("csv", "json"), default="csv", dest="fmt")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        rc = load_config(args.config, seed=args.seed, threads=args.threads)
        tables, extra, code = func(rc, args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, NumericalFailure, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(args.out)
    written = [write_table(t, out / name, args.fmt) for name, t in tables.items()]
    header = provenance(args.command, rc.sha256(), rc.seed, rc.resolved())
    extra = dict(extra, exit_code=code)
    written.append(write_sidecar(out, header, written, extra))
    for p in written:
        log.info("wrote %s", p)
    if code == EXIT_NOCONV:
        print("fit did not converge; best point written", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
