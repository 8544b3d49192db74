"""TOML run configuration with unit-suffixed keys.

Layout (every section optional; defaults shown)::

    [chain]
    n_sub = 1

    [params]                      # shared by all absorbers
    kappa_per_us = 0.494
    gamma_d_per_us = 2.329
    gamma_raman_per_us = 0.045
    # or one table per absorber:  [[params.site]] with the same keys

    [pulse]
    shape = "tukey"               # tukey | flat | samples
    mean_photons = 10.0           # or rate_per_us (flat pulses)
    fwhm_us = 2.5                 # flat pulses: duration_us
    ramp_us = 1.0
    start_us = 0.0
    # samples: times_us = [...], rates_per_us = [...]

    [grid]
    points_per_us = 80.0          # resolution relative to the fastest rate
    tail_us = 0.0
    # or times_us = [...]

    [solver]
    rtol = 1e-8, atol = 1e-10, max_step_us, method = "DOP853",
    n_traj = 1000, seed = 0, threads = 1

Command-specific tables ([g2], [count], [adiabatic], [ions], [detection],
[fit], [sweep], [chain_compare]) are validated by the commands that use them.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from ..model import (FITTED_PARAMS, ChainConfig, ConfigError, PulseSpec, SolverOptions, SuperatomParams,
                     default_grid)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SECTIONS = ("chain", "params", "pulse", "grid", "solver", "g2", "count", "adiabatic", "ions",
            "detection", "fit", "sweep", "chain_compare")

_PARAM_KEYS = {"kappa_per_us", "gamma_d_per_us", "gamma_raman_per_us"}
_SOLVER_KEYS = {"rtol", "atol", "max_step_us", "method", "n_traj", "seed", "threads",
                "traj_rtol", "traj_atol"}


@dataclass
class RunConfig:
    """Resolved configuration: the simulation plus the raw command tables."""

    chain: ChainConfig
    raw: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    @property
    def seed(self) -> int:
        return self.chain.solver.seed

    @property
    def threads(self) -> int:
        return self.chain.solver.threads

    def resolved(self) -> dict:
        """Everything needed to reproduce a run, JSON-serialisable."""
        out = {k: v for k, v in self.raw.items() if k not in ("chain", "params", "pulse", "grid", "solver")}
        out["simulation"] = self.chain.as_dict()
        grid = self.chain.t_grid
        if not np.allclose(grid, np.linspace(grid[0], grid[-1], grid.size), rtol=0, atol=1e-12):
            out["simulation"]["t_grid_us"]["times"] = grid.tolist()
        return _jsonable(out)

    def sha256(self) -> str:
        """Hash of the resolved configuration, ignoring the worker count."""
        data = self.resolved()
        data["simulation"]["solver"].pop("threads", None)
        blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _check_keys(table: dict, allowed: set, where: str) -> None:
    extra = set(table) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(extra))}")


def _number(table: dict, key: str, default=None, where: str = ""):
    if key not in table:
        if default is None:
            raise ConfigError(f"missing required key {key!r} in [{where}]")
        return default
    val = table[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"[{where}] {key} must be a number")
    return float(val)


def parse_params(table: dict, n_sub: int):
    default = FITTED_PARAMS[min(n_sub, 3)]

    def one(t, where):
        _check_keys(t, _PARAM_KEYS, where)
        return SuperatomParams(
            kappa=_number(t, "kappa_per_us", default.kappa, where),
            gamma_d=_number(t, "gamma_d_per_us", default.gamma_d, where),
            gamma_raman=_number(t, "gamma_raman_per_us", default.gamma_raman, where),
        )

    if "site" in table:
        sites = table["site"]
        if set(table) - {"site"}:
            raise ConfigError("[params] takes either shared keys or [[params.site]] tables, not both")
        if not isinstance(sites, list) or len(sites) != n_sub:
            raise ConfigError(f"[[params.site]] must list exactly n_sub = {n_sub} absorbers")
        return tuple(one(s, f"params.site[{i}]") for i, s in enumerate(sites))
    return one(table, "params")


def parse_pulse(table: dict) -> PulseSpec:
    shape = table.get("shape", "tukey")
    start = _number(table, "start_us", 0.0, "pulse")
    if shape == "tukey":
        _check_keys(table, {"shape", "mean_photons", "fwhm_us", "ramp_us", "start_us"}, "pulse")
        return PulseSpec.tukey(_number(table, "mean_photons", 10.0, "pulse"),
                               _number(table, "fwhm_us", 2.5, "pulse"),
                               _number(table, "ramp_us", 1.0, "pulse"), start)
    if shape == "flat":
        _check_keys(table, {"shape", "rate_per_us", "mean_photons", "duration_us", "start_us"}, "pulse")
        duration = _number(table, "duration_us", 3.0, "pulse")
        if "rate_per_us" in table and "mean_photons" in table:
            raise ConfigError("[pulse] give rate_per_us or mean_photons, not both")
        if "mean_photons" in table:
            rate = _number(table, "mean_photons", where="pulse") / duration if duration > 0 else 0.0
        else:
            rate = _number(table, "rate_per_us", 5.0, "pulse")
        return PulseSpec.flat(rate, duration, start)
    if shape == "samples":
        _check_keys(table, {"shape", "mean_photons", "times_us", "rates_per_us", "start_us"}, "pulse")
        if "times_us" not in table or "rates_per_us" not in table:
            raise ConfigError("[pulse] shape 'samples' needs times_us and rates_per_us")
        return PulseSpec("samples", mean_photons=_number(table, "mean_photons", 10.0, "pulse"),
                         start_time=start, sample_times=tuple(table["times_us"]),
                         sample_rates=tuple(table["rates_per_us"]))
    raise ConfigError(f"unknown pulse shape {shape!r}")


def parse_solver(table: dict) -> SolverOptions:
    _check_keys(table, _SOLVER_KEYS, "solver")
    kw = {}
    for key in ("rtol", "atol", "traj_rtol", "traj_atol"):
        if key in table:
            kw[key] = _number(table, key, where="solver")
    if "max_step_us" in table:
        kw["max_step"] = _number(table, "max_step_us", where="solver")
    if "method" in table:
        kw["method"] = str(table["method"])
    for key in ("n_traj", "seed", "threads"):
        if key in table:
            val = table[key]
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"[solver] {key} must be an integer")
            kw[key] = val
    if kw.get("n_traj", 1) < 1:
        raise ConfigError("[solver] n_traj must be >= 1")
    return SolverOptions(**kw)


def build_grid(table: dict, params, pulse: PulseSpec):
    _check_keys(table, {"points_per_us", "tail_us", "times_us"}, "grid")
    if "times_us" in table:
        if set(table) - {"times_us"}:
            raise ConfigError("[grid] times_us excludes points_per_us and tail_us")
        return np.asarray(table["times_us"], dtype=float)
    ppt = _number(table, "points_per_us", 80.0, "grid")
    tail = _number(table, "tail_us", 0.0, "grid")
    if ppt <= 0 or tail < 0:
        raise ConfigError("[grid] points_per_us must be > 0 and tail_us >= 0")
    if isinstance(params, SuperatomParams):
        params = [params]
    return default_grid(list(params), pulse, points_per_time=ppt, tail=tail)


def from_dict(raw: dict, seed: int | None = None, threads: int | None = None) -> RunConfig:
    raw = copy.deepcopy(raw)
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    for name, table in raw.items():
        if not isinstance(table, dict):
            raise ConfigError(f"[{name}] must be a table")
    chain_t = raw.get("chain", {})
    _check_keys(chain_t, {"n_sub"}, "chain")
    n_sub = chain_t.get("n_sub", 1)
    if isinstance(n_sub, bool) or not isinstance(n_sub, int) or n_sub < 1:
        raise ConfigError("[chain] n_sub must be an integer >= 1")
    params = parse_params(raw.get("params", {}), n_sub)
    pulse = parse_pulse(raw.get("pulse", {}))
    solver_t = dict(raw.get("solver", {}))
    if seed is not None:
        solver_t["seed"] = int(seed)
    if threads is not None:
        solver_t["threads"] = int(threads)
    solver = parse_solver(solver_t)
    grid = build_grid(raw.get("grid", {}), params, pulse)
    cfg = ChainConfig(n_sub, params, pulse, t_grid=grid, solver=solver)
    return RunConfig(cfg, raw)


def from_resolved(resolved: dict, seed: int | None = None, threads: int | None = None) -> RunConfig:
    """Rebuild a run from the ``config`` block of a ``run.json`` sidecar."""
    resolved = copy.deepcopy(resolved)
    try:
        sim = resolved.pop("simulation")
        unknown = set(resolved) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
        p = sim["params_per_us"]
        params = (tuple(SuperatomParams(**x) for x in p) if isinstance(p, list) else SuperatomParams(**p))
        pu = sim["pulse"]
        pulse = PulseSpec(pu["shape"], fwhm=pu["fwhm_us"], ramp=pu["ramp_us"], mean_photons=pu["mean_photons"],
                          start_time=pu["start_time_us"], sample_times=tuple(pu.get("sample_times_us", ())),
                          sample_rates=tuple(pu.get("sample_rates_per_us", ())))
        g = sim["t_grid_us"]
        grid = np.asarray(g["times"], dtype=float) if "times" in g else np.linspace(g["start"], g["stop"], g["num"])
        so = dict(sim["solver"])
        so["max_step"] = so.pop("max_step_us") or math.inf
        if seed is not None:
            so["seed"] = int(seed)
        if threads is not None:
            so["threads"] = int(threads)
        cfg = ChainConfig(int(sim["n_sub"]), params, pulse, t_grid=grid, solver=SolverOptions(**so))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed resolved configuration: {exc!r}") from exc
    return RunConfig(cfg, resolved)


def load_config(path=None, seed: int | None = None, threads: int | None = None) -> RunConfig:
    """Read a TOML file, replay a ``run.json`` sidecar, or use all defaults when ``path`` is None."""
    if path is None:
        return from_dict({}, seed, threads)
    if str(path).endswith(".json"):
        try:
            with open(path) as fh:
                meta = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        if not isinstance(meta, dict) or "config" not in meta:
            raise ConfigError(f"{path} has no 'config' block")
        return from_resolved(meta["config"], seed, threads)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return from_dict(raw, seed, threads)
