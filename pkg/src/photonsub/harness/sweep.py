"""Two-parameter sweeps over single-chain observables."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..liouvillian import D, W
from ..model import ChainConfig, ConfigError, PulseSpec, SuperatomParams
from ..observables import populations
from ..propagator import evolve_me

SWEEP_PARAMETERS = ("gamma_d", "r_in", "kappa", "gamma_raman", "n_sub", "tau")


def _final_populations(cfg):
    return populations(evolve_me(cfg))[-1]


def dark_population(cfg):
    """Total dark-state population at the end of the grid."""
    return float(_final_populations(cfg)[:, D].sum())


def rydberg_population(cfg):
    pops = _final_populations(cfg)
    return float(pops[:, W].sum() + pops[:, D].sum())


OBSERVABLES = {"dark_population": dark_population, "rydberg_population": rydberg_population}


@dataclass(frozen=True)
class SweepAxis:
    name: str
    values: tuple

    def __post_init__(self):
        if self.name not in SWEEP_PARAMETERS:
            raise ConfigError(f"cannot sweep {self.name!r}; choose from {', '.join(SWEEP_PARAMETERS)}")
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ConfigError(f"sweep axis {self.name} is empty")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError(f"sweep axis {self.name} must be strictly increasing")
        if self.name == "n_sub" and any(v != int(v) or v < 1 for v in vals):
            raise ConfigError("n_sub values must be integers >= 1")
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise ConfigError(f"sweep axis {self.name} needs finite values >= 0")
        object.__setattr__(self, "values", vals)

    @classmethod
    def linear(cls, name, start, stop, num):
        return cls(name, tuple(np.linspace(start, stop, int(num))))

    @classmethod
    def log(cls, name, start, stop, num):
        return cls(name, tuple(np.geomspace(start, stop, int(num))))


@dataclass(frozen=True)
class SweepSpec:
    axis1: SweepAxis
    axis2: SweepAxis
    base: ChainConfig
    observable: str = "dark_population"

    def __post_init__(self):
        if self.axis1.name == self.axis2.name:
            raise ConfigError("the two sweep axes must differ")
        if self.observable not in OBSERVABLES:
            raise ConfigError(f"unknown observable {self.observable!r}")

    def points(self):
        """(v1, v2) pairs, axis 2 outermost."""
        return [(v1, v2) for v2 in self.axis2.values for v1 in self.axis1.values]


@dataclass
class ResultTable:
    """Long-format sweep result plus analytic boundary series."""

    axis_names: tuple
    observable: str
    rows: list                      # (v1, v2, value)
    diagnostics: list = field(default_factory=list)   # (row index, message)
    boundaries: list = field(default_factory=list)    # (series, gamma_d, r_in)

    def values(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows], dtype=float)

    def grid(self, n1: int, n2: int) -> np.ndarray:
        """Values reshaped to (len(axis2), len(axis1))."""
        return self.values().reshape(n2, n1)


def _with_param(cfg: ChainConfig, name: str, value: float) -> ChainConfig:
    if name in ("gamma_d", "kappa", "gamma_raman"):
        if isinstance(cfg.params, SuperatomParams):
            params = replace(cfg.params, **{name: value})
        else:
            params = tuple(replace(p, **{name: value}) for p in cfg.params)
        return cfg.replace(params=params, t_grid=cfg.t_grid)
    if name == "n_sub":
        # a chain of different length shares the first absorber's rates
        params = cfg.params if isinstance(cfg.params, SuperatomParams) else cfg.params[0]
        return cfg.replace(n_sub=int(value), params=params, t_grid=cfg.t_grid)
    pulse = cfg.pulse
    if pulse.shape == "samples":
        raise ConfigError(f"cannot sweep {name} for a sampled pulse")
    if name == "r_in":
        # the rate is the plateau value; keep the duration
        width = pulse.fwhm
        pulse = pulse.with_photons(value * width)
    elif name == "tau":
        rate = pulse.peak_rate
        pulse = PulseSpec(pulse.shape, value, min(pulse.ramp, value), rate * value, pulse.start_time)
    return cfg.replace(pulse=pulse, t_grid=cfg.t_grid)


def point_config(spec: SweepSpec, v1: float, v2: float) -> ChainConfig:
    cfg = _with_param(spec.base, spec.axis1.name, v1)
    cfg = _with_param(cfg, spec.axis2.name, v2)
    # the observables are final-time values, so two grid points suffice;
    # keep the base grid's start and its tail after the pulse
    tail = max(0.0, float(spec.base.t_grid[-1]) - spec.base.pulse.support()[1])
    t0, t1 = cfg.pulse.support()
    start = min(t0, float(spec.base.t_grid[0]))
    stop = max(t1 + tail, start + 1e-9)
    return cfg.replace(t_grid=np.array([start, stop]))


def _evaluate(args):
    spec, v1, v2 = args
    try:
        value = OBSERVABLES[spec.observable](point_config(spec, v1, v2))
        if not math.isfinite(value):
            return math.nan, "non-finite observable"
        return value, None
    except Exception as exc:  # recorded per point, never aborts the sweep
        return math.nan, f"{type(exc).__name__}: {exc}"


def boundary_series(spec: SweepSpec) -> list:
    """Analytic P_D = 0.9 criteria lines (only for a gamma_d by r_in sweep).

    Rows are (series, gamma_d, r_in):
    drive     sqrt(kappa R_in) tau = pi/2 (horizontal in R_in)
    dephasing exp(-gamma_d tau) = 0.1 (vertical in gamma_d)
    overdamp  exp(-4 kappa R_in tau / gamma_d) = 0.1 (diagonal)
    """
    names = {spec.axis1.name, spec.axis2.name}
    if names != {"gamma_d", "r_in"}:
        return []
    p = spec.base.site_params[0]
    tau = spec.base.pulse.fwhm
    kappa = p.kappa
    ax = {spec.axis1.name: spec.axis1.values, spec.axis2.name: spec.axis2.values}
    gds = np.asarray(ax["gamma_d"])
    ris = np.asarray(ax["r_in"])
    out = []
    r_drive = (math.pi / (2.0 * tau)) ** 2 / kappa
    for gd in gds:
        out.append(("drive", float(gd), r_drive))
    gd_vert = math.log(10.0) / tau
    for r in ris:
        out.append(("dephasing", gd_vert, float(r)))
    for gd in gds:
        out.append(("overdamp", float(gd), gd * math.log(10.0) / (4.0 * kappa * tau)))
    return out


def run_sweep(spec: SweepSpec, threads: int = 1) -> ResultTable:
    """Evaluate the observable at every grid point; order is axis-2-major whatever ``threads`` is."""
    pts = spec.points()
    jobs = [(spec, v1, v2) for v1, v2 in pts]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_evaluate, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        results = [_evaluate(j) for j in jobs]
    rows, diags = [], []
    for i, ((v1, v2), (val, msg)) in enumerate(zip(pts, results)):
        rows.append((v1, v2, val))
        if msg is not None:
            diags.append((i, msg))
    return ResultTable((spec.axis1.name, spec.axis2.name), spec.observable, rows, diags,
                       boundary_series(spec))
