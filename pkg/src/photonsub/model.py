"""Parameter records, probe pulse shapes and rate conversions.

Units: rates in 1/us, times in us, hbar = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid


class ConfigError(ValueError):
    """Invalid model or simulation parameters."""


def _check_rate(name: str, value: float) -> None:
    if not math.isfinite(value) or value < 0:
        raise ConfigError(f"{name} must be finite and >= 0, got {value!r}")


@dataclass(frozen=True)
class SuperatomParams:
    """Effective three-level rates of one superatom (all in 1/us).

    kappa is the collective forward-emission rate, gamma_d the bright-to-dark
    dephasing and gamma_raman the Raman decay of both excited levels.
    """

    kappa: float
    gamma_d: float
    gamma_raman: float = 0.0

    def __post_init__(self):
        for name in ("kappa", "gamma_d", "gamma_raman"):
            _check_rate(name, getattr(self, name))

    def as_dict(self) -> dict:
        return {"kappa": self.kappa, "gamma_d": self.gamma_d, "gamma_raman": self.gamma_raman}


#: Rates fitted to the measured transmission for one, two and three absorbers.
FITTED_PARAMS = {
    1: SuperatomParams(kappa=0.494, gamma_d=2.329, gamma_raman=0.045),
    2: SuperatomParams(kappa=0.330, gamma_d=3.215, gamma_raman=0.020),
    3: SuperatomParams(kappa=0.350, gamma_d=2.393, gamma_raman=0.040),
}

#: Probe pulse used in the transmission measurements.
PROBE_FWHM = 2.5
PROBE_RAMP = 1.0

PULSE_SHAPES = ("tukey", "flat", "samples")


@dataclass(frozen=True, eq=False)
class PulseSpec:
    """Photon-rate envelope R_in(t) of a coherent probe pulse.

    ``tukey`` is a flat top with raised-cosine edges of length ``ramp``; the
    half-maximum points sit at the ramp midpoints so the full width at half
    maximum is ``fwhm`` and the total duration is ``fwhm + ramp``.  ``flat``
    is rectangular over ``[start_time, start_time + fwhm]``.  ``samples``
    linearly interpolates ``sample_rates`` on ``sample_times`` (relative to
    ``start_time``), rescaled so that the pulse carries ``mean_photons``.
    """

    shape: str = "tukey"
    fwhm: float = PROBE_FWHM
    ramp: float = PROBE_RAMP
    mean_photons: float = 0.0
    start_time: float = 0.0
    sample_times: tuple = ()
    sample_rates: tuple = ()

    def __post_init__(self):
        if self.shape not in PULSE_SHAPES:
            raise ConfigError(f"unknown pulse shape {self.shape!r}")
        if not math.isfinite(self.start_time):
            raise ConfigError("start_time must be finite")
        _check_rate("mean_photons", self.mean_photons)
        if self.shape == "flat":
            object.__setattr__(self, "ramp", 0.0)
        if self.shape == "samples":
            ts = np.asarray(self.sample_times, dtype=float)
            rs = np.asarray(self.sample_rates, dtype=float)
            if ts.ndim != 1 or ts.shape != rs.shape or ts.size < 2:
                raise ConfigError("sample_times and sample_rates must be 1d of equal length >= 2")
            if np.any(np.diff(ts) <= 0):
                raise ConfigError("sample_times must be strictly increasing")
            if np.any(rs < 0) or not np.all(np.isfinite(rs)):
                raise ConfigError("sample_rates must be finite and >= 0")
            area = trapezoid(rs, ts)
            if area <= 0 and self.mean_photons > 0:
                raise ConfigError("sample_rates integrate to zero")
            object.__setattr__(self, "sample_times", tuple(ts))
            object.__setattr__(self, "sample_rates", tuple(rs))
            object.__setattr__(self, "_scale", self.mean_photons / area if area > 0 else 0.0)
        else:
            if not (self.ramp >= 0):
                raise ConfigError("ramp must be >= 0")
            if not (self.fwhm >= self.ramp) or not math.isfinite(self.fwhm):
                raise ConfigError("fwhm must be finite and >= ramp")
            if self.fwhm <= 0 and self.mean_photons > 0:
                raise ConfigError("a pulse carrying photons needs fwhm > 0")

    @classmethod
    def tukey(cls, mean_photons, fwhm=PROBE_FWHM, ramp=PROBE_RAMP, start_time=0.0) -> "PulseSpec":
        return cls("tukey", fwhm, ramp, mean_photons, start_time)

    @classmethod
    def flat(cls, rate, duration, start_time=0.0) -> "PulseSpec":
        """Rectangular pulse with constant photon ``rate`` for ``duration``."""
        return cls("flat", duration, 0.0, rate * duration, start_time)

    @property
    def peak_rate(self) -> float:
        if self.shape == "samples":
            return self._scale * max(self.sample_rates)
        if self.fwhm == 0:
            return 0.0
        return self.mean_photons / self.fwhm

    @property
    def duration(self) -> float:
        if self.shape == "samples":
            return self.sample_times[-1] - self.sample_times[0]
        return self.fwhm + self.ramp

    def support(self) -> tuple[float, float]:
        if self.shape == "samples":
            return (self.start_time + self.sample_times[0], self.start_time + self.sample_times[-1])
        return (self.start_time, self.start_time + self.fwhm + self.ramp)

    def breakpoints(self) -> list[float]:
        """Times where the envelope or one of its low derivatives jumps."""
        t0 = self.start_time
        if self.shape == "samples":
            return sorted({t0 + s for s in self.sample_times})
        pts = {t0, t0 + self.fwhm + self.ramp}
        if self.ramp > 0:
            pts |= {t0 + self.ramp, t0 + self.fwhm}
        return sorted(pts)

    def rate(self, t):
        """Photon rate R_in(t); accepts scalars or arrays."""
        return pulse_rate(t, self)

    def amplitude(self, t):
        """Real non-negative coherent amplitude alpha(t) = sqrt(R_in(t))."""
        return np.sqrt(pulse_rate(t, self))

    def with_photons(self, mean_photons: float) -> "PulseSpec":
        return replace(self, mean_photons=mean_photons)

    def as_dict(self) -> dict:
        out = {"shape": self.shape, "fwhm_us": self.fwhm, "ramp_us": self.ramp,
               "mean_photons": self.mean_photons, "start_time_us": self.start_time}
        if self.shape == "samples":
            out["sample_times_us"] = list(self.sample_times)
            out["sample_rates_per_us"] = list(self.sample_rates)
        return out


def _tukey_scalar(t: float, pulse: PulseSpec) -> float:
    tp = t - pulse.start_time
    w, r = pulse.fwhm, pulse.ramp
    if tp < 0 or tp > w + r:
        return 0.0
    peak = pulse.peak_rate
    if tp < r:
        return 0.5 * peak * (1 - math.cos(math.pi * tp / r))
    if tp > w:
        return 0.5 * peak * (1 + math.cos(math.pi * (tp - w) / r))
    return peak


def pulse_rate(t, pulse: PulseSpec):
    """Evaluate the photon rate envelope of ``pulse`` at time(s) ``t``."""
    scalar = np.ndim(t) == 0
    if scalar and pulse.shape != "samples":
        return _tukey_scalar(float(t), pulse)
    t = np.asarray(t, dtype=float)
    tp = t - pulse.start_time
    if pulse.shape == "samples":
        ts = np.asarray(pulse.sample_times)
        out = pulse._scale * np.interp(tp, ts, np.asarray(pulse.sample_rates), left=0.0, right=0.0)
    else:
        peak = pulse.peak_rate
        w, r = pulse.fwhm, pulse.ramp
        out = np.zeros_like(tp)
        if peak > 0:
            inside = (tp >= 0) & (tp <= w + r)
            out = np.where(inside, peak, 0.0)
            if r > 0:
                rise = (tp >= 0) & (tp < r)
                fall = (tp > w) & (tp <= w + r)
                out = np.where(rise, 0.5 * peak * (1 - np.cos(np.pi * tp / r)), out)
                out = np.where(fall, 0.5 * peak * (1 + np.cos(np.pi * (tp - w) / r)), out)
    return float(out) if scalar else out


@dataclass(frozen=True)
class SolverOptions:
    """Integrator tolerances and stochastic-ensemble settings."""

    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = math.inf
    method: str = "DOP853"
    n_traj: int = 1000
    seed: int = 0
    threads: int = 1
    traj_rtol: float = 1e-7
    traj_atol: float = 1e-9

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0 or self.traj_rtol <= 0 or self.traj_atol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.method not in ("RK45", "DOP853"):
            raise ConfigError(f"unsupported integrator {self.method!r}")
        if self.max_step <= 0:
            raise ConfigError("max_step must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


def characteristic_rate(params: Sequence[SuperatomParams], pulse: PulseSpec) -> float:
    kappa = max(p.kappa for p in params)
    gd = max(p.gamma_d for p in params)
    return max(kappa, gd, math.sqrt(kappa * pulse.peak_rate), 1e-12)


def default_grid(params, pulse: PulseSpec, points_per_time: float = 80.0,
                 tail: float = 0.0, t_start: float | None = None) -> np.ndarray:
    """Uniform sample grid covering the pulse support.

    The spacing resolves the fastest of kappa, gamma_d and the drive
    sqrt(kappa * R_peak) with ``points_per_time`` samples.
    """
    if isinstance(params, SuperatomParams):
        params = [params]
    t0, t1 = pulse.support()
    if t_start is not None:
        t0 = min(t0, t_start)
    t1 += tail
    span = t1 - t0
    if span <= 0:
        return np.array([t0, t0 + 1.0])
    dt = 1.0 / (points_per_time * characteristic_rate(params, pulse))
    n = max(int(math.ceil(span / dt)) + 1, 11)
    return np.linspace(t0, t1, n)


@dataclass(frozen=True, eq=False)
class ChainConfig:
    """Everything that defines one simulation of ``n_sub`` cascaded absorbers.

    ``params`` is either one SuperatomParams shared by all absorbers or a
    sequence with one entry per absorber, site 0 being the most upstream.
    """

    n_sub: int
    params: SuperatomParams | tuple
    pulse: PulseSpec
    t_grid: np.ndarray = field(default=None)
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if int(self.n_sub) != self.n_sub or self.n_sub < 1:
            raise ConfigError("n_sub must be an integer >= 1")
        object.__setattr__(self, "n_sub", int(self.n_sub))
        if not isinstance(self.params, SuperatomParams):
            params = tuple(self.params)
            if len(params) != self.n_sub:
                raise ConfigError(f"expected {self.n_sub} per-absorber parameter sets, got {len(params)}")
            if not all(isinstance(p, SuperatomParams) for p in params):
                raise ConfigError("params entries must be SuperatomParams")
            object.__setattr__(self, "params", params)
        if self.t_grid is None:
            grid = default_grid(self.site_params, self.pulse)
        else:
            grid = np.array(self.t_grid, dtype=float)
        if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ConfigError("t_grid must be strictly increasing with at least two samples")
        if not np.all(np.isfinite(grid)):
            raise ConfigError("t_grid must be finite")
        t0, t1 = self.pulse.support()
        if self.pulse.mean_photons > 0 and (grid[0] > t0 + 1e-12):
            raise ConfigError("t_grid must start at or before the pulse")
        grid.setflags(write=False)
        object.__setattr__(self, "t_grid", grid)

    @property
    def site_params(self) -> tuple:
        if isinstance(self.params, SuperatomParams):
            return (self.params,) * self.n_sub
        return self.params

    @property
    def kappas(self) -> np.ndarray:
        return np.array([p.kappa for p in self.site_params])

    @property
    def gamma_ds(self) -> np.ndarray:
        return np.array([p.gamma_d for p in self.site_params])

    @property
    def gamma_ramans(self) -> np.ndarray:
        return np.array([p.gamma_raman for p in self.site_params])

    @property
    def has_raman(self) -> bool:
        return bool(np.any(self.gamma_ramans > 0))

    @property
    def dim(self) -> int:
        return 3 ** self.n_sub

    def replace(self, **changes) -> "ChainConfig":
        """Copy with changes; the grid is rebuilt unless given explicitly."""
        if "t_grid" not in changes and ("pulse" in changes or "params" in changes):
            keep_default = False
        else:
            keep_default = True
        new = dict(n_sub=self.n_sub, params=self.params, pulse=self.pulse,
                   t_grid=self.t_grid if keep_default else None, solver=self.solver)
        new.update(changes)
        return ChainConfig(**new)

    def as_dict(self) -> dict:
        if isinstance(self.params, SuperatomParams):
            params = self.params.as_dict()
        else:
            params = [p.as_dict() for p in self.params]
        return {
            "n_sub": self.n_sub,
            "params_per_us": params,
            "pulse": self.pulse.as_dict(),
            "t_grid_us": {"start": float(self.t_grid[0]), "stop": float(self.t_grid[-1]),
                          "num": int(self.t_grid.size)},
            "solver": {"rtol": self.solver.rtol, "atol": self.solver.atol,
                       "max_step_us": self.solver.max_step if math.isfinite(self.solver.max_step) else None,
                       "method": self.solver.method, "n_traj": self.solver.n_traj,
                       "seed": self.solver.seed, "threads": self.solver.threads,
                       "traj_rtol": self.solver.traj_rtol, "traj_atol": self.solver.traj_atol},
        }


@dataclass(frozen=True)
class MicroscopicParams:
    """Atomic parameters of one ensemble; angular frequencies in rad/us."""

    n_atoms: float
    g0: float
    omega_c: float
    delta: float
    gamma_e: float
    c6: float = 1.0
    linewidth: float = 1.0

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ConfigError("n_atoms must be >= 1")
        if self.delta == 0 or not math.isfinite(self.delta):
            raise ConfigError("delta must be finite and non-zero")
        for name in ("g0", "omega_c", "gamma_e", "c6", "linewidth"):
            _check_rate(name, abs(getattr(self, name)) if name in ("g0", "omega_c") else getattr(self, name))


def effective_rates(m: MicroscopicParams, gamma_d: float = 0.0) -> SuperatomParams:
    """Collective coupling and Raman rate after eliminating the intermediate state.

    kappa = N g0^2 Omega_c^2 / (2 Delta)^2 and Gamma = Gamma_e Omega_c^2 / (2 Delta)^2.
    The dephasing rate is not fixed by these parameters and is passed through.
    """
    if m.delta == 0:
        raise ConfigError("delta must be non-zero")
    ratio = m.omega_c ** 2 / (2.0 * m.delta) ** 2
    return SuperatomParams(kappa=m.n_atoms * m.g0 ** 2 * ratio, gamma_d=gamma_d,
                           gamma_raman=m.gamma_e * ratio)


def vdw_shift(c6: float, r):
    """Van der Waals pair shift C6 / r^6."""
    return c6 / np.asarray(r, dtype=float) ** 6


def blockade_radius(c6: float, linewidth: float) -> float:
    """Distance at which the pair shift equals the excitation linewidth."""
    if not (c6 > 0 and linewidth > 0):
        raise ConfigError("c6 and linewidth must both be positive")
    return (c6 / linewidth) ** (1.0 / 6.0)
