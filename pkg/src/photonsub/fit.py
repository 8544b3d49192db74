"""Least-squares estimation of (kappa, Gamma, gamma_D) from transmitted-rate traces."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .model import ChainConfig, PulseSpec, SolverOptions, SuperatomParams
from .observables import transmitted_rate

#: Samples where the input rate is below this fraction of its peak get zero weight by default.
EDGE_FRACTION = 0.1


class DegenerateDataError(ValueError):
    """Traces carry no temporal structure to fit against."""


@dataclass
class Trace:
    mean_photons_in: float
    times: np.ndarray
    rate_out: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.rate_out = np.asarray(self.rate_out, dtype=float)
        if self.times.shape != self.rate_out.shape or self.times.ndim != 1 or self.times.size < 2:
            raise ValueError("times and rate_out must be 1d arrays of equal length >= 2")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trace times must be strictly increasing")
        if np.any(self.rate_out < 0):
            raise ValueError("rate samples must be >= 0")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != self.times.shape or np.any(self.weights < 0):
                raise ValueError("weights must match times and be >= 0")


@dataclass
class TransmissionDataset:
    traces: list
    pulse: PulseSpec
    n_sub: int

    def __post_init__(self):
        if not self.traces:
            raise ValueError("dataset needs at least one trace")

    def pulse_for(self, trace: Trace) -> PulseSpec:
        return self.pulse.with_photons(trace.mean_photons_in)

    def weights_for(self, trace: Trace) -> np.ndarray:
        if trace.weights is not None:
            return trace.weights
        r_in = self.pulse_for(trace).rate(trace.times)
        peak = r_in.max() if r_in.size else 0.0
        return (r_in > EDGE_FRACTION * peak).astype(float)


@dataclass
class FitOptions:
    max_iter: int = 500
    xtol: float = 1e-6
    initial_step: float = 0.1  # simplex size in log-rate units
    solver: SolverOptions = field(default_factory=SolverOptions)


@dataclass
class FitResult:
    kappa: float
    gamma_raman: float
    gamma_d: float
    residual: float
    initial_residual: float
    iterations: int
    evaluations: int
    converged: bool
    message: str = ""

    @property
    def params(self) -> SuperatomParams:
        return SuperatomParams(kappa=self.kappa, gamma_d=self.gamma_d, gamma_raman=self.gamma_raman)


def model_rate(params: SuperatomParams, n_sub: int, pulse: PulseSpec, times,
               solver: SolverOptions | None = None) -> np.ndarray:
    cfg = ChainConfig(n_sub, params, pulse, t_grid=times, solver=solver or SolverOptions())
    return transmitted_rate(cfg)


def objective(params: SuperatomParams, data: TransmissionDataset, solver: SolverOptions | None = None) -> float:
    """Weighted sum of squared differences between model and measured R_out."""
    total = 0.0
    for tr in data.traces:
        model = model_rate(params, data.n_sub, data.pulse_for(tr), tr.times, solver)
        total += float(np.sum(data.weights_for(tr) * (model - tr.rate_out) ** 2))
    return total


def _to_log(p: SuperatomParams) -> np.ndarray:
    return np.log([p.kappa, p.gamma_raman, p.gamma_d])


def _from_log(x) -> SuperatomParams:
    k, gr, gd = np.exp(x)
    return SuperatomParams(kappa=float(k), gamma_d=float(gd), gamma_raman=float(gr))


def fit_params(data: TransmissionDataset, init: SuperatomParams, opts: FitOptions | None = None) -> FitResult:
    """Nelder-Mead fit of shared rates over log-parameters.

    Stops when the simplex spread in log-rates (i.e. relative spread of the
    rates) falls below ``opts.xtol`` or after ``opts.max_iter`` iterations;
    the best vertex is returned either way.
    """
    opts = opts or FitOptions()
    if min(init.kappa, init.gamma_raman, init.gamma_d) <= 0:
        raise ValueError("initial rates must be > 0")
    if all(np.ptp(tr.rate_out) == 0 for tr in data.traces):
        raise DegenerateDataError("all traces are constant")
    scale = sum(float(np.sum(data.weights_for(tr) * tr.rate_out ** 2)) for tr in data.traces)
    if scale <= 0:
        raise DegenerateDataError("no weighted signal in the traces")

    def f(x):
        return objective(_from_log(x), data, opts.solver) / scale

    x0 = _to_log(init)
    simplex = np.vstack([x0] + [x0 + opts.initial_step * e for e in np.eye(3)])
    f0 = f(x0)
    res = minimize(f, x0, method="Nelder-Mead",
                   options={"maxiter": opts.max_iter, "xatol": opts.xtol, "fatol": 1e-15,
                            "initial_simplex": simplex})
    best = _from_log(res.x)
    return FitResult(kappa=best.kappa, gamma_raman=best.gamma_raman, gamma_d=best.gamma_d,
                     residual=float(res.fun) * scale, initial_residual=f0 * scale,
                     iterations=int(res.nit), evaluations=int(res.nfev) + 1,
                     converged=bool(res.status == 0), message=str(res.message))


def simulate_dataset(truth: SuperatomParams, template: ChainConfig, mean_photons, noise: float = 0.0,
                     seed: int = 0) -> TransmissionDataset:
    """Model traces for each input photon number, with multiplicative Gaussian noise."""
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = np.random.default_rng(seed)
    traces = []
    for n_in in mean_photons:
        pulse = template.pulse.with_photons(n_in)
        rate = model_rate(truth, template.n_sub, pulse, template.t_grid, template.solver)
        rate = np.clip(rate, 0.0, None)
        if noise > 0:
            rate = np.clip(rate * (1.0 + noise * rng.standard_normal(rate.size)), 0.0, None)
        traces.append(Trace(float(n_in), template.t_grid.copy(), rate))
    return TransmissionDataset(traces, template.pulse, template.n_sub)


def relative_errors(result: FitResult, truth: SuperatomParams) -> dict:
    return {
        "kappa": abs(result.kappa / truth.kappa - 1.0),
        "gamma_raman": abs(result.gamma_raman / truth.gamma_raman - 1.0) if truth.gamma_raman else math.nan,
        "gamma_d": abs(result.gamma_d / truth.gamma_d - 1.0),
    }
