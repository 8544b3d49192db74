"""Overdamped single-absorber limit: the bright state adiabatically eliminated."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .model import ChainConfig, SuperatomParams


@dataclass
class RateModelResult:
    times: np.ndarray
    rho_gg: np.ndarray
    rho_dd: np.ndarray


def gamma_eff(p: SuperatomParams, r_in):
    """Effective G -> D transfer rate 4 k R gD / ((k + Gamma + gD)^2 + 4 k R)."""
    r_in = np.asarray(r_in, dtype=float)
    if np.any(r_in < 0):
        raise ValueError("photon rate must be >= 0")
    k, gd, gr = p.kappa, p.gamma_d, p.gamma_raman
    drive = 4.0 * k * r_in
    out = drive * gd / ((k + gr + gd) ** 2 + drive)
    return float(out) if out.ndim == 0 else out


def gamma_eff_asymptote(p: SuperatomParams, r_in):
    """Large-dephasing limit 4 k R / gD."""
    return 4.0 * p.kappa * np.asarray(r_in, dtype=float) / p.gamma_d


def evolve_rate_equation(cfg: ChainConfig) -> RateModelResult:
    """rho_GG(t) = exp(-int gamma_eff(R_in(t')) dt'), rho_DD = 1 - rho_GG.

    The pulse enters quasi-statically through the instantaneous rate.
    """
    if cfg.n_sub != 1:
        raise ValueError("the rate-equation limit is derived for a single absorber")
    p = cfg.site_params[0]
    pulse = cfg.pulse
    times = cfg.t_grid
    breaks = pulse.breakpoints()

    def rate(t):
        return gamma_eff(p, pulse.rate(t))

    exponent = np.zeros(times.size)
    for i in range(1, times.size):
        a, b = times[i - 1], times[i]
        inner = [x for x in breaks if a < x < b]
        val, _ = quad(rate, a, b, points=inner or None, epsabs=1e-14, epsrel=1e-12, limit=200)
        exponent[i] = exponent[i - 1] + val
    rho_gg = np.exp(-exponent)
    return RateModelResult(times.copy(), rho_gg, 1.0 - rho_gg)
