"""Transmitted field, subtracted photons, populations and g2 from propagated states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .liouvillian import D, G, W, generator_for, ground_state, level_digits
from .model import ChainConfig
from .propagator import (DensityState, evolve_me, integrate_projected, liouvillian_rhs_factory,
                         propagate_conditional_many)

#: g2 entries whose rate denominators fall below this fraction of max R_out are masked.
G2_MASK_FRACTION = 1e-3


@dataclass
class RateTrace:
    """Input and transmitted photon rates plus per-site populations on a grid."""

    times: np.ndarray
    rate_in: np.ndarray
    rate_out: np.ndarray
    populations: np.ndarray  # (T, n, 3) with columns G, W, D

    @property
    def p_ryd(self) -> np.ndarray:
        """Total Rydberg (W + D) population summed over absorbers."""
        return self.populations[:, :, W].sum(axis=1) + self.populations[:, :, D].sum(axis=1)


@dataclass
class PulseMetrics:
    n_in: float
    n_out: float
    n_subtracted: float


@dataclass
class G2Map:
    times: np.ndarray
    values: np.ndarray
    mask: np.ndarray  # True where masked

    def diagonal(self) -> np.ndarray:
        return np.where(np.diag(self.mask), np.nan, np.diag(self.values))


def populations(rho: DensityState) -> np.ndarray:
    """Per-site level populations, shape (T, n, 3)."""
    diag = np.real(np.diagonal(rho.rho, axis1=1, axis2=2))
    digits = level_digits(rho.n_sub)
    out = np.empty((diag.shape[0], rho.n_sub, 3))
    for i in range(rho.n_sub):
        for lev in (G, W, D):
            out[:, i, lev] = diag[:, digits[:, i] == lev].sum(axis=1)
    return out


def _output_intensity_many(gen, rhos, alphas):
    """tr(O^+ O rho) for O = i alpha + S over a stack (T, d, d): alpha^2 tr + <S^+ S> + 2 alpha Im<S>."""
    s = gen.collective
    s = s.toarray() if hasattr(s, "toarray") else np.asarray(s)
    sds = s.conj().T @ s
    # tr(A rho) = sum_ij A_ij rho_ji
    n_s = np.real(np.einsum("ij,tji->t", sds, rhos))
    mean_s = np.einsum("ij,tji->t", s, rhos)
    tr = np.real(np.trace(rhos, axis1=1, axis2=2))
    return alphas ** 2 * tr + n_s + 2.0 * alphas * np.imag(mean_s)


def output_rate(rho: DensityState, cfg: ChainConfig) -> RateTrace:
    """Transmitted photon rate R_out(t) = <O^+ O> with O = i alpha(t) + sum_i sqrt(kappa_i) s_i^-."""
    gen = generator_for(cfg)
    alphas = cfg.pulse.amplitude(rho.times)
    r_out = _output_intensity_many(gen, rho.rho, alphas)
    return RateTrace(rho.times.copy(), alphas ** 2, r_out, populations(rho))


def transmitted_rate(cfg: ChainConfig) -> np.ndarray:
    """R_out on ``cfg.t_grid`` from the ground state, without storing density matrices.

    Equivalent to ``output_rate(evolve_me(cfg), cfg).rate_out`` but far cheaper on
    dense grids since only three linear functionals of rho are carried.
    """
    gen = generator_for(cfg)
    s = gen.collective
    s = s.toarray() if hasattr(s, "toarray") else np.asarray(s)
    # tr(A rho) = A^T.ravel() . vec(rho) for row-major vec
    proj = np.array([np.eye(gen.dim).ravel(), (s.conj().T @ s).T.ravel(), s.T.ravel()])
    sol = cfg.solver
    vals = integrate_projected(liouvillian_rhs_factory(cfg), ground_state(cfg.n_sub), cfg.t_grid,
                               cfg.pulse.breakpoints(), proj, sol.rtol, sol.atol, sol.max_step, sol.method)
    alphas = cfg.pulse.amplitude(cfg.t_grid)
    return alphas ** 2 * vals[:, 0].real + vals[:, 1].real + 2.0 * alphas * vals[:, 2].imag


def simulate(cfg: ChainConfig, rho0=None) -> tuple[DensityState, RateTrace]:
    state = evolve_me(cfg, rho0)
    return state, output_rate(state, cfg)


def pulse_metrics(trace: RateTrace) -> PulseMetrics:
    n_in = float(trapezoid(trace.rate_in, trace.times))
    n_out = float(trapezoid(trace.rate_out, trace.times))
    return PulseMetrics(n_in, n_out, n_in - n_out)


def raman_integral(trace: RateTrace, cfg: ChainConfig) -> float:
    """sum_i Gamma_i * integral of P_Ryd,i over the grid (mean Raman photons)."""
    per_site = trace.populations[:, :, W] + trace.populations[:, :, D]
    return float(np.sum(cfg.gamma_ramans * trapezoid(per_site, trace.times, axis=0)))


def conservation_residual(cfg: ChainConfig, trace: RateTrace | None = None) -> float:
    """|n_in - n_out - P_Ryd(T) - Gamma * int P_Ryd dt| in photons."""
    if trace is None:
        _, trace = simulate(cfg)
    m = pulse_metrics(trace)
    return abs(m.n_in - m.n_out - trace.p_ryd[-1] - raman_integral(trace, cfg))


def g2_map(cfg: ChainConfig, grid, rho: DensityState | None = None) -> G2Map:
    """Normalised two-time intensity correlation of the transmitted light.

    For each t1 the conditional operator O rho(t1) O^+ is transported to all
    later grid times (quantum regression), then <O^+ O>(t2) is read off.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("g2 grid must be strictly increasing")
    gen = generator_for(cfg)
    if rho is None:
        rho = evolve_me(cfg.replace(t_grid=np.union1d(cfg.t_grid, grid)))
    pos = np.searchsorted(rho.times, grid)
    if np.any(pos >= rho.times.size) or not np.allclose(rho.times[np.minimum(pos, rho.times.size - 1)], grid,
                                                        rtol=0, atol=1e-12):
        raise ValueError("state samples must include every g2 grid time")
    rhos = rho.rho[pos]
    alphas = cfg.pulse.amplitude(grid)
    r_out = _output_intensity_many(gen, rhos, alphas)
    m = grid.size
    numer = np.full((m, m), np.nan)
    for j, t1 in enumerate(grid):
        O = gen.output_operator(t1, alpha=alphas[j])
        cond = np.asarray(O @ rhos[j] @ O.conj().T)
        cond = 0.5 * (cond + cond.conj().T)
        later = grid[j:]
        moved = propagate_conditional_many(cond, t1, later, cfg)
        numer[j, j:] = _output_intensity_many(gen, np.asarray(moved), alphas[j:])
    upper = np.triu(numer)
    numer = upper + np.triu(numer, 1).T
    denom = np.outer(r_out, r_out)
    low = r_out < G2_MASK_FRACTION * max(r_out.max(), 0.0)
    mask = low[:, None] | low[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(mask, np.nan, numer / denom)
    return G2Map(grid.copy(), values, mask)
