"""Full counting statistics of Raman-scattered photons.

The chain is extended by a counting register: rho_m is the (unnormalised)
state conditioned on m Raman photons having been emitted.  Raman jump terms
L rho L^+ move weight from block m to block m + 1; everything else acts
within a block.  The last block M keeps its own Raman jumps (overflow).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import trapezoid

from .liouvillian import generator_for, ground_state, sandwich_superoperator
from .model import ChainConfig, SolverOptions
from .observables import populations
from .propagator import TrajectoryEnsemble, evolve_me, integrate_linear, segment_alpha

RAMAN_TAGS = ("raman_bright", "raman_dark")
OVERFLOW_TOL = 1e-6


class TruncationWarning(UserWarning):
    """The counting register's top block holds non-negligible probability."""


@dataclass
class CountingState:
    times: np.ndarray
    blocks: np.ndarray  # (T, M + 1, d, d)

    @property
    def max_count(self) -> int:
        return self.blocks.shape[1] - 1

    def block_traces(self) -> np.ndarray:
        """tr(rho_m(t)) as an array of shape (T, M + 1); rows sum to 1 up to integrator error."""
        return np.real(np.trace(self.blocks, axis1=2, axis2=3))

    def probabilities(self) -> np.ndarray:
        """P(m, t), normalised per time so integrator trace drift does not leak into moments."""
        tr = self.block_traces()
        return tr / tr.sum(axis=1, keepdims=True)

    def marginal(self) -> np.ndarray:
        """Sum over the register, i.e. the unconditional density matrices."""
        return self.blocks.sum(axis=1)


@dataclass
class CountDistribution:
    time: float
    probabilities: np.ndarray
    stderr: np.ndarray
    mean: float
    mean_stderr: float


def _raman_jumps(gen):
    return [j for j in gen.jumps if j.tag in RAMAN_TAGS]


def default_register_size(cfg: ChainConfig) -> int:
    """ceil(mean + 6 sqrt(var) + 5) from a coarse Raman-loss estimate, with var ~ mean."""
    if not cfg.has_raman:
        return 1
    coarse = cfg.replace(solver=SolverOptions(rtol=1e-5, atol=1e-7, method=cfg.solver.method),
                         t_grid=cfg.t_grid)
    pops = populations(evolve_me(coarse))
    ryd = pops[:, :, 1] + pops[:, :, 2]
    mean = float(np.sum(cfg.gamma_ramans * trapezoid(ryd, cfg.t_grid, axis=0)))
    return max(1, int(math.ceil(mean + 6.0 * math.sqrt(mean) + 5.0)))


def _block_superoperators(gen, M):
    l0, l1 = gen.superoperators()
    d2 = gen.dim ** 2
    jump = sp.csr_matrix((d2, d2), dtype=complex)
    for j in _raman_jumps(gen):
        jump = jump + sandwich_superoperator(j.operator, gen.dim)
    eye = sp.identity(M + 1, format="csr")
    shift = sp.diags([np.ones(M)], [-1], shape=(M + 1, M + 1), format="csr")
    top = sp.csr_matrix(([1.0], ([M], [M])), shape=(M + 1, M + 1))
    big0 = sp.kron(eye, l0 - jump) + sp.kron(shift + top, jump)
    big1 = sp.kron(eye, l1)
    return big0.tocsr(), big1.tocsr()


def evolve_counting(cfg: ChainConfig, M: int | None = None, rho0=None) -> CountingState:
    """Propagate the register-extended master equation on ``cfg.t_grid``."""
    M = default_register_size(cfg) if M is None else int(M)
    if M < 1:
        raise ValueError("register size M must be >= 1")
    gen = generator_for(cfg)
    d = gen.dim
    y0 = np.zeros((M + 1, d, d), complex)
    y0[0] = ground_state(cfg.n_sub) if rho0 is None else rho0
    pulse = cfg.pulse

    if gen.dense:
        big0, big1 = _block_superoperators(gen, M)

        def make(a, b):
            alpha = segment_alpha(pulse, a, b)
            return lambda t, y: big0 @ y + alpha(t) * (big1 @ y)
    else:
        within = [j for j in gen.jumps if j.tag not in RAMAN_TAGS]
        raman = _raman_jumps(gen)

        def make(a, b):
            alpha = segment_alpha(pulse, a, b)

            def f(t, y):
                blocks = y.reshape(M + 1, d, d)
                al = alpha(t)
                out = np.empty_like(blocks)
                for m in range(M + 1):
                    # decay already includes the Raman L^+ L terms; only sandwiches differ
                    out[m] = gen.rhs(blocks[m], t, alpha=al, jumps=within)
                    src = blocks[m - 1] if m > 0 else None
                    for j in raman:
                        L = j.operator
                        if src is not None:
                            out[m] += np.asarray(L @ (L @ src.conj().T).conj().T)
                        if m == M:
                            out[m] += np.asarray(L @ (L @ blocks[m].conj().T).conj().T)
                return out.ravel()

            return f

    s = cfg.solver
    ys = integrate_linear(make, y0, cfg.t_grid, pulse.breakpoints(), s.rtol, s.atol, s.max_step, s.method)
    blocks = ys.reshape(-1, M + 1, d, d)
    blocks = 0.5 * (blocks + np.conj(np.swapaxes(blocks, 2, 3)))
    state = CountingState(cfg.t_grid.copy(), blocks)
    overflow = state.probabilities()[:, -1].max()
    if cfg.has_raman and overflow > OVERFLOW_TOL:
        warnings.warn(f"counting register truncated: P(M={M}) reaches {overflow:.2e}", TruncationWarning,
                      stacklevel=2)
    return state


def raman_moments(cs: CountingState) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of the Raman photon number at every sample time."""
    p = cs.probabilities()
    m = np.arange(p.shape[1])
    mean = p @ m
    var = p @ (m ** 2) - mean ** 2
    return mean, var


def trajectory_count_distribution(ens: TrajectoryEnsemble, t: float, tags=RAMAN_TAGS,
                                  site: int | None = None) -> CountDistribution:
    """Empirical distribution of Raman jumps recorded up to time ``t``."""
    if ens.n_traj < 1:
        raise ValueError("empty ensemble")
    counts = ens.counts(t, tags=tags, site=site)
    n = counts.size
    p = np.bincount(counts, minlength=1) / n
    stderr = np.sqrt(p * (1 - p) / n)
    mean = float(counts.mean())
    mean_se = float(counts.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return CountDistribution(float(t), p, stderr, mean, mean_se)
