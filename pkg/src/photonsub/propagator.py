"""Deterministic and stochastic time evolution of superatom chains."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import DOP853, RK45, solve_ivp

from .liouvillian import G, W, D, generator_for, ground_state
from .model import ChainConfig

_STEPPERS = {"DOP853": DOP853, "RK45": RK45}


class IntegrationError(RuntimeError):
    """The adaptive integrator gave up; ``time`` is where it stopped."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (at t = {time:.9g} us)")
        self.time = time


def segment_bounds(t0: float, t1: float, breakpoints) -> list[tuple[float, float]]:
    """Split [t0, t1] at the breakpoints strictly inside it."""
    cuts = [b for b in breakpoints if t0 < b < t1]
    edges = [t0, *cuts, t1]
    return list(zip(edges[:-1], edges[1:]))


def segment_alpha(pulse, a: float, b: float):
    """Amplitude function for one segment, evaluated from inside the segment.

    Rectangular pulses are discontinuous at the breakpoints; clamping keeps
    every stage of a step on the correct side of the edge.
    """
    eps = 1e-9 * (b - a)
    lo, hi = a + eps, b - eps

    def alpha(t):
        return math.sqrt(pulse.rate(min(max(t, lo), hi)))

    return alpha


def integrate_linear(make_rhs, y0, times, breakpoints, rtol, atol, max_step=np.inf,
                     method="DOP853"):
    """Integrate y' = f(t, y) from times[0], sampling y at every entry of ``times``.

    ``make_rhs(a, b)`` returns the right-hand side valid on segment [a, b];
    integration restarts at each breakpoint so kinks and edges of the drive
    never fall inside a step.
    """
    times = np.asarray(times, dtype=float)
    y = np.asarray(y0, dtype=complex).ravel()
    out = np.empty((times.size, y.size), dtype=complex)
    out[0] = y
    if times.size == 1:
        return out
    for a, b in segment_bounds(times[0], times[-1], breakpoints):
        sel = np.nonzero((times > a) & (times <= b))[0]
        t_eval = times[sel]
        if t_eval.size == 0 or t_eval[-1] != b:
            t_eval = np.append(t_eval, b)
        sol = solve_ivp(make_rhs(a, b), (a, b), y, method=method, t_eval=t_eval,
                        rtol=rtol, atol=atol, max_step=max_step)
        if sol.status != 0:
            t_fail = float(sol.t[-1]) if sol.t.size else a
            raise IntegrationError(sol.message, t_fail)
        out[sel] = sol.y[:, : sel.size].T
        y = sol.y[:, -1]
    return out


#: scipy's dense outputs are per-step polynomials of at most this degree (DOP853 is the highest).
_DENSE_DEGREE = 7
_CHEB_NODES = np.cos(np.pi * (np.arange(_DENSE_DEGREE + 1) + 0.5) / (_DENSE_DEGREE + 1))
_CHEB_INV = np.linalg.inv(np.polynomial.chebyshev.chebvander(_CHEB_NODES, _DENSE_DEGREE))


def integrate_projected(make_rhs, y0, times, breakpoints, project, rtol, atol, max_step=np.inf,
                        method="DOP853"):
    """Like integrate_linear but return ``project @ y(t)`` only, shape (T, k).

    The full state is evaluated at 8 Chebyshev nodes per solver step and the
    projected values are re-interpolated, which is exact for the polynomial
    dense output and much cheaper than interpolating the full state at many
    sample times.
    """
    times = np.asarray(times, dtype=float)
    project = np.atleast_2d(np.asarray(project))
    y = np.asarray(y0, dtype=complex).ravel()
    out = np.empty((times.size, project.shape[0]), dtype=complex)
    out[0] = project @ y
    for a, b in segment_bounds(times[0], times[-1], breakpoints):
        sol = solve_ivp(make_rhs(a, b), (a, b), y, method=method, dense_output=True,
                        rtol=rtol, atol=atol, max_step=max_step)
        if sol.status != 0:
            t_fail = float(sol.t[-1]) if sol.t.size else a
            raise IntegrationError(sol.message, t_fail)
        sel = np.nonzero((times > a) & (times <= b))[0]
        if sel.size:
            ts = sol.sol.ts
            step = np.clip(np.searchsorted(ts, times[sel], side="left") - 1, 0, len(ts) - 2)
            for j in np.unique(step):
                lo, hi = ts[j], ts[j + 1]
                nodes = lo + 0.5 * (hi - lo) * (_CHEB_NODES + 1.0)
                coef = _CHEB_INV @ (project @ sol.sol.interpolants[j](nodes)).T
                idx = sel[step == j]
                x = (2.0 * times[idx] - lo - hi) / (hi - lo)
                out[idx] = np.polynomial.chebyshev.chebval(x, coef).T
        y = sol.y[:, -1]
    return out


@dataclass
class DensityState:
    """Density matrices of a chain sampled on a time grid."""

    times: np.ndarray
    rho: np.ndarray
    n_sub: int

    @property
    def dim(self) -> int:
        return self.rho.shape[-1]

    def trace(self) -> np.ndarray:
        return np.real(np.trace(self.rho, axis1=1, axis2=2))

    def __len__(self):
        return self.times.size

    def check(self, trace_tol=1e-6, eig_tol=1e-8, herm_tol=1e-10) -> None:
        """Raise AssertionError if any sample is not a valid density matrix."""
        tr = self.trace()
        assert np.all(np.abs(tr - 1) < trace_tol), f"trace drift {np.max(np.abs(tr - 1)):.3g}"
        herm = np.max(np.abs(self.rho - np.conj(np.swapaxes(self.rho, 1, 2))))
        assert herm < herm_tol, f"non-Hermitian by {herm:.3g}"
        lam = np.linalg.eigvalsh(0.5 * (self.rho + np.conj(np.swapaxes(self.rho, 1, 2))))
        assert lam.min() >= -eig_tol, f"negative eigenvalue {lam.min():.3g}"


def _vectorised_rhs(gen, pulse):
    l0, l1 = gen.superoperators()

    def make(a, b):
        alpha = segment_alpha(pulse, a, b)

        def f(t, y):
            return l0 @ y + alpha(t) * (l1 @ y)

        return f

    return make


def _matrix_free_rhs(gen, pulse):
    d = gen.dim

    def make(a, b):
        alpha = segment_alpha(pulse, a, b)

        def f(t, y):
            return gen.rhs(y.reshape(d, d), t, alpha=alpha(t)).ravel()

        return f

    return make


def liouvillian_rhs_factory(cfg: ChainConfig):
    gen = generator_for(cfg)
    if gen.dense:
        return _vectorised_rhs(gen, cfg.pulse)
    return _matrix_free_rhs(gen, cfg.pulse)


def _validate_rho(rho0, dim, unit_trace=True):
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (dim, dim):
        raise ValueError(f"initial state has shape {rho0.shape}, expected {(dim, dim)}")
    if np.max(np.abs(rho0 - rho0.conj().T)) > 1e-10:
        raise ValueError("initial state is not Hermitian")
    if unit_trace and abs(np.trace(rho0) - 1) > 1e-10:
        raise ValueError("initial state must have unit trace")
    return rho0


def evolve_me(cfg: ChainConfig, rho0=None) -> DensityState:
    """Solve the master equation on ``cfg.t_grid`` starting from ``rho0`` (default: ground)."""
    d = cfg.dim
    rho0 = ground_state(cfg.n_sub) if rho0 is None else _validate_rho(rho0, d)
    s = cfg.solver
    ys = integrate_linear(liouvillian_rhs_factory(cfg), rho0, cfg.t_grid, cfg.pulse.breakpoints(),
                          s.rtol, s.atol, s.max_step, s.method)
    rho = ys.reshape(-1, d, d)
    # remove round-off anti-Hermitian drift
    rho = 0.5 * (rho + np.conj(np.swapaxes(rho, 1, 2)))
    return DensityState(cfg.t_grid.copy(), rho, cfg.n_sub)


def propagate_conditional_many(rho_tilde, t1: float, times, cfg: ChainConfig) -> np.ndarray:
    """Transport an unnormalised operator from ``t1`` to each of ``times`` (all >= t1)."""
    d = cfg.dim
    rho_tilde = _validate_rho(rho_tilde, d, unit_trace=False)
    times = np.asarray(times, dtype=float)
    if np.any(times < t1):
        raise ValueError("propagation times must not precede t1")
    grid = np.concatenate([[t1], times])
    uniq, inverse = np.unique(grid, return_inverse=True)
    s = cfg.solver
    ys = integrate_linear(liouvillian_rhs_factory(cfg), rho_tilde, uniq, cfg.pulse.breakpoints(),
                          s.rtol, s.atol, s.max_step, s.method)
    return ys[inverse[1:]].reshape(-1, d, d)


def propagate_conditional(rho_tilde, t1: float, t2: float, cfg: ChainConfig) -> np.ndarray:
    """Evolve a (not necessarily normalised) operator under the full generator from t1 to t2."""
    if t2 < t1:
        raise ValueError("t2 must be >= t1")
    if t2 == t1:
        return _validate_rho(rho_tilde, cfg.dim, unit_trace=False).copy()
    return propagate_conditional_many(rho_tilde, t1, [t2], cfg)[0]


# ---------------------------------------------------------------------------
# Monte-Carlo wave-function trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JumpRecord:
    time: float
    tag: str
    site: int | None


class QubitChain:
    """No-jump generator of the chain restricted to the reachable subspace.

    Starting from the ground state, a trajectory only leaves the {G, W}
    manifold of a site through a dephasing jump, after which that site sits
    in D and no longer couples to the field until a Raman jump returns it to
    G.  A trajectory state is therefore a bit mask of dark sites plus an
    amplitude vector over the 2**n {G, W} configurations (dark sites pinned
    to G).  The non-Hermitian Hamiltonian H - (i/2) sum L^+ L restricted to
    that subspace keeps only the downstream hopping -i sqrt(k_a k_b) s_a^+ s_b^-
    for a > b.
    """

    def __init__(self, cfg: ChainConfig):
        self.n = n = cfg.n_sub
        self.dim = 2 ** n
        self.kappa = cfg.kappas
        self.gamma_d = cfg.gamma_ds
        self.gamma_r = cfg.gamma_ramans
        idx = np.arange(self.dim)
        self.bits = np.stack([(idx >> i) & 1 for i in range(n)], axis=0).astype(float)
        self.hi = [idx[((idx >> i) & 1) == 1] for i in range(n)]
        self.lo = [h - (1 << i) for i, h in enumerate(self.hi)]
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def active(self, mask: int) -> list[int]:
        return [i for i in range(self.n) if not (mask >> i) & 1]

    def matrices(self, mask: int):
        """(M0, M1) with psi' = (M0 + alpha(t) M1) psi for the given dark mask."""
        if mask in self._cache:
            return self._cache[mask]
        dim = self.dim
        drive = np.zeros((dim, dim), complex)
        heff = np.zeros((dim, dim), complex)
        act = self.active(mask)
        idx = np.arange(dim)
        for a in act:
            k = math.sqrt(self.kappa[a])
            drive[self.lo[a], self.hi[a]] += k
            drive[self.hi[a], self.lo[a]] += k
            loss = self.kappa[a] + self.gamma_d[a] + self.gamma_r[a]
            heff[self.hi[a], self.hi[a]] += -0.5j * loss
        for a in act:
            for b in act:
                if a <= b:
                    continue
                # s_a^+ s_b^-: b excited and a empty -> a excited, b empty
                cols = idx[(((idx >> b) & 1) == 1) & (((idx >> a) & 1) == 0)]
                rows = cols - (1 << b) + (1 << a)
                heff[rows, cols] += -1j * math.sqrt(self.kappa[a] * self.kappa[b])
        dark_loss = sum(self.gamma_r[i] for i in range(self.n) if (mask >> i) & 1)
        heff[idx, idx] += -0.5j * dark_loss
        out = (-1j * heff, -1j * drive)
        self._cache[mask] = out
        return out

    def lower(self, psi, i):
        out = np.zeros_like(psi)
        out[self.lo[i]] = psi[self.hi[i]]
        return out

    def excited_weight(self, psi, i) -> float:
        v = psi[self.hi[i]]
        return float(np.vdot(v, v).real)

    def populations(self, psi, mask: int) -> np.ndarray:
        """Per-site (P_G, P_W, P_D) of the normalised state, shape (n, 3)."""
        return self.populations_many(np.asarray(psi)[:, None], mask)[0]

    def populations_many(self, psis, mask: int) -> np.ndarray:
        """Populations for columns of ``psis`` (dim, m); returns (m, n, 3)."""
        prob = np.abs(psis) ** 2
        prob = prob / prob.sum(axis=0)
        pw = (self.bits @ prob).T
        pops = np.zeros((pw.shape[0], self.n, 3))
        pops[:, :, W] = pw
        pops[:, :, G] = 1.0 - pw
        dark = [i for i in range(self.n) if (mask >> i) & 1]
        if dark:
            pops[:, dark, :] = (0.0, 0.0, 1.0)
        return pops

    def embed(self, psi, mask: int) -> np.ndarray:
        return embed_compact(psi, mask, self.n)


def embed_compact(psi, mask: int, n: int) -> np.ndarray:
    """Map a (dark mask, {G, W} amplitudes) state to a normalised 3**n vector."""
    full = np.zeros(3 ** n, complex)
    idx = np.arange(2 ** n)
    s = np.zeros(idx.size, dtype=np.int64)
    for i in range(n):
        level = np.where((mask >> i) & 1, D, (idx >> i) & 1)
        s += level * 3 ** i
    np.add.at(full, s, psi)
    return full / np.linalg.norm(full)


@dataclass
class TrajectoryEnsemble:
    """Jump records and sampled populations from a set of stochastic trajectories."""

    n_sub: int
    seed: int
    times: np.ndarray
    populations: np.ndarray  # (n_traj, T, n_sub, 3)
    records: list = field(repr=False)
    final_masks: np.ndarray = field(repr=False)
    final_vectors: np.ndarray = field(repr=False)

    @property
    def n_traj(self) -> int:
        return len(self.records)

    def final_state(self, k: int) -> np.ndarray:
        return embed_compact(self.final_vectors[k], int(self.final_masks[k]), self.n_sub)

    def mean_populations(self):
        """Ensemble mean and standard error of per-site populations, shape (T, n, 3)."""
        mean = self.populations.mean(axis=0)
        sem = self.populations.std(axis=0, ddof=1) / math.sqrt(self.n_traj) if self.n_traj > 1 \
            else np.zeros_like(mean)
        return mean, sem

    def counts(self, t: float, tags=("raman_bright", "raman_dark"), site: int | None = None) -> np.ndarray:
        """Per-trajectory number of jumps with a tag in ``tags`` at times <= t."""
        out = np.zeros(self.n_traj, dtype=int)
        for k, recs in enumerate(self.records):
            out[k] = sum(1 for r in recs if r.time <= t and r.tag in tags
                         and (site is None or r.site == site))
        return out


def _bisect_threshold(interp, lo, hi, threshold, rel_tol=1e-10):
    """Time in [lo, hi] where the squared norm of the interpolant crosses ``threshold``."""
    scale = max(1.0, abs(hi))
    while hi - lo > rel_tol * scale:
        mid = 0.5 * (lo + hi)
        y = interp(mid)
        if np.vdot(y, y).real > threshold:
            lo = mid
        else:
            hi = mid
    return hi


def _apply_jump(chain: QubitChain, psi, mask, rng):
    """Draw one jump channel with probability proportional to ||L psi||^2."""
    channels = []
    act = chain.active(mask)
    if act:
        coll = sum(math.sqrt(chain.kappa[a]) * chain.lower(psi, a) for a in act)
        channels.append(("forward_collective", None, float(np.vdot(coll, coll).real)))
    else:
        coll = None
    exc = {a: chain.excited_weight(psi, a) for a in act}
    for a in act:
        channels.append(("dephase", a, chain.gamma_d[a] * exc[a]))
    for a in act:
        if chain.gamma_r[a] > 0:
            channels.append(("raman_bright", a, chain.gamma_r[a] * exc[a]))
    norm2 = float(np.vdot(psi, psi).real)
    for i in range(chain.n):
        if (mask >> i) & 1 and chain.gamma_r[i] > 0:
            channels.append(("raman_dark", i, chain.gamma_r[i] * norm2))
    weights = np.array([c[2] for c in channels])
    total = weights.sum()
    if total <= 0:
        raise IntegrationError("norm decayed with no open jump channel", float("nan"))
    k = int(np.searchsorted(np.cumsum(weights), rng.random() * total, side="right"))
    k = min(k, len(channels) - 1)
    tag, site, _ = channels[k]
    if tag == "forward_collective":
        new = coll
    elif tag == "dephase":
        new = chain.lower(psi, site)
        mask |= 1 << site
    elif tag == "raman_bright":
        new = chain.lower(psi, site)
    else:
        new = psi.copy()
        mask &= ~(1 << site)
    return new / np.linalg.norm(new), mask, tag, site


def _run_single(chain: QubitChain, cfg: ChainConfig, seed: int, k: int):
    rng = np.random.default_rng([seed, k])
    s = cfg.solver
    stepper = _STEPPERS[s.method]
    times = cfg.t_grid
    t_end = float(times[-1])
    pops = np.empty((times.size, chain.n, 3))
    psi = np.zeros(chain.dim, complex)
    psi[0] = 1.0
    mask = 0
    t = float(times[0])
    pops[0] = chain.populations(psi, mask)
    next_i = 1
    records = []
    threshold = rng.random()
    bounds = [b for b in cfg.pulse.breakpoints() if t < b < t_end] + [t_end]

    def fill(interp, upto, inclusive=True):
        nonlocal next_i
        stop = int(np.searchsorted(times, upto, side="right" if inclusive else "left"))
        if stop > next_i:
            pops[next_i:stop] = chain.populations_many(interp(times[next_i:stop]), mask)
            next_i = stop

    while t < t_end:
        seg_end = next(b for b in bounds if b > t)
        m0, m1 = chain.matrices(mask)
        alpha = segment_alpha(cfg.pulse, t, seg_end)

        def f(tt, y, m0=m0, m1=m1, alpha=alpha):
            return m0 @ y + alpha(tt) * (m1 @ y)

        solver = stepper(f, t, psi, seg_end, rtol=s.traj_rtol, atol=s.traj_atol,
                         max_step=s.max_step)
        jumped = False
        while solver.status == "running":
            t_old = solver.t
            msg = solver.step()
            if solver.status == "failed":
                raise IntegrationError(msg or "step size underflow", solver.t)
            y = solver.y
            if np.vdot(y, y).real <= threshold:
                interp = solver.dense_output()
                tj = _bisect_threshold(interp, t_old, solver.t, threshold)
                fill(interp, tj)
                psi, mask, tag, site = _apply_jump(chain, interp(tj), mask, rng)
                records.append(JumpRecord(float(tj), tag, site))
                threshold = rng.random()
                t = tj
                jumped = True
                break
            if next_i < times.size and times[next_i] <= solver.t:
                fill(solver.dense_output(), solver.t)
        if not jumped:
            psi = solver.y / np.linalg.norm(solver.y)
            # renormalising rescales the threshold accordingly
            threshold = threshold / float(np.vdot(solver.y, solver.y).real)
            t = seg_end
    if next_i < times.size:
        pops[next_i:] = chain.populations(psi, mask)
    return pops, records, mask, psi / np.linalg.norm(psi)


def _run_batch(args):
    cfg, seed, ks = args
    chain = QubitChain(cfg)
    return [_run_single(chain, cfg, seed, k) for k in ks]


def run_trajectories(cfg: ChainConfig, n_traj: int | None = None, seed: int | None = None,
                     threads: int | None = None) -> TrajectoryEnsemble:
    """Monte-Carlo wave-function ensemble starting from the all-ground state.

    Trajectory k draws its random numbers from a generator seeded with
    (seed, k), so records do not depend on how work is split across workers.
    """
    n_traj = cfg.solver.n_traj if n_traj is None else n_traj
    seed = cfg.solver.seed if seed is None else seed
    threads = cfg.solver.threads if threads is None else threads
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    ks = list(range(n_traj))
    if threads > 1 and n_traj > 1:
        chunks = [ks[i::threads] for i in range(threads)]
        chunks = [c for c in chunks if c]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(_run_batch, [(cfg, seed, c) for c in chunks]))
        by_k = {}
        for c, part in zip(chunks, parts):
            by_k.update(zip(c, part))
        results = [by_k[k] for k in ks]
    else:
        results = _run_batch((cfg, seed, ks))
    return TrajectoryEnsemble(
        n_sub=cfg.n_sub,
        seed=seed,
        times=cfg.t_grid.copy(),
        populations=np.stack([r[0] for r in results]),
        records=[r[1] for r in results],
        final_masks=np.array([r[2] for r in results], dtype=np.int64),
        final_vectors=np.stack([r[3] for r in results]),
    )
