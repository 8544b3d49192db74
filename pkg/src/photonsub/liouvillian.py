"""Chain operators and the Lindblad generator for cascaded superatoms.

Basis convention: a product state is labelled s = sum_i d_i 3**i with
d_i in {G=0, W=1, D=2}; site 0 is the first absorber hit by the probe.
Operators are dense numpy arrays for n <= DENSE_MAX_SITES and CSR sparse
matrices otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .model import ChainConfig

G, W, D = 0, 1, 2
LEVELS = {"G": G, "W": W, "D": D}
DENSE_MAX_SITES = 4

JUMP_TAGS = ("forward_collective", "dephase", "raman_bright", "raman_dark")


def _level(x) -> int:
    if isinstance(x, str):
        try:
            return LEVELS[x.upper()]
        except KeyError:
            raise ValueError(f"unknown level {x!r}") from None
    if x not in (G, W, D):
        raise ValueError(f"unknown level {x!r}")
    return int(x)


def _use_dense(n: int) -> bool:
    return n <= DENSE_MAX_SITES


def site_operator(i: int, a, b, n: int, dense: bool | None = None):
    """Embed |a><b| acting on absorber ``i`` into the 3**n chain space."""
    if not 0 <= i < n:
        raise IndexError(f"site {i} out of range for {n} absorbers")
    a, b = _level(a), _level(b)
    dense = _use_dense(n) if dense is None else dense
    # the single-site op only has entries between basis states that agree elsewhere
    dim = 3 ** n
    idx = np.arange(dim)
    digit = (idx // 3 ** i) % 3
    cols = idx[digit == b]
    rows = cols + (a - b) * 3 ** i
    op = sp.csr_matrix((np.ones(cols.size), (rows, cols)), shape=(dim, dim), dtype=complex)
    return op.toarray() if dense else op


def dagger(op):
    return op.conj().T


def _lower(i, n, dense=None):
    return site_operator(i, G, W, n, dense)


@dataclass(frozen=True)
class JumpOperator:
    operator: object
    tag: str
    site: int | None

    @property
    def label(self) -> str:
        return self.tag if self.site is None else f"{self.tag}({self.site})"


class ChainGenerator:
    """Hamiltonian pieces, jump operators and the master-equation right-hand side.

    H(t) = alpha(t) * drive + exchange, with the drive coupling each site's
    G<->W transition with strength sqrt(kappa_i) and the exchange term
    -(i/2) sum_{i>j} sqrt(kappa_i kappa_j) (s_i^+ s_j^- - s_j^+ s_i^-).
    """

    def __init__(self, cfg: ChainConfig):
        self.cfg = cfg
        n = self.n = cfg.n_sub
        self.dim = 3 ** n
        self.dense = _use_dense(n)
        kap = cfg.kappas
        gd = cfg.gamma_ds
        gr = cfg.gamma_ramans
        lowers = [_lower(i, n) for i in range(n)]
        zero = np.zeros((self.dim, self.dim), complex) if self.dense else sp.csr_matrix((self.dim, self.dim), dtype=complex)

        drive = zero.copy()
        for i in range(n):
            drive = drive + np.sqrt(kap[i]) * (lowers[i] + dagger(lowers[i]))
        exchange = zero.copy()
        for i in range(n):
            for j in range(i):
                hop = dagger(lowers[i]) @ lowers[j]
                exchange = exchange - 0.5j * np.sqrt(kap[i] * kap[j]) * (hop - dagger(hop))
        self.drive = drive
        self.exchange = exchange
        self.collective = sum((np.sqrt(kap[i]) * lowers[i] for i in range(n)), zero.copy())

        jumps = [JumpOperator(self.collective, "forward_collective", None)]
        for i in range(n):
            jumps.append(JumpOperator(np.sqrt(gd[i]) * site_operator(i, D, W, n), "dephase", i))
        if cfg.has_raman:
            for i in range(n):
                jumps.append(JumpOperator(np.sqrt(gr[i]) * lowers[i], "raman_bright", i))
            for i in range(n):
                jumps.append(JumpOperator(np.sqrt(gr[i]) * site_operator(i, G, D, n), "raman_dark", i))
        self.jumps = jumps
        self.decay = sum((dagger(j.operator) @ j.operator for j in jumps), zero.copy())
        self._super = None

    def alpha(self, t) -> float:
        return float(np.sqrt(self.cfg.pulse.rate(t)))

    def hamiltonian(self, t, alpha: float | None = None):
        a = self.alpha(t) if alpha is None else alpha
        return a * self.drive + self.exchange

    def output_operator(self, t, alpha: float | None = None):
        """Transmitted-field operator i*alpha(t) + sum_i sqrt(kappa_i) s_i^-."""
        a = self.alpha(t) if alpha is None else alpha
        eye = np.eye(self.dim) if self.dense else sp.identity(self.dim, format="csr")
        return 1j * a * eye + self.collective

    def rhs(self, rho, t, alpha: float | None = None, jumps=None):
        """Matrix-free Lindblad right-hand side for an operator ``rho``."""
        if rho.shape != (self.dim, self.dim):
            raise ValueError(f"operator of shape {rho.shape} does not match chain dimension {self.dim}")
        jumps = self.jumps if jumps is None else jumps
        a_op = -1j * self.hamiltonian(t, alpha) - 0.5 * self.decay
        out = a_op @ rho
        out = out + dagger(a_op @ dagger(rho))
        for j in jumps:
            L = j.operator
            out = out + L @ dagger(L @ dagger(rho))
        return np.asarray(out)

    def superoperators(self):
        """Row-major vectorised generator split as L0 + alpha(t) * L1 (sparse)."""
        if self._super is None:
            self._super = _vectorised(self.drive, self.exchange, self.decay,
                                      [j.operator for j in self.jumps], self.dim)
        return self._super


def _spre(a, dim):
    return sp.kron(sp.csr_matrix(a), sp.identity(dim), format="csr")


def _spost(b, dim):
    # row-major vec(rho @ b) = (1 kron b^T) vec(rho)
    return sp.kron(sp.identity(dim), sp.csr_matrix(b).T, format="csr")


def sandwich_superoperator(L, dim):
    """Row-major vectorised map rho -> L rho L^dagger."""
    Ls = sp.csr_matrix(L)
    return sp.kron(Ls, Ls.conj(), format="csr")


def _vectorised(drive, exchange, decay, jump_ops, dim):
    l1 = -1j * (_spre(drive, dim) - _spost(drive, dim))
    l0 = -1j * (_spre(exchange, dim) - _spost(exchange, dim))
    l0 = l0 - 0.5 * (_spre(decay, dim) + _spost(decay, dim))
    for L in jump_ops:
        l0 = l0 + sandwich_superoperator(L, dim)
    return l0.tocsr(), l1.tocsr()


@lru_cache(maxsize=32)
def generator_for(cfg: ChainConfig) -> ChainGenerator:
    """Cached generator; configs hash by identity."""
    return ChainGenerator(cfg)


def build_hamiltonian(t: float, cfg: ChainConfig):
    return generator_for(cfg).hamiltonian(t)


def build_jumps(cfg: ChainConfig) -> list[JumpOperator]:
    return list(generator_for(cfg).jumps)


def apply_rhs(rho, t: float, cfg: ChainConfig):
    """d rho / dt = -i[H(t), rho] + sum_L (L rho L^+ - {L^+ L, rho}/2)."""
    return generator_for(cfg).rhs(np.asarray(rho, dtype=complex), t)


def ground_state(n: int) -> np.ndarray:
    rho = np.zeros((3 ** n, 3 ** n), complex)
    rho[0, 0] = 1.0
    return rho


def product_state(levels, n: int | None = None) -> np.ndarray:
    """Density matrix of the product state with site i in ``levels[i]``."""
    levels = [_level(x) for x in levels]
    n = len(levels) if n is None else n
    s = sum(d * 3 ** i for i, d in enumerate(levels))
    rho = np.zeros((3 ** n, 3 ** n), complex)
    rho[s, s] = 1.0
    return rho


def level_digits(n: int) -> np.ndarray:
    """Array (3**n, n) with the level of each site in each basis state."""
    idx = np.arange(3 ** n)
    return np.stack([(idx // 3 ** i) % 3 for i in range(n)], axis=1)
