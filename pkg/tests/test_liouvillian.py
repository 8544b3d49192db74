import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from photonsub.liouvillian import (D, G, W, apply_rhs, build_hamiltonian, build_jumps, generator_for,
                                   ground_state, level_digits, product_state, site_operator)
from photonsub.model import ChainConfig, PulseSpec, SuperatomParams
from oracles import embed, flip, lindblad_matrix


def _cfg(n, kappa=0.35, gd=2.4, gr=0.0, photons=10.0):
    return ChainConfig(n, SuperatomParams(kappa, gd, gr), PulseSpec.tukey(photons))


def _dense(op):
    return op.toarray() if sp.issparse(op) else np.asarray(op)


class TestSiteOperator:
    def test_single_site_action(self):
        op = site_operator(0, G, W, 1)
        assert np.array_equal(op @ np.array([0, 1, 0]), [1, 0, 0])
        assert np.array_equal(op @ np.array([1, 0, 0]), [0, 0, 0])
        assert np.array_equal(op @ np.array([0, 0, 1]), [0, 0, 0])

    def test_commute_on_different_sites(self):
        a = site_operator(0, G, W, 2)
        b = site_operator(1, D, W, 2)
        assert np.array_equal(a @ b, b @ a)

    def test_adjoint(self):
        a = site_operator(0, G, W, 2)
        assert a.shape == (9, 9)
        assert np.array_equal(a.conj().T, site_operator(0, W, G, 2))

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_matches_kron_oracle(self, n):
        for i in range(n):
            for a, b in [(G, W), (D, W), (G, D), (W, W)]:
                assert np.array_equal(_dense(site_operator(i, a, b, n)), embed(flip(a, b), i, n))

    def test_sparse_for_large_chains(self):
        assert sp.issparse(site_operator(0, G, W, 5))
        assert np.array_equal(site_operator(2, G, W, 5, dense=True), _dense(site_operator(2, G, W, 5)))

    def test_rejects_bad_index(self):
        with pytest.raises(IndexError):
            site_operator(2, G, W, 2)
        with pytest.raises(ValueError):
            site_operator(0, "X", W, 2)

    def test_basis_convention(self):
        digits = level_digits(2)
        assert list(digits[1 + 3 * 2]) == [W, D]


class TestHamiltonian:
    def test_no_exchange_for_single_absorber(self):
        assert np.count_nonzero(generator_for(_cfg(1)).exchange) == 0

    def test_exchange_matrix_element(self):
        h = generator_for(_cfg(2)).exchange
        wg = 1 + 3 * 0  # site 0 in W, site 1 in G
        gw = 0 + 3 * 1
        assert abs(h[wg, gw]) == pytest.approx(0.175, abs=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 3, 5])
    def test_hermitian(self, n):
        cfg = _cfg(n)
        for t in (0.0, 0.3, 1.7, 3.4):
            h = _dense(build_hamiltonian(t, cfg))
            assert np.max(np.abs(h - h.conj().T)) < 1e-12

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_matches_oracle(self, n):
        gen = generator_for(_cfg(n))
        _, h_ref, _ = lindblad_matrix(n, 0.35, 2.4, 0.0, alpha=0.7)
        assert np.allclose(_dense(gen.hamiltonian(0.0, alpha=0.7)), h_ref, atol=1e-14)


class TestJumps:
    def test_counts_without_raman(self):
        assert len(build_jumps(_cfg(3))) == 4

    def test_counts_and_tags_with_raman(self):
        jumps = build_jumps(_cfg(3, gr=0.04))
        assert len(jumps) == 10
        tags = [j.tag for j in jumps]
        assert tags.count("forward_collective") == 1
        for t in ("dephase", "raman_bright", "raman_dark"):
            assert sorted(j.site for j in jumps if j.tag == t) == [0, 1, 2]

    def test_collective_annihilates_ground(self):
        c = generator_for(_cfg(3)).collective
        v = np.zeros(27)
        v[0] = 1
        assert np.allclose(c @ v, 0)


class TestRhs:
    def test_ground_state_stationary_without_drive(self):
        cfg = _cfg(2, gr=0.04)
        out = apply_rhs(ground_state(2), 5.0, cfg)  # after the pulse, alpha = 0
        assert np.max(np.abs(out)) == 0

    def test_bright_state_decay_rate(self):
        cfg = _cfg(1, kappa=0.35, gd=2.4, gr=0.04)
        out = apply_rhs(product_state([W]), 10.0, cfg)
        assert out[W, W].real == pytest.approx(-(0.35 + 0.04 + 2.4), abs=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            apply_rhs(np.eye(3), 0.0, _cfg(2))

    @pytest.mark.parametrize("n,gr", [(1, 0.0), (2, 0.04), (3, 0.04)])
    def test_matches_oracle_generator(self, n, gr):
        rng = np.random.default_rng(1)
        d = 3 ** n
        a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        rho = a @ a.conj().T
        rho /= np.trace(rho)
        L, _, _ = lindblad_matrix(n, 0.35, 2.4, gr, alpha=1.3)
        ref = (L @ rho.reshape(-1, order="F")).reshape(d, d, order="F")
        gen = generator_for(_cfg(n, gr=gr))
        assert np.allclose(gen.rhs(rho, 0.0, alpha=1.3), ref, atol=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_superoperator_equals_matrix_free(self, n):
        rng = np.random.default_rng(n)
        d = 3 ** n
        rho = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        rho = rho + rho.conj().T
        gen = generator_for(_cfg(n, gr=0.02))
        l0, l1 = gen.superoperators()
        vec = (l0 @ rho.ravel() + 0.8 * (l1 @ rho.ravel())).reshape(d, d)
        assert np.allclose(vec, gen.rhs(rho, 0.0, alpha=0.8), atol=1e-12)

    @pytest.mark.parametrize("n", [1, 2])
    def test_dark_states_fixed_without_drive_and_raman(self, n):
        cfg = _cfg(n)
        for levels in ([G] * n, [D] * n):
            assert np.max(np.abs(apply_rhs(product_state(levels), 10.0, cfg))) < 1e-15


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 3), alpha=st.floats(0, 5), gr=st.sampled_from([0.0, 0.04]),
       seed=st.integers(0, 2 ** 31 - 1))
def test_rhs_traceless_and_hermitian(n, alpha, gr, seed):
    rng = np.random.default_rng(seed)
    d = 3 ** n
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a + a.conj().T
    gen = generator_for(_cfg(n, gr=gr))
    out = gen.rhs(rho, 0.0, alpha=alpha)
    assert abs(np.trace(out)) < 1e-12 * max(1.0, np.abs(rho).max())
    assert np.max(np.abs(out - out.conj().T)) < 1e-12 * max(1.0, np.abs(rho).max())


@settings(max_examples=15, deadline=None)
@given(h=arrays(np.float64, (9, 9), elements=st.floats(-1, 1)))
def test_rhs_hermitian_for_real_symmetric_inputs(h):
    rho = (h + h.T).astype(complex)
    out = generator_for(_cfg(2, gr=0.04)).rhs(rho, 0.0, alpha=1.0)
    assert np.allclose(out, out.conj().T, atol=1e-12)
