import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid

from photonsub.liouvillian import D, G, W, product_state
from photonsub.model import FITTED_PARAMS, ChainConfig, PulseSpec, SuperatomParams
from photonsub.observables import (G2_MASK_FRACTION, conservation_residual, evolve_me, g2_map, output_rate,
                                   populations, pulse_metrics, raman_integral, simulate, transmitted_rate)


def _fitted(n, n_in, **kw):
    return ChainConfig(n, FITTED_PARAMS[n], PulseSpec.tukey(n_in), **kw)


def test_decoupled_absorbers_transmit_everything():
    cfg = ChainConfig(2, SuperatomParams(0.0, 2.4, 0.04), PulseSpec.tukey(20.0))
    _, tr = simulate(cfg)
    assert np.max(np.abs(tr.rate_out - tr.rate_in)) < 1e-12
    assert abs(pulse_metrics(tr).n_subtracted) < 1e-9
    assert conservation_residual(cfg, tr) < 1e-9


def test_forward_reemission_of_excited_emitter():
    cfg = ChainConfig(1, SuperatomParams(0.35, 0.0, 0.0), PulseSpec.tukey(0.0), t_grid=np.linspace(0, 5, 51))
    tr = output_rate(evolve_me(cfg, product_state([W])), cfg)
    assert np.max(np.abs(tr.rate_out - 0.35 * np.exp(-0.35 * cfg.t_grid))) < 1e-7


@pytest.mark.parametrize("n", [1, 2, 3])
def test_rate_trace_invariants(n):
    _, tr = simulate(_fitted(n, 20.0))
    assert tr.rate_out.min() >= -1e-9
    assert tr.populations.min() >= -1e-9 and tr.populations.max() <= 1 + 1e-9
    assert np.max(np.abs(tr.populations.sum(axis=2) - 1)) < 1e-6
    assert np.allclose(tr.populations[0, :, G], 1) and np.allclose(tr.populations[0, :, W:], 0)


@pytest.mark.parametrize("n,n_in", [(1, 5.0), (2, 40.0), (3, 20.0)])
def test_conservation_with_raman(n, n_in):
    assert conservation_residual(_fitted(n, n_in)) < 1e-3


@pytest.mark.parametrize("n", [1, 2, 3])
def test_conservation_without_raman(n):
    p = FITTED_PARAMS[n]
    cfg = ChainConfig(n, SuperatomParams(p.kappa, p.gamma_d, 0.0), PulseSpec.tukey(20.0))
    assert conservation_residual(cfg) < 1e-4


def test_three_absorbers_subtract_slightly_more_than_three():
    _, tr = simulate(_fitted(3, 40.0))
    sub = pulse_metrics(tr).n_subtracted
    assert 3.0 < sub < 3.5


def test_subtraction_monotone_in_input():
    subs = [pulse_metrics(simulate(_fitted(3, n_in))[1]).n_subtracted for n_in in np.linspace(0, 40, 11)]
    assert subs[0] == pytest.approx(0.0, abs=1e-12)
    assert all(b >= a - 1e-9 for a, b in zip(subs, subs[1:])), np.round(subs, 5).tolist()


def test_single_absorber_subtraction_vanishes_at_low_input():
    subs = [pulse_metrics(simulate(_fitted(1, n_in))[1]).n_subtracted for n_in in (2.0, 1.0, 0.5, 0.1, 0.0)]
    assert all(b < a for a, b in zip(subs, subs[1:]))
    assert subs[-1] == pytest.approx(0.0, abs=1e-12)


def test_saturated_absorber_becomes_transparent():
    cfg = ChainConfig(1, SuperatomParams(0.35, 2.4, 0.0), PulseSpec.flat(20.0, 6.0))
    _, tr = simulate(cfg)
    late = (tr.times > 5.0) & (tr.times < 5.9)
    assert np.allclose(tr.rate_out[late], tr.rate_in[late], rtol=1e-3)


def test_long_drive_ends_in_dark_state():
    cfg = ChainConfig(1, SuperatomParams(0.35, 2.4, 0.0), PulseSpec.flat(5.0, 15.0))
    pops = populations(evolve_me(cfg))
    assert pops[-1, 0, D] > 0.999


def test_raman_integral_matches_direct_quadrature():
    cfg = _fitted(2, 10.0)
    _, tr = simulate(cfg)
    ryd = tr.populations[:, :, W] + tr.populations[:, :, D]
    ref = sum(0.020 * trapezoid(ryd[:, i], tr.times) for i in range(2))
    assert raman_integral(tr, cfg) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_transmitted_rate_equals_full_evaluation(n):
    cfg = _fitted(n, 15.0)
    _, tr = simulate(cfg)
    assert np.max(np.abs(transmitted_rate(cfg) - tr.rate_out)) < 1e-9


class TestG2:
    grid = np.linspace(0.3, 3.2, 30)

    def test_coherent_without_absorbers(self):
        cfg = ChainConfig(2, SuperatomParams(0.0, 2.4, 0.04), PulseSpec.tukey(15.0))
        g = g2_map(cfg, self.grid)
        vals = g.values[~g.mask]
        assert vals.size > 0 and np.max(np.abs(vals - 1)) < 1e-9

    def test_symmetric_and_bunched_on_plateau(self):
        cfg = ChainConfig(3, FITTED_PARAMS[3], PulseSpec.tukey(5.5 * 2.5))
        g = g2_map(cfg, self.grid)
        ok = ~g.mask
        assert np.max(np.abs(np.where(ok, g.values - g.values.T, 0))) < 1e-6
        plateau = (self.grid > 1.0) & (self.grid < 2.5)
        assert np.all(g.diagonal()[plateau] > 1.0)

    def test_mask_threshold(self):
        cfg = _fitted(1, 10.0)
        grid = np.linspace(0.0, 3.5, 36)
        g = g2_map(cfg, grid)
        _, tr = simulate(cfg.replace(t_grid=grid))
        low = tr.rate_out < G2_MASK_FRACTION * tr.rate_out.max()
        assert np.array_equal(np.diag(g.mask), low)
        assert np.all(np.isnan(g.values[g.mask]))

    def test_rejects_unsorted_grid(self):
        with pytest.raises(ValueError):
            g2_map(_fitted(1, 5.0), [1.0, 0.5])


@settings(max_examples=12, deadline=None)
@given(n_in=st.floats(0.0, 40.0), kappa=st.floats(0.05, 1.0), gd=st.floats(0.5, 5.0), gr=st.floats(0.0, 0.1))
def test_single_absorber_properties(n_in, kappa, gd, gr):
    cfg = ChainConfig(1, SuperatomParams(kappa, gd, gr), PulseSpec.tukey(n_in))
    _, tr = simulate(cfg)
    assert tr.rate_out.min() >= -1e-9
    assert np.max(np.abs(tr.populations.sum(axis=2) - 1)) < 1e-6
    assert conservation_residual(cfg, tr) < 1e-3
