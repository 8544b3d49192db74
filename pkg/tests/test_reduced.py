import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from photonsub.liouvillian import D
from photonsub.model import ChainConfig, PulseSpec, SuperatomParams
from photonsub.observables import evolve_me, populations
from photonsub.reduced import evolve_rate_equation, gamma_eff, gamma_eff_asymptote
from oracles import gamma_eff_closed_form


def test_closed_form_value():
    p = SuperatomParams(0.35, 2.4, 0.04)
    ref = gamma_eff_closed_form(0.35, 5.0, 2.4, 0.04)
    assert ref == pytest.approx(16.8 / 14.7841, rel=1e-15)
    assert gamma_eff(p, 5.0) == pytest.approx(ref, abs=1e-5)


def test_zero_drive():
    assert gamma_eff(SuperatomParams(0.35, 2.4, 0.04), 0.0) == 0.0
    with pytest.raises(ValueError):
        gamma_eff(SuperatomParams(0.35, 2.4), -1.0)


def test_large_dephasing_ratio_at_hundred_kappa():
    p = SuperatomParams(0.35, 100 * 0.35, 0.0)
    assert gamma_eff(p, 5.0) / gamma_eff_asymptote(p, 5.0) == pytest.approx(1.0, abs=0.02)


@pytest.mark.parametrize("r_in", [0.1, 5.0, 20.0])
def test_large_dephasing_limit(r_in):
    p0 = SuperatomParams(0.35, 1.0, 0.04)
    devs = []
    for gd in (1e2, 1e3, 1e4, 1e5):
        p = SuperatomParams(p0.kappa, gd, p0.gamma_raman)
        devs.append(1.0 - gamma_eff(p, r_in) / gamma_eff_asymptote(p, r_in))
    assert all(d > 0 for d in devs)
    # leading correction is 2 (kappa + Gamma) / gamma_D
    assert devs[-1] == pytest.approx(2 * 0.39 / 1e5, rel=1e-3)
    assert all(b < a / 5 for a, b in zip(devs, devs[1:]))


@settings(max_examples=50, deadline=None)
@given(k=st.floats(0.01, 2), gd=st.floats(0.01, 50), gr=st.floats(0, 1), r=st.floats(0, 50), dr=st.floats(0.01, 10))
def test_closed_form_properties(k, gd, gr, r, dr):
    p = SuperatomParams(k, gd, gr)
    assert gamma_eff(p, r) == pytest.approx(gamma_eff_closed_form(k, r, gd, gr), rel=1e-12, abs=1e-300)
    assert gamma_eff(p, r + dr) > gamma_eff(p, r)
    assert gamma_eff(p, r) <= gd


def test_vectorised():
    p = SuperatomParams(0.35, 2.4, 0.04)
    r = np.array([0.0, 1.0, 5.0])
    assert np.allclose(gamma_eff(p, r), [gamma_eff(p, x) for x in r])


def test_exponential_for_constant_drive():
    p = SuperatomParams(0.35, 2.4, 0.04)
    g = gamma_eff(p, 5.0)
    t_e = 1.0 / g
    cfg = ChainConfig(1, p, PulseSpec.flat(5.0, 3.0), t_grid=np.array([0.0, t_e, 2.0, 3.0]))
    res = evolve_rate_equation(cfg)
    assert res.rho_gg[1] == pytest.approx(math.exp(-1), abs=1e-9)
    assert np.allclose(res.rho_gg, np.exp(-g * cfg.t_grid), atol=1e-9)
    assert np.allclose(res.rho_gg + res.rho_dd, 1, atol=1e-9)


def test_no_drive_keeps_ground_state():
    cfg = ChainConfig(1, SuperatomParams(0.35, 2.4, 0.04), PulseSpec.tukey(0.0))
    assert np.all(evolve_rate_equation(cfg).rho_gg == 1.0)


def test_shaped_pulse_bounds():
    cfg = ChainConfig(1, SuperatomParams(0.35, 10.0, 0.0), PulseSpec.tukey(20.0))
    res = evolve_rate_equation(cfg)
    assert np.all((res.rho_gg >= 0) & (res.rho_gg <= 1))
    assert np.all(np.diff(res.rho_gg) <= 0)


def test_rejects_chains():
    with pytest.raises(ValueError):
        evolve_rate_equation(ChainConfig(2, SuperatomParams(0.35, 2.4), PulseSpec.tukey(5.0)))


@pytest.mark.parametrize("gd,r_in", [(10.0, 10.0), (8.0, 5.0), (15.0, 10.0), (20.0, 20.0), (10.0, 20.0)])
def test_overdamped_agreement_with_master_equation(gd, r_in):
    # compared at the end of the pulse; the early transient is not adiabatic
    cfg = ChainConfig(1, SuperatomParams(0.35, gd, 0.0), PulseSpec.flat(r_in, 3.0),
                      t_grid=np.linspace(0, 3.0, 31))
    me = populations(evolve_me(cfg))[-1, 0, D]
    rate = evolve_rate_equation(cfg).rho_dd[-1]
    assert abs(rate - me) < 0.05
    assert rate - me <= 0.05
