import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from photonsub.model import (FITTED_PARAMS, ChainConfig, ConfigError, MicroscopicParams, PulseSpec,
                             SolverOptions, SuperatomParams, blockade_radius, effective_rates,
                             pulse_rate, vdw_shift)
from oracles import tukey_rate


def test_superatom_params_validation():
    with pytest.raises(ConfigError):
        SuperatomParams(kappa=-1.0, gamma_d=1.0)
    with pytest.raises(ConfigError):
        SuperatomParams(kappa=1.0, gamma_d=math.nan)
    p = SuperatomParams(0.35, 2.4, 0.04)
    assert p.as_dict() == {"kappa": 0.35, "gamma_d": 2.4, "gamma_raman": 0.04}


def test_fitted_sets():
    assert (FITTED_PARAMS[1].kappa, FITTED_PARAMS[1].gamma_raman, FITTED_PARAMS[1].gamma_d) == (0.494, 0.045, 2.329)
    assert (FITTED_PARAMS[2].kappa, FITTED_PARAMS[2].gamma_raman, FITTED_PARAMS[2].gamma_d) == (0.330, 0.020, 3.215)
    assert (FITTED_PARAMS[3].kappa, FITTED_PARAMS[3].gamma_raman, FITTED_PARAMS[3].gamma_d) == (0.350, 0.040, 2.393)


class TestPulse:
    p = PulseSpec.tukey(20.0, fwhm=2.5, ramp=1.0)

    def test_plateau_and_ramp_midpoint(self):
        assert pulse_rate(2.0, self.p) == pytest.approx(8.0, abs=1e-12)
        assert pulse_rate(0.5, self.p) == pytest.approx(4.0, abs=1e-12)
        assert pulse_rate(3.0, self.p) == pytest.approx(4.0, abs=1e-12)

    def test_half_max_separation(self):
        t = np.linspace(0, 3.5, 350001)
        r = self.p.rate(t)
        above = t[r >= 4.0 - 1e-9]
        assert above[-1] - above[0] == pytest.approx(2.5, abs=2e-5)

    def test_outside_support(self):
        assert pulse_rate(-0.1, self.p) == 0.0
        assert pulse_rate(3.6, self.p) == 0.0
        assert self.p.support() == (0.0, 3.5)

    def test_integral(self):
        val, _ = quad(lambda t: pulse_rate(t, self.p), 0, 3.5, points=[1.0, 2.5], epsabs=1e-13, epsrel=1e-13)
        assert val == pytest.approx(20.0, abs=1e-9)

    def test_matches_piecewise_oracle(self):
        for t in np.linspace(-0.5, 4.0, 91):
            assert pulse_rate(t, self.p) == pytest.approx(tukey_rate(t, 20.0, 2.5, 1.0), abs=1e-12)

    def test_vectorised_equals_scalar(self):
        t = np.linspace(-1, 5, 101)
        assert np.allclose(self.p.rate(t), [pulse_rate(x, self.p) for x in t], atol=1e-14)

    def test_flat(self):
        f = PulseSpec.flat(5.0, 3.0, start_time=1.0)
        assert f.rate(2.0) == 5.0 and f.rate(0.9) == 0.0
        assert f.mean_photons == 15.0 and f.support() == (1.0, 4.0)

    def test_samples_rescaled(self):
        s = PulseSpec("samples", mean_photons=6.0, sample_times=(0.0, 1.0, 2.0), sample_rates=(0.0, 2.0, 0.0))
        assert s.rate(1.0) == pytest.approx(6.0)
        val, _ = quad(lambda t: pulse_rate(t, s), 0, 2, points=[1.0])
        assert val == pytest.approx(6.0, rel=1e-10)

    @pytest.mark.parametrize("kw", [dict(ramp=-1.0), dict(fwhm=0.5, ramp=1.0), dict(mean_photons=-1.0)])
    def test_rejects_invalid(self, kw):
        base = dict(shape="tukey", fwhm=2.5, ramp=1.0, mean_photons=1.0)
        base.update(kw)
        with pytest.raises(ConfigError):
            PulseSpec(**base)

    def test_rejects_negative_samples(self):
        with pytest.raises(ConfigError):
            PulseSpec("samples", mean_photons=1.0, sample_times=(0, 1), sample_rates=(1.0, -1.0))


@settings(max_examples=40, deadline=None)
@given(n=st.floats(0.0, 50.0), fwhm=st.floats(0.2, 5.0), frac=st.floats(0.0, 1.0), start=st.floats(-2, 2))
def test_pulse_area_and_continuity(n, fwhm, frac, start):
    ramp = frac * fwhm
    p = PulseSpec.tukey(n, fwhm=fwhm, ramp=ramp, start_time=start)
    lo, hi = p.support()
    pts = [b for b in p.breakpoints() if lo < b < hi]
    val, _ = quad(lambda t: pulse_rate(t, p), lo, hi, points=pts or None, epsabs=1e-12, epsrel=1e-12,
                  limit=200)
    assert val == pytest.approx(n, rel=1e-8, abs=1e-9)
    # continuity at every breakpoint (a vanishing ramp is a genuine step)
    if ramp > 1e-3:
        for b in p.breakpoints():
            assert abs(p.rate(b - 1e-9) - p.rate(b + 1e-9)) < 1e-5 * max(1.0, p.peak_rate)


def test_chain_config_grid_and_validation():
    cfg = ChainConfig(2, FITTED_PARAMS[2], PulseSpec.tukey(10.0))
    assert cfg.t_grid[0] == 0.0 and cfg.t_grid[-1] == pytest.approx(3.5)
    dt = cfg.t_grid[1] - cfg.t_grid[0]
    fastest = max(0.33, 3.215, math.sqrt(0.33 * 4.0))
    assert dt <= 1.0 / (40 * fastest)
    with pytest.raises(ConfigError):
        ChainConfig(2, [FITTED_PARAMS[2]], PulseSpec.tukey(10.0))
    with pytest.raises(ConfigError):
        ChainConfig(1, FITTED_PARAMS[1], PulseSpec.tukey(1.0), t_grid=[0.5, 1.0])
    with pytest.raises(ConfigError):
        ChainConfig(1, FITTED_PARAMS[1], PulseSpec.tukey(1.0), t_grid=[0.0, 1.0, 1.0])
    with pytest.raises(ConfigError):
        ChainConfig(0, FITTED_PARAMS[1], PulseSpec.tukey(1.0))
    with pytest.raises(ConfigError):
        SolverOptions(rtol=0)


def test_chain_config_replace_rebuilds_grid():
    cfg = ChainConfig(1, FITTED_PARAMS[1], PulseSpec.tukey(10.0))
    longer = cfg.replace(pulse=PulseSpec.flat(5.0, 6.0))
    assert longer.t_grid[-1] == pytest.approx(6.0)
    same = cfg.replace(solver=SolverOptions(rtol=1e-6))
    assert np.array_equal(same.t_grid, cfg.t_grid)


def test_per_site_params():
    ps = (SuperatomParams(0.3, 2.0), SuperatomParams(0.4, 3.0, 0.01))
    cfg = ChainConfig(2, ps, PulseSpec.tukey(5.0))
    assert np.allclose(cfg.kappas, [0.3, 0.4]) and cfg.has_raman


class TestMicroscopic:
    base = dict(n_atoms=1000, g0=0.1, omega_c=10.0, delta=20.0, gamma_e=6.0)

    def test_formulas(self):
        p = effective_rates(MicroscopicParams(**self.base), gamma_d=2.0)
        ratio = 10.0 ** 2 / 40.0 ** 2
        assert p.gamma_raman == pytest.approx(6.0 * ratio)
        assert p.kappa == pytest.approx(1000 * 0.01 * ratio)
        assert p.gamma_d == 2.0

    def test_omega_equals_two_delta(self):
        p = effective_rates(MicroscopicParams(**dict(self.base, omega_c=40.0)))
        assert p.gamma_raman == pytest.approx(6.0)

    def test_doubling_delta(self):
        a = effective_rates(MicroscopicParams(**self.base))
        b = effective_rates(MicroscopicParams(**dict(self.base, delta=40.0)))
        assert b.kappa == pytest.approx(a.kappa / 4) and b.gamma_raman == pytest.approx(a.gamma_raman / 4)

    def test_quadrupling_atoms(self):
        a = effective_rates(MicroscopicParams(**self.base))
        b = effective_rates(MicroscopicParams(**dict(self.base, n_atoms=4000)))
        assert b.kappa == pytest.approx(4 * a.kappa) and b.gamma_raman == pytest.approx(a.gamma_raman)

    def test_rejects_zero_detuning(self):
        with pytest.raises(ConfigError):
            MicroscopicParams(**dict(self.base, delta=0.0))

    @settings(max_examples=30, deadline=None)
    @given(s=st.floats(0.1, 10.0))
    def test_homogeneous_in_omega(self, s):
        a = effective_rates(MicroscopicParams(**self.base))
        b = effective_rates(MicroscopicParams(**dict(self.base, omega_c=self.base["omega_c"] * s)))
        assert b.kappa == pytest.approx(s * s * a.kappa) and b.gamma_raman == pytest.approx(s * s * a.gamma_raman)


def test_blockade_radius():
    assert blockade_radius(3.0, 3.0) == pytest.approx(1.0)
    assert blockade_radius(64 * 5.0, 5.0) == pytest.approx(2.0)
    with pytest.raises(ConfigError):
        blockade_radius(0.0, 1.0)


@settings(max_examples=30, deadline=None)
@given(c6=st.floats(1e-3, 1e6), lw=st.floats(1e-3, 1e3))
def test_blockade_shift_equals_linewidth(c6, lw):
    assert vdw_shift(c6, blockade_radius(c6, lw)) == pytest.approx(lw, rel=1e-10)
