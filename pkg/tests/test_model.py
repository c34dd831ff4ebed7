import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cespdc.errors import ParameterError
from cespdc.model import (
    GAUSS_AREA_FACTOR,
    SPEED_OF_LIGHT,
    CavityDesign,
    CombModelParams,
    DetectionEfficiencies,
    cavity_length_from_round_trip,
    eval_g2_convolved,
    eval_g2_ideal,
    finesse,
    fsr_from_round_trip,
    predicted_linewidth,
)

TAU_F = 1.9e-9
OMEGA_24 = 2 * math.pi * 2.4e6


def params(**kw):
    base = dict(c1=1.0, c2=0.0, tau_f=TAU_F, tau_w=561e-12, omega_w=OMEGA_24, n_modes=2)
    base.update(kw)
    return CombModelParams(**base)


# frozen from a 40-digit mpmath evaluation of the same closed forms
MP_IDEAL_N2_AT_TAUF = 24.29388080395287748001629732907963361921
MP_IDEAL_N2_AT_03TAUF = 1.514787724799708794779069480298447404592
MP_CONV_R99_AT_TAUF = 722.6409009027942981000669085637176299429
MP_CONV_R99_AT_HALF = 91.45161062068480791699414961153412883054


class TestIdeal:
    def test_zero_delay_limit(self):
        assert eval_g2_ideal(params(n_modes=1, tau_f=3.3e-9), 0.0) == pytest.approx(9.0, rel=1e-15)

    def test_single_mode(self):
        p = params(n_modes=0, c2=0.5)
        assert eval_g2_ideal(p, 0.0) == pytest.approx(1.5)
        tau = np.linspace(-20e-9, 20e-9, 101)
        np.testing.assert_allclose(eval_g2_ideal(p, tau), np.exp(-OMEGA_24 * np.abs(tau)) + 0.5)

    def test_high_precision_values(self):
        p = params(n_modes=2)
        assert eval_g2_ideal(p, TAU_F) == pytest.approx(MP_IDEAL_N2_AT_TAUF, rel=1e-12)
        assert eval_g2_ideal(p, 0.3 * TAU_F) == pytest.approx(MP_IDEAL_N2_AT_03TAUF, rel=1e-12)

    @pytest.mark.parametrize("k", range(-20, 21))
    def test_continuous_at_tooth_centres(self, k):
        p = params(n_modes=3)
        centre = eval_g2_ideal(p, k * TAU_F)
        for eps in (1e-14, 1e-16, 1e-18):
            tau = np.array([k * TAU_F - eps, k * TAU_F + eps])
            env = np.exp(-p.omega_w * (np.abs(tau) - abs(k * TAU_F)))
            np.testing.assert_allclose(eval_g2_ideal(p, tau), centre * env, rtol=1e-8)

    def test_array_and_scalar_agree(self):
        p = params(n_modes=4, c2=0.1)
        tau = np.linspace(-5e-9, 5e-9, 17)
        np.testing.assert_array_equal(eval_g2_ideal(p, tau), [eval_g2_ideal(p, t) for t in tau])

    def test_finite_everywhere(self):
        p = params(n_modes=6)
        tau = np.linspace(-40e-9, 40e-9, 200_001)
        assert np.all(np.isfinite(eval_g2_ideal(p, tau)))


class TestConvolved:
    def test_comb_r95_centre(self, comb_r95):
        assert eval_g2_convolved(comb_r95, 0.0) == pytest.approx(738 * 1.048, rel=1e-10)

    def test_comb_r99_high_precision(self, comb_r99):
        assert eval_g2_convolved(comb_r99, TAU_F) == pytest.approx(MP_CONV_R99_AT_TAUF, rel=1e-12)
        assert eval_g2_convolved(comb_r99, TAU_F / 2) == pytest.approx(MP_CONV_R99_AT_HALF,
                                                                     rel=1e-12)

    def test_floor_is_lower_bound(self, comb_r99):
        tau = np.linspace(-100e-9, 100e-9, 50_001)
        assert np.all(eval_g2_convolved(comb_r99, tau) >= comb_r99.c1 * comb_r99.c2)

    def test_tooth_peaks_follow_envelope(self):
        p = params(tau_w=100e-12, c2=0.0)
        n = np.arange(0, 40)
        peaks = eval_g2_convolved(p, n * TAU_F)
        np.testing.assert_allclose(peaks, np.exp(-OMEGA_24 * n * TAU_F), rtol=0.01)

    @pytest.mark.parametrize("n", [1, 2, 5, 10])
    def test_gaussian_tooth_area(self, n):
        p = params(tau_w=200e-12, c1=3.0)
        tau = np.linspace((n - 0.5) * TAU_F, (n + 0.5) * TAU_F, 20_001)
        area = np.trapezoid(eval_g2_convolved(p, tau), tau)
        expected = p.c1 * math.exp(-p.omega_w * n * TAU_F) * p.tau_w * GAUSS_AREA_FACTOR
        assert area == pytest.approx(expected, rel=1e-3)

    def test_truncation_must_be_positive(self, comb_r99):
        with pytest.raises(ParameterError):
            eval_g2_convolved(comb_r99, 0.0, tooth_truncation=0)


@settings(max_examples=200, deadline=None)
@given(tau=st.floats(-1e-6, 1e-6), n=st.integers(0, 12),
       tw=st.floats(50e-12, 1.5e-9), lw=st.floats(1e5, 5e7))
def test_models_symmetric(tau, n, tw, lw):
    p = params(n_modes=n, tau_w=tw, omega_w=2 * math.pi * lw, c2=0.2)
    assert eval_g2_ideal(p, tau) == eval_g2_ideal(p, -tau)
    assert eval_g2_convolved(p, tau) == eval_g2_convolved(p, -tau)


class TestValidation:
    @pytest.mark.parametrize("bad", [
        dict(c1=0), dict(c2=-0.1), dict(tau_f=0), dict(tau_w=0), dict(tau_w=2e-9),
        dict(omega_w=0), dict(omega_w=1e9), dict(n_modes=-1), dict(n_modes=1.5),
        dict(c1=math.nan),
    ])
    def test_rejects(self, bad):
        with pytest.raises(ParameterError):
            params(**bad)

    def test_sanity_bound_configurable(self):
        p = params(omega_w=1e9, max_omega_tau=10.0)
        assert p.omega_w * p.tau_f > 1

    def test_cavity_design_domain(self):
        with pytest.raises(ParameterError):
            CavityDesign(1.0, 0.01, 0.5)
        with pytest.raises(ParameterError):
            CavityDesign(0.9, 1.0, 0.5)
        with pytest.raises(ParameterError):
            CavityDesign(0.9, 0.01, 0.0)

    def test_efficiency_domain(self):
        with pytest.raises(ParameterError):
            DetectionEfficiencies(0.9, 0.0, 0.9, 0.9)
        with pytest.raises(ParameterError):
            DetectionEfficiencies(0.9, 1.1, 0.9, 0.9)


class TestCavityQuantities:
    def test_fsr(self):
        assert fsr_from_round_trip(1.9e-9) == pytest.approx(526.3e6, rel=1e-3)
        assert fsr_from_round_trip(1.0) == 1.0
        assert fsr_from_round_trip(2.0e-9) == pytest.approx(500e6)

    def test_cavity_length(self):
        assert cavity_length_from_round_trip(1.9e-9) == pytest.approx(0.5697, abs=1e-4)
        assert cavity_length_from_round_trip(2.0e-9) == pytest.approx(0.5996)
        with pytest.raises(ParameterError):
            cavity_length_from_round_trip(0.0)

    def test_finesse(self):
        assert finesse(526e6, 5.3e6) == pytest.approx(99.2, abs=0.05)
        assert finesse(526e6, 2.4e6) == pytest.approx(219.2, abs=0.05)
        assert finesse(7.0, 7.0) == 1.0

    @given(scale=st.floats(1e-3, 1e3), tau_f=st.floats(1e-10, 1e-8), lw=st.floats(1e5, 1e8))
    def test_finesse_unit_invariant(self, scale, tau_f, lw):
        f1 = finesse(fsr_from_round_trip(tau_f), lw)
        f2 = finesse(fsr_from_round_trip(tau_f * scale), lw / scale)
        assert f2 == pytest.approx(f1, rel=1e-12)

    @pytest.mark.parametrize("r, expected", [(0.95, 5.73e6), (0.99, 2.28e6)])
    def test_predicted_linewidth_formula(self, r, expected):
        d = CavityDesign(r, 0.017, 0.57)
        assert predicted_linewidth(d) == pytest.approx(expected, rel=5e-3)

    def test_predicted_linewidth_lossless_limit(self):
        vals = [predicted_linewidth(CavityDesign(r, 0.0, 0.57))
                for r in (0.9, 0.99, 0.999, 0.9999, 0.99999)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e3

    def test_speed_of_light_constant(self):
        assert SPEED_OF_LIGHT == 2.998e8


def test_frozen_values_against_mpmath():
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 40
    tau_f = mp.mpf("1.9e-9")
    omega = 2 * mp.pi * mp.mpf("2.4e6")

    def ideal(tau, n):
        x = mp.pi * tau / tau_f
        return mp.exp(-omega * abs(tau)) * (mp.sin((2 * n + 1) * x) / mp.sin(x)) ** 2

    def conv(tau, c1, c2, tw):
        s = mp.fsum(mp.exp(-4 * mp.log(2) * (tau - k * tau_f) ** 2 / tw**2)
                    for k in range(-3, 5))
        return c1 * (mp.exp(-omega * abs(tau)) * s + c2)

    # at tau = tau_f the kernel sits on its removable singularity, limit 5^2
    assert float(25 * mp.exp(-omega * tau_f)) == pytest.approx(MP_IDEAL_N2_AT_TAUF, rel=1e-14)
    assert float(ideal(mp.mpf("0.3") * tau_f, 2)) == pytest.approx(MP_IDEAL_N2_AT_03TAUF,
                                                                   rel=1e-14)
    tw = mp.mpf("561e-12")
    assert float(conv(tau_f, 650, mp.mpf("0.14"), tw)) == pytest.approx(
        MP_CONV_R99_AT_TAUF, rel=1e-14)
    assert float(conv(tau_f / 2, 650, mp.mpf("0.14"), tw)) == pytest.approx(
        MP_CONV_R99_AT_HALF, rel=1e-14)
