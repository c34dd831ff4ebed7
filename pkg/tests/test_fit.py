import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cespdc.correlator import CoincidenceHistogram
from cespdc.errors import InitializationError
from cespdc.fit import (
    PARAM_NAMES,
    comb_model_jacobian,
    fit_comb,
    initial_guess,
    synthetic_histogram,
)


def rel_err(fit_p, true_p):
    return np.abs(fit_p.as_array() / true_p.as_array() - 1)


class TestNoiseless:
    @pytest.mark.parametrize("which", ["comb_r95", "comb_r99"])
    def test_self_fit_recovers(self, which, request):
        p = request.getfixturevalue(which)
        res = fit_comb(synthetic_histogram(p))
        assert res.converged
        assert rel_err(res.params, p).max() < 1e-3
        assert res.params.linewidth == pytest.approx(p.linewidth, rel=1e-3)

    def test_scale_equivariance(self, comb_r99):
        h = synthetic_histogram(comb_r99, rng=np.random.default_rng(5))
        k = 7.0
        hk = CoincidenceHistogram(h.bin_width, h.tau_min, h.tau_max, h.counts * k)
        a = fit_comb(h).params.as_array()
        b = fit_comb(hk).params.as_array()
        assert b[0] / a[0] == pytest.approx(k, rel=1e-6)
        np.testing.assert_allclose(b[1:], a[1:], rtol=1e-6)

    def test_explicit_init_and_window(self, comb_r99):
        h = synthetic_histogram(comb_r99)
        start = comb_r99.with_values(c1=500, tau_w=480e-12, omega_w=comb_r99.omega_w * 1.2)
        res = fit_comb(h, init=start, fit_window=30e-9)
        assert res.converged and res.fit_window == 30e-9
        assert rel_err(res.params, comb_r99).max() < 1e-3

    def test_iteration_cap_reports_nonconvergence(self, comb_r99):
        h = synthetic_histogram(comb_r99, rng=np.random.default_rng(0))
        res = fit_comb(h, max_iter=1)
        assert not res.converged
        assert res.n_iterations == 1
        assert res.message


class TestPoisson:
    def test_measured_scale_monte_carlo(self, comb_r99):
        rng = np.random.default_rng(2024)
        errs = []
        for _ in range(20):
            res = fit_comb(synthetic_histogram(comb_r99, rng=rng))
            assert res.converged
            errs.append(rel_err(res.params, comb_r99))
        assert np.max(errs) < 0.05

    def test_standard_errors_and_chi2(self, comb_r95):
        res = fit_comb(synthetic_histogram(comb_r95, rng=np.random.default_rng(9)))
        assert set(res.std_errors) == set(PARAM_NAMES)
        assert all(v > 0 and math.isfinite(v) for v in res.std_errors.values())
        assert 0.8 < res.chi2_reduced < 1.2
        assert res.covariance.shape == (5, 5)


@settings(max_examples=25, deadline=None)
@given(c1=st.floats(10, 1e4), c2=st.floats(0.01, 1.0), tw=st.floats(100e-12, 1e-9),
       lw=st.floats(1e6, 2e7))
def test_jacobian_matches_finite_differences(c1, c2, tw, lw):
    theta = np.array([c1, c2, 1.9e-9, tw, 2 * math.pi * lw])
    tau = np.linspace(-20e-9, 20e-9, 1201)
    _, jac = comb_model_jacobian(theta, tau)
    for i in range(5):
        h = 1e-6 * theta[i]
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        fd = (comb_model_jacobian(up, tau, jacobian=False)[0]
              - comb_model_jacobian(dn, tau, jacobian=False)[0]) / (2 * h)
        scale = np.abs(fd).max()
        np.testing.assert_allclose(jac[:, i], fd, atol=1e-6 * scale, rtol=1e-5)


class TestInitialisation:
    def test_flat_histogram_raises(self):
        h = CoincidenceHistogram.zeros(128, 40_000)
        h.counts = np.full(h.n_bins, 100, dtype=np.uint64)
        with pytest.raises(InitializationError):
            fit_comb(h)

    def test_empty_histogram_raises(self):
        with pytest.raises(InitializationError):
            initial_guess(CoincidenceHistogram.zeros(128, 40_000))

    def test_single_peak_raises(self, comb_r95):
        narrow = comb_r95.with_values(omega_w=2 * math.pi * 1e9, max_omega_tau=20.0)
        with pytest.raises(InitializationError):
            initial_guess(synthetic_histogram(narrow))

    def test_guess_close_to_truth(self, comb_r99):
        g = initial_guess(synthetic_histogram(comb_r99, rng=np.random.default_rng(1)))
        assert g.tau_f == pytest.approx(comb_r99.tau_f, rel=0.01)
        assert g.c1 == pytest.approx(comb_r99.c1, rel=0.3)
        assert g.omega_w == pytest.approx(comb_r99.omega_w, rel=0.5)
