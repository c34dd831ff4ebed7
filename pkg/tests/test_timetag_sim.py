import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from cespdc.correlator import correlate
from cespdc.errors import ConfigurationError, ParameterError
from cespdc.fit import fit_comb
from cespdc.model import CombModelParams, eval_g2_ideal
from cespdc.timetag_sim import (
    PS,
    DetectorConfig,
    SourceConfig,
    apply_dead_time,
    derive_seed,
    expected_singles_rate,
    nonparalyzable_rate,
    sample_pair_delays,
    simulate,
    sweep_pump,
)


def model(n_modes=6, lw=5.3e6, tau_f=1.9e-9):
    return CombModelParams.from_linewidth(c1=1.0, c2=0.0, tau_f=tau_f, tau_w=300e-12,
                                          linewidth=lw, n_modes=n_modes)


def source(**kw):
    base = dict(pump_power=1.0, pair_rate_per_mw=1e5, model=model(), duration=1.0, seed=7)
    base.update(kw)
    return SourceConfig(**base)


IDEAL = DetectorConfig(efficiency=1.0)


class TestSampler:
    def test_single_mode_is_two_sided_exponential(self):
        m = model(n_modes=0)
        d, n_fb = sample_pair_delays(m, 1_000_000, np.random.default_rng(1))
        assert n_fb == 0
        ks = stats.kstest(d, "laplace", args=(0.0, 1.0 / m.omega_w))
        assert ks.statistic < 0.01

    def test_histogram_matches_ideal_density(self):
        m = model(n_modes=6)
        n = 4_000_000
        d, _ = sample_pair_delays(m, n, np.random.default_rng(2))
        bw = 128e-12
        edges = np.arange(-20 * m.tau_f, 20 * m.tau_f + bw / 2, bw)
        obs, _ = np.histogram(d, edges)
        # independent expectation: integrate the closed form on a fine grid
        sub = 64
        fine = edges[0] + (np.arange((edges.size - 1) * sub) + 0.5) * bw / sub
        per_bin = eval_g2_ideal(m, fine).reshape(-1, sub).sum(axis=1) * bw / sub
        cut = 12 / m.omega_w
        grid = np.linspace(-cut, cut, 4_000_001)
        total = np.trapezoid(eval_g2_ideal(m, grid), grid)
        exp = n * per_bin / total
        big = exp >= 1e4
        assert big.sum() > 50
        rel = np.abs(obs[big] - exp[big]) / exp[big]
        assert rel.max() < 0.03
        sel = exp >= 20
        chi2 = np.sum((obs[sel] - exp[sel]) ** 2 / exp[sel]) / sel.sum()
        assert chi2 < 1.2

    def test_symmetric_about_zero(self):
        d, _ = sample_pair_delays(model(), 500_000, np.random.default_rng(3))
        assert abs(d.mean()) < 4 * d.std() / math.sqrt(d.size)
        assert np.abs(d).max() <= 12 / model().omega_w

    def test_empty_request(self):
        d, n_fb = sample_pair_delays(model(), 0, np.random.default_rng(0))
        assert d.size == 0 and n_fb == 0


class TestSimulate:
    def test_deterministic(self):
        det = DetectorConfig(0.4, dark_rate=1e3, jitter_fwhm=300e-12, dead_time=50e-9,
                             afterpulse_prob=0.01)
        a = simulate(source(), det, det)
        b = simulate(source(), det, det)
        assert a[0] == b[0] and a[1] == b[1]
        c = simulate(source(seed=8), det, det)
        assert not (a[0] == c[0])

    def test_stream_invariants(self):
        det = DetectorConfig(0.5, dark_rate=5e3, jitter_fwhm=500e-12)
        s0, s1 = simulate(source(duration=0.2), det, det)
        for s, c in ((s0, 0), (s1, 1)):
            assert s.channel_id == c
            assert s.tags.dtype == np.uint64
            assert np.all(np.diff(s.tags.astype(np.int64)) >= 0)
            assert s.tags.size == 0 or int(s.tags[-1]) < 0.2 * PS

    def test_zero_efficiency_gives_empty_streams(self):
        s0, s1 = simulate(source(), DetectorConfig(0.0), DetectorConfig(0.0))
        assert len(s0) == 0 and len(s1) == 0

    def test_singles_rate(self):
        eta = 0.3
        det = DetectorConfig(eta, dark_rate=1e3)
        src = source(duration=2.0)
        s0, s1 = simulate(src, det, det)
        mean = expected_singles_rate(src, det) * src.duration
        # a pair delivers 0, 1 or 2 photons to one channel
        sigma = math.sqrt(mean * (1 + eta / 2))
        for s in (s0, s1):
            assert abs(len(s) - mean) < 3 * sigma

    def test_dead_time_rate(self):
        det = DetectorConfig(0.0, dark_rate=1e5, dead_time=1e-6)
        s0, _ = simulate(source(duration=10.0), det, det)
        assert s0.rate == pytest.approx(nonparalyzable_rate(1e5, 1e-6), rel=0.01)

    def test_dead_time_rule(self):
        tags = np.array([0, 50, 100, 120, 260, 300], np.uint64)
        np.testing.assert_array_equal(apply_dead_time(tags, 100), [0, 100, 260])
        assert apply_dead_time(tags, 0) is tags

    def test_afterpulse_fraction(self):
        det = DetectorConfig(0.0, dark_rate=1e4, dead_time=20e-9, afterpulse_prob=0.2,
                             afterpulse_tau=50e-9)
        _, _, st = simulate(source(duration=5.0), det, det, return_stats=True)
        n_primary = st["n_dark"][0]
        assert st["n_afterpulses"][0] == pytest.approx(0.2 * n_primary,
                                                       abs=4 * math.sqrt(0.2 * n_primary))

    def test_opposite_routing_reproduces_delay_histogram(self):
        src = source(pair_rate_per_mw=20.0, duration=500.0, seed=11)
        s0, s1, st = simulate(src, IDEAL, IDEAL, routing="opposite", return_stats=True)
        # replay the generator's draws for the single slab
        t_ps = int(round(src.duration * PS))
        slab = np.random.SeedSequence(src.seed).spawn(3)[0].spawn(1)[0]
        rng = np.random.default_rng(slab)
        n = rng.poisson(src.pair_rate * src.duration)
        t = rng.integers(0, t_ps, size=n, dtype=np.int64)
        d, _ = sample_pair_delays(src.model, n, rng)
        d_ps = np.rint(d * PS).astype(np.int64)
        inside = (t + d_ps >= 0) & (t + d_ps < t_ps)
        assert n == st["n_pairs"] and inside.sum() == len(s1)
        tau_max = 40_000
        h = correlate(s0, s1, bin_width=128, tau_max=tau_max)
        sel = d_ps[inside]
        sel = sel[(sel >= -tau_max) & (sel < tau_max)]
        expected = np.bincount((sel + tau_max) // 128, minlength=h.n_bins)
        np.testing.assert_array_equal(h.counts, expected)

    def test_accidental_floor(self):
        det = DetectorConfig(0.5, dark_rate=2e4)
        src = source(duration=10.0, pair_rate_per_mw=6e4)
        s0, s1 = simulate(src, det, det)
        h = correlate(s0, s1, bin_width=1000, tau_max=1_000_000)
        far = np.abs(h.centers) >= 500e-9
        floor = h.counts[far].mean()
        assert floor == pytest.approx(s0.rate * s1.rate * 1e-9 * src.duration, rel=0.05)

    def test_duration_overflow(self):
        with pytest.raises(ConfigurationError):
            simulate(source(duration=1e7), IDEAL, IDEAL)

    def test_unknown_routing(self):
        with pytest.raises(ConfigurationError):
            simulate(source(duration=1e-3), IDEAL, IDEAL, routing="both")

    @pytest.mark.parametrize("bad", [dict(efficiency=1.2), dict(efficiency=0.5, dark_rate=-1),
                                     dict(efficiency=0.5, afterpulse_prob=1.0)])
    def test_detector_validation(self, bad):
        with pytest.raises(ParameterError):
            DetectorConfig(**bad)

    def test_source_validation(self):
        with pytest.raises(ParameterError):
            source(pump_power=0)
        with pytest.raises(ParameterError):
            source(seed=-1)


class TestSweep:
    def test_single_point_matches_simulate(self):
        det = DetectorConfig(0.5, dark_rate=1e3)
        src = source(duration=0.1)
        (a0, a1), = sweep_pump(src, [2.0], det, det)
        b0, b1 = simulate(replace(src, pump_power=2.0, seed=derive_seed(src.seed, 0)), det, det)
        assert a0 == b0 and a1 == b1

    def test_empty_sweep(self):
        with pytest.raises(ConfigurationError):
            sweep_pump(source(), [], IDEAL, IDEAL)

    def test_doubling_pump_doubles_comb_area(self):
        det = DetectorConfig(0.5, jitter_fwhm=360e-12)
        src = source(pair_rate_per_mw=1e6, duration=0.5)
        areas = []
        for s0, s1 in sweep_pump(src, [1.0, 2.0], det, det):
            res = fit_comb(correlate(s0, s1))
            assert res.converged
            areas.append(res.params.c1 * res.params.tau_w / s0.duration)
        assert areas[1] / areas[0] == pytest.approx(2.0, rel=0.05)
