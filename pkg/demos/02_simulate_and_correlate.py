"""
Simulated time tags and their coincidence histogram
===================================================

Generate two detector streams for a six-mode cavity source, histogram the
delays at 128 ps and compare with the expected comb.
"""

import numpy as np

from cespdc.correlator import correlate
from cespdc.fit import histogram_model
from cespdc.model import CombModelParams
from cespdc.timetag_sim import (
    DetectorConfig,
    SourceConfig,
    expected_comb_params,
    expected_singles_rate,
    simulate,
)

model = CombModelParams.from_linewidth(c1=1.0, c2=0.0, tau_f=1.9e-9, tau_w=300e-12,
                                       linewidth=5.3e6, n_modes=6)
source = SourceConfig(pump_power=1.0, pair_rate_per_mw=5e5, model=model, duration=1.0, seed=1)
# 360 ps per detector gives the 509 ps system jitter
det = DetectorConfig(efficiency=0.5, dark_rate=6.5e3, jitter_fwhm=360e-12)

s0, s1, stats = simulate(source, det, det, return_stats=True)
print(f"{stats['n_pairs']} pairs emitted, singles {s0.rate:.0f} / {s1.rate:.0f} Hz "
      f"(expected {expected_singles_rate(source, det):.0f} Hz)")

h = correlate(s0, s1, bin_width=128, tau_max=40_000)
print(f"{int(h.counts.sum())} coincidences in {h.n_bins} bins")

# the expected histogram for this configuration
truth = expected_comb_params(source, det, det, bin_width_ps=128)
expected = histogram_model(truth, h)
for k in range(-3, 4):
    i = int(np.argmin(np.abs(h.centers - k * model.tau_f)))
    print(f"tooth {k:+d}: {int(h.counts[i]):6d} counts, model {expected[i]:8.1f}")
