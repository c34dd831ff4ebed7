"""
g2(0) against pump power
========================

At low pump the dark counts dominate the floor, at high pump accidental
pairs do, so the normalised correlation peaks in between.
"""

from cespdc.correlator import correlate
from cespdc.metrology import background_floor, g2_zero
from cespdc.model import CombModelParams
from cespdc.timetag_sim import DetectorConfig, SourceConfig, sweep_pump

model = CombModelParams.from_linewidth(c1=1.0, c2=0.0, tau_f=1.9e-9, tau_w=300e-12,
                                       linewidth=5.3e6, n_modes=6)
det = DetectorConfig(efficiency=0.5, dark_rate=6.5e3, jitter_fwhm=360e-12)
source = SourceConfig(1.0, 1.3e6, model, duration=1.0, seed=2026)

powers_uw = [0.1, 0.3, 1, 3, 10, 30, 100]
durations = [200, 100, 50, 20, 10, 10, 10]  # s, longer where counts are scarce
runs = sweep_pump(source, [p * 1e-3 for p in powers_uw], det, det, durations=durations)

# the floor window sits well beyond the comb (12 / omega_w is ~360 ns)
floor_window = (500_000, 1_000_000)
print(" pump (uW)   g2(0)   floor (counts/bin/s)")
for p, dur, (s0, s1) in zip(powers_uw, durations, runs):
    h = correlate(s0, s1, bin_width=128, tau_max=1_000_000)
    g2 = g2_zero(h, 192, floor_window, comb=model)
    floor = background_floor(h, floor_window) / dur
    print(f"{p:9.1f} {g2:8.1f}   {floor:.4g}")
