"""
Cavity numbers from a fitted comb
=================================

Turn the fitted comb parameters of the two output-coupler setups into
linewidth, finesse, mode number and spectral brightness.
"""

import math

from cespdc.fit import CombFitResult
from cespdc.metrology import REFERENCE_EFFICIENCIES, build_report, same_order
from cespdc.model import SPEED_OF_LIGHT, CavityDesign, CombModelParams, predicted_linewidth

# fitted comb parameters for R = 95% (a) and R = 99% (b)
fits = {
    "a": CombModelParams(c1=738, c2=0.048, tau_f=1.9e-9, tau_w=528e-12,
                         omega_w=2 * math.pi * 5.3e6),
    "b": CombModelParams(c1=650, c2=0.14, tau_f=1.9e-9, tau_w=561e-12,
                         omega_w=2 * math.pi * 2.4e6),
}
# coincidences, integration time (s), pump (mW), single-pass brightness
runs = {"a": (1.05e5, 5000, 0.005, 9.73), "b": (2.07e5, 10_000, 0.010, 9.70)}

# jitter of the detection system, from the single-pass coincidence peak
system_jitter = 509e-12

for key, p in fits.items():
    coinc, duration, pump, single_pass = runs[key]
    fit = CombFitResult(params=p, std_errors={}, chi2_reduced=1.0, n_iterations=0,
                        converged=True, n_bins=0, fit_window=0.0, message="")
    rep = build_report(fit, REFERENCE_EFFICIENCIES, duration, pump, system_jitter=system_jitter,
                       coincidences=coinc, single_pass_brightness=single_pass)
    print(f"({key}) linewidth {rep.linewidth / 1e6:.1f} MHz, FSR {rep.fsr / 1e6:.1f} MHz, "
          f"length {rep.cavity_length * 100:.1f} cm")
    print(f"    finesse {rep.finesse:.1f}, intrinsic width {rep.tau_w_intrinsic * 1e12:.0f} ps, "
          f"N = {rep.n_modes}")
    print(f"    R_detect {rep.r_detect:.0f}, R_generation {rep.r_generation:.3g} pairs/(s MHz mW)")
    print(f"    enhancement {rep.enhancement_factor:.3g} vs finesse^2 {rep.finesse_squared:.3g}: "
          f"same order = {same_order(rep.enhancement_factor, rep.finesse_squared)}")

# the cold-cavity estimate for the two couplers (1.7% internal loss)
for r in (0.95, 0.99):
    design = CavityDesign(r_output=r, internal_loss=0.017,
                          round_trip_length=SPEED_OF_LIGHT / 526e6)
    print(f"R = {r:.0%}: predicted linewidth {predicted_linewidth(design) / 1e6:.2f} MHz")
