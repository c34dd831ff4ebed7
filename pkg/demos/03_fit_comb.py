"""
Fitting the jitter-convolved comb
=================================

Fit a noisy synthetic histogram, then the histogram of a full simulation,
and compare with the parameters that generated them.
"""

import math

import numpy as np

from cespdc.correlator import correlate
from cespdc.fit import PARAM_NAMES, fit_comb, synthetic_histogram
from cespdc.model import CombModelParams
from cespdc.timetag_sim import DetectorConfig, SourceConfig, expected_comb_params, simulate


def show(label, res, truth):
    print(label, "converged" if res.converged else "NOT converged",
          f"after {res.n_iterations} iterations, chi2/dof {res.chi2_reduced:.3f}")
    for name, f, t in zip(PARAM_NAMES, res.params.as_array(), truth.as_array()):
        print(f"  {name:8s} {f:12.5g} +- {res.std_errors[name]:9.2g}   truth {t:12.5g}")


# Poisson counts drawn around the model itself
p = CombModelParams(c1=650, c2=0.14, tau_f=1.9e-9, tau_w=561e-12,
                    omega_w=2 * math.pi * 2.4e6)
h = synthetic_histogram(p, rng=np.random.default_rng(0))
show("synthetic:", fit_comb(h), p)

# a simulated run; the truth now includes the detector jitter
model = CombModelParams.from_linewidth(c1=1.0, c2=0.0, tau_f=1.9e-9, tau_w=300e-12,
                                       linewidth=5.3e6, n_modes=6)
source = SourceConfig(1.0, 2e6, model, duration=1.0, seed=4)
det = DetectorConfig(0.5, jitter_fwhm=360e-12)
s0, s1 = simulate(source, det, det)
h = correlate(s0, s1, bin_width=128, tau_max=100_032)
res = fit_comb(h)
show("simulated:", res, expected_comb_params(source, det, det, 128))
print(f"fitted linewidth {res.params.linewidth / 1e6:.2f} MHz")
