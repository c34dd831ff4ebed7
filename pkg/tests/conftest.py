import math

import numpy as np
import pytest

from cespdc.model import CombModelParams

ACCEPTANCE_RESULTS = []


def brute_force_counts(a, b, bin_width, tau_max):
    """O(n m) double loop over every cross-stream pair."""
    n_bins = 2 * tau_max // bin_width
    counts = np.zeros(n_bins, dtype=np.uint64)
    for ta in np.asarray(a, dtype=np.int64).tolist():
        for tb in np.asarray(b, dtype=np.int64).tolist():
            d = tb - ta
            if -tau_max <= d < tau_max:
                counts[(d + tau_max) // bin_width] += 1
    return counts


@pytest.fixture
def comb_r95():
    return CombModelParams(c1=738, c2=0.048, tau_f=1.9e-9, tau_w=528e-12,
                           omega_w=2 * math.pi * 5.3e6)


@pytest.fixture
def comb_r99():
    return CombModelParams(c1=650, c2=0.14, tau_f=1.9e-9, tau_w=561e-12,
                           omega_w=2 * math.pi * 2.4e6)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)
