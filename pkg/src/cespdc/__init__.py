"""Simulation, correlation and comb fitting for cavity-enhanced SPDC pair sources."""

from .correlator import CoincidenceHistogram, TimeTagStream, correlate, merge_histograms
from .model import (
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
from .timetag_sim import DetectorConfig, SourceConfig, simulate, sweep_pump

__version__ = "0.1.0"
