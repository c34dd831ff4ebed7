"""Source metrics derived from a comb fit: linewidth, finesse, mode number,
g2(0), spectral brightness and cavity enhancement.

Brightness is in pairs/(s MHz mW); all other times are s and frequencies Hz.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .correlator import CoincidenceHistogram
from .errors import JitterLimitedError, ParameterError, ValidationError
from .fit import ENVELOPE_CUT, CombFitResult
from .model import (
    CombModelParams,
    DetectionEfficiencies,
    cavity_length_from_round_trip,
    finesse,
    fsr_from_round_trip,
)

#: Detection-chain efficiencies of the reference setup.
REFERENCE_EFFICIENCIES = DetectionEfficiencies(t1=0.96, f=0.58, t2=0.97, d=0.05)


def deconvolve_tooth_width(tau_w_fit: float, system_jitter_fwhm: float) -> float:
    """Intrinsic tooth FWHM after removing Gaussian system jitter in quadrature."""
    if system_jitter_fwhm < 0:
        raise ParameterError("system jitter must be >= 0")
    if tau_w_fit <= system_jitter_fwhm:
        raise JitterLimitedError(
            f"tooth width {tau_w_fit:.4g} s does not exceed system jitter "
            f"{system_jitter_fwhm:.4g} s; the measurement is jitter limited")
    return math.sqrt(tau_w_fit**2 - system_jitter_fwhm**2)


def system_jitter_from_single_pass(coincidence_peak_fwhm: float):
    """System and per-detector jitter from the single-pass coincidence peak.

    The single-pass peak is the two detectors' jitter convolved, so each
    detector contributes ``fwhm / sqrt(2)``.
    """
    if not coincidence_peak_fwhm > 0:
        raise ParameterError("coincidence peak FWHM must be > 0")
    return coincidence_peak_fwhm, coincidence_peak_fwhm / math.sqrt(2.0)


def mode_number(tau_f: float, tau_w_intrinsic: float) -> int:
    """Longitudinal mode number N from ``tau_f / tau_w = 2N + 1`` (rounded down)."""
    if not 0 < tau_w_intrinsic < tau_f:
        raise ParameterError("need 0 < tau_w_intrinsic < tau_f")
    return int(math.floor((tau_f / tau_w_intrinsic - 1.0) / 2.0))


def _floor_mask(h, floor_window_ps):
    lo, hi = floor_window_ps
    if not 0 <= lo < hi:
        raise ValidationError("floor window must satisfy 0 <= lo < hi")
    a = np.abs(h.centers_ps)
    return (a >= lo) & (a <= hi)


def _check_floor_clear(h, mask, comb: CombModelParams):
    """Floor bins must lie outside the comb region or between teeth."""
    tau = np.abs(h.centers[mask])
    inside = tau < ENVELOPE_CUT / comb.omega_w
    dist = np.abs(tau - np.round(tau / comb.tau_f) * comb.tau_f)
    if np.any(inside & (dist < comb.tau_w)):
        raise ValidationError("floor window overlaps comb teeth")


def background_floor(h: CoincidenceHistogram, floor_window_ps, comb: CombModelParams | None = None):
    """Mean counts per bin over ``lo <= |tau| <= hi`` (ps)."""
    mask = _floor_mask(h, floor_window_ps)
    if not mask.any():
        raise ValidationError("floor window contains no bins")
    if comb is not None:
        _check_floor_clear(h, mask, comb)
    return float(np.mean(np.asarray(h.counts, dtype=float)[mask]))


def g2_zero(h: CoincidenceHistogram, peak_window_ps: float, floor_window_ps,
            comb: CombModelParams | None = None) -> float:
    """Normalised cross-correlation at zero delay.

    Mean counts per bin for ``|tau| <= peak_window_ps`` divided by the mean
    floor over ``floor_window_ps = (lo, hi)``. When ``comb`` is given the
    floor window is checked against its teeth.
    """
    y = np.asarray(h.counts, dtype=float)
    peak = np.abs(h.centers_ps) <= peak_window_ps
    if not peak.any():
        raise ValidationError("peak window contains no bins")
    floor = background_floor(h, floor_window_ps, comb)
    if floor == 0:
        warnings.warn("zero counts in floor window; g2(0) is unbounded", RuntimeWarning,
                      stacklevel=2)
        return math.inf
    return float(y[peak].mean() / floor)


def total_coincidences(h: CoincidenceHistogram, fit: CombFitResult) -> float:
    """Background-free coincidences in the comb region ``|tau| <= 12 / omega_w``.

    The fitted floor ``c1 * c2`` is subtracted bin by bin and the sum is
    clipped at zero as a whole; clipping each bin would bias the total
    upward by the positive half of the floor fluctuations.
    """
    if not fit.converged:
        raise ParameterError("total_coincidences needs a converged fit")
    p = fit.params
    sel = np.abs(h.centers) <= ENVELOPE_CUT / p.omega_w
    y = np.asarray(h.counts, dtype=float)[sel]
    return max(float(np.sum(y - p.c1 * p.c2)), 0.0)


def spectral_brightness_detected(coincidences, duration, n_modes, linewidth_mhz, pump_mw):
    """Detected pairs per second per MHz of linewidth per mW of pump per mode."""
    for name, v in (("coincidences", coincidences), ("duration", duration),
                    ("n_modes", n_modes), ("linewidth", linewidth_mhz), ("pump", pump_mw)):
        if not v > 0:
            raise ParameterError(f"{name} must be > 0, got {v}")
    return (coincidences / duration) / (n_modes * linewidth_mhz * pump_mw)


def spectral_brightness_generated(r_detect: float, eff: DetectionEfficiencies) -> float:
    """Brightness inside the cavity: each photon of a pair suffers the chain loss."""
    return r_detect / eff.product**2


def enhancement_factor(cavity_brightness: float, single_pass_brightness: float) -> float:
    if not (cavity_brightness > 0 and single_pass_brightness > 0):
        raise ParameterError("brightness values must be > 0")
    return cavity_brightness / single_pass_brightness


def same_order(a: float, b: float, factor: float = 10.0) -> bool:
    """True when ``a`` and ``b`` agree within a multiplicative ``factor``."""
    return max(a, b) / min(a, b) < factor


@dataclass
class SourceReport:
    linewidth: float
    fsr: float
    cavity_length: float
    finesse: float
    tau_w_intrinsic: float
    n_modes: int
    g2_zero: float | None
    total_coincidences: float | None
    r_detect: float | None
    r_generation: float | None
    enhancement_factor: float | None
    finesse_squared: float

    _json_names = {
        "linewidth": "linewidth_hz",
        "fsr": "fsr_hz",
        "cavity_length": "cavity_length_m",
        "finesse": "finesse",
        "tau_w_intrinsic": "tau_w_intrinsic_s",
        "n_modes": "n_modes",
        "g2_zero": "g2_zero",
        "total_coincidences": "total_coincidences",
        "r_detect": "r_detect_per_s_mhz_mw",
        "r_generation": "r_generation_per_s_mhz_mw",
        "enhancement_factor": "enhancement_factor",
        "finesse_squared": "finesse_squared",
    }

    def to_dict(self) -> dict:
        return {self._json_names[k]: v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SourceReport":
        inv = {v: k for k, v in cls._json_names.items()}
        return cls(**{inv[k]: v for k, v in d.items()})


def build_report(fit: CombFitResult, eff: DetectionEfficiencies, duration: float,
                 pump_mw: float, system_jitter: float = 0.0,
                 h: CoincidenceHistogram | None = None, coincidences: float | None = None,
                 single_pass_brightness: float | None = None,
                 peak_window_ps: float | None = None, floor_window_ps=None) -> SourceReport:
    """Run the full metric chain on a fitted comb.

    ``coincidences`` overrides the background-subtracted sum over ``h``.
    g2(0) is reported only when ``h`` and both windows are given.
    """
    if not fit.converged:
        raise ParameterError("build_report needs a converged fit")
    p = fit.params
    try:
        linewidth = p.linewidth
        fsr = fsr_from_round_trip(p.tau_f)
        f = finesse(fsr, linewidth)
        tau_w_int = deconvolve_tooth_width(p.tau_w, system_jitter)
        n = mode_number(p.tau_f, tau_w_int)
        g2 = None
        if h is not None and peak_window_ps is not None and floor_window_ps is not None:
            g2 = g2_zero(h, peak_window_ps, floor_window_ps, p)
        if coincidences is None and h is not None:
            coincidences = total_coincidences(h, fit)
        r_det = r_gen = enh = None
        if coincidences is not None:
            r_det = spectral_brightness_detected(coincidences, duration, n, linewidth * 1e-6,
                                                 pump_mw)
            r_gen = spectral_brightness_generated(r_det, eff)
            if single_pass_brightness is not None:
                enh = enhancement_factor(r_gen, single_pass_brightness)
    except ValueError as exc:
        raise type(exc)(f"report chain failed: {exc}") from exc
    return SourceReport(
        linewidth=linewidth, fsr=fsr, cavity_length=cavity_length_from_round_trip(p.tau_f),
        finesse=f, tau_w_intrinsic=tau_w_int, n_modes=n, g2_zero=g2,
        total_coincidences=coincidences, r_detect=r_det, r_generation=r_gen,
        enhancement_factor=enh, finesse_squared=f * f,
    )
