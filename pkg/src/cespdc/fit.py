"""Least-squares fit of the jitter-convolved comb model to coincidence histograms.

The histogram model is the convolved comb evaluated at bin centres, with
``c1`` in counts per bin. Residuals are Poisson weighted with
``1 / max(model, 1)``. Weights are frozen within an iteration and refreshed
after every accepted step, so the fixed point is the Poisson maximum
likelihood estimate. Steps are Levenberg-Marquardt with Marquardt's diagonal
scaling: the damping is multiplied by 10 after a rejected step and divided by
10 after an accepted one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .correlator import CoincidenceHistogram
from .errors import InitializationError, ParameterError
from .model import FOUR_LN2, CombModelParams

log = logging.getLogger(__name__)

PARAM_NAMES = ("c1", "c2", "tau_f", "tau_w", "omega_w")
ENVELOPE_CUT = 12.0  # comb region |tau| <= ENVELOPE_CUT / omega_w
MAX_ITER = 200
XTOL = 1e-8


@dataclass
class CombFitResult:
    params: CombModelParams
    std_errors: dict
    chi2_reduced: float
    n_iterations: int
    converged: bool
    n_bins: int = 0
    fit_window: float = math.inf  # s, half width of the fitted delay range
    message: str = ""
    covariance: np.ndarray = field(default=None, repr=False)


def comb_model_jacobian(theta, tau, tooth_truncation=3, jacobian=True):
    """Comb model and its analytic Jacobian.

    Args:
        theta: ``(c1, c2, tau_f, tau_w, omega_w)``.
        tau: delays in s.

    Returns:
        ``(model, J)`` with ``J[:, k] = d model / d theta[k]``; ``J`` is None
        when ``jacobian`` is false.
    """
    c1, c2, tau_f, tau_w, omega = (float(v) for v in theta)
    a = np.abs(np.asarray(tau, dtype=float))
    env = np.exp(-omega * a)
    n = np.arange(int(np.floor(a.min() / tau_f)) - tooth_truncation,
                  int(np.ceil(a.max() / tau_f)) + tooth_truncation + 1, dtype=float)
    s = np.zeros_like(a)
    ds_df = np.zeros_like(a)
    ds_dw = np.zeros_like(a)
    w2 = tau_w * tau_w
    for k in n:
        d = a - k * tau_f
        g = np.exp(-FOUR_LN2 * d * d / w2)
        g[np.abs(d) > tooth_truncation * tau_f] = 0.0
        s += g
        if jacobian:
            ds_df += g * (2.0 * FOUR_LN2 * d * k / w2)
            ds_dw += g * (2.0 * FOUR_LN2 * d * d / (w2 * tau_w))
    es = env * s
    model = c1 * (es + c2)
    if not jacobian:
        return model, None
    J = np.empty((a.size, 5))
    J[:, 0] = es + c2
    J[:, 1] = c1
    J[:, 2] = c1 * env * ds_df
    J[:, 3] = c1 * env * ds_dw
    J[:, 4] = -c1 * a * es
    return model, J


def histogram_model(params: CombModelParams, h: CoincidenceHistogram, tooth_truncation=3):
    """Expected counts per bin of ``h`` under ``params``."""
    return comb_model_jacobian(params.as_array(), h.centers, tooth_truncation, jacobian=False)[0]


def synthetic_histogram(params: CombModelParams, bin_width=128, tau_max=40_000,
                        rng=None, duration=1.0):
    """Histogram sampled from the comb model at bin centres.

    Noiseless (float counts) unless ``rng`` is given, in which case every bin
    is an independent Poisson draw (uint64 counts).
    """
    h = CoincidenceHistogram.zeros(bin_width, tau_max, duration=duration)
    mu = histogram_model(params, h)
    h.counts = mu if rng is None else rng.poisson(mu).astype(np.uint64)
    return h


# -- initialisation ---------------------------------------------------------

def _comb_period(y, bin_s):
    """Comb period (s) from the first strong autocorrelation peak, or None."""
    z = y - y.mean()
    n = z.size
    f = np.fft.rfft(z, 2 * n)
    ac = np.fft.irfft(f * np.conj(f))[:n]
    if ac[0] <= 0:
        return None
    ac = ac / ac[0]
    peaks, _ = find_peaks(ac[: n // 2], prominence=0.1, height=0.05)
    if peaks.size == 0:
        return None
    k = int(peaks[0])
    if 0 < k < n - 1:
        den = ac[k - 1] - 2 * ac[k] + ac[k + 1]
        k = k + (0.5 * (ac[k - 1] - ac[k + 1]) / den if den < 0 else 0.0)
    return k * bin_s


def initial_guess(h: CoincidenceHistogram) -> CombModelParams:
    """Seed parameters read off the histogram.

    Period from the histogram autocorrelation, tooth width from the central
    peak FWHM, decay rate from a log-linear fit of tooth areas, floor from
    the valleys between teeth.

    Raises:
        InitializationError: fewer than three teeth stand out of the floor.
    """
    y = np.asarray(h.counts, dtype=float)
    x = h.centers
    bin_s = h.bin_width * 1e-12
    if y.sum() <= 0:
        raise InitializationError("histogram is empty")
    tau_f = _comb_period(y, bin_s)
    if tau_f is None or tau_f < 3 * bin_s:
        raise InitializationError("no comb periodicity found in histogram")

    extent = h.tau_max * 1e-12
    n_teeth = int(extent / tau_f)
    teeth = np.arange(-n_teeth, n_teeth + 1)
    q = 0.25 * tau_f

    # refine the period from tooth centroids
    centroids, areas, heights = [], [], []
    valley = np.concatenate([y[np.abs(x - (k + 0.5) * tau_f) < 0.125 * tau_f]
                             for k in range(-n_teeth, n_teeth)]) if n_teeth else y
    floor = float(np.median(valley)) if valley.size else float(np.percentile(y, 10))
    for k in teeth:
        sel = np.abs(x - k * tau_f) < q
        if sel.sum() < 2:
            centroids.append(np.nan)
            areas.append(np.nan)
            heights.append(np.nan)
            continue
        excess = y[sel] - floor
        areas.append(excess.sum())
        heights.append(excess.max())
        w = np.clip(excess, 0, None)
        centroids.append((w * x[sel]).sum() / w.sum() if w.sum() > 0 else np.nan)
    centroids, areas, heights = map(np.asarray, (centroids, areas, heights))
    noise = 3.0 * math.sqrt(max(floor, 1.0))
    visible = np.isfinite(heights) & (heights > noise)
    if visible.sum() < 3:
        raise InitializationError(
            f"only {int(visible.sum())} comb teeth above the floor; need at least 3")
    ok = visible & np.isfinite(centroids)
    if ok.sum() >= 3:
        tau_f = float(np.polyfit(teeth[ok], centroids[ok], 1)[0])

    # central peak height and FWHM
    i0 = int(np.argmin(np.abs(x)))
    lo = max(i0 - int(q / bin_s), 0)
    hi = min(i0 + int(q / bin_s) + 1, y.size)
    ip = lo + int(np.argmax(y[lo:hi]))
    peak = float(np.mean(y[max(ip - 1, 0):ip + 2]))
    c1 = max(peak - floor, noise)
    half = floor + 0.5 * c1
    left = ip
    while left > 0 and y[left] > half:
        left -= 1
    right = ip
    while right < y.size - 1 and y[right] > half:
        right += 1
    tau_w = (right - left - 1) * bin_s + bin_s
    tau_w = float(np.clip(tau_w, 2 * bin_s, 0.8 * tau_f))

    # envelope decay from tooth areas
    good = visible & (areas > 0)
    tt = np.abs(teeth[good]) * tau_f
    omega = None
    if np.unique(tt).size >= 2:
        slope = np.polyfit(tt, np.log(areas[good]), 1, w=np.sqrt(areas[good]))[0]
        if slope < 0:
            omega = -float(slope)
    if omega is None:
        omega = 0.1 / extent
    omega = min(omega, 0.5 / tau_f)
    c2 = max(floor, 0.0) / c1
    return CombModelParams(c1=c1, c2=c2, tau_f=tau_f, tau_w=tau_w, omega_w=omega)


# -- solver -----------------------------------------------------------------

def _valid(theta):
    c1, c2, tau_f, tau_w, omega = theta
    return (np.all(np.isfinite(theta)) and c1 > 0 and c2 >= 0 and tau_f > 0
            and 0 < tau_w < tau_f and omega > 0 and omega * tau_f < 1.0)


def fit_comb(h: CoincidenceHistogram, init: CombModelParams | None = None,
             fit_window: float | None = None, max_iter: int = MAX_ITER,
             xtol: float = XTOL, tooth_truncation: int = 3) -> CombFitResult:
    """Fit the jitter-convolved comb to a coincidence histogram.

    Args:
        h: histogram; ``c1`` comes out in the units of its counts per bin.
        init: starting parameters; auto-initialised from ``h`` if omitted.
        fit_window: half width (s) of the delay range to fit. Defaults to
            ``min(12 / omega_init, histogram extent)``.
        max_iter: iteration cap (rejected steps count).
        xtol: stop once the largest relative parameter step is below this.

    Returns:
        CombFitResult. Failure to converge is reported through
        ``converged=False`` rather than an exception.

    Raises:
        InitializationError: ``init`` omitted and no comb found in ``h``.
    """
    if init is None:
        init = initial_guess(h)
    extent = h.tau_max * 1e-12
    if fit_window is None:
        fit_window = min(ENVELOPE_CUT / init.omega_w, extent)
    x_all = h.centers
    sel = np.abs(x_all) <= fit_window
    x = x_all[sel]
    y = np.asarray(h.counts, dtype=float)[sel]
    n_par = 5
    if x.size <= n_par:
        raise ParameterError("fit window holds too few bins")

    scale = np.abs(init.as_array())
    scale[1] = max(scale[1], 1e-3)  # c2 may start at 0
    theta = init.as_array().astype(float)
    lam = 1e-3
    converged = False
    message = "maximum iterations reached"
    it = 0

    def evaluate(th, jac=True):
        return comb_model_jacobian(th, x, tooth_truncation, jacobian=jac)

    m, J = evaluate(theta)
    while it < max_iter:
        w = 1.0 / np.maximum(m, 1.0)
        r = y - m
        cost = float(np.sum(w * r * r))
        Js = J * scale
        A = Js.T @ (Js * w[:, None])
        g = Js.T @ (w * r)
        d = np.diag(A).copy()
        d[d <= 0] = 1.0
        accepted = False
        while it < max_iter:
            it += 1
            try:
                step = np.linalg.solve(A + lam * np.diag(d), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = theta + step * scale
            if trial[1] < 0:
                trial[1] = 0.0  # project c2 onto its bound
            if not _valid(trial):
                lam *= 10.0
                continue
            m_new, _ = evaluate(trial, jac=False)
            r_new = y - m_new
            cost_new = float(np.sum(w * r_new * r_new))
            if cost_new <= cost:
                accepted = True
                break
            lam *= 10.0
            if lam > 1e20:
                break
        if not accepted:
            if lam > 1e20:
                # no descent direction left at this weighting: stationary point
                converged = True
                message = "stationary (damping saturated)"
            break
        rel = np.max(np.abs(trial - theta) / np.maximum(np.abs(theta), scale * 1e-12))
        theta = trial
        lam = max(lam / 10.0, 1e-12)
        m, J = evaluate(theta)
        if rel < xtol:
            converged = True
            message = "relative step below tolerance"
            break

    m, J = evaluate(theta)
    w = 1.0 / np.maximum(m, 1.0)
    chi2 = float(np.sum(w * (y - m) ** 2)) / max(y.size - n_par, 1)
    try:
        cov = np.linalg.inv(J.T @ (J * w[:, None]))
        errs = np.sqrt(np.abs(np.diag(cov)))
    except np.linalg.LinAlgError:
        cov = None
        errs = np.full(n_par, np.inf)
    if converged and not np.all(np.isfinite(errs)):
        converged = False
        message = "singular covariance at solution"
    params = CombModelParams(*(float(v) for v in theta))
    return CombFitResult(
        params=params,
        std_errors=dict(zip(PARAM_NAMES, (float(e) for e in errs))),
        chi2_reduced=chi2,
        n_iterations=it,
        converged=converged,
        n_bins=int(y.size),
        fit_window=float(fit_window),
        message=message,
        covariance=cov,
    )
