"""Monte Carlo time-tag generation for a cavity SPDC source seen by two APDs.

The source emits photon pairs as a homogeneous Poisson process whose rate is
proportional to pump power. The delay between the two photons of a pair is
drawn from the multimode cavity correlation (see :mod:`cespdc.model`). Both
photons share one spatial mode and are split by a 50/50 fibre beam splitter
onto two detectors, each with its own efficiency, dark-count rate, Gaussian
timing jitter, nonparalyzable dead time and optional afterpulsing.

All randomness flows from a single integer seed through
:class:`numpy.random.SeedSequence`, so a configuration and seed always
reproduce bit-identical streams.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import trapezoid

from .correlator import TimeTagStream
from .errors import ConfigurationError, ParameterError
from .model import CombModelParams, dirichlet_ratio_sq

log = logging.getLogger(__name__)

PS = 1e12
MAX_DURATION = (2**63 - 1) / PS  # s, int64 picosecond range
TRUNCATION = 12.0  # delay density cut at |tau| <= TRUNCATION / omega_w
MAX_REJECTION_ROUNDS = 10_000
SLAB_PAIRS = 2_000_000  # expected pairs per generation slab

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True)
class SourceConfig:
    """Pair source driving the simulation.

    ``pump_power`` in mW, ``pair_rate_per_mw`` in generated pairs/(s mW),
    ``duration`` in s. Only ``tau_f``, ``omega_w`` and ``n_modes`` of
    ``model`` shape the pair-delay density; its ``c1``/``c2`` are ignored.
    """

    pump_power: float
    pair_rate_per_mw: float
    model: CombModelParams
    duration: float
    seed: int = 0

    def __post_init__(self):
        if not self.pump_power > 0:
            raise ParameterError(f"pump_power must be > 0, got {self.pump_power}")
        if not self.pair_rate_per_mw > 0:
            raise ParameterError(f"pair_rate_per_mw must be > 0, got {self.pair_rate_per_mw}")
        if not self.duration > 0:
            raise ParameterError(f"duration must be > 0, got {self.duration}")
        if not 0 <= int(self.seed) < 2**64 or int(self.seed) != self.seed:
            raise ParameterError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def pair_rate(self) -> float:
        return self.pair_rate_per_mw * self.pump_power


@dataclass(frozen=True)
class DetectorConfig:
    """Single-photon detector model (times in s, rates in Hz)."""

    efficiency: float
    dark_rate: float = 0.0
    jitter_fwhm: float = 0.0
    dead_time: float = 0.0
    afterpulse_prob: float = 0.0
    afterpulse_tau: float = 100e-9

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ParameterError(f"efficiency must be in [0, 1], got {self.efficiency}")
        if self.dark_rate < 0:
            raise ParameterError(f"dark_rate must be >= 0, got {self.dark_rate}")
        if self.jitter_fwhm < 0:
            raise ParameterError(f"jitter_fwhm must be >= 0, got {self.jitter_fwhm}")
        if self.dead_time < 0:
            raise ParameterError(f"dead_time must be >= 0, got {self.dead_time}")
        if not 0 <= self.afterpulse_prob < 1:
            raise ParameterError(f"afterpulse_prob must be in [0, 1), got {self.afterpulse_prob}")
        if self.afterpulse_tau <= 0:
            raise ParameterError(f"afterpulse_tau must be > 0, got {self.afterpulse_tau}")


def _tooth_weights(q, n_max):
    n = np.arange(-n_max, n_max + 1)
    w = q ** np.abs(n)
    return n, w / w.sum()


def _sample_offsets(m, size, rng):
    """Phase offsets ``x`` in [-pi/2, pi/2) drawn from ``min(m^2, 1/sin^2 x)``.

    That function bounds the squared Dirichlet kernel everywhere, and its
    integral is elementary, so it can be inverted directly.
    """
    x0 = math.asin(1.0 / m) if m > 1 else 0.5 * math.pi
    core = m * m * x0
    tail = math.sqrt(m * m - 1.0)  # cot(x0)
    v = rng.random(size)
    in_core = rng.random(size) * (core + tail) < core
    x = np.where(in_core, v * x0, np.arctan2(1.0, tail * (1.0 - v)))
    bound = np.where(in_core, m * m, 1.0 / np.sin(x) ** 2)
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return sign * x, bound


def sample_pair_delays(model: CombModelParams, size: int, rng: np.random.Generator):
    """Draw ``size`` signed pair delays (s) from the cavity correlation density.

    The density is ``exp(-omega_w |tau|) D(tau)`` on ``|tau| <= 12 / omega_w``
    with ``D`` the squared Dirichlet kernel of the 2N+1 modes. A tooth index
    ``n`` is proposed with weight ``q^|n|`` (``q = exp(-omega_w tau_f)``) and
    an offset within the period from an envelope of ``D``; the pair is
    accepted against the exact density, otherwise both are redrawn.

    Returns:
        ``(delays, n_fallback)``; ``n_fallback`` counts samples that were set
        to their proposed tooth centre after the rejection budget ran out.
    """
    size = int(size)
    tau_f, omega = model.tau_f, model.omega_w
    m = 2 * model.n_modes + 1
    cut = TRUNCATION / omega
    q = math.exp(-omega * tau_f)
    n_max = int(math.floor(cut / tau_f + 0.5))
    teeth, probs = _tooth_weights(q, n_max)
    # upper bound of exp(-omega (|tau| - |n| tau_f)) over the proposal cell
    env_bound = math.exp(0.5 * omega * tau_f)

    out = np.empty(size)
    todo = np.arange(size)
    accept_rate = 0.7
    rounds = 0
    while todo.size and rounds < MAX_REJECTION_ROUNDS:
        k = todo.size
        draw = min(max(int(1.2 * k / accept_rate) + 16, 64), 20_000_000)
        n = rng.choice(teeth, size=draw, p=probs)
        x, bound = _sample_offsets(m, draw, rng)
        u = x * (tau_f / math.pi)
        tau = n * tau_f + u
        a = np.abs(tau)
        ratio = dirichlet_ratio_sq(u, tau_f, model.n_modes) / bound
        ratio *= np.exp(-omega * (a - np.abs(n) * tau_f)) / env_bound
        ok = (rng.random(draw) < ratio) & (a <= cut)
        acc = tau[ok]
        accept_rate = max(ok.mean(), 1e-4)
        take = min(acc.size, k)
        out[todo[:take]] = acc[:take]
        todo = todo[take:]
        rounds += 1
    n_fallback = int(todo.size)
    if n_fallback:
        out[todo] = rng.choice(teeth, size=n_fallback, p=probs) * tau_f
        log.warning("pair-delay sampler: %d samples fell back to tooth centres", n_fallback)
    return out, n_fallback


def sample_pair_delay(model: CombModelParams, rng: np.random.Generator) -> float:
    """Single-sample convenience wrapper around :func:`sample_pair_delays`."""
    return float(sample_pair_delays(model, 1, rng)[0][0])


def apply_dead_time(tags: np.ndarray, dead_ps: int) -> np.ndarray:
    """Nonparalyzable dead time on sorted integer tags.

    An event is kept iff it arrives at least ``dead_ps`` after the last kept
    event. Events whose gap to the immediately preceding event already
    exceeds the dead time are kept without inspection; only clustered events
    are resolved sequentially.
    """
    if dead_ps <= 0 or tags.size < 2:
        return tags
    t = tags.astype(np.int64)
    keep = np.ones(t.size, dtype=bool)
    last = t[0]
    for i in (np.flatnonzero(np.diff(t) < dead_ps) + 1).tolist():
        if keep[i - 1]:
            last = t[i - 1]
        if t[i] - last < dead_ps:
            keep[i] = False
        else:
            last = t[i]
    return tags[keep]


def _check_duration(duration):
    if duration > MAX_DURATION:
        raise ConfigurationError(
            f"duration {duration:g} s overflows the 64-bit picosecond range "
            f"(max {MAX_DURATION:.3g} s)")


def _pair_photons(source, dets, rng, t0_ps, t1_ps, routing):
    """Detected photon times (int ps) and channels for pairs emitted in [t0_ps, t1_ps)."""
    n = rng.poisson(source.pair_rate * (t1_ps - t0_ps) / PS)
    t = rng.integers(t0_ps, t1_ps, size=n, dtype=np.int64)
    d, n_fb = sample_pair_delays(source.model, n, rng)
    offset = np.concatenate([np.zeros(n), d * PS])
    if routing == "random":
        ch = rng.integers(0, 2, size=2 * n)
    elif routing == "opposite":
        ch = np.repeat(np.array([0, 1]), n)
    else:
        raise ConfigurationError(f"unknown routing {routing!r}")
    eff = np.array([dets[0].efficiency, dets[1].efficiency])
    alive = rng.random(2 * n) < eff[ch]
    sig = np.array([dets[0].jitter_fwhm, dets[1].jitter_fwhm]) * FWHM_TO_SIGMA * PS
    offset = offset + rng.normal(0.0, 1.0, size=2 * n) * sig[ch]
    times = np.concatenate([t, t]) + np.rint(offset).astype(np.int64)
    return times[alive], ch[alive], n, n_fb


def simulate(source: SourceConfig, det1: DetectorConfig, det2: DetectorConfig,
             routing: str = "random", return_stats: bool = False):
    """Generate the two detector streams of an HBT coincidence measurement.

    Args:
        source: pair source and seed.
        det1, det2: detector models for channels 0 and 1.
        routing: ``"random"`` sends each photon to either detector with
            probability 1/2; ``"opposite"`` forces the first photon of every
            pair to channel 0 and the second to channel 1 (diagnostics).
        return_stats: also return a dict of generation counters.

    Returns:
        ``(stream0, stream1)`` or ``(stream0, stream1, stats)``.
    """
    _check_duration(source.duration)
    dets = (det1, det2)
    t_ps = int(round(source.duration * PS))
    ss = np.random.SeedSequence(int(source.seed))
    pair_ss, dark_ss, ap_ss = ss.spawn(3)

    expected = source.pair_rate * source.duration
    n_slabs = max(1, int(math.ceil(expected / SLAB_PAIRS)))
    edges = [t_ps * i // n_slabs for i in range(n_slabs + 1)]
    chunks = [[], []]
    n_pairs = n_fallback = 0
    for t0, t1, slab_ss in zip(edges[:-1], edges[1:], pair_ss.spawn(n_slabs)):
        rng = np.random.default_rng(slab_ss)
        times, ch, n, n_fb = _pair_photons(source, dets, rng, t0, t1, routing)
        n_pairs += n
        n_fallback += n_fb
        ok = (times >= 0) & (times < t_ps)
        for c in (0, 1):
            chunks[c].append(times[ok & (ch == c)])

    streams = []
    stats = {"n_pairs": n_pairs, "n_fallback": n_fallback, "n_dark": [], "n_afterpulses": []}
    for c, (det, d_ss, a_ss) in enumerate(zip(dets, dark_ss.spawn(2), ap_ss.spawn(2))):
        rng = np.random.default_rng(d_ss)
        n_dark = rng.poisson(det.dark_rate * source.duration)
        dark = rng.integers(0, t_ps, size=n_dark, dtype=np.int64)
        tags = np.sort(np.concatenate(chunks[c] + [dark]), kind="stable")
        tags = apply_dead_time(tags, int(round(det.dead_time * PS)))
        n_ap = 0
        if det.afterpulse_prob > 0 and tags.size:
            rng = np.random.default_rng(a_ss)
            hit = rng.random(tags.size) < det.afterpulse_prob
            delay = det.dead_time + rng.exponential(det.afterpulse_tau, size=int(hit.sum()))
            ap = tags[hit] + np.rint(delay * PS).astype(np.int64)
            ap = ap[ap < t_ps]
            n_ap = ap.size
            tags = np.sort(np.concatenate([tags, ap]), kind="stable")
        stats["n_dark"].append(int(n_dark))
        stats["n_afterpulses"].append(int(n_ap))
        streams.append(TimeTagStream(c, tags.astype(np.uint64), source.duration))
    if return_stats:
        return streams[0], streams[1], stats
    return streams[0], streams[1]


def derive_seed(seed: int, index: int) -> int:
    """Deterministic 64-bit child seed for sweep point ``index``."""
    state = np.random.SeedSequence([int(seed), int(index)]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def sweep_pump(source: SourceConfig, powers, det1: DetectorConfig, det2: DetectorConfig,
               durations=None, routing: str = "random"):
    """Run :func:`simulate` once per pump power.

    Sweep point ``i`` uses seed ``derive_seed(source.seed, i)`` and, if
    given, ``durations[i]`` in place of ``source.duration``.
    """
    powers = list(powers)
    if not powers:
        raise ConfigurationError("pump power list is empty")
    if durations is not None and len(durations) != len(powers):
        raise ConfigurationError("durations must match powers in length")
    out = []
    for i, p in enumerate(powers):
        cfg = replace(source, pump_power=p, seed=derive_seed(source.seed, i))
        if durations is not None:
            cfg = replace(cfg, duration=durations[i])
        out.append(simulate(cfg, det1, det2, routing=routing))
    return out


# -- analytic bookkeeping ---------------------------------------------------

def expected_singles_rate(source: SourceConfig, det: DetectorConfig) -> float:
    """Mean detection rate (Hz) of one channel, dead time and afterpulses ignored.

    Each pair delivers two photons, each routed to this detector with
    probability 1/2.
    """
    return source.pair_rate * det.efficiency + det.dark_rate


def expected_coincidence_rate(source: SourceConfig, det1: DetectorConfig,
                              det2: DetectorConfig) -> float:
    """Rate (Hz) of pairs whose photons land on opposite detectors and both click."""
    return 0.5 * source.pair_rate * det1.efficiency * det2.efficiency


def nonparalyzable_rate(true_rate: float, dead_time: float) -> float:
    return true_rate / (1.0 + true_rate * dead_time)


def _central_tooth(model, sigma, n_grid=8001):
    """Central tooth of the pair density (unnormalised) convolved with a Gaussian.

    Returns the grid, the convolved tooth, and the raw per-tooth integrals
    ``(I0, I1)`` with ``I0 = int exp(-w|u|) D(u) du`` and
    ``I1 = int exp(-w u) D(u) du`` over one period.
    """
    tau_f, omega = model.tau_f, model.omega_w
    half = 0.5 * tau_f
    u = np.linspace(-half, half, n_grid)
    du = u[1] - u[0]
    dk = dirichlet_ratio_sq(u, tau_f, model.n_modes)
    i0 = trapezoid(np.exp(-omega * np.abs(u)) * dk, u)
    i1 = trapezoid(np.exp(-omega * u) * dk, u)
    shape = np.exp(-omega * np.abs(u)) * dk
    if sigma > 0:
        # pad so the kernel tails are not clipped
        pad = int(math.ceil(6 * sigma / du))
        shape = np.pad(shape, pad)
        u = (np.arange(shape.size) - (shape.size - 1) / 2) * du
        k = np.exp(-0.5 * (u / sigma) ** 2)
        k /= k.sum()
        shape = np.convolve(shape, k, mode="same")
    return u, shape, (i0, i1)


def _fwhm(x, y):
    """FWHM of the central peak of y(x) by linear interpolation at half maximum."""
    i = int(np.argmax(y))
    half = 0.5 * y[i]
    left = i
    while left > 0 and y[left] > half:
        left -= 1
    right = i
    while right < y.size - 1 and y[right] > half:
        right += 1
    xl = np.interp(half, [y[left], y[left + 1]], [x[left], x[left + 1]])
    xr = np.interp(half, [y[right], y[right - 1]], [x[right], x[right - 1]])
    return xr - xl


def expected_comb_params(source: SourceConfig, det1: DetectorConfig, det2: DetectorConfig,
                         bin_width_ps: float) -> CombModelParams:
    """Ground-truth comb parameters of the coincidence histogram this source yields.

    ``c1`` is the expected central-tooth peak height per bin above the
    accidental floor, ``c2`` the floor relative to ``c1``, ``tau_w`` the FWHM
    of the density tooth after convolution with both detectors' jitter.
    Valid for random routing, no dead time and no afterpulses.
    """
    model = source.model
    sigma = math.hypot(det1.jitter_fwhm, det2.jitter_fwhm) * FWHM_TO_SIGMA
    x, tooth, (i0, i1) = _central_tooth(model, sigma)
    q = math.exp(-model.omega_w * model.tau_f)
    n_max = int(math.floor(TRUNCATION / (model.omega_w * model.tau_f) + 0.5))
    norm = i0 + 2.0 * i1 * sum(q**n for n in range(1, n_max + 1))
    bw = bin_width_ps / PS
    n_coinc = expected_coincidence_rate(source, det1, det2) * source.duration
    c1 = n_coinc * bw * tooth.max() / norm
    r1 = expected_singles_rate(source, det1)
    r2 = expected_singles_rate(source, det2)
    floor = r1 * r2 * bw * source.duration
    return CombModelParams(c1=c1, c2=floor / c1, tau_f=model.tau_f, tau_w=_fwhm(x, tooth),
                           omega_w=model.omega_w, n_modes=model.n_modes)


__all__ = [
    "SourceConfig", "DetectorConfig", "sample_pair_delay", "sample_pair_delays", "simulate",
    "sweep_pump", "derive_seed", "apply_dead_time", "expected_singles_rate",
    "expected_coincidence_rate", "expected_comb_params", "nonparalyzable_rate",
]
