"""Coincidence histograms from two sorted time-tag streams.

Every pair ``(t_a, t_b)`` whose delay ``t_b - t_a`` falls inside the window
``[-tau_max, tau_max)`` is counted once (multi-stop, not start-stop). Bins are
half-open, ``[tau_min + k w, tau_min + (k + 1) w)``.

The sweep is linear in the number of tags plus the number of counted pairs:
for every tag of ``a`` the matching slice of ``b`` is located with
``searchsorted``; pairs are then emitted one "offset level" at a time, so the
Python-level loop runs only as many times as the densest window holds tags.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ValidationError


@dataclass(frozen=True, eq=False)
class TimeTagStream:
    """Picosecond detection timestamps of one detector channel."""

    channel_id: int
    tags: np.ndarray
    duration: float  # s

    def __post_init__(self):
        tags = np.ascontiguousarray(self.tags, dtype=np.uint64)
        object.__setattr__(self, "tags", tags)
        if self.channel_id not in (0, 1):
            raise ValidationError(f"channel_id must be 0 or 1, got {self.channel_id}")
        if self.duration <= 0:
            raise ValidationError(f"duration must be > 0, got {self.duration}")
        if tags.size and np.any(tags[1:] < tags[:-1]):
            raise ValidationError(f"channel {self.channel_id}: tags are not sorted")
        if tags.size and int(tags[-1]) >= round(self.duration * 1e12):
            raise ValidationError(f"channel {self.channel_id}: tag beyond stream duration")

    def __len__(self):
        return self.tags.size

    def __eq__(self, other):
        if not isinstance(other, TimeTagStream):
            return NotImplemented
        return (self.channel_id == other.channel_id and self.duration == other.duration
                and np.array_equal(self.tags, other.tags))

    @property
    def rate(self) -> float:
        return self.tags.size / self.duration


@dataclass(eq=False)
class CoincidenceHistogram:
    """Binned delay counts over the symmetric window ``[-tau_max, tau_max)``.

    ``bin_width``/``tau_min``/``tau_max`` are integers in ps. ``counts`` is
    uint64 when produced by :func:`correlate`; synthetic histograms may carry
    float counts.
    """

    bin_width: int
    tau_min: int
    tau_max: int
    counts: np.ndarray
    n_tags_1: int = 0
    n_tags_2: int = 0
    duration: float = 0.0

    def __post_init__(self):
        self.bin_width = int(self.bin_width)
        self.tau_min = int(self.tau_min)
        self.tau_max = int(self.tau_max)
        if self.bin_width <= 0:
            raise ConfigurationError("bin_width must be positive")
        if self.tau_min != -self.tau_max:
            raise ConfigurationError("window must be symmetric (tau_min == -tau_max)")
        span = self.tau_max - self.tau_min
        if span <= 0 or span % self.bin_width:
            raise ConfigurationError("window span must be a positive multiple of bin_width")
        self.counts = np.asarray(self.counts)
        if self.counts.shape != (span // self.bin_width,):
            raise ConfigurationError(
                f"expected {span // self.bin_width} bins, got shape {self.counts.shape}")

    @property
    def n_bins(self) -> int:
        return self.counts.size

    @property
    def centers_ps(self) -> np.ndarray:
        """Bin-centre delays in ps."""
        return self.tau_min + (np.arange(self.n_bins) + 0.5) * self.bin_width

    @property
    def centers(self) -> np.ndarray:
        """Bin-centre delays in seconds."""
        return self.centers_ps * 1e-12

    def same_geometry(self, other: "CoincidenceHistogram") -> bool:
        return (self.bin_width, self.tau_min, self.tau_max) == (
            other.bin_width, other.tau_min, other.tau_max)

    def __eq__(self, other):
        if not isinstance(other, CoincidenceHistogram):
            return NotImplemented
        return (self.same_geometry(other) and self.n_tags_1 == other.n_tags_1
                and self.n_tags_2 == other.n_tags_2 and self.duration == other.duration
                and np.array_equal(self.counts, other.counts))

    @classmethod
    def zeros(cls, bin_width, tau_max, duration=0.0):
        n = 2 * int(tau_max) // int(bin_width)
        return cls(bin_width, -int(tau_max), int(tau_max), np.zeros(n, dtype=np.uint64),
                   duration=duration)


def _as_tags(x):
    if isinstance(x, TimeTagStream):
        return x.tags, x.duration
    tags = np.ascontiguousarray(x, dtype=np.uint64)
    if tags.size and np.any(tags[1:] < tags[:-1]):
        raise ValidationError("time tags are not sorted")
    return tags, 0.0


def _check_geometry(bin_width, tau_max):
    if int(bin_width) != bin_width or int(tau_max) != tau_max:
        raise ConfigurationError("bin_width and tau_max must be integer picoseconds")
    if bin_width < 1:
        raise ConfigurationError(f"bin_width must be >= 1 ps, got {bin_width}")
    if tau_max <= 0 or (2 * tau_max) % bin_width:
        raise ConfigurationError(
            f"window 2*tau_max ({2 * tau_max} ps) must be a positive multiple of "
            f"bin_width ({bin_width} ps)")


def correlate_counts(a, b, bin_width, tau_max, exclude_self=False):
    """Raw bin counts for two sorted uint64 tag arrays.

    With ``exclude_self`` the pairs ``(a[i], b[i])`` are skipped; this is only
    meaningful when ``a`` and ``b`` are the same stream.
    """
    bin_width = int(bin_width)
    tau_max = int(tau_max)
    n_bins = 2 * tau_max // bin_width
    counts = np.zeros(n_bins, dtype=np.uint64)
    if a.size == 0 or b.size == 0:
        return counts
    ai = a.astype(np.int64)
    bi = b.astype(np.int64)
    # b[j] - a[i] in [-tau_max, tau_max)
    lo = np.searchsorted(bi, ai - tau_max, side="left")
    hi = np.searchsorted(bi, ai + tau_max, side="left")
    active = np.flatnonzero(hi > lo)
    level = 0
    while active.size:
        j = lo[active] + level
        d = bi[j] - ai[active]
        if exclude_self:
            keep = j != active
            d = d[keep]
        k = (d + tau_max) // bin_width
        counts += np.bincount(k, minlength=n_bins).astype(np.uint64)
        level += 1
        active = active[hi[active] > lo[active] + level]
    return counts


def correlate(a, b, bin_width=128, tau_max=40_000, exclude_self=None, chunk_size=None):
    """Cross-correlation histogram of ``b`` relative to ``a``.

    Args:
        a, b: :class:`TimeTagStream` or sorted uint64 arrays (ps).
        bin_width: bin width in ps.
        tau_max: half window in ps; ``2 * tau_max`` must be a multiple of
            ``bin_width``.
        exclude_self: drop identical-index pairs. Defaults to ``a is b``.
        chunk_size: optional slab size over ``a``; slabs are correlated
            independently and merged, giving the same result.

    Returns:
        CoincidenceHistogram with delays ``t_b - t_a``.
    """
    _check_geometry(bin_width, tau_max)
    if exclude_self is None:
        exclude_self = a is b
    ta, da = _as_tags(a)
    tb, db = _as_tags(b)
    duration = max(da, db)
    if chunk_size is None or exclude_self:
        counts = correlate_counts(ta, tb, bin_width, tau_max, exclude_self)
    else:
        counts = np.zeros(2 * int(tau_max) // int(bin_width), dtype=np.uint64)
        for start in range(0, ta.size, int(chunk_size)):
            counts += correlate_counts(ta[start:start + int(chunk_size)], tb, bin_width, tau_max)
    return CoincidenceHistogram(int(bin_width), -int(tau_max), int(tau_max), counts,
                                n_tags_1=int(ta.size), n_tags_2=int(tb.size), duration=duration)


def merge_histograms(h1: CoincidenceHistogram, h2: CoincidenceHistogram) -> CoincidenceHistogram:
    """Elementwise sum of two histograms with identical geometry."""
    if not h1.same_geometry(h2):
        raise ConfigurationError("cannot merge histograms with different bin geometry")
    return CoincidenceHistogram(h1.bin_width, h1.tau_min, h1.tau_max, h1.counts + h2.counts,
                                n_tags_1=h1.n_tags_1 + h2.n_tags_1,
                                n_tags_2=h1.n_tags_2 + h2.n_tags_2,
                                duration=h1.duration + h2.duration)
