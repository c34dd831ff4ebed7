"""File formats: binary time tags, histogram CSV/JSON, run configs, fit and
report documents.

Binary time-tag layout (little endian)::

    0   4s   magic b"TTG1"
    4   u16  format version (1)
    6   u8   channel id
    7   u8   reserved (0)
    8   u64  tag count
    16  u64[count] picosecond timestamps, nondecreasing

Durations in configs are decimal seconds; tags and histogram geometry are
integer picoseconds.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .correlator import CoincidenceHistogram, TimeTagStream
from .errors import ConfigurationError, ValidationError
from .fit import PARAM_NAMES, CombFitResult
from .metrology import REFERENCE_EFFICIENCIES, SourceReport
from .model import CombModelParams, DetectionEfficiencies
from .timetag_sim import DetectorConfig, SourceConfig

TAG_MAGIC = b"TTG1"
TAG_VERSION = 1
_HEADER = struct.Struct("<4sHBBQ")


class ConfigError(ValidationError):
    """A run configuration document is missing a field or holds a bad value."""


# -- time tags ----------------------------------------------------------------

def write_tags(path, stream: TimeTagStream) -> None:
    tags = np.ascontiguousarray(stream.tags, dtype="<u8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TAG_MAGIC, TAG_VERSION, stream.channel_id, 0, tags.size))
        fh.write(tags.tobytes())


def read_tags(path, duration: float | None = None) -> TimeTagStream:
    """Load a tag file. Without ``duration`` the stream ends 1 ps after its last tag."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValidationError(f"{path}: truncated header")
    magic, version, channel, _, count = _HEADER.unpack_from(raw)
    if magic != TAG_MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    if version != TAG_VERSION:
        raise ValidationError(f"{path}: unsupported format version {version}")
    if len(raw) != _HEADER.size + 8 * count:
        raise ValidationError(f"{path}: expected {count} tags, file size disagrees")
    tags = np.frombuffer(raw, dtype="<u8", offset=_HEADER.size, count=count).astype(np.uint64)
    if duration is None:
        duration = (int(tags[-1]) + 1) * 1e-12 if count else 1e-12
    return TimeTagStream(channel, tags, duration)


# -- histograms ---------------------------------------------------------------

def _fmt_center(c):
    return str(int(c)) if float(c).is_integer() else repr(float(c))


def write_histogram_csv(path, h: CoincidenceHistogram) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delay_ps", "count"])
        for c, n in zip(h.centers_ps, h.counts.tolist()):
            w.writerow([_fmt_center(c), repr(n) if isinstance(n, float) else n])


def _counts_array(values):
    if all(isinstance(v, int) for v in values):
        return np.array(values, dtype=np.uint64)
    return np.array(values, dtype=float)


def read_histogram_csv(path, duration: float = 0.0) -> CoincidenceHistogram:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["delay_ps", "count"]:
        raise ValidationError(f"{path}: expected header delay_ps,count")
    rows = rows[1:]
    if len(rows) < 2:
        raise ValidationError(f"{path}: need at least two bins")
    centers = np.array([float(r[0]) for r in rows])
    counts = [int(r[1]) if r[1].lstrip("-").isdigit() else float(r[1]) for r in rows]
    bw = centers[1] - centers[0]
    if not float(bw).is_integer() or not np.allclose(np.diff(centers), bw):
        raise ValidationError(f"{path}: bins are not evenly spaced on whole picoseconds")
    tau_max = centers[-1] + bw / 2
    return CoincidenceHistogram(int(bw), -int(tau_max), int(tau_max), _counts_array(counts),
                                duration=duration)


def histogram_to_dict(h: CoincidenceHistogram) -> dict:
    return {
        "bin_width_ps": h.bin_width,
        "tau_min_ps": h.tau_min,
        "tau_max_ps": h.tau_max,
        "n_tags_1": h.n_tags_1,
        "n_tags_2": h.n_tags_2,
        "duration_s": h.duration,
        "counts": h.counts.tolist(),
    }


def histogram_from_dict(d: dict) -> CoincidenceHistogram:
    try:
        return CoincidenceHistogram(
            d["bin_width_ps"], d["tau_min_ps"], d["tau_max_ps"], _counts_array(d["counts"]),
            n_tags_1=int(d.get("n_tags_1", 0)), n_tags_2=int(d.get("n_tags_2", 0)),
            duration=float(d.get("duration_s", 0.0)))
    except KeyError as exc:
        raise ValidationError(f"histogram document lacks field {exc.args[0]!r}") from None


def write_histogram_json(path, h: CoincidenceHistogram) -> None:
    Path(path).write_text(json.dumps(histogram_to_dict(h)))


def read_histogram_json(path) -> CoincidenceHistogram:
    return histogram_from_dict(json.loads(Path(path).read_text()))


def read_histogram(path) -> CoincidenceHistogram:
    if str(path).endswith(".csv"):
        return read_histogram_csv(path)
    return read_histogram_json(path)


# -- parameters, fits and reports ----------------------------------------------

def params_to_dict(p: CombModelParams) -> dict:
    return {"c1": p.c1, "c2": p.c2, "tau_f_s": p.tau_f, "tau_w_s": p.tau_w,
            "omega_w_rad_s": p.omega_w, "linewidth_hz": p.linewidth, "n_modes": p.n_modes}


def params_from_dict(d: dict) -> CombModelParams:
    """Inverse of :func:`params_to_dict`; ``linewidth_hz`` may replace ``omega_w_rad_s``."""
    try:
        omega = d["omega_w_rad_s"] if "omega_w_rad_s" in d else 2 * math.pi * d["linewidth_hz"]
        return CombModelParams(c1=float(d["c1"]), c2=float(d["c2"]), tau_f=float(d["tau_f_s"]),
                               tau_w=float(d["tau_w_s"]), omega_w=float(omega),
                               n_modes=int(d.get("n_modes", 0)))
    except KeyError as exc:
        raise ConfigError(f"parameter set lacks field {exc.args[0]!r}") from None


def fit_to_dict(r: CombFitResult) -> dict:
    return {
        "params": params_to_dict(r.params),
        "std_errors": {
            "c1": r.std_errors["c1"], "c2": r.std_errors["c2"],
            "tau_f_s": r.std_errors["tau_f"], "tau_w_s": r.std_errors["tau_w"],
            "omega_w_rad_s": r.std_errors["omega_w"],
        },
        "chi2_reduced": r.chi2_reduced,
        "n_iterations": r.n_iterations,
        "converged": r.converged,
        "n_bins": r.n_bins,
        "fit_window_s": r.fit_window,
        "message": r.message,
    }


def fit_from_dict(d: dict) -> CombFitResult:
    keys = dict(zip(("c1", "c2", "tau_f_s", "tau_w_s", "omega_w_rad_s"), PARAM_NAMES))
    errs = d.get("std_errors") or {}
    return CombFitResult(
        params=params_from_dict(d["params"]),
        std_errors={keys[k]: float(v) for k, v in errs.items()},
        chi2_reduced=float(d.get("chi2_reduced", math.nan)),
        n_iterations=int(d.get("n_iterations", 0)),
        converged=bool(d.get("converged", True)),
        n_bins=int(d.get("n_bins", 0)),
        fit_window=float(d.get("fit_window_s", math.inf)),
        message=d.get("message", ""),
    )


def report_to_dict(r: SourceReport) -> dict:
    return r.to_dict()


def report_from_dict(d: dict) -> SourceReport:
    return SourceReport.from_dict(d)


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, allow_nan=True) + "\n")


# -- run configuration -------------------------------------------------------------

@dataclass
class RunConfig:
    source: SourceConfig
    detectors: tuple
    bin_width_ps: int = 128
    tau_max_ps: int = 40_000
    fit_options: dict = field(default_factory=dict)
    efficiencies: DetectionEfficiencies = REFERENCE_EFFICIENCIES
    output_dir: str = "."
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def sha256(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _get(d, key, where, cast=float, default=...):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    if key not in d:
        if default is ...:
            raise ConfigError(f"missing field {where}.{key}")
        return default
    try:
        return cast(d[key])
    except (TypeError, ValueError):
        raise ConfigError(f"field {where}.{key} has invalid value {d[key]!r}") from None


def _wrap(where, fn):
    try:
        return fn()
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from None


def source_from_dict(d: dict) -> SourceConfig:
    m = _get(d, "model", "source", cast=dict)
    tau_f = _get(m, "tau_f_s", "source.model")
    n = _get(m, "n_modes", "source.model", cast=int)
    if "omega_w_rad_s" in m:
        omega = _get(m, "omega_w_rad_s", "source.model")
    else:
        omega = 2 * math.pi * _get(m, "linewidth_hz", "source.model")
    tau_w = _get(m, "tau_w_s", "source.model", default=0.5 * tau_f / (2 * n + 1))
    model = _wrap("source.model", lambda: CombModelParams(
        c1=1.0, c2=0.0, tau_f=tau_f, tau_w=tau_w, omega_w=omega, n_modes=n))
    return _wrap("source", lambda: SourceConfig(
        pump_power=_get(d, "pump_power_mw", "source"),
        pair_rate_per_mw=_get(d, "pair_rate_per_mw", "source"),
        model=model,
        duration=_get(d, "duration_s", "source"),
        seed=_get(d, "seed", "source", cast=int, default=0),
    ))


def detector_from_dict(d: dict, where="detectors[i]") -> DetectorConfig:
    return _wrap(where, lambda: DetectorConfig(
        efficiency=_get(d, "efficiency", where),
        dark_rate=_get(d, "dark_rate_hz", where, default=0.0),
        jitter_fwhm=_get(d, "jitter_fwhm_s", where, default=0.0),
        dead_time=_get(d, "dead_time_s", where, default=0.0),
        afterpulse_prob=_get(d, "afterpulse_prob", where, default=0.0),
        afterpulse_tau=_get(d, "afterpulse_tau_s", where, default=100e-9),
    ))


def efficiencies_from_dict(d: dict, where="efficiencies") -> DetectionEfficiencies:
    return _wrap(where, lambda: DetectionEfficiencies(
        **{k: _get(d, k, where) for k in ("t1", "f", "t2", "d")}))


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    src = source_from_dict(_get(doc, "source", "config", cast=dict))
    dets = _get(doc, "detectors", "config", cast=list)
    if len(dets) != 2:
        raise ConfigError("config.detectors must list exactly two detectors")
    detectors = tuple(detector_from_dict(d, f"detectors[{i}]") for i, d in enumerate(dets))
    corr = _get(doc, "correlation", "config", cast=dict, default={})
    eff = doc.get("efficiencies")
    out = _get(doc, "output", "config", cast=dict, default={})
    return RunConfig(
        source=src,
        detectors=detectors,
        bin_width_ps=_get(corr, "bin_width_ps", "correlation", cast=int, default=128),
        tau_max_ps=_get(corr, "tau_max_ps", "correlation", cast=int, default=40_000),
        fit_options=_get(doc, "fit", "config", cast=dict, default={}),
        efficiencies=efficiencies_from_dict(eff) if eff is not None else REFERENCE_EFFICIENCIES,
        output_dir=_get(out, "directory", "output", cast=str, default="."),
        raw=doc,
    )


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(doc)
