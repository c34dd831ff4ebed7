"""Command-line pipeline: simulate -> correlate -> fit -> report.

Exit codes: 0 success, 1 runtime or convergence failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import formats
from .correlator import correlate
from .errors import InitializationError, JitterLimitedError
from .fit import fit_comb, histogram_model
from .metrology import REFERENCE_EFFICIENCIES, build_report
from .model import CombModelParams, DetectionEfficiencies, eval_g2_convolved, eval_g2_ideal
from .timetag_sim import expected_singles_rate, simulate

log = logging.getLogger("cespdc")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2


class CommandFailed(Exception):
    def __init__(self, message, code=EXIT_RUNTIME):
        super().__init__(message)
        self.code = code


def _efficiencies(arg):
    if arg is None:
        return REFERENCE_EFFICIENCIES
    parts = [float(x) for x in arg.split(",")]
    if len(parts) != 4:
        raise ValueError("--efficiencies takes four comma-separated values t1,f,t2,d")
    return DetectionEfficiencies(*parts)


def cmd_simulate(args):
    cfg = formats.load_config(args.config)
    if args.seed is not None:
        cfg.source = replace(cfg.source, seed=args.seed)
    out = Path(args.output or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    s0, s1, stats = simulate(cfg.source, *cfg.detectors, return_stats=True)
    files = {}
    for s in (s0, s1):
        path = out / f"channel{s.channel_id}.ttg"
        formats.write_tags(path, s)
        files[f"channel{s.channel_id}"] = path.name
    manifest = {
        "config_sha256": cfg.sha256,
        "seed": cfg.source.seed,
        "duration_s": cfg.source.duration,
        "files": files,
        "n_tags": [len(s0), len(s1)],
        "singles_rate_hz": [s0.rate, s1.rate],
        "expected_singles_rate_hz": [expected_singles_rate(cfg.source, d) for d in cfg.detectors],
        "n_pairs": stats["n_pairs"],
        "n_sampler_fallback": stats["n_fallback"],
        "correlation": {"bin_width_ps": cfg.bin_width_ps, "tau_max_ps": cfg.tau_max_ps},
    }
    formats.write_json(out / "manifest.json", manifest)
    print(f"wrote {files['channel0']}, {files['channel1']} and manifest.json to {out}")


def _duration_from_manifest(path):
    man = Path(path).parent / "manifest.json"
    if man.exists():
        return float(json.loads(man.read_text())["duration_s"])
    return None


def cmd_correlate(args):
    dur_a = args.duration_s or _duration_from_manifest(args.tags_a)
    dur_b = args.duration_s or _duration_from_manifest(args.tags_b)
    a = formats.read_tags(args.tags_a, dur_a)
    b = formats.read_tags(args.tags_b, dur_b)
    h = correlate(a, b, args.bin_width_ps, args.tau_max_ps)
    prefix = Path(args.output)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    formats.write_histogram_csv(prefix.with_suffix(".csv"), h)
    formats.write_histogram_json(prefix.with_suffix(".json"), h)
    print(f"{int(h.counts.sum())} coincidences in {h.n_bins} bins -> {prefix}.csv/.json")


def _report_kwargs(args):
    return dict(
        eff=_efficiencies(args.efficiencies),
        pump_mw=args.pump_mw,
        system_jitter=(args.system_jitter_ps or 0.0) * 1e-12,
        single_pass_brightness=args.single_pass_brightness,
    )


def cmd_fit(args):
    h = formats.read_histogram(args.histogram)
    init = None
    if args.init:
        init = formats.params_from_dict(json.loads(Path(args.init).read_text()))
    try:
        res = fit_comb(h, init=init, fit_window=args.fit_window_s, max_iter=args.max_iter)
    except InitializationError as exc:
        raise CommandFailed(f"fit initialisation failed: {exc}") from None
    doc = {"fit": formats.fit_to_dict(res), "report": None}
    if args.pump_mw is not None and res.converged:
        duration = args.duration_s or h.duration
        rep = build_report(res, duration=duration, h=h, **_report_kwargs(args))
        doc["report"] = formats.report_to_dict(rep)
    formats.write_json(args.output, doc)
    if args.plot_csv:
        model = histogram_model(res.params, h)
        with open(args.plot_csv, "w") as fh:
            fh.write("delay_ps,count,model\n")
            for c, n, m in zip(h.centers_ps.tolist(), h.counts.tolist(), model.tolist()):
                fh.write(f"{c:g},{n},{m!r}\n")
    p = res.params
    print(f"converged={res.converged} linewidth={p.linewidth / 1e6:.4g} MHz "
          f"tau_f={p.tau_f * 1e9:.5g} ns tau_w={p.tau_w * 1e12:.4g} ps "
          f"chi2_red={res.chi2_reduced:.3g}")
    if not res.converged and not args.allow_nonconverged:
        raise CommandFailed(f"fit did not converge: {res.message}")


def cmd_report(args):
    doc = json.loads(Path(args.fit).read_text())
    res = formats.fit_from_dict(doc.get("fit", doc))
    h = formats.read_histogram(args.histogram) if args.histogram else None
    if args.coincidences is None and h is None:
        raise ValueError("report needs --coincidences or --histogram")
    rep = build_report(res, duration=args.duration_s, h=h, coincidences=args.coincidences,
                       **_report_kwargs(args))
    out = formats.report_to_dict(rep)
    if args.output:
        formats.write_json(args.output, out)
    print(json.dumps(out, indent=2))


def cmd_model_eval(args):
    p = CombModelParams(c1=args.c1, c2=args.c2, tau_f=args.tau_f_s, tau_w=args.tau_w_s,
                        omega_w=2 * math.pi * args.linewidth_hz, n_modes=args.n_modes)
    n = int(round((args.tau_max_ps - args.tau_min_ps) / args.step_ps)) + 1
    tau_ps = args.tau_min_ps + args.step_ps * np.arange(n)
    ideal = eval_g2_ideal(p, tau_ps * 1e-12)
    conv = eval_g2_convolved(p, tau_ps * 1e-12)
    fh = open(args.output, "w") if args.output else sys.stdout
    try:
        fh.write("tau_ps,g2_ideal,g2_convolved\n")
        for t, a, b in zip(tau_ps.tolist(), np.atleast_1d(ideal).tolist(),
                           np.atleast_1d(conv).tolist()):
            fh.write(f"{t:g},{a!r},{b!r}\n")
    finally:
        if fh is not sys.stdout:
            fh.close()


def _add_report_flags(p):
    p.add_argument("--pump-mw", type=float, help="pump power in mW")
    p.add_argument("--system-jitter-ps", type=float, default=0.0,
                   help="system jitter FWHM removed from tau_w in quadrature")
    p.add_argument("--efficiencies", help="t1,f,t2,d (default: reference setup)")
    p.add_argument("--single-pass-brightness", type=float,
                   help="single-pass brightness for the enhancement factor")
    p.add_argument("--duration-s", type=float, help="measurement time in s")


def build_parser():
    ap = argparse.ArgumentParser(prog="cespdc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate two time-tag files from a JSON config")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="output directory (overrides config)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("correlate", help="coincidence histogram of two tag files")
    p.add_argument("tags_a")
    p.add_argument("tags_b")
    p.add_argument("--bin-width-ps", type=int, default=128)
    p.add_argument("--tau-max-ps", type=int, default=40_000)
    p.add_argument("--duration-s", type=float)
    p.add_argument("--output", default="histogram", help="output path prefix")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("fit", help="fit the comb model to a histogram")
    p.add_argument("histogram", help="histogram .json (or .csv)")
    p.add_argument("--init", help="JSON parameter set overriding auto-initialisation")
    p.add_argument("--fit-window-s", type=float)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--allow-nonconverged", action="store_true")
    p.add_argument("--plot-csv", help="write data and model per bin")
    p.add_argument("--output", default="fit.json")
    _add_report_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("report", help="derived source metrics from a fit")
    p.add_argument("fit")
    p.add_argument("--coincidences", type=float)
    p.add_argument("--histogram")
    p.add_argument("--output")
    _add_report_flags(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("model-eval", help="evaluate both model forms on a delay grid")
    p.add_argument("--c1", type=float, default=1.0)
    p.add_argument("--c2", type=float, default=0.0)
    p.add_argument("--tau-f-s", type=float, default=1.9e-9)
    p.add_argument("--tau-w-s", type=float, default=561e-12)
    p.add_argument("--linewidth-hz", type=float, default=2.4e6)
    p.add_argument("--n-modes", type=int, default=3)
    p.add_argument("--tau-min-ps", type=float, default=-10_000)
    p.add_argument("--tau-max-ps", type=float, default=10_000)
    p.add_argument("--step-ps", type=float, default=16)
    p.add_argument("--output")
    p.set_defaults(func=cmd_model_eval)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.command == "report" and (args.pump_mw is None or args.duration_s is None):
        ap.error("report requires --pump-mw and --duration-s")
    try:
        args.func(args)
    except CommandFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except JitterLimitedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
