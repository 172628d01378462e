"""Command-line scenario runner.

Every artifact starts with a ``#`` header block (tool version, command,
seed, config hash, resolved config) followed by a CSV header row. Exit
status: 0 success, 2 invalid config or arguments, 3 numerical failure.
Errors are reported on stderr as one line ``error: code=<n> key=<key> <message>``.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import re
import sys

import numpy as np

from . import __version__
from .cavity import (
    cluster_spacing,
    find_cluster_modes,
    mode_hop_spacing,
    tuning_matrix,
)
from .config import ConfigError, build_scenario, config_hash, load_config, render_config
from .detection import beat_spectrum, difference_spectrum
from .efficiency import (
    EfficiencyDataset,
    FitError,
    fit,
    generate_dataset,
    optimum_operating_point,
)
from .records import TimeSeries
from .servo import calibrate_vibration_coupling, run

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class NumericalFailure(RuntimeError):
    pass


def _header(ctx, extra=()):
    lines = [f"# tool: twinbeam-opo {__version__}", f"# command: {ctx['command']}",
             f"# seed: {ctx['seed']}", f"# config_sha256: {config_hash(ctx['cfg'])}"]
    lines += [f"# {k}: {v}" for k, v in extra]
    lines += [f"# config: {line}" for line in render_config(ctx["cfg"]).splitlines()]
    return "\n".join(lines) + "\n"


def _write(ctx, text):
    out = ctx["out"]
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _csv(ctx, columns, data, fmt="%.12g", extra=()):
    buf = io.StringIO()
    buf.write(_header(ctx, extra))
    buf.write(",".join(columns) + "\n")
    if len(data):
        np.savetxt(buf, np.column_stack(data), fmt=fmt, delimiter=",")
    _write(ctx, buf.getvalue())


def _read_csv(path):
    with open(path, encoding="utf-8") as fh:
        rows = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    if not rows:
        raise ConfigError("--in", f"{path}: no data")
    names = [c.strip() for c in rows[0].split(",")]
    try:
        data = np.loadtxt(io.StringIO("".join(rows[1:])), delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ConfigError("--in", f"{path}: {exc}") from None
    if data.size and data.shape[1] != len(names):
        raise ConfigError("--in", f"{path}: column count mismatch")
    return {n: data[:, j] for j, n in enumerate(names)} if data.size else {n: np.empty(0)
                                                                         for n in names}


def parse_angle(text: str) -> float:
    """Accept a float in radians or a multiple of pi such as ``pi/8``, ``3*pi/4``."""
    text = text.strip().replace(" ", "")
    m = re.fullmatch(r"(?:([0-9.eE+-]+)\*?)?pi(?:/([0-9.eE+-]+))?", text)
    try:
        if m:
            num = float(m.group(1)) if m.group(1) else 1.0
            den = float(m.group(2)) if m.group(2) else 1.0
            return num * math.pi / den
        return float(text)
    except ValueError:
        raise ConfigError("--alpha", f"cannot parse angle {text!r}") from None


# -- subcommands

def cmd_cluster_map(ctx, args):
    sc = ctx["scenario"]
    half = 0.5 * args.span_nm * 1e-9
    c0 = args.center_nm * 1e-9
    modes = find_cluster_modes(sc.crystal, sc.geometry, (c0 - half, c0 + half),
                               max_beat=args.max_beat_hz)
    extra = [("mode_hop_spacing_nm", f"{mode_hop_spacing(sc.crystal, sc.geometry) * 1e9:.6g}"),
             ("cluster_spacing_nm", f"{cluster_spacing(sc.geometry) * 1e9:.6g}")]
    cols = ["L_offset_nm", "p_s", "p_i", "nu_s_Hz", "nu_i_Hz", "beat_Hz",
            "cluster_label", "intra_label"]
    buf = io.StringIO()
    buf.write(_header(ctx, extra))
    buf.write(",".join(cols) + "\n")
    for m in modes:
        p = m.pair
        buf.write(f"{m.l_offset * 1e9:.9f},{p.p_signal},{p.p_idler},{p.nu_signal:.6f},"
                  f"{p.nu_idler:.6f},{p.beat:.6f},{m.cluster_label},{m.intra_label}\n")
    _write(ctx, buf.getvalue())


_COL_UNITS = (("L", "Hz_per_m", 1e-15, "MHz/nm"), ("T", "Hz_per_K", 1e-9, "MHz/mK"),
              ("V", "Hz_per_V", 1e-6, "MHz/V"), ("nup", "Hz_per_Hz", 1.0, "Hz/Hz"))


def cmd_tune_matrix(ctx, args):
    tm = tuning_matrix(ctx["scenario"].crystal, ctx["scenario"].geometry)
    print("tuning matrix d(nu+, nu-)/dX")
    for j, (name, _, scale, unit) in enumerate(_COL_UNITS):
        print(f"  {name:>3}: ({tm.values[0, j] * scale:+.5g}, {tm.values[1, j] * scale:+.5g}) {unit}")
    if ctx["out"] is not None:
        cols, data = [], []
        for j, (name, unit, _, _) in enumerate(_COL_UNITS):
            cols += [f"dnu_plus_d{name}_{unit}", f"dnu_minus_d{name}_{unit}"]
            data += [tm.values[0, j:j + 1], tm.values[1, j:j + 1]]
        _csv(ctx, cols, data, fmt="%.17g")


def cmd_tune_calibrate(ctx, args):
    cr = ctx["scenario"].crystal
    vals = [cr.dpath_dT_signal, cr.dpath_dT_idler, cr.dpath_dV_signal, cr.dpath_dV_idler]
    keys = ["dpath_dT_signal_m_per_K", "dpath_dT_idler_m_per_K",
            "dpath_dV_signal_m_per_V", "dpath_dV_idler_m_per_V"]
    print("[crystal]\ncalibrate = false")
    for k, v in zip(keys, vals):
        print(f"{k} = {v!r}")
    if ctx["out"] is not None:
        _csv(ctx, keys, [np.array([v]) for v in vals], fmt="%.17g")


def cmd_sim(ctx, args, locked):
    sc = ctx["scenario"]
    noise = sc.noise
    extra = []
    if args.calibrate_vibration_hz is not None:
        try:
            noise = calibrate_vibration_coupling(args.calibrate_vibration_hz, noise, sc.plant,
                                                 sc.servo, seed=ctx["seed"])
        except RuntimeError as exc:
            raise NumericalFailure(f"servo: {exc}") from None
        extra.append(("vibration_lines", repr(noise.vibration_lines)))
    try:
        series = run(args.duration_s, args.sample_rate_hz, locked, ctx["seed"], sc.plant, noise,
                     sc.servo if locked else None, averaged=sc.averaged,
                     internal_rate=sc.internal_rate)
    except ValueError as exc:
        raise ConfigError("servo.internal_rate_Hz", str(exc)) from None
    if not np.all(np.isfinite(series.nu_minus)):
        raise NumericalFailure("servo: non-finite beat note")
    extra += [("internal_rate_Hz", repr(series.meta["internal_rate"])),
              ("hops", series.meta["hops"]), ("saturated", series.meta["saturated"]),
              ("nu_minus_range_Hz", f"{series.drift_range():.6f}")]
    _csv(ctx, ["t_s", "nu_minus_Hz", "nu_plus_detuning_Hz", "power_W", "hop_flag"],
         [series.t, series.nu_minus, series.nu_plus_detuning, series.power, series.hop_flag],
         fmt=["%.9f", "%.6f", "%.6f", "%.9e", "%d"], extra=extra)


def cmd_spectrum_beat(ctx, args):
    cols = _read_csv(args.input)
    for need in ("t_s", "nu_minus_Hz"):
        if need not in cols:
            raise ConfigError("--in", f"input lacks column {need}")
    t = cols["t_s"]
    if len(t) < 2:
        raise ConfigError("--in", "need at least two samples")
    fs = 1.0 / float(np.median(np.diff(t)))
    zeros = np.zeros_like(t)
    series = TimeSeries(t, cols["nu_minus_Hz"], zeros, zeros, zeros.astype(np.int8), fs)
    try:
        sp = beat_spectrum(series, args.rbw_hz, args.sweep_ms * 1e-3, args.maxhold_n,
                           span=args.span_hz, center=args.center_hz, carrier=args.carrier_hz,
                           n_bins=args.n_bins)
    except ValueError as exc:
        raise ConfigError("spectrum", str(exc)) from None
    _csv(ctx, ["f_Hz", "psd_rel_tone", "maxhold_rel_tone"], [sp.f, sp.psd, sp.maxhold],
         extra=[("rbw_Hz", repr(sp.rbw)), ("sweep_s", repr(sp.sweep_time))])


def cmd_spectrum_diff(ctx, args):
    sc = ctx["scenario"]
    d = ctx["cfg"]["detection"]
    alpha = parse_angle(args.alpha)
    f = np.linspace(d["f_min_Hz"], d["f_max_Hz"], d["n_points"])
    n_avg = d["n_averages"] or None
    rng = np.random.default_rng(ctx["seed"]) if n_avg else None
    sp = difference_spectrum(alpha, sc.detectors, sc.difference, f, sc.crosstalk_power,
                             n_averages=n_avg, rng=rng)
    _csv(ctx, ["f_Hz", "psd_rel_shot", "psd_dB_rel_shot"], [sp.f, sp.psd, 10 * np.log10(sp.psd)],
         extra=[("alpha_rad", repr(alpha)), ("eta", repr(sc.detectors.eta))])


def cmd_fit_efficiency(ctx, args):
    cols = _read_csv(args.data)
    for need in ("pump_W", "rho"):
        if need not in cols:
            raise ConfigError("--data", f"input lacks column {need}")
    sigma = cols.get("sigma")
    try:
        ds = EfficiencyDataset(cols["pump_W"], cols["rho"], sigma)
        res = fit(ds, weighted=args.weighted)
    except FitError as exc:
        raise NumericalFailure(f"efficiency: {exc}; last={exc.trace[-1] if exc.trace else None}")
    except ValueError as exc:
        raise ConfigError("--data", str(exc)) from None
    if not res.converged:
        raise NumericalFailure(f"efficiency: no convergence after {res.iterations} iterations")
    n_opt, rho_max = optimum_operating_point(res.model)
    report = {
        "p_threshold_W": res.model.p_threshold, "p_threshold_err_W": float(res.uncertainties[0]),
        "k_factor": res.model.k_factor, "k_factor_err": float(res.uncertainties[1]),
        "chi_squared": res.chi_squared, "iterations": res.iterations,
        "n_opt": n_opt, "rho_max": rho_max, "weighted": bool(args.weighted),
    }
    if ctx["out"] is not None and ctx["out"].endswith(".json"):
        doc = {"tool": f"twinbeam-opo {__version__}", "command": ctx["command"],
               "seed": ctx["seed"], "config_sha256": config_hash(ctx["cfg"]), "fit": report}
        _write(ctx, json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return
    keys = list(report)
    buf = io.StringIO()
    buf.write(_header(ctx))
    buf.write(",".join(keys) + "\n")
    buf.write(",".join(repr(report[k]) if isinstance(report[k], float) else str(report[k])
                       for k in keys) + "\n")
    _write(ctx, buf.getvalue())


def cmd_gen_efficiency(ctx, args):
    from .efficiency import EfficiencyModel
    e = ctx["cfg"]["efficiency"]
    pth = args.pth if args.pth is not None else e["p_threshold_W"]
    k = args.k if args.k is not None else e["k_factor"]
    n_points = args.n_points if args.n_points is not None else e["n_points"]
    noise = args.noise if args.noise is not None else e["noise_rel"]
    try:
        model = EfficiencyModel(pth, k)
        ds = generate_dataset(model, n_points, (e["n_min"], e["n_max"]), noise,
                              np.random.default_rng(ctx["seed"]))
    except ValueError as exc:
        raise ConfigError("efficiency", str(exc)) from None
    cols, data = ["pump_W", "rho"], [ds.pump_power, ds.efficiency]
    if ds.sigma is not None:
        cols.append("sigma")
        data.append(ds.sigma)
    _csv(ctx, cols, data, fmt="%.17g")


def build_parser():
    p = argparse.ArgumentParser(prog="twinbeam-opo", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"twinbeam-opo {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="scenario config file")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--out", default=None, help="output path (default stdout)")
    top = p.add_subparsers(dest="group", required=True)

    g = top.add_parser("cluster").add_subparsers(dest="action", required=True)
    a = g.add_parser("map", parents=[common])
    a.add_argument("--span-nm", type=float, default=600.0)
    a.add_argument("--center-nm", type=float, default=0.0)
    a.add_argument("--max-beat-hz", type=float, default=20e9)
    a.set_defaults(func=cmd_cluster_map)

    g = top.add_parser("tune").add_subparsers(dest="action", required=True)
    g.add_parser("matrix", parents=[common]).set_defaults(func=cmd_tune_matrix)
    g.add_parser("calibrate", parents=[common]).set_defaults(func=cmd_tune_calibrate)

    g = top.add_parser("sim").add_subparsers(dest="action", required=True)
    for name, locked in (("lock", True), ("free", False)):
        a = g.add_parser(name, parents=[common])
        a.add_argument("--duration-s", type=float, default=60.0)
        a.add_argument("--sample-rate-hz", type=float, default=2e3)
        a.add_argument("--calibrate-vibration-hz", type=float, default=None,
                       help="rescale vibration lines to this locked beat range first")
        a.set_defaults(func=lambda ctx, args, _l=locked: cmd_sim(ctx, args, _l))

    g = top.add_parser("spectrum").add_subparsers(dest="action", required=True)
    a = g.add_parser("beat", parents=[common])
    a.add_argument("--in", dest="input", required=True)
    a.add_argument("--rbw-hz", type=float, default=30e3)
    a.add_argument("--sweep-ms", type=float, default=14.0)
    a.add_argument("--maxhold-n", type=int, default=1)
    a.add_argument("--span-hz", type=float, default=5e6)
    a.add_argument("--center-hz", type=float, default=None)
    a.add_argument("--carrier-hz", type=float, default=0.0)
    a.add_argument("--n-bins", type=int, default=501)
    a.set_defaults(func=cmd_spectrum_beat)
    a = g.add_parser("diff", parents=[common])
    a.add_argument("--alpha", default="0", help='radians, or e.g. "pi/8"')
    a.set_defaults(func=cmd_spectrum_diff)

    g = top.add_parser("fit").add_subparsers(dest="action", required=True)
    a = g.add_parser("efficiency", parents=[common])
    a.add_argument("--data", required=True)
    a.add_argument("--weighted", action="store_true")
    a.set_defaults(func=cmd_fit_efficiency)

    g = top.add_parser("gen").add_subparsers(dest="action", required=True)
    a = g.add_parser("efficiency", parents=[common])
    a.add_argument("--pth", type=float, default=None, help="threshold (W)")
    a.add_argument("--k", type=float, default=None)
    a.add_argument("--n-points", type=int, default=None)
    a.add_argument("--noise", type=float, default=None, help="relative rms noise")
    a.set_defaults(func=cmd_gen_efficiency)
    return p


def _command_line(args):
    skip = {"func", "group", "action", "config", "out", "seed"}
    opts = " ".join(f"--{k.replace('_', '-')}={v}" for k, v in sorted(vars(args).items())
                    if k not in skip and v is not None)
    return f"{args.group} {args.action} {opts}".strip()


def _fail(code, key, message):
    sys.stderr.write(f"error: code={code} key={key} {message}\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed", "seed must be an unsigned integer")
            cfg[""]["seed"] = args.seed
        ctx = {"cfg": cfg, "seed": cfg[""]["seed"], "out": args.out,
               "command": _command_line(args), "scenario": build_scenario(cfg)}
        args.func(ctx, args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc.key, str(exc))
    except OSError as exc:
        return _fail(EXIT_CONFIG, "io", str(exc))
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
