"""
Command-line entry point.

Exit status: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.  Every subcommand that writes to ``--out`` places a
``manifest.json`` there before any result file.
"""

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
import warnings

from . import __version__
from .analytics import (CountsRecord, e2e_efficiency, fit_lifetime, g2_retrieved_model,
                        g2_snr_limit, noise_floor, snr, time_bandwidth_product)
from .config import ExperimentConfig, dump_config, load_config, parse_assignments, to_mapping
from .errors import (ConfigurationError, DomainError, FitError, NegativeSignalError,
                     NumericalInstabilityError, UndefinedEstimateError)
from .solver import write_spin_csv, write_trace_csv
from .sweep import evaluate_point, load_sweep_spec, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
MANIFEST = "manifest.json"

COUNT_FIELDS = ("n_herald", "n_ret", "n_noise_tot", "n_noise_mem")
RECORD_FIELDS = COUNT_FIELDS + ("eta_h", "eta_det", "g2_input")


class Manifest:
    """Run manifest, written on creation and rewritten on completion."""

    def __init__(self, out_dir, command, config=None, inputs=()):
        self.path = os.path.join(out_dir, MANIFEST)
        self.start = time.monotonic()
        self.data = {
            "tool": "vapormem",
            "version": __version__,
            "command": command,
            "argv": sys.argv[1:],
            "config": None if config is None else to_mapping(config),
            "inputs": {str(p): _digest(p) for p in inputs},
            "outputs": [],
            "status": "running",
            "wall_clock_s": None,
        }
        self.write()

    def add(self, path):
        self.data["outputs"].append(os.path.basename(path))
        return path

    def finish(self, status="ok"):
        self.data["status"] = status
        self.data["wall_clock_s"] = round(time.monotonic() - self.start, 3)
        self.write()

    def write(self):
        with open(self.path, "w") as fh:
            json.dump(self.data, fh, indent=2)
            fh.write("\n")


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _prepare_out(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def _require_file(path, what):
    if path is not None and not os.path.isfile(path):
        raise FileNotFoundError(f"{what} not found: {path}")


# simulate ------------------------------------------------------------------

def cmd_simulate(args):
    _require_file(args.config, "config file")
    cfg = load_config(args.config, args.set)
    if args.align:
        cfg = cfg.replace(align=True)
    out = _prepare_out(args.out)
    man = Manifest(out, "simulate", cfg, [args.config] if args.config else [])
    try:
        result, offset = evaluate_point(cfg, cfg.align)
    except NumericalInstabilityError:
        man.finish("numerical failure")
        raise
    path = man.add(os.path.join(out, "summary.csv"))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eta_internal", "eta_storage", "eta_leak", "eta_storage_after_hold",
                    "energy_balance", "control_offset_ns", "storage_time_ns"])
        w.writerow([repr(result.eta_internal), repr(result.eta_storage), repr(result.eta_leak),
                    repr(result.eta_storage_after_hold), repr(result.energy_balance),
                    repr(offset), repr(cfg.storage_time_ns)])
    write_trace_csv(man.add(os.path.join(out, "leakage_trace.csv")),
                    result.leakage_time, result.leakage_trace)
    write_trace_csv(man.add(os.path.join(out, "retrieval_trace.csv")),
                    result.retrieval_time, result.retrieval_trace)
    write_spin_csv(man.add(os.path.join(out, "spin_profile.csv")), result.z, result.spin_profile)
    with open(man.add(os.path.join(out, "resolved_config.txt")), "w") as fh:
        fh.write(dump_config(cfg))
    man.finish()
    print(f"eta_internal = {result.eta_internal:.6g}")
    print(f"eta_storage  = {result.eta_storage:.6g}")
    print(f"offset_ns    = {offset:.4f}")
    return EXIT_OK


# sweep ---------------------------------------------------------------------

def cmd_sweep(args):
    _require_file(args.config, "config file")
    _require_file(args.spec, "sweep spec")
    cfg = load_config(args.config, args.set)
    with open(args.spec) as fh:
        spec = load_sweep_spec(fh, args.spec)
    out = _prepare_out(args.out)
    inputs = [p for p in (args.config, args.spec) if p]
    man = Manifest(out, "sweep", cfg, inputs)
    path = os.path.join(out, f"sweep_{spec.axis}.csv")
    man.add(path)
    man.add(path + ".meta.json")
    man.write()
    rows = run_sweep(spec, cfg, out_path=path, resume=args.resume)
    n_bad = sum(r.status != "ok" for r in rows)
    man.finish("ok" if n_bad == 0 else f"{n_bad} failed point(s)")
    for r in rows:
        print(f"{r.value:12.6g}  eta_internal={r.eta_internal:.6g}  "
              f"offset={r.best_offset_ns:.3f} ns  {r.status}")
    return EXIT_OK


# analyze -------------------------------------------------------------------

def _counts_from_file(path):
    with open(path) as fh:
        raw = parse_assignments(fh, path)
    out = {}
    for key, value in raw.items():
        name = key.split(".", 1)[1] if key.startswith("counts.") else key
        out[name] = value
    return out


def _build_record(values):
    missing = [f for f in RECORD_FIELDS if values.get(f) is None]
    if missing:
        raise ConfigurationError("incomplete counts record; missing: " + ", ".join(missing))
    unknown = [k for k in values if k not in RECORD_FIELDS + ("g2_input_sigma",)]
    if unknown:
        raise ConfigurationError("unknown counts fields: " + ", ".join(unknown))
    parsed = {}
    for name, value in values.items():
        try:
            v = float(value)
        except (TypeError, ValueError):
            raise ConfigurationError(f"{name}: not a number: {value!r}") from None
        if name in COUNT_FIELDS:
            if v < 0 or v != int(v):
                raise ConfigurationError(f"{name}: counts must be non-negative integers, got {value}")
            v = int(v)
        parsed[name] = v
    try:
        return CountsRecord(**parsed)
    except DomainError as exc:
        raise ConfigurationError(str(exc)) from exc


def analysis_row(rec, g2_noise=2.0, tau_ns=680.0, bandwidth_mhz=370.0):
    eta = e2e_efficiency(rec)
    mu_mem = noise_floor(rec.n_noise_mem, rec.n_herald)
    mu_tot = noise_floor(rec.n_noise_tot, rec.n_herald)
    s = snr(rec)
    g2 = g2_retrieved_model(rec, g2_noise)
    limit = g2_snr_limit(s.value)
    b, eta_b = time_bandwidth_product(tau_ns, bandwidth_mhz, eta.value)
    return {
        "eta_e2e": eta.value, "eta_e2e_sigma": eta.sigma,
        "mu_mem": mu_mem.value, "mu_mem_sigma": mu_mem.sigma,
        "mu_tot": mu_tot.value, "mu_tot_sigma": mu_tot.sigma,
        "snr": s.value, "snr_sigma": s.sigma,
        "g2_model": g2.value, "g2_model_sigma": g2.sigma,
        "g2_snr_limit": limit,
        "time_bandwidth": b, "eta_time_bandwidth": eta_b,
    }


def cmd_analyze(args):
    values = {}
    if args.counts:
        _require_file(args.counts, "counts file")
        values.update(_counts_from_file(args.counts))
    for f in RECORD_FIELDS + ("g2_input_sigma",):
        v = getattr(args, f)
        if v is not None:
            values[f] = v
    rec = _build_record(values)
    try:
        row = analysis_row(rec, args.g2_noise, args.tau_ns, args.bandwidth_mhz)
    except NegativeSignalError as exc:
        raise ConfigurationError(str(exc)) from exc
    snr_text = "inf (no noise counts)" if math.isinf(row["snr"]) else \
        f"{row['snr']:.4g} +/- {row['snr_sigma']:.2g}"
    print(f"end-to-end efficiency  {row['eta_e2e']:.5f} +/- {row['eta_e2e_sigma']:.5f}")
    print(f"noise floor (memory)   {row['mu_mem']:.4e} +/- {row['mu_mem_sigma']:.2e}")
    print(f"noise floor (total)    {row['mu_tot']:.4e} +/- {row['mu_tot_sigma']:.2e}")
    print(f"signal-to-noise ratio  {snr_text}")
    print(f"g2 noise-mixture model {row['g2_model']:.4f} +/- {row['g2_model_sigma']:.4f}")
    print(f"g2 limit 2/(SNR+1)     {row['g2_snr_limit']:.4f}")
    print(f"time-bandwidth product {row['time_bandwidth']:.4g}")
    header = list(row)
    body = [repr(float(v)) if v is not None else "" for v in row.values()]
    print(",".join(header))
    print(",".join(body))
    if args.out:
        out = _prepare_out(args.out)
        man = Manifest(out, "analyze", None, [args.counts] if args.counts else [])
        with open(man.add(os.path.join(out, "analysis.csv")), "w") as fh:
            fh.write(",".join(header) + "\n" + ",".join(body) + "\n")
        man.finish()
    return EXIT_OK


# histogram -----------------------------------------------------------------

def cmd_histogram(args):
    from .timetags import arrival_histogram, parse_timetags, window_counts

    _require_file(args.input, "time-tag file")
    lo, hi = args.range
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        events = parse_timetags(args.input, args.format, args.tolerance_ps)
        hist = arrival_histogram(events, args.trigger_ch, args.signal_ch, args.bin_width,
                                 (lo, hi))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    count = window_counts(hist, args.window_start, args.window_width)
    print(f"events {len(events)}  malformed {events.malformed}  pairs {hist.total}")
    print(f"window [{args.window_start}, {args.window_start + args.window_width}) ps: {count}")
    if args.out:
        out = _prepare_out(args.out)
        man = Manifest(out, "histogram", None, [args.input])
        hist.write_csv(man.add(os.path.join(out, "histogram.csv")))
        man.finish()
    return EXIT_OK


# fit-lifetime --------------------------------------------------------------

def cmd_fit_lifetime(args):
    _require_file(args.input, "data file")
    points = []
    with open(args.input, newline="") as fh:
        reader = csv.reader(fh)
        for rec in reader:
            if not rec or rec[0].strip().startswith("#"):
                continue
            try:
                points.append(tuple(float(x) for x in rec[:3]))
            except ValueError:
                if points:  # only a leading header line is allowed
                    raise ConfigurationError(f"{args.input}: bad row {rec}") from None
    fit = fit_lifetime(points)
    tau = "inf (no decay)" if fit.no_decay else f"{fit.tau.value:.6g} +/- {fit.tau.sigma:.3g}"
    print(f"eta0 = {fit.eta0.value:.6g} +/- {fit.eta0.sigma:.3g}")
    print(f"tau  = {tau} ns")
    print(f"chi2 = {fit.chi2:.4g} (dof {fit.dof})")
    if args.out:
        out = _prepare_out(args.out)
        man = Manifest(out, "fit-lifetime", None, [args.input])
        with open(man.add(os.path.join(out, "lifetime_fit.csv")), "w") as fh:
            fh.write("eta0,eta0_sigma,tau_ns,tau_sigma_ns,chi2,dof\n")
            values = (fit.eta0.value, fit.eta0.sigma, fit.tau.value, fit.tau.sigma, fit.chi2)
            fh.write(",".join(repr(float(v)) for v in values) + f",{fit.dof}\n")
        man.finish()
    return EXIT_OK


def cmd_print_defaults(args):
    sys.stdout.write(dump_config(ExperimentConfig()))
    return EXIT_OK


# parser --------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="vapormem", description=__doc__.strip().splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def config_args(sp):
        sp.add_argument("--config", help="key-value configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a configuration value (repeatable, last wins)")

    sp = sub.add_parser("simulate", help="ensemble run at one operating point")
    config_args(sp)
    sp.add_argument("--align", action="store_true", help="optimise the control timing first")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="one-dimensional parameter sweep")
    config_args(sp)
    sp.add_argument("--spec", required=True, help="sweep specification file")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--resume", action="store_true", help="keep completed rows")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("analyze", help="counting-statistics report")
    sp.add_argument("--counts", help="key-value counts file")
    for f in COUNT_FIELDS:
        sp.add_argument("--" + f.replace("_", "-"), dest=f, type=float)
    for f in ("eta_h", "eta_det", "g2_input", "g2_input_sigma"):
        sp.add_argument("--" + f.replace("_", "-"), dest=f, type=float)
    sp.add_argument("--g2-noise", type=float, default=2.0)
    sp.add_argument("--tau-ns", type=float, default=680.0)
    sp.add_argument("--bandwidth-mhz", type=float, default=370.0)
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("histogram", help="arrival-time histogram of time tags")
    sp.add_argument("--input", required=True)
    sp.add_argument("--format", default="text_csv", choices=("text_csv", "binary_le"))
    sp.add_argument("--trigger-ch", type=int, default=0)
    sp.add_argument("--signal-ch", type=int, default=1)
    sp.add_argument("--bin-width", type=int, default=162, help="ps, multiple of 81")
    sp.add_argument("--range", type=int, nargs=2, default=(0, 400_000), metavar=("LO", "HI"))
    sp.add_argument("--window-start", type=int, default=160_000, help="ps")
    sp.add_argument("--window-width", type=int, default=6480, help="ps")
    sp.add_argument("--tolerance-ps", type=int, default=0)
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_histogram)

    sp = sub.add_parser("fit-lifetime", help="exponential fit of efficiency vs storage time")
    sp.add_argument("--input", required=True, help="CSV rows storage_time_ns,eta,sigma")
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_fit_lifetime)

    sp = sub.add_parser("print-defaults", help="print the default configuration")
    sp.set_defaults(func=cmd_print_defaults)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, DomainError, FitError, UndefinedEstimateError,
            NegativeSignalError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalInstabilityError as exc:
        print(f"numerical failure in {exc.stage} at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
