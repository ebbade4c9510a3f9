"""
Parameter sweeps with per-point control timing optimisation.

Alignment is optimised on the kernel representation of the ensemble
(:class:`~vapormem.ensemble.AlignmentKernel`); the reported efficiencies
at the chosen offset come from a full forward ensemble run.
"""

import csv
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import ExperimentConfig, KEYS, from_mapping, to_mapping
from .ensemble import AlignmentKernel, ensemble_run
from .errors import ConfigurationError

AXIS_KEYS = {
    "rabi_peak": "control.peak_mhz",
    "two_photon_detuning": "scheme.delta_twophoton_mhz",
    "control_waist": "ensemble.control_waist_um",
    "storage_time": "protocol.storage_time_ns",
}
CSV_HEADER = ("axis", "value", "eta_internal", "eta_storage", "best_offset_ns", "status")
WORKERS_ENV = "VAPORMEM_WORKERS"

_INV_PHI = (math.sqrt(5) - 1) / 2


class FlatObjectiveWarning(RuntimeWarning):
    """The alignment objective vanished on the whole coarse grid."""


@dataclass(frozen=True)
class SweepSpec:
    """One-dimensional sweep.  ``values`` are in file units (MHz, um, ns)."""
    axis: str
    values: tuple
    overrides: dict = field(default_factory=dict)
    align: bool = True

    def __post_init__(self):
        if self.axis not in AXIS_KEYS:
            raise ConfigurationError(f"unknown sweep axis {self.axis!r}; "
                                     f"expected one of {sorted(AXIS_KEYS)}")
        values = tuple(float(v) for v in np.atleast_1d(self.values))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "overrides", dict(self.overrides))
        if not values:
            raise ConfigurationError("sweep values must be non-empty")
        if not all(math.isfinite(v) for v in values):
            raise ConfigurationError("sweep values must be finite")
        d = np.diff(values)
        if len(values) > 1 and not (np.all(d > 0) or np.all(d < 0)):
            raise ConfigurationError("sweep values must be strictly monotone")
        for key in self.overrides:
            if key not in KEYS:
                raise ConfigurationError(f"unknown override key {key!r}")

    def point_config(self, base, value):
        mapping = dict(self.overrides)
        mapping[AXIS_KEYS[self.axis]] = value
        return from_mapping(mapping, base)


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: float
    eta_internal: float
    eta_storage: float
    best_offset_ns: float
    status: str = "ok"

    def as_csv(self):
        return [self.axis, repr(self.value), repr(self.eta_internal),
                repr(self.eta_storage), repr(self.best_offset_ns), self.status]


def golden_section(f, lo, hi, tol=0.01):
    """Maximise a unimodal ``f`` on [lo, hi] until the bracket is below ``tol``."""
    a, b = float(lo), float(hi)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def alignment_span(signal, control):
    return 2.0 * (signal.fwhm + control.fwhm)


def optimize_alignment(target, span=None, step=0.25, tol=0.01):
    """Best control-signal offset (ns) and efficiency.

    ``target`` is an :class:`ExperimentConfig` or a callable mapping an array
    of offsets to efficiencies.  A coarse scan over [-span, span] in ``step``
    increments locates the best cell, which golden-section search refines
    to ``tol``.
    """
    if isinstance(target, ExperimentConfig):
        scheme, ens, signal, c_in, c_out, storage = target.physical()
        span = alignment_span(signal, c_in) if span is None else span
        kernel = AlignmentKernel(scheme, ens, signal, c_in, c_out, storage, span)
        objective = kernel.eta
    else:
        objective = target
        span = 2.0 if span is None else span
    n = int(math.floor(span / step + 1e-9))
    grid = step * np.arange(-n, n + 1)
    values = np.asarray(objective(grid), dtype=float)
    if not np.any(values > 0):
        warnings.warn("alignment objective is zero on the whole scan; using offset 0",
                      FlatObjectiveWarning, stacklevel=2)
        return 0.0, 0.0
    i = int(np.argmax(values))
    lo, hi = max(grid[i] - step, -span), min(grid[i] + step, span)
    x, fx = golden_section(lambda t: float(np.asarray(objective(np.array([t])))[0]), lo, hi, tol)
    if fx < values[i]:
        return float(grid[i]), float(values[i])
    return float(x), float(fx)


def evaluate_point(cfg, align=True):
    """Ensemble run at one configuration; returns (result, offset).

    The signal is centred at t = 0 and the read-in control at
    ``control.offset_ns``; with ``align`` that offset is optimised first.
    """
    if align:
        offset, _ = optimize_alignment(cfg)
        cfg = cfg.replace(control_offset_ns=offset)
    scheme, ens, signal, c_in, c_out, storage = cfg.physical()
    return ensemble_run(scheme, ens, signal, c_in, c_out, storage), cfg.control_offset_ns


def _run_point(args):
    spec, base, value = args
    try:
        cfg = spec.point_config(base, value)
        result, offset = evaluate_point(cfg, spec.align)
        return SweepRow(spec.axis, value, result.eta_internal, result.eta_storage, offset)
    except Exception as exc:  # recorded, the sweep continues
        msg = f"error: {type(exc).__name__}: {exc}".replace("\n", " ")
        return SweepRow(spec.axis, value, math.nan, math.nan, math.nan, msg)


def _workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def read_sweep_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return rows
        if tuple(header) != CSV_HEADER:
            raise ConfigurationError(f"{path}: unexpected header {header}")
        for rec in reader:
            if len(rec) != len(CSV_HEADER):
                continue
            rows.append(SweepRow(rec[0], float(rec[1]), float(rec[2]), float(rec[3]),
                                 float(rec[4]), rec[5]))
    return rows


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(row.as_csv())


def sweep_metadata(spec, base):
    return {
        "version": __version__,
        "axis": spec.axis,
        "axis_key": AXIS_KEYS[spec.axis],
        "values": list(spec.values),
        "overrides": {k: str(v) for k, v in spec.overrides.items()},
        "align": spec.align,
        "config": to_mapping(base),
    }


def run_sweep(spec, base_config=None, out_path=None, resume=False, workers=None):
    """Evaluate every point of ``spec``; returns rows in axis order.

    With ``out_path`` the table is written as CSV (plus ``<out_path>.meta.json``).
    With ``resume`` rows already present with status ``ok`` are kept and only
    the missing points are computed.
    """
    base = base_config or ExperimentConfig()
    done = {}
    if resume and out_path is not None and os.path.exists(out_path):
        for row in read_sweep_csv(out_path):
            if row.status == "ok" and row.axis == spec.axis:
                done[row.value] = row
    todo = [v for v in spec.values if v not in done]
    workers = _workers() if workers is None else workers
    if out_path is not None:
        with open(str(out_path) + ".meta.json", "w") as fh:
            json.dump(sweep_metadata(spec, base), fh, indent=2, sort_keys=True)

    def record(row):
        done[row.value] = row
        if out_path is not None:
            write_sweep_csv(out_path, [done[v] for v in spec.values if v in done])

    jobs = [(spec, base, v) for v in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_run_point, jobs):
                record(row)
    else:
        for job in jobs:
            record(_run_point(job))
    rows = [done[v] for v in spec.values]
    if out_path is not None:
        write_sweep_csv(out_path, rows)
    return rows


def load_sweep_spec(lines, source="<sweep>"):
    """Sweep spec from ``sweep.*`` keys; ``override.<section.key>`` lines
    become overrides of the base configuration."""
    from .config import parse_assignments, parse_bool

    raw = parse_assignments(lines, source)
    overrides, errors = {}, []
    axis = raw.pop("sweep.axis", None)
    values = raw.pop("sweep.values", None)
    align = raw.pop("sweep.align", "true")
    for key, value in raw.items():
        if key.startswith("override."):
            overrides[key[len("override."):]] = value
        else:
            errors.append(f"unknown key {key!r}")
    if axis is None:
        errors.append("missing sweep.axis")
    if values is None:
        errors.append("missing sweep.values")
    if errors:
        raise ConfigurationError("invalid sweep spec: " + "; ".join(errors))
    try:
        vals = tuple(float(v) for v in values.split(",") if v.strip())
        al = parse_bool(align)
    except ValueError as exc:
        raise ConfigurationError(f"invalid sweep spec: {exc}") from exc
    return SweepSpec(axis, vals, overrides, al)
