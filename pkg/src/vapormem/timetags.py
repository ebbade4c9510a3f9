"""
Detector time tags: parsing, arrival-time histograms and heralded
autocorrelations.

Two interchange formats are supported:

``text_csv``
    one ``timestamp_ps,channel`` line per event, decimal, no header.
``binary_le``
    10-byte records, unsigned 64-bit little-endian timestamp (ps) followed
    by an unsigned 16-bit little-endian channel.
"""

import io
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .analytics import Estimate
from .errors import DomainError, UndefinedEstimateError

TAGGER_RESOLUTION_PS = 81
DEFAULT_BIN_PS = 162
RETRIEVAL_WINDOW_PS = 80 * TAGGER_RESOLUTION_PS
FORMATS = ("text_csv", "binary_le")
RECORD = np.dtype([("timestamp", "<u8"), ("channel", "<u2")])


class TimeTagFormatError(ValueError):
    """Unknown format or a stream that violates ordering rules."""


class EmptyHistogramWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class TimeTagEvent:
    timestamp: int
    channel: int


class TimeTagStream:
    """Array-backed event sequence; indexing yields :class:`TimeTagEvent`."""

    def __init__(self, timestamps=(), channels=(), malformed=0):
        self.timestamps = np.asarray(timestamps, dtype=np.int64).reshape(-1)
        self.channels = np.asarray(channels, dtype=np.int64).reshape(-1)
        if self.timestamps.shape != self.channels.shape:
            raise DomainError("timestamps and channels differ in length")
        self.malformed = int(malformed)

    @classmethod
    def from_events(cls, events):
        events = list(events)
        return cls([e.timestamp for e in events], [e.channel for e in events])

    def __len__(self):
        return self.timestamps.size

    def __getitem__(self, i):
        return TimeTagEvent(int(self.timestamps[i]), int(self.channels[i]))

    def __iter__(self):
        for t, c in zip(self.timestamps.tolist(), self.channels.tolist()):
            yield TimeTagEvent(t, c)

    def channel(self, ch):
        """Sorted timestamps of one channel."""
        return np.sort(self.timestamps[self.channels == ch], kind="stable")

    def shifted(self, dt_ps):
        return TimeTagStream(self.timestamps + int(dt_ps), self.channels.copy())

    def merged(self, other):
        t = np.concatenate([self.timestamps, other.timestamps])
        c = np.concatenate([self.channels, other.channels])
        order = np.argsort(t, kind="stable")
        return TimeTagStream(t[order], c[order])


def _as_stream(events):
    if isinstance(events, TimeTagStream):
        return events
    return TimeTagStream.from_events(events)


def check_monotone(stream, tolerance_ps=0):
    """Raise if any channel steps backwards by more than ``tolerance_ps``."""
    for ch in np.unique(stream.channels):
        t = stream.timestamps[stream.channels == ch]
        if t.size > 1:
            back = np.diff(t)
            worst = back.min()
            if worst < -tolerance_ps:
                i = int(np.argmin(back))
                raise TimeTagFormatError(
                    f"channel {int(ch)}: timestamp decreases by {-int(worst)} ps "
                    f"after event {i} (tolerance {tolerance_ps} ps)")


def _read_all(source, binary):
    if isinstance(source, (bytes, bytearray, memoryview)):
        data = bytes(source)
        return data if binary else data.decode()
    if hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    if binary:
        return data.encode() if isinstance(data, str) else data
    return data.decode() if isinstance(data, bytes) else data


def parse_timetags(source, format="text_csv", tolerance_ps=0):
    """Parse a source (path, file object or bytes) into a
    :class:`TimeTagStream`.  Malformed lines or a trailing partial record
    are skipped and counted in ``stream.malformed``."""
    if format not in FORMATS:
        raise TimeTagFormatError(f"unknown format {format!r}; expected one of {FORMATS}")
    if format == "binary_le":
        data = _read_all(source, True)
        n = len(data) // RECORD.itemsize
        rec = np.frombuffer(data, dtype=RECORD, count=n)
        bad = 1 if len(data) % RECORD.itemsize else 0
        ts = rec["timestamp"]
        if ts.size and ts.max() > np.iinfo(np.int64).max:
            raise TimeTagFormatError("timestamp exceeds the supported range")
        stream = TimeTagStream(ts.astype(np.int64), rec["channel"].astype(np.int64), bad)
    else:
        text = _read_all(source, False)
        ts, ch, bad = [], [], 0
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                if len(parts) != 2:
                    raise ValueError
                t, c = int(parts[0]), int(parts[1])
                if t < 0 or not 0 <= c < 2 ** 16:
                    raise ValueError
            except ValueError:
                bad += 1
                continue
            ts.append(t)
            ch.append(c)
        stream = TimeTagStream(ts, ch, bad)
    if stream.malformed:
        warnings.warn(f"skipped {stream.malformed} malformed record(s)", RuntimeWarning,
                      stacklevel=2)
    check_monotone(stream, tolerance_ps)
    return stream


def write_timetags(events, target, format="text_csv"):
    """Write events to a path or binary file object."""
    if format not in FORMATS:
        raise TimeTagFormatError(f"unknown format {format!r}; expected one of {FORMATS}")
    stream = _as_stream(events)
    if format == "binary_le":
        rec = np.empty(len(stream), dtype=RECORD)
        rec["timestamp"] = stream.timestamps
        rec["channel"] = stream.channels
        data = rec.tobytes()
    else:
        buf = io.StringIO()
        for t, c in zip(stream.timestamps.tolist(), stream.channels.tolist()):
            buf.write(f"{t},{c}\n")
        data = buf.getvalue().encode()
    if hasattr(target, "write"):
        target.write(data)
    else:
        with open(target, "wb") as fh:
            fh.write(data)


@dataclass(eq=False)
class Histogram:
    bin_width_ps: int
    origin_ps: int
    counts: np.ndarray
    resolution_ps: int = TAGGER_RESOLUTION_PS

    def __post_init__(self):
        _check_bin_width(self.bin_width_ps, self.resolution_ps)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if np.any(self.counts < 0):
            raise DomainError("counts must be non-negative")

    @property
    def bin_starts(self):
        return self.origin_ps + self.bin_width_ps * np.arange(self.counts.size, dtype=np.int64)

    @property
    def total(self):
        return int(self.counts.sum())

    def rebin(self, factor):
        """Merge ``factor`` adjacent bins; a partial last group is kept."""
        factor = int(factor)
        if factor < 1:
            raise DomainError("rebin factor must be >= 1")
        n = -(-self.counts.size // factor)
        padded = np.zeros(n * factor, dtype=np.int64)
        padded[:self.counts.size] = self.counts
        return Histogram(self.bin_width_ps * factor, self.origin_ps,
                         padded.reshape(n, factor).sum(axis=1), self.resolution_ps)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("bin_start_ps,count\n")
            for s, c in zip(self.bin_starts.tolist(), self.counts.tolist()):
                fh.write(f"{s},{c}\n")


def _check_bin_width(bin_width_ps, resolution_ps):
    if bin_width_ps <= 0 or bin_width_ps % resolution_ps:
        raise DomainError(f"bin width {bin_width_ps} ps is not a positive multiple of "
                          f"{resolution_ps} ps")


def pair_delays(events, trigger_ch, signal_ch, range_ps):
    """All (signal - trigger) delays d with lo <= d < hi (start-multi-stop)."""
    stream = _as_stream(events)
    lo, hi = int(range_ps[0]), int(range_ps[1])
    if hi <= lo:
        raise DomainError("range must satisfy lo < hi")
    trig = stream.channel(trigger_ch)
    sig = stream.channel(signal_ch)
    # triggers tt with lo <= ts - tt < hi  <=>  ts - hi < tt <= ts - lo
    first = np.searchsorted(trig, sig - hi, side="right")
    last = np.searchsorted(trig, sig - lo, side="right")
    n = last - first
    total = int(n.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    owner = np.repeat(np.arange(sig.size), n)
    offset = np.arange(total) - np.repeat(np.cumsum(n) - n, n)
    return sig[owner] - trig[first[owner] + offset]


def arrival_histogram(events, trigger_ch, signal_ch, bin_width_ps=DEFAULT_BIN_PS,
                      range_ps=(0, 400_000), resolution_ps=TAGGER_RESOLUTION_PS):
    """Histogram of signal arrival times after each trigger.

    Every trigger pairs with every signal event whose delay falls in
    [lo, hi); bins start at ``lo``.
    """
    _check_bin_width(bin_width_ps, resolution_ps)
    stream = _as_stream(events)
    lo, hi = int(range_ps[0]), int(range_ps[1])
    n_bins = -(-(hi - lo) // bin_width_ps)
    if not np.any(stream.channels == trigger_ch):
        warnings.warn("no trigger events; histogram is empty", EmptyHistogramWarning,
                      stacklevel=2)
    d = pair_delays(stream, trigger_ch, signal_ch, (lo, hi))
    counts = np.bincount((d - lo) // bin_width_ps, minlength=n_bins)[:n_bins]
    return Histogram(bin_width_ps, lo, counts, resolution_ps)


def window_counts(source, start_ps, width_ps=RETRIEVAL_WINDOW_PS, channel=None):
    """Counts in [start, start + width).

    For a :class:`Histogram` every bin overlapping the window is counted;
    for events, timestamps (optionally of one channel) inside the window.
    """
    if not width_ps > 0:
        raise DomainError("window width must be positive")
    end = start_ps + width_ps
    if isinstance(source, Histogram):
        s = source.bin_starts
        hit = (s < end) & (s + source.bin_width_ps > start_ps)
        return int(source.counts[hit].sum())
    stream = _as_stream(source)
    t = stream.timestamps if channel is None else stream.timestamps[stream.channels == channel]
    return int(np.count_nonzero((t >= start_ps) & (t < end)))


def _heralds_with_hit(heralds, t, lo_off, hi_off):
    t = np.sort(t)
    a = np.searchsorted(t, heralds + lo_off, side="left")
    b = np.searchsorted(t, heralds + hi_off, side="left")
    return b > a


def conditional_g2(events, herald_ch, ch_a, ch_b, coincidence_window_ps, gate=None,
                   bootstrap=0, rng=None):
    """Heralded autocorrelation N_hAB N_h / (N_hA N_hB).

    A herald at t_h counts a detection on X when X fires in
    [t_h + start, t_h + start + width) for ``gate = (start, width)``, or
    within +-window/2 of t_h without a gate.  The uncertainty is first-order
    Poisson propagation, or with ``bootstrap > 0`` the spread over that many
    resamplings of the heralds.
    """
    if not coincidence_window_ps > 0:
        raise DomainError("coincidence window must be positive")
    if len({herald_ch, ch_a, ch_b}) != 3:
        raise DomainError("herald and detector channels must be distinct")
    stream = _as_stream(events)
    if gate is None:
        lo_off, hi_off = -coincidence_window_ps / 2, coincidence_window_ps / 2
    else:
        start, width = gate
        if not width > 0:
            raise DomainError("gate width must be positive")
        lo_off, hi_off = start, start + width
    heralds = stream.channel(herald_ch)
    hit_a = _heralds_with_hit(heralds, stream.channel(ch_a), lo_off, hi_off)
    hit_b = _heralds_with_hit(heralds, stream.channel(ch_b), lo_off, hi_off)
    n_h = heralds.size
    n_a, n_b = int(hit_a.sum()), int(hit_b.sum())
    n_ab = int((hit_a & hit_b).sum())
    if n_a == 0 or n_b == 0:
        raise UndefinedEstimateError("no heralded detections on one of the detectors")
    g2 = n_ab * n_h / (n_a * n_b)
    if bootstrap:
        rng = np.random.default_rng(rng)
        ab = hit_a.astype(np.int8) + 2 * hit_b.astype(np.int8)
        freq = np.bincount(ab, minlength=4)
        # resampled herald classes (none, A only, B only, both)
        draws = rng.multinomial(n_h, freq / n_h, size=int(bootstrap))
        na, nb = draws[:, 1] + draws[:, 3], draws[:, 2] + draws[:, 3]
        ok = (na > 0) & (nb > 0)
        vals = draws[ok, 3] * n_h / (na[ok] * nb[ok])
        return Estimate(g2, float(np.std(vals, ddof=1)))
    scale = n_h / (n_a * n_b)
    var = scale ** 2 * max(n_ab, 1) + g2 ** 2 * (1 / n_h + 1 / n_a + 1 / n_b)
    return Estimate(g2, math.sqrt(var))


# synthetic streams -------------------------------------------------------

def _herald_times(n_heralds, period_ps):
    return np.arange(n_heralds, dtype=np.int64) * int(period_ps)


def _assemble(heralds, a, b, herald_ch=0, ch_a=1, ch_b=2):
    t = np.concatenate([heralds, a, b])
    c = np.concatenate([np.full(heralds.size, herald_ch), np.full(a.size, ch_a),
                        np.full(b.size, ch_b)])
    order = np.argsort(t, kind="stable")
    return TimeTagStream(t[order], c[order])


def _split_photons(rng, owner, heralds, delay_ps, jitter_ps):
    """Route each photon 50/50 to A or B; keep at most one click per
    herald and detector (non-number-resolving)."""
    to_a = rng.random(owner.size) < 0.5
    out = []
    for mask in (to_a, ~to_a):
        hit = np.unique(owner[mask])
        jit = rng.integers(-jitter_ps, jitter_ps + 1, hit.size) if jitter_ps else 0
        out.append(heralds[hit] + delay_ps + jit)
    return out


def synth_antibunched(n_heralds, p_photon, rng, period_ps=1_000_000, delay_ps=160_000,
                      jitter_ps=300):
    """At most one photon per herald, split 50/50."""
    heralds = _herald_times(n_heralds, period_ps)
    owner = np.flatnonzero(rng.random(n_heralds) < p_photon)
    a, b = _split_photons(rng, owner, heralds, delay_ps, jitter_ps)
    return _assemble(heralds, a, b)


def synth_coherent(n_heralds, mean_per_detector, rng, period_ps=1_000_000,
                   delay_ps=160_000, jitter_ps=300):
    """Independent Poisson clicks on A and B after each herald."""
    heralds = _herald_times(n_heralds, period_ps)
    p = -np.expm1(-mean_per_detector)
    out = []
    for _ in range(2):
        hit = np.flatnonzero(rng.random(n_heralds) < p)
        out.append(heralds[hit] + delay_ps + rng.integers(-jitter_ps, jitter_ps + 1, hit.size))
    return _assemble(heralds, *out)


def synth_mixture(n_heralds, p_signal, snr_value, rng, period_ps=1_000_000,
                  delay_ps=160_000, jitter_ps=300):
    """Single photons with probability ``p_signal`` plus thermal noise photons
    with mean ``p_signal / snr_value`` per herald, split 50/50."""
    heralds = _herald_times(n_heralds, period_ps)
    n_bar = p_signal / snr_value
    signal = (rng.random(n_heralds) < p_signal).astype(np.int64)
    noise = rng.geometric(1.0 / (1.0 + n_bar), n_heralds) - 1
    photons = signal + noise
    owner = np.repeat(np.arange(n_heralds), photons)
    a, b = _split_photons(rng, owner, heralds, delay_ps, jitter_ps)
    return _assemble(heralds, a, b)

