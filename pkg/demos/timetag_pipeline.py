"""
From raw time tags to the heralded autocorrelation: synthesise a stream of
single photons with thermal noise, write and re-read it, histogram the
arrival times, count the retrieval window and compare g2 with the counting
model.

    python3 demos/timetag_pipeline.py
"""
import io

import numpy as np

from vapormem.analytics import CountsRecord, g2_retrieved_model, snr
from vapormem.timetags import (arrival_histogram, conditional_g2, parse_timetags,
                               synth_mixture, window_counts, write_timetags)

rng = np.random.default_rng(1)
n_heralds, p_signal, target_snr = 400_000, 0.1, 10.8
stream = synth_mixture(n_heralds, p_signal, target_snr, rng)

# Round trip through the binary format.
buf = io.BytesIO()
write_timetags(stream, buf, "binary_le")
events = parse_timetags(buf.getvalue(), "binary_le")
print("events", len(events), "bytes", len(buf.getvalue()))

# Arrival histogram of detector 1 after each herald, 162 ps bins.
hist = arrival_histogram(events, 0, 1, 162, (150_000, 170_000))
peak = hist.bin_starts[np.argmax(hist.counts)]
print("histogram peak at %.2f ns" % (peak / 1000))
print("retrieval window counts", window_counts(hist, 156_760, 6480))

# Heralded g2 on the pair of detectors, gated around the arrival time.
g = conditional_g2(events, 0, 1, 2, 4000, gate=(156_760, 6480))
boot = conditional_g2(events, 0, 1, 2, 4000, gate=(156_760, 6480), bootstrap=300, rng=2)
print("g2_c = %.4f +/- %.4f (bootstrap %.4f)" % (g.value, g.sigma, boot.sigma))

# The same quantity predicted from counts alone.
noise = round(p_signal / target_snr * n_heralds)
rec = CountsRecord(n_heralds, round(p_signal * n_heralds) + noise, noise)
print("SNR %.2f, counting model g2 = %.4f" % (snr(rec).value, g2_retrieved_model(rec).value))
