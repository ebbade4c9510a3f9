import json
import math
import os

import numpy as np
import pytest

from vapormem import cli
from vapormem.config import (ExperimentConfig, dump_config, from_mapping, load_config,
                             parse_assignments, to_mapping)
from vapormem.ensemble import ensemble_run
from vapormem.errors import ConfigurationError

COUNTS = """\
# heralded storage run
counts.n_herald = 159752941
counts.n_ret = 454030
counts.n_noise_tot = 38634
counts.n_noise_mem = 29075
counts.eta_h = 0.40
counts.eta_det = 0.60
counts.g2_input = 0.0421
"""

FAST = ["ensemble.n_velocity_classes=2", "ensemble.n_rings=1", "ensemble.n_z=16",
        "ensemble.dt_ns=0.02"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def sets(*items):
    out = []
    for item in items:
        out += ["--set", item]
    return out


# configuration -------------------------------------------------------------

def test_dump_load_roundtrip(tmp_path):
    cfg = ExperimentConfig(delta_signal_mhz=-812.25, n_rings=3, readout_peak_mhz=512.0,
                           coupling_signal=(0.6, -0.8), align=True, signal_shape="gaussian")
    p = tmp_path / "c.txt"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg
    assert load_config(None) == ExperimentConfig()


def test_overrides_last_wins(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("control.peak_mhz = 500\nensemble.n_rings = 2  # comment\n")
    cfg = load_config(p, ["control.peak_mhz=600", "control.peak_mhz=700"])
    assert cfg.control_peak_mhz == 700.0 and cfg.n_rings == 2


def test_errors_list_every_offending_key():
    with pytest.raises(ConfigurationError) as info:
        from_mapping({"control.peak": "1", "ensemble.n_z": "many", "bogus.key": "2"})
    msg = str(info.value)
    assert "control.peak" in msg and "ensemble.n_z" in msg and "bogus.key" in msg
    with pytest.raises(ConfigurationError):
        parse_assignments(["no equals sign"])
    with pytest.raises(ConfigurationError):
        from_mapping({"ensemble.n_z": "3"})
    with pytest.raises(ConfigurationError):
        from_mapping({"signal.shape": "square"})


def test_physical_objects_follow_config():
    cfg = ExperimentConfig(control_offset_ns=-0.5)
    scheme, ens, signal, c_in, c_out, storage = cfg.physical()
    assert signal.center == 0.0 and c_in.center == -0.5
    assert c_out.peak_amplitude == c_in.peak_amplitude and storage == 160.0
    assert ens.n_velocity_classes == 16 and ens.n_rings == 8


# cli -----------------------------------------------------------------------

def test_simulate_default_matches_library(tmp_path):
    out = tmp_path / "sim"
    assert run("simulate", "--out", out) == 0
    rows = (out / "summary.csv").read_text().splitlines()
    eta = float(rows[1].split(",")[0])
    ref = ensemble_run(*ExperimentConfig().physical())
    assert eta > 0 and eta == ref.eta_internal
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and man["config"] == to_mapping(ExperimentConfig())
    assert set(man["outputs"]) <= set(os.listdir(out))
    # the manifest snapshot resolves to the same configuration
    assert from_mapping(man["config"]) == ExperimentConfig()
    resolved = load_config(out / "resolved_config.txt")
    assert resolved == ExperimentConfig()


def test_simulate_zero_control(tmp_path):
    out = tmp_path / "sim"
    assert run("simulate", "--out", out, *sets(*FAST, "control.peak_mhz=0")) == 0
    eta = float((out / "summary.csv").read_text().splitlines()[1].split(",")[0])
    assert eta == 0.0


def test_simulate_is_byte_reproducible(tmp_path):
    for name in ("a", "b"):
        assert run("simulate", "--out", tmp_path / name, *sets(*FAST)) == 0
    for f in ("summary.csv", "retrieval_trace.csv", "spin_profile.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_missing_config_leaves_nothing(tmp_path):
    out = tmp_path / "never"
    assert run("simulate", "--config", tmp_path / "nope.txt", "--out", out) == cli.EXIT_IO
    assert not out.exists()


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "c.txt"
    p.write_text("control.peak_mhz = fast\nfoo.bar = 1\n")
    assert run("simulate", "--config", p, "--out", tmp_path / "o") == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "control.peak_mhz" in err and "foo.bar" in err
    assert not (tmp_path / "o").exists()


def test_numerical_failure_exit_code(tmp_path, capsys):
    argv = sets(*FAST[:3], "ensemble.dt_ns=0.05", "control.peak_mhz=4000000")
    assert run("simulate", "--out", tmp_path / "o", *argv) == cli.EXIT_NUMERIC
    assert "read-in" in capsys.readouterr().err
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["status"] == "numerical failure"


def test_manifest_written_before_results(tmp_path, monkeypatch):
    seen = {}
    original = cli.evaluate_point

    def spy(cfg, align):
        seen["files"] = sorted(os.listdir(tmp_path / "o"))
        return original(cfg, align)

    monkeypatch.setattr(cli, "evaluate_point", spy)
    assert run("simulate", "--out", tmp_path / "o", *sets(*FAST)) == 0
    assert seen["files"] == ["manifest.json"]


def test_sweep_three_points_and_resume(tmp_path, monkeypatch):
    spec = tmp_path / "spec.txt"
    spec.write_text("sweep.axis = rabi_peak\nsweep.values = 300, 400, 500\nsweep.align = false\n")
    out = tmp_path / "sw"
    assert run("sweep", "--spec", spec, "--out", out, *sets(*FAST)) == 0
    csv_path = out / "sweep_rabi_peak.csv"
    lines = csv_path.read_text().splitlines()
    assert len(lines) == 4
    assert [float(r.split(",")[1]) for r in lines[1:]] == [300.0, 400.0, 500.0]
    full = csv_path.read_text()

    csv_path.write_text("\n".join(lines[:3]) + "\n")
    import vapormem.sweep as sw
    calls = []
    original = sw._run_point
    monkeypatch.setattr(sw, "_run_point", lambda job: calls.append(job[2]) or original(job))
    assert run("sweep", "--spec", spec, "--out", out, "--resume", *sets(*FAST)) == 0
    assert calls == [500.0]
    assert csv_path.read_text() == full


def test_sweep_bad_spec(tmp_path):
    spec = tmp_path / "spec.txt"
    spec.write_text("sweep.axis = temperature\nsweep.values = 1, 2\n")
    assert run("sweep", "--spec", spec, "--out", tmp_path / "o") == cli.EXIT_CONFIG


def test_analyze_measured_counts(tmp_path, capsys):
    p = tmp_path / "counts.txt"
    p.write_text(COUNTS)
    assert run("analyze", "--counts", p, "--out", tmp_path / "a") == 0
    lines = capsys.readouterr().out.splitlines()
    header, body = lines[-2].split(","), [float(x) for x in lines[-1].split(",")]
    row = dict(zip(header, body))
    assert row["eta_e2e"] == pytest.approx(0.0108, abs=5e-4)
    assert row["mu_mem"] == pytest.approx(1.82e-4, abs=1e-6)
    assert row["mu_tot"] == pytest.approx(2.42e-4, abs=1e-6)
    assert row["snr"] == pytest.approx(10.75, abs=0.01)
    assert row["g2_model"] == pytest.approx(0.205, abs=5e-3)
    assert row["g2_snr_limit"] == pytest.approx(0.170, abs=1e-3)
    assert row["time_bandwidth"] == pytest.approx(251.6)
    assert (tmp_path / "a" / "analysis.csv").exists()


def test_analyze_flags_and_sentinel(capsys):
    argv = ["analyze", "--n-herald", "1000", "--n-ret", "40", "--n-noise-tot", "0",
            "--n-noise-mem", "0", "--eta-h", "0.5", "--eta-det", "0.5", "--g2-input", "0"]
    assert run(*argv) == 0
    out = capsys.readouterr().out
    assert "inf (no noise counts)" in out
    row = dict(zip(out.splitlines()[-2].split(","), out.splitlines()[-1].split(",")))
    assert math.isinf(float(row["snr"])) and float(row["g2_snr_limit"]) == 0.0


def test_analyze_rejects_bad_records(tmp_path, capsys):
    p = tmp_path / "counts.txt"
    p.write_text(COUNTS.replace("counts.n_ret = 454030", "counts.n_ret = -5"))
    assert run("analyze", "--counts", p) == cli.EXIT_CONFIG
    assert "n_ret" in capsys.readouterr().err
    assert run("analyze", "--n-herald", "10") == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "n_ret" in err and "eta_det" in err and "n_herald" not in err.split("missing")[1]


def test_histogram_command(tmp_path, capsys):
    p = tmp_path / "tags.csv"
    lines = ["0,0"] + [f"{160_000 + 162 * k},1" for k in range(10)]
    p.write_text("\n".join(lines) + "\n")
    assert run("histogram", "--input", p, "--out", tmp_path / "h") == 0
    assert "ps: 10" in capsys.readouterr().out
    rows = (tmp_path / "h" / "histogram.csv").read_text().splitlines()
    assert rows[0] == "bin_start_ps,count"
    assert sum(int(r.split(",")[1]) for r in rows[1:]) == 10
    assert run("histogram", "--input", p, "--bin-width", "100") == cli.EXIT_CONFIG
    assert run("histogram", "--input", tmp_path / "missing.csv") == cli.EXIT_IO


def test_fit_lifetime_command(tmp_path, capsys):
    t = np.array([0, 100, 200, 400, 800.0])
    eta = 0.014 * np.exp(-t / 680)
    p = tmp_path / "life.csv"
    p.write_text("storage_time_ns,eta,sigma\n" +
                 "".join(f"{a},{b},{0.05 * b}\n" for a, b in zip(t.tolist(), eta.tolist())))
    assert run("fit-lifetime", "--input", p, "--out", tmp_path / "f") == 0
    assert "tau  = 680" in capsys.readouterr().out
    body = (tmp_path / "f" / "lifetime_fit.csv").read_text().splitlines()[1].split(",")
    assert float(body[2]) == pytest.approx(680, rel=1e-6)
    p.write_text("0,1,0.1\n1,0.5,0.1\n")
    assert run("fit-lifetime", "--input", p) == cli.EXIT_CONFIG


def test_print_defaults(capsys):
    assert run("print-defaults") == 0
    text = capsys.readouterr().out
    assert from_mapping(parse_assignments(text.splitlines())) == ExperimentConfig()
