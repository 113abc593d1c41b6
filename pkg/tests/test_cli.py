"""CLI tests: subcommand behavior, exit codes, config parsing, and the
emitted CSV/SVG artifacts."""

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from tstransformer.cli import DEFAULTS, _write_series_csv, load_run_config, main
from tstransformer.data import DegradationSpec, ingest_csv, synth_degradation
from tstransformer.errors import ConfigError


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A small raw fixture plus a fast-training config file."""
    root = tmp_path_factory.mktemp("cli")
    spec = DegradationSpec(noise_std_volts=0.001, sample_interval_hours=0.025)
    raw = synth_degradation(seed=77, duration_hours=60.0, n_channels=3, spec=spec)
    _write_series_csv(root / "raw.csv", raw, "time_h", None)
    (root / "run.cfg").write_text(
        "# fast settings for tests\n"
        "split_hours=40\n"
        "lookback=16\n"
        "horizon=4\n"
        "epochs=3\n"
        "batch_size=32\n"
        "seed=9\n",
        encoding="utf-8",
    )
    return root


def run(*argv) -> int:
    return main([str(a) for a in argv])


# ---------------------------------------------------------------------------
# config parsing


def test_defaults_cover_documented_keys():
    cfg = load_run_config(None, ())
    assert cfg.raw == DEFAULTS
    assert cfg.thresholds().loss_fractions == (0.035, 0.04, 0.045, 0.05, 0.055)
    assert cfg.rul_origin() == 500.0


def test_unknown_key_reports_line_number(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("split_hours=10\nnot_a_knob=1\n")
    with pytest.raises(ConfigError, match=":2"):
        load_run_config(p, ())


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("split_hours\n")
    with pytest.raises(ConfigError, match=":1"):
        load_run_config(p, ())


def test_overrides_win_over_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("epochs=10\n")
    cfg = load_run_config(p, ("epochs=3",))
    assert cfg.get_int("epochs") == 3


def test_bad_override_key():
    with pytest.raises(ConfigError):
        load_run_config(None, ("mystery=1",))


# ---------------------------------------------------------------------------
# preprocess


def test_preprocess_spacing_and_marker(workdir, capsys):
    assert run("preprocess", "--in", workdir / "raw.csv", "--out", workdir / "pre.csv",
               "--config", workdir / "run.cfg") == 0
    first = (workdir / "pre.csv").read_text().splitlines()[0]
    assert first == "#preprocessed interval=0.1h ma=15"
    ts = ingest_csv(workdir / "pre.csv")
    assert np.allclose(np.diff(ts.time), 0.1, atol=1e-9)
    assert "rows out" in capsys.readouterr().out


def test_preprocess_idempotent(workdir):
    assert run("preprocess", "--in", workdir / "pre.csv", "--out", workdir / "pre2.csv",
               "--config", workdir / "run.cfg") == 0
    assert (workdir / "pre.csv").read_bytes() == (workdir / "pre2.csv").read_bytes()


def test_preprocess_bad_schema_exit_2(workdir, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("time_h,I_A\n0.0,70\n")
    assert run("preprocess", "--in", bad, "--out", tmp_path / "out.csv") == 2
    assert "Utot_V" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# train


def test_train_writes_checkpoint_and_losses(workdir):
    assert run("train", "--data", workdir / "pre.csv", "--config", workdir / "run.cfg",
               "--out-checkpoint", workdir / "model.ckpt") == 0
    assert (workdir / "model.ckpt").exists()
    loss_lines = (workdir / "model.ckpt.loss.csv").read_text().splitlines()
    assert loss_lines[0] == "epoch,mean_loss" and len(loss_lines) == 4


def test_train_rerun_byte_identical(workdir, tmp_path):
    for out in (tmp_path / "a.ckpt", tmp_path / "b.ckpt"):
        assert run("train", "--data", workdir / "pre.csv", "--config", workdir / "run.cfg",
                   "--out-checkpoint", out) == 0
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "a.ckpt.loss.csv").read_bytes() == (tmp_path / "b.ckpt.loss.csv").read_bytes()


def test_train_split_outside_range_exit_2(workdir, tmp_path):
    assert run("train", "--data", workdir / "pre.csv", "--config", workdir / "run.cfg",
               "--set", "split_hours=10000", "--out-checkpoint", tmp_path / "x.ckpt") == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_numerical_failure_exit_4(workdir, tmp_path):
    assert run("train", "--data", workdir / "pre.csv", "--config", workdir / "run.cfg",
               "--set", "learning_rate=1e200", "--set", "clip_norm=0",
               "--out-checkpoint", tmp_path / "x.ckpt") == 4


# ---------------------------------------------------------------------------
# predict


def test_predict_covers_test_rows(workdir):
    assert run("predict", "--data", workdir / "pre.csv", "--checkpoint", workdir / "model.ckpt",
               "--out", workdir / "forecast.csv") == 0
    lines = (workdir / "forecast.csv").read_text().splitlines()
    assert lines[0] == "time_h,true_V,pred_V"
    ts = ingest_csv(workdir / "pre.csv")
    assert len(lines) - 1 == int(np.sum(ts.time >= 40.0))


def test_predict_missing_checkpoint_exit_3(workdir, tmp_path):
    assert run("predict", "--data", workdir / "pre.csv", "--checkpoint", tmp_path / "none.ckpt",
               "--out", tmp_path / "f.csv") == 3


def test_predict_corrupt_checkpoint_exit_3(workdir, tmp_path):
    bad = tmp_path / "corrupt.ckpt"
    bad.write_bytes(b"TSTC" + b"\x01\x00\x00\x00" + b"\xff\xff\xff\xff")
    assert run("predict", "--data", workdir / "pre.csv", "--checkpoint", bad,
               "--out", tmp_path / "f.csv") == 3


# ---------------------------------------------------------------------------
# evaluate


@pytest.fixture(scope="module")
def perfect_forecast(tmp_path_factory):
    # clean descending series crossing all five thresholds after origin 0
    root = tmp_path_factory.mktemp("eval")
    t = np.linspace(0.0, 600.0, 3001)
    v = 3.31 - 4.0e-4 * t
    lines = ["time_h,true_V,pred_V"] + [
        f"{float(a)!r},{float(b)!r},{float(b)!r}" for a, b in zip(t, v)
    ]
    (root / "forecast.csv").write_text("\n".join(lines) + "\n")
    return root


def test_evaluate_perfect_forecast(perfect_forecast, capsys):
    out = perfect_forecast / "report.csv"
    assert run("evaluate", "--forecast", perfect_forecast / "forecast.csv",
               "--out", out, "--set", "rul_origin_hours=0") == 0
    rows = out.read_text().strip().splitlines()
    summary = rows[-1].split(",")
    assert summary[0] == "summary"
    assert float(summary[1]) == 0.0  # rmse
    assert float(summary[2]) == 1.0  # score
    assert len(rows) == 7


def test_evaluate_svg_well_formed(perfect_forecast):
    svg_path = perfect_forecast / "report.svg"
    assert svg_path.exists()
    tree = ET.parse(svg_path)
    polylines = [e for e in tree.iter() if e.tag.endswith("polyline")]
    assert len(polylines) == 2  # one per series
    lines = [e for e in tree.iter() if e.tag.endswith("line")]
    assert len(lines) >= 5  # threshold rules plus crossing markers


def test_evaluate_missing_column_exit_2(tmp_path):
    bad = tmp_path / "f.csv"
    bad.write_text("time_h,true_V\n0,3.3\n")
    assert run("evaluate", "--forecast", bad, "--out", tmp_path / "r.csv") == 2


def test_evaluate_malformed_row_exit_2(tmp_path):
    bad = tmp_path / "f.csv"
    bad.write_text("time_h,true_V,pred_V\n0,3.3\n")
    assert run("evaluate", "--forecast", bad, "--out", tmp_path / "r.csv") == 2


# ---------------------------------------------------------------------------
# lag-scan


def test_lag_scan_table_shape(workdir):
    out = workdir / "lag.csv"
    assert run("lag-scan", "--data", workdir / "pre.csv", "--config", workdir / "run.cfg",
               "--windows", "8,16", "--out", out) == 0
    rows = out.read_text().strip().splitlines()
    assert rows[0].startswith("window,lag_h_ft_0.035")
    assert len(rows) == 3
    assert rows[1].split(",")[0] == "8" and rows[2].split(",")[0] == "16"
    assert all(len(r.split(",")) == 6 for r in rows)


def test_lag_scan_parallel_matches_serial(workdir, tmp_path, monkeypatch):
    serial, parallel = tmp_path / "s.csv", tmp_path / "p.csv"
    monkeypatch.delenv("TST_THREADS", raising=False)
    assert run("lag-scan", "--data", workdir / "pre.csv", "--config", workdir / "run.cfg",
               "--windows", "8,16", "--out", serial) == 0
    monkeypatch.setenv("TST_THREADS", "2")
    assert run("lag-scan", "--data", workdir / "pre.csv", "--config", workdir / "run.cfg",
               "--windows", "8,16", "--out", parallel) == 0
    assert serial.read_bytes() == parallel.read_bytes()


def test_lag_scan_failure_names_window_size(workdir, tmp_path, capsys):
    rc = run("lag-scan", "--data", workdir / "pre.csv", "--config", workdir / "run.cfg",
             "--windows", "100000", "--out", tmp_path / "lag.csv")
    assert rc != 0
    assert "100000" in capsys.readouterr().err
