"""Batch command-line front end: preprocess, train, predict, evaluate, lag-scan.

Configuration is a plain ``key=value`` file; any flag or ``--set``
override wins over the file. All subcommands are rerunnable: identical
inputs and seed produce byte-identical outputs. Exit codes: 0 success,
2 user/config error, 3 data/checkpoint corruption, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from xml.etree import ElementTree as ET

import numpy as np

from .data import (
    CsvSchema,
    TimeSeries,
    condense,
    ingest_csv,
    make_windows,
    moving_average,
    split_at,
    zscore_apply,
    zscore_fit,
)
from .errors import (
    ConfigError,
    ContractError,
    CorruptionError,
    DataError,
    DimensionError,
    NumericalError,
    ParameterError,
    SchemaError,
)
from .metrics import FaultThresholds, evaluate_forecast, lag_error, rmse, threshold_crossing
from .model import ModelConfig, TSTransformerModel
from .training import (
    TrainConfig,
    forecast_csv,
    load_checkpoint,
    loss_history_csv,
    rolling_forecast,
    save_checkpoint,
    train,
)

PREPROCESSED_PREFIX = "#preprocessed"

# Every configuration key with its documented default. Unknown keys in a
# config file are rejected with their line number.
DEFAULTS = {
    "time_column": "time_h",
    "target_column": "Utot_V",
    "covariate_columns": "auto",  # auto = every non-time column
    "interval_h": "0.1",
    "ma_window": "15",
    "split_hours": "500.0",
    "lookback": "32",
    "horizon": "1",
    "width": "16",
    "stages": "4",
    "ratios": "1,0.25,0.0625,0.03125",
    "heads": "1",
    "mode": "multi_scale",
    "layer_norm_eps": "1e-5",
    "learning_rate": "0.001",
    "epochs": "300",
    "batch_size": "64",
    "seed": "42",
    "adam_beta1": "0.9",
    "adam_beta2": "0.999",
    "adam_eps": "1e-8",
    "clip_norm": "1.0",
    "patience": "0",
    "loss_channels": "target",
    "initial_voltage": "3.325",
    "thresholds": "0.035,0.04,0.045,0.05,0.055",
    "rul_origin_hours": "split",  # split = use split_hours
    "covariate_mode": "oracle",
    "forecast_step": "0",  # 0 = horizon
    "out_dir": "out",
}


@dataclass
class RunConfig:
    """Typed view over the raw key=value map."""

    raw: dict

    def __getitem__(self, key: str) -> str:
        return self.raw[key]

    def get_float(self, key: str) -> float:
        return float(self.raw[key])

    def get_int(self, key: str) -> int:
        return int(self.raw[key])

    def floats(self, key: str) -> tuple:
        return tuple(float(v) for v in self.raw[key].split(","))

    def schema(self) -> CsvSchema:
        cov = self.raw["covariate_columns"]
        covariates = None if cov == "auto" else tuple(c for c in cov.split(",") if c)
        return CsvSchema(
            time_column=self.raw["time_column"],
            target_column=self.raw["target_column"],
            covariates=covariates,
        )

    def model_config(self, n_variates: int, lookback: int | None = None) -> ModelConfig:
        return ModelConfig(
            n_variates=n_variates,
            lookback=self.get_int("lookback") if lookback is None else lookback,
            horizon=self.get_int("horizon"),
            width=self.get_int("width"),
            stages=self.get_int("stages"),
            ratios=self.floats("ratios"),
            heads=self.get_int("heads"),
            mode=self.raw["mode"],
            eps=self.get_float("layer_norm_eps"),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.get_float("learning_rate"),
            epochs=self.get_int("epochs"),
            batch_size=self.get_int("batch_size"),
            seed=self.get_int("seed"),
            beta1=self.get_float("adam_beta1"),
            beta2=self.get_float("adam_beta2"),
            adam_eps=self.get_float("adam_eps"),
            clip_norm=self.get_float("clip_norm"),
            patience=self.get_int("patience"),
            loss_channels=self.raw["loss_channels"],
        )

    def thresholds(self) -> FaultThresholds:
        return FaultThresholds(
            initial_voltage=self.get_float("initial_voltage"),
            loss_fractions=self.floats("thresholds"),
        )

    def rul_origin(self) -> float:
        raw = self.raw["rul_origin_hours"]
        return self.get_float("split_hours") if raw == "split" else float(raw)


def load_run_config(path=None, overrides=()) -> RunConfig:
    """Read the config file (if any) and apply key=value overrides."""
    values = dict(DEFAULTS)
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                text = line.strip()
                if not text or text.startswith("#"):
                    continue
                if "=" not in text:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {text!r}")
                key, _, value = text.partition("=")
                key = key.strip()
                if key not in DEFAULTS:
                    raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
                values[key] = value.strip()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        if key not in DEFAULTS:
            raise ConfigError(f"--set: unknown config key {key!r}")
        values[key] = value
    return RunConfig(values)


# ---------------------------------------------------------------------------
# shared helpers


def _write_series_csv(path, ts: TimeSeries, time_column: str, marker: str | None) -> None:
    lines = []
    if marker:
        lines.append(marker)
    lines.append(",".join((time_column,) + ts.channel_names))
    for i in range(len(ts)):
        row = [repr(float(ts.time[i]))] + [repr(float(v)) for v in ts.features[i]]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _is_preprocessed(path) -> bool:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    return first.startswith(PREPROCESSED_PREFIX)


def _load_for_training(args, cfg: RunConfig):
    series = ingest_csv(args.data, cfg.schema())
    train_ts, _ = split_at(series, cfg.get_float("split_hours"))
    stats = zscore_fit(train_ts)
    return series, train_ts, stats


def _read_forecast_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    if not rows:
        raise SchemaError(f"{path}: empty forecast file")
    header = [c.strip() for c in rows[0]]
    for col in ("time_h", "true_V", "pred_V"):
        if col not in header:
            raise SchemaError(f"{path}: missing forecast column {col!r}")
    it, iy, ip = header.index("time_h"), header.index("true_V"), header.index("pred_V")
    time, true, pred = [], [], []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            time.append(float(row[it]))
            true.append(float(row[iy]))
            pred.append(float(row[ip]))
        except (ValueError, IndexError) as exc:
            raise SchemaError(f"{path}:{i}: malformed forecast row") from exc
    if not time:
        raise SchemaError(f"{path}: no forecast rows")
    return np.array(time), np.array(true), np.array(pred)


def render_forecast_svg(path, time, true, pred, thresholds: FaultThresholds, origin: float) -> None:
    """Static plot: one polyline per series, threshold lines, crossing marks."""
    width, height, pad = 960, 540, 60
    t0, t1 = float(time[0]), float(time[-1])
    values = np.concatenate([true, pred, np.array(thresholds.voltages)])
    v0, v1 = float(values.min()), float(values.max())
    v_margin = 0.05 * (v1 - v0 or 1.0)
    v0, v1 = v0 - v_margin, v1 + v_margin

    def sx(t):
        return pad + (t - t0) / (t1 - t0 or 1.0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - v0) / (v1 - v0) * (height - 2 * pad)

    svg = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(width),
        height=str(height),
        viewBox=f"0 0 {width} {height}",
    )
    ET.SubElement(svg, "rect", x="0", y="0", width=str(width), height=str(height), fill="white")
    for frac, thr in zip(thresholds.loss_fractions, thresholds.voltages):
        y = f"{sy(thr):.2f}"
        ET.SubElement(
            svg, "line",
            x1=f"{sx(t0):.2f}", y1=y, x2=f"{sx(t1):.2f}", y2=y,
            stroke="#999999", attrib={"stroke-dasharray": "6,4"},
        )
        label = ET.SubElement(svg, "text", x=f"{sx(t0) + 4:.2f}", y=f"{float(y) - 4:.2f}", fill="#666666")
        label.set("font-size", "12")
        label.text = f"{100 * frac:.1f}% loss"
        for series, color in ((true, "#cc4444"), (pred, "#4444cc")):
            rul = threshold_crossing(time, series, thr, origin)
            if rul is not None:
                x = f"{sx(origin + rul):.2f}"
                ET.SubElement(
                    svg, "line",
                    x1=x, y1=f"{sy(v0):.2f}", x2=x, y2=f"{sy(v1):.2f}",
                    stroke=color, attrib={"stroke-dasharray": "2,4"},
                )
    for series, color in ((true, "#cc4444"), (pred, "#4444cc")):
        points = " ".join(f"{sx(t):.2f},{sy(v):.2f}" for t, v in zip(time, series))
        ET.SubElement(svg, "polyline", points=points, fill="none", stroke=color, attrib={"stroke-width": "1.5"})
    legend = ET.SubElement(svg, "text", x=str(pad), y="24", fill="#333333")
    legend.set("font-size", "14")
    legend.text = "stack voltage: measured (red) vs predicted (blue)"
    ET.ElementTree(svg).write(path, encoding="utf-8", xml_declaration=True)


# ---------------------------------------------------------------------------
# subcommands


def cmd_preprocess(args) -> int:
    cfg = load_run_config(args.config, args.set or ())
    if _is_preprocessed(args.input):
        # Already condensed and filtered: pass through unchanged.
        Path(args.out).write_bytes(Path(args.input).read_bytes())
        series = ingest_csv(args.input, cfg.schema())
        print(f"already preprocessed: {len(series)} rows copied to {args.out}")
        return 0
    raw = ingest_csv(args.input, cfg.schema())
    interval = cfg.get_float("interval_h")
    ma_window = cfg.get_int("ma_window")
    out = moving_average(condense(raw, interval), ma_window)
    marker = f"{PREPROCESSED_PREFIX} interval={interval:g}h ma={ma_window}"
    _write_series_csv(args.out, out, cfg["time_column"], marker)
    print(
        f"rows in: {len(raw)} (dropped {raw.dropped_rows} malformed), "
        f"rows out: {len(out)} at {interval:g} h spacing"
    )
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set or ())
    series, train_ts, stats = _load_for_training(args, cfg)
    train_norm = zscore_apply(train_ts, stats)
    windows = make_windows(
        train_norm,
        cfg.get_int("lookback"),
        cfg.get_int("horizon"),
        all_channels=cfg["loss_channels"] == "all",
    )
    model = TSTransformerModel(
        cfg.model_config(len(series.channel_names)), seed=cfg.get_int("seed")
    )
    tcfg = cfg.train_config()
    history = train(model, windows, tcfg)

    extra = {
        "target_channel": series.target_channel,
        "train.split_hours": repr(cfg.get_float("split_hours")),
        "train.covariate_mode": cfg["covariate_mode"],
        "train.forecast_step": cfg["forecast_step"],
        "train.learning_rate": repr(tcfg.learning_rate),
        "train.epochs": str(tcfg.epochs),
        "train.batch_size": str(tcfg.batch_size),
        "train.seed": str(tcfg.seed),
        "train.clip_norm": repr(tcfg.clip_norm),
        "train.loss_channels": tcfg.loss_channels,
        "train.time_column": cfg["time_column"],
    }
    out_ckpt = Path(args.out_checkpoint)
    out_ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_ckpt, model, stats, extra)
    loss_path = Path(args.out_loss) if args.out_loss else out_ckpt.with_suffix(out_ckpt.suffix + ".loss.csv")
    loss_path.write_text(loss_history_csv(history), encoding="utf-8")
    print(
        f"trained {model.parameter_count()} parameters for {len(history)} epochs; "
        f"final loss {history[-1]:.6g}; checkpoint {out_ckpt}, losses {loss_path}"
    )
    return 0


def cmd_predict(args) -> int:
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except FileNotFoundError as exc:
        raise CorruptionError(f"checkpoint not readable: {exc}") from exc
    overrides = dict(item.partition("=")[::2] for item in (args.set or ()))
    target = ckpt.header.get("stats.target", ckpt.stats.channel_names[0])
    schema = CsvSchema(
        time_column=ckpt.header.get("train.time_column", "time_h"),
        target_column=target,
        covariates=tuple(c for c in ckpt.stats.channel_names if c != target),
    )
    series = ingest_csv(args.data, schema)
    if series.channel_names != ckpt.stats.channel_names:
        # Column orders must line up with the stats saved at train time.
        order = [series.channel_names.index(c) for c in ckpt.stats.channel_names]
        series = TimeSeries(
            series.time, series.features[:, order], ckpt.stats.channel_names, target
        )
    model = ckpt.to_model()
    boundary = float(overrides.get("split_hours", ckpt.header["train.split_hours"]))
    mode = overrides.get("covariate_mode", ckpt.header.get("train.covariate_mode", "oracle"))
    step_raw = int(overrides.get("forecast_step", ckpt.header.get("train.forecast_step", "0")))
    result = rolling_forecast(
        model, series, ckpt.stats, boundary,
        step=None if step_raw == 0 else step_raw,
        covariate_mode=mode,
    )
    Path(args.out).write_text(forecast_csv(result), encoding="utf-8")
    print(f"forecast {len(result.time)} test points -> {args.out}; RMSE {rmse(result.pred, result.true):.6g} V")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args.config, args.set or ())
    time, true, pred = _read_forecast_csv(args.forecast)
    thresholds = cfg.thresholds()
    origin = cfg.rul_origin()
    report = evaluate_forecast(time, true, pred, thresholds, origin)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_csv(), encoding="utf-8")
    svg_path = args.svg or str(out.with_suffix(".svg"))
    render_forecast_svg(svg_path, time, true, pred, thresholds, origin)
    print(f"RMSE {report.rmse:.6g} V, Score_RUL {report.score_rul:.4f} -> {out}, plot {svg_path}")
    return 0


def _lag_scan_one(args, cfg: RunConfig, window_size: int):
    series, train_ts, stats = _load_for_training(args, cfg)
    train_norm = zscore_apply(train_ts, stats)
    windows = make_windows(train_norm, window_size, cfg.get_int("horizon"))
    model = TSTransformerModel(
        cfg.model_config(len(series.channel_names), lookback=window_size),
        seed=cfg.get_int("seed"),
    )
    train(model, windows, cfg.train_config())
    result = rolling_forecast(
        model, series, stats, cfg.get_float("split_hours"),
        covariate_mode=cfg["covariate_mode"],
    )
    thresholds = cfg.thresholds()
    origin = cfg.rul_origin()
    return [
        lag_error(result.time, result.pred, result.true, thr, origin)
        for thr in thresholds.voltages
    ]


def cmd_lag_scan(args) -> int:
    cfg = load_run_config(args.config, args.set or ())
    sizes = [int(w) for w in args.windows.split(",") if w]
    if not sizes:
        raise ParameterError("lag-scan needs at least one window size")
    threads = max(1, int(os.environ.get("TST_THREADS", "1")))

    def run(size: int):
        try:
            return _lag_scan_one(args, cfg, size)
        except Exception as exc:
            raise type(exc)(f"lag-scan failed for window size {size}: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(sizes))) as pool:
            rows = list(pool.map(run, sizes))
    else:
        rows = [run(size) for size in sizes]

    fractions = cfg.thresholds().loss_fractions
    lines = ["window," + ",".join(f"lag_h_ft_{f:g}" for f in fractions)]
    for size, lags in zip(sizes, rows):
        lines.append(f"{size}," + ",".join("" if v is None else repr(v) for v in lags))
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"lag table ({len(sizes)} window sizes x {len(fractions)} thresholds) -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing / dispatch


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tst",
        description="Stack-voltage forecasting and RUL evaluation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="condense to a fixed interval and denoise")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="split, normalize, window, and fit a model")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out-checkpoint", dest="out_checkpoint", required=True)
    p.add_argument("--out-loss", dest="out_loss")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="rolling forecast over the test span")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="RUL metrics and SVG plot for a forecast")
    p.add_argument("--forecast", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--svg")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("lag-scan", help="train per window size and tabulate lag errors")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--windows", default="32,64,128,256")
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_lag_scan)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParameterError, SchemaError, DimensionError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CorruptionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
