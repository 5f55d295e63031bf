"""Command-line entry point: simulate, train, forecast, backtest, tune, report."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import pandas as pd

from .config import PipelineConfig, load_config
from .evalkit import (BacktestConfig, MetricTable, emit_report, model_variants,
                      random_search, rolling_backtest, validate_origins)
from .forecaster import ConfigurationError
from .hybrid import (ForecastRecord, HybridModel, forecast_panel, load_model, save_model,
                     two_stage_fit, write_forecasts)
from .panel import SeriesKey, load_panel, save_panel
from .simlab import SimConfig, generate_with_truth, write_truth

log = logging.getLogger("hybridcast")

MODEL_ALIASES = {"hybrid": "hybrid", "tft": "forecaster_only", "forecaster_only": "forecaster_only"}
RUN_FILE = "run.json"


def _config(path) -> PipelineConfig:
    return load_config(path) if path else PipelineConfig()


def _fit(panel, cfg: PipelineConfig, oracle: bool) -> HybridModel:
    vcfg = replace(cfg.vnngp, oracle_residuals=cfg.vnngp.oracle_residuals or oracle)
    return two_stage_fit(panel, cfg.forecaster, cfg.router, vcfg, cfg.kernel, cfg.zinb,
                         train_end=cfg.run.resolve_train_end(panel))


def cmd_simulate(args) -> int:
    cfg = _config(args.config)
    sim = replace(cfg.sim, case=args.case, sim_seed=args.seed, length=0,
                  n_series=args.n_series or cfg.sim.n_series)
    panel, truth = generate_with_truth(SimConfig(**asdict(sim)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_panel(panel, out / "panel.csv")
    write_truth(truth, out / "truth.csv")
    (out / "manifest.json").write_text(json.dumps({"sim": asdict(sim)}, sort_keys=True, indent=2) + "\n")
    print(out / "panel.csv")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args.config)
    panel = load_panel(args.panel)
    model = _fit(panel, cfg, args.oracle_residuals)
    save_model(model, args.out, panel, {"config_digest": cfg.digest()})
    (Path(args.out) / "config.txt").write_text(cfg.to_text())
    print(Path(args.out) / "checkpoint.npz")
    return 0


def cmd_forecast(args) -> int:
    model = load_model(args.checkpoint)
    panel = load_panel(args.panel or Path(args.checkpoint) / "panel.csv")
    records = forecast_panel(model, panel, [args.origin], args.horizon)
    write_forecasts(records, args.out)
    print(args.out)
    return 0


def _models(spec: str) -> tuple[str, ...]:
    names = []
    for item in (s.strip() for s in spec.split(",") if s.strip()):
        if item not in MODEL_ALIASES:
            raise ConfigurationError(f"unknown model {item!r}; expected hybrid or tft")
        names.append(MODEL_ALIASES[item])
    if not names:
        raise ConfigurationError("no models selected")
    return tuple(dict.fromkeys(names))


def cmd_backtest(args) -> int:
    cfg = _config(args.config)
    panel = load_panel(args.panel)
    train_end = cfg.run.resolve_train_end(panel)
    bt = cfg.backtest
    origins = bt.origins or tuple(range(train_end, panel.end_index - bt.horizon + 1))
    bt = replace(bt, origins=origins, models=_models(args.models), lookback=cfg.forecaster.lookback)
    validate_origins(panel, bt)
    model = _fit(panel, cfg, args.oracle_residuals)
    table = rolling_backtest(panel, model_variants(model, bt.models), bt)
    out = Path(args.out)
    save_model(model, out / "checkpoint", panel, {"config_digest": cfg.digest()})
    _write_run(out, table, panel, bt, model)
    print(table.summary.to_string(index=False))
    return 0


def _write_run(out: Path, table: MetricTable, panel, bt: BacktestConfig, model: HybridModel) -> None:
    out.mkdir(parents=True, exist_ok=True)
    table.summary.to_csv(out / "summary.csv", index=False)
    table.per_horizon.to_csv(out / "per_horizon.csv", index=False)
    table.per_series.to_csv(out / "per_series.csv", index=False)
    for name, recs in table.forecasts.items():
        write_forecasts(recs, out / f"forecasts_{name}.csv")
    save_panel(panel, out / "panel.csv")
    run = {"models": list(table.forecasts), "origins": list(bt.origins), "horizon": bt.horizon,
           "lookahead": bool(model.info.get("lookahead")), "zinb_skipped": model.zinb is None,
           "train_end": model.train_end}
    (out / RUN_FILE).write_text(json.dumps(run, sort_keys=True, indent=2) + "\n")


def read_forecasts(path) -> list[ForecastRecord]:
    with open(path, newline="") as fh:
        return [ForecastRecord(SeriesKey(int(r["location_id"]), int(r["event_code"])), int(r["origin"]),
                               int(r["horizon"]), float(r["point"]), float(r["variance"]), r["pathway"],
                               r["gate"] == "1", float("nan"), 0.0)
                for r in csv.DictReader(fh)]


def cmd_report(args) -> int:
    run = Path(args.run)
    meta = json.loads((run / RUN_FILE).read_text())
    panel = load_panel(run / "panel.csv")
    forecasts = {m: read_forecasts(run / f"forecasts_{m}.csv") for m in meta["models"]}
    table = MetricTable(pd.read_csv(run / "summary.csv"), pd.read_csv(run / "per_horizon.csv"),
                        pd.read_csv(run / "per_series.csv"), forecasts)
    kernel = run / "checkpoint" / "kernel.txt"
    if kernel.exists():
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "kernel.txt").write_text(kernel.read_text())
    paths = emit_report(table, panel, args.out, {"run": meta})
    print("\n".join(str(p) for p in paths))
    return 0


def cmd_tune(args) -> int:
    cfg = _config(args.config)
    panel = load_panel(args.panel)
    result = random_search(panel, n_trials=args.trials, seed=args.seed, holdout=args.holdout,
                           base=cfg.forecaster, vnngp=cfg.vnngp, router=cfg.router)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.trials.to_csv(out / "trials.csv", index=False)
    (out / "best.json").write_text(json.dumps({"best": result.best, "objective": result.best_objective},
                                              sort_keys=True, indent=2) + "\n")
    print(json.dumps(result.best, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridcast", description=__doc__)
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a simulation panel")
    s.add_argument("--case", required=True, choices=["1", "2", "3"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-series", type=int, default=0)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="fit forecaster, residual GP and ZINB head")
    s.add_argument("--panel", required=True)
    s.add_argument("--config")
    s.add_argument("--oracle-residuals", action="store_true",
                   help="fit the GP on residuals from the whole panel (lookahead)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("forecast", help="H-step forecasts from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--panel")
    s.add_argument("--origin", type=int, required=True)
    s.add_argument("--horizon", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_forecast)

    s = sub.add_parser("backtest", help="rolling-origin backtest")
    s.add_argument("--panel", required=True)
    s.add_argument("--config")
    s.add_argument("--models", default="hybrid,tft")
    s.add_argument("--oracle-residuals", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_backtest)

    s = sub.add_parser("tune", help="random hyperparameter search")
    s.add_argument("--panel", required=True)
    s.add_argument("--trials", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--holdout", type=int, default=10)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tune)

    s = sub.add_parser("report", help="metric CSVs, plots and manifest from a backtest run")
    s.add_argument("--run", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
