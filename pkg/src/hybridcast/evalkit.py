"""Count-scale metrics, rolling-origin backtests, random hyperparameter
search and report files."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from .autodiff import ShapeError
from .forecaster import QUANTILE_LEVELS, ConfigurationError, ForecasterConfig, pinball_loss
from .hybrid import (ForecastRecord, HybridModel, RouterConfig, VnngpFitConfig, forecast_panel,
                     forecaster_rollout, two_stage_fit)
from .panel import EventPanel, SeriesKey
from .vnngp import KernelParams

log = logging.getLogger(__name__)

METRICS = ("MAE", "RMSE", "pinball")
MODEL_NAMES = ("hybrid", "forecaster_only")

ModelFn = Callable[[EventPanel, list, int], list]


def _pair(truth, forecast) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(truth, dtype=np.float64)
    b = np.asarray(forecast, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"truth shape {a.shape} != forecast shape {b.shape}")
    if a.size == 0:
        raise ShapeError("metrics need at least one observation")
    return a, b


def mae(truth, forecast) -> float:
    a, b = _pair(truth, forecast)
    return float(np.mean(np.abs(a - b)))


def rmse(truth, forecast) -> float:
    a, b = _pair(truth, forecast)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def mean_pinball(truth, quantiles, levels=QUANTILE_LEVELS) -> float:
    """Mean pinball loss over every (observation, level) pair.

    ``quantiles`` has shape (n, len(levels)).
    """
    y = np.asarray(truth, dtype=np.float64).reshape(-1)
    q = np.atleast_2d(np.asarray(quantiles, dtype=np.float64))
    levels = np.asarray(levels, dtype=np.float64)
    if q.shape != (len(y), len(levels)):
        raise ShapeError(f"quantiles shape {q.shape} != ({len(y)}, {len(levels)})")
    if len(y) == 0:
        raise ShapeError("metrics need at least one observation")
    return float(np.mean(pinball_loss(y[:, None], q, levels[None, :])))


def mase(truth, forecast, history, season: int = 1) -> float:
    """MAE scaled by the in-sample seasonal-naive MAE of ``history``."""
    hist = np.asarray(history, dtype=np.float64)
    if len(hist) <= season:
        raise ShapeError("history must be longer than the season")
    scale = np.mean(np.abs(hist[season:] - hist[:-season]))
    if scale == 0:
        raise ZeroDivisionError("seasonal-naive MAE of the history is zero")
    return mae(truth, forecast) / scale


@dataclass
class BacktestConfig:
    origins: tuple = ()
    horizon: int = 1
    models: tuple = MODEL_NAMES
    metrics: tuple = METRICS
    lookback: int = 20

    def __post_init__(self):
        self.origins = tuple(int(o) for o in self.origins)
        self.models = tuple(self.models)
        self.metrics = tuple(self.metrics)
        if self.horizon < 1:
            raise ConfigurationError("horizon must be at least 1")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise ConfigurationError(f"unknown metrics {bad}")
        bad = [m for m in self.models if m not in MODEL_NAMES]
        if bad:
            raise ConfigurationError(f"unknown models {bad}; choose from {MODEL_NAMES}")


@dataclass
class MetricTable:
    """Across-series mean and std (ddof=1) per model and metric.

    ``per_horizon`` repeats the aggregation per horizon; ``per_series`` holds
    each series' metric over all its scored cells.
    """

    summary: pd.DataFrame
    per_horizon: pd.DataFrame
    per_series: pd.DataFrame
    forecasts: dict = field(default_factory=dict, repr=False)

    @property
    def models(self) -> list[str]:
        return list(dict.fromkeys(self.summary["model"]))

    def value(self, model: str, metric: str, stat: str = "mean") -> float:
        row = self.summary[(self.summary["model"] == model) & (self.summary["metric"] == metric)]
        if row.empty:
            raise KeyError(f"no {metric} for model {model}")
        return float(row[stat].iloc[0])


def _series_metric(metric: str, y, point, q) -> float:
    if metric == "MAE":
        return mae(y, point)
    if metric == "RMSE":
        return rmse(y, point)
    return mean_pinball(y, q)


def _aggregate(df: pd.DataFrame, by: list[str]) -> pd.DataFrame:
    g = df.groupby(by, sort=False)["value"]
    out = g.agg(mean="mean", std=lambda v: float(np.std(v, ddof=1)) if len(v) > 1 else 0.0,
                n_series="size").reset_index()
    return out


def evaluate_records(panel: EventPanel, forecasts: Mapping[str, Sequence[ForecastRecord]],
                     metrics: Sequence[str] = METRICS) -> MetricTable:
    """Score count-scale forecasts whose target lies inside the panel."""
    if not forecasts:
        raise ConfigurationError("no models to evaluate")
    series_rows, horizon_rows = [], []
    for name, records in forecasts.items():
        scored = [r for r in records if r.target_time <= panel.end_index]
        if not scored:
            raise ConfigurationError(f"model {name} has no forecasts with observed targets")
        by_series: dict[SeriesKey, list[ForecastRecord]] = {}
        for r in scored:
            by_series.setdefault(r.series, []).append(r)
        for key in sorted(by_series):
            recs = by_series[key]
            series = panel.series(key)
            y = np.array([series[panel.offset(r.target_time)] for r in recs], dtype=np.float64)
            point = np.array([r.point for r in recs])
            q = np.array([r.quantiles for r in recs])
            hz = np.array([r.horizon for r in recs])
            for metric in metrics:
                series_rows.append((name, key.location_id, key.event_code, metric,
                                    _series_metric(metric, y, point, q)))
                for h in np.unique(hz):
                    sel = hz == h
                    horizon_rows.append((name, int(h), key.location_id, key.event_code, metric,
                                         _series_metric(metric, y[sel], point[sel], q[sel])))
    per_series = pd.DataFrame(series_rows, columns=["model", "location_id", "event_code", "metric", "value"])
    per_h = pd.DataFrame(horizon_rows, columns=["model", "horizon", "location_id", "event_code",
                                                "metric", "value"])
    summary = _aggregate(per_series, ["model", "metric"])
    per_horizon = _aggregate(per_h, ["model", "horizon", "metric"]).sort_values(
        ["model", "horizon", "metric"], kind="stable").reset_index(drop=True)
    return MetricTable(summary, per_horizon, per_series, dict(forecasts))


def validate_origins(panel: EventPanel, config: BacktestConfig) -> None:
    if not config.origins:
        raise ConfigurationError("backtest needs at least one origin")
    for o in config.origins:
        if o - config.lookback + 1 < panel.start_index:
            raise ConfigurationError(f"origin {o} leaves fewer than {config.lookback} history steps")
        if o + config.horizon > panel.end_index:
            raise ConfigurationError(f"origin {o} + horizon {config.horizon} runs past the panel end")


def rolling_backtest(panel: EventPanel, models: Mapping[str, ModelFn],
                     config: BacktestConfig) -> MetricTable:
    """Run every model over all origins and score on the count scale.

    Each model is a callable ``(panel, origins, horizon) -> records``.
    """
    if not models:
        raise ConfigurationError("no models to backtest")
    validate_origins(panel, config)
    forecasts = {name: fn(panel, list(config.origins), config.horizon) for name, fn in models.items()}
    return evaluate_records(panel, forecasts, config.metrics)


def model_variants(model: HybridModel, names: Sequence[str] = MODEL_NAMES) -> dict[str, ModelFn]:
    """Callables for the hybrid and its forecaster-only baseline."""
    table = {
        "hybrid": lambda p, o, h: forecast_panel(model, p, o, h),
        "forecaster_only": lambda p, o, h: forecaster_rollout(model.forecaster, p, o, h),
    }
    return {n: table[n] for n in names}


# -- random search ---------------------------------------------------------------------

@dataclass
class SearchSpace:
    hidden_widths: tuple = (64, 128, 256, 512)
    head_counts: tuple = (4, 8, 16)
    dropout: tuple = (0.0, 0.3)
    learning_rate: tuple = (1e-4, 1e-3)
    spatial_lengthscale: tuple = (50.0, 800.0)
    temporal_lengthscale: tuple = (2.0, 24.0)
    neighbors: tuple = (10, 25)
    nugget: tuple = (1e-6, 1e-2)


def sample_trial(space: SearchSpace, rng: np.random.Generator) -> dict:
    """One joint draw; learning rate and nugget are log-uniform."""

    def log_uniform(lo, hi):
        return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))

    return {
        "hidden_width": int(rng.choice(space.hidden_widths)),
        "attention_heads": int(rng.choice(space.head_counts)),
        "dropout": float(rng.uniform(*space.dropout)),
        "learning_rate": log_uniform(*space.learning_rate),
        "spatial_lengthscale": float(rng.uniform(*space.spatial_lengthscale)),
        "temporal_lengthscale": float(rng.uniform(*space.temporal_lengthscale)),
        "neighbors": int(rng.integers(space.neighbors[0], space.neighbors[1] + 1)),
        "nugget": log_uniform(*space.nugget),
    }


@dataclass
class SearchResult:
    best: dict
    best_objective: float
    trials: pd.DataFrame


def holdout_objective(panel: EventPanel, holdout: int = 10, base: ForecasterConfig | None = None,
                      vnngp: VnngpFitConfig | None = None,
                      router: RouterConfig | None = None) -> Callable[[dict], float]:
    """Mean pinball of one-step hybrid forecasts over the last ``holdout`` steps."""
    base = base or ForecasterConfig()
    vnngp = vnngp or VnngpFitConfig()
    train_end = panel.end_index - holdout

    def objective(trial: dict) -> float:
        fcfg = replace(base, hidden_width=trial["hidden_width"], attention_heads=trial["attention_heads"],
                       dropout=trial["dropout"], learning_rate=trial["learning_rate"])
        kern = KernelParams(1.0, trial["spatial_lengthscale"], trial["temporal_lengthscale"], trial["nugget"])
        rcfg = replace(router, lookback=fcfg.lookback, epsilon=fcfg.epsilon) if router else \
            RouterConfig(lookback=fcfg.lookback, epsilon=fcfg.epsilon)
        model = two_stage_fit(panel, fcfg, rcfg, replace(vnngp, neighbors=trial["neighbors"]), kern,
                              train_end=train_end)
        cfg = BacktestConfig(origins=range(train_end, panel.end_index), horizon=1, models=("hybrid",),
                             metrics=("pinball",), lookback=fcfg.lookback)
        table = rolling_backtest(panel, model_variants(model, ("hybrid",)), cfg)
        return table.value("hybrid", "pinball")

    return objective


def random_search(panel: EventPanel | None, space: SearchSpace | None = None, n_trials: int = 10,
                  seed: int = 0, objective: Callable[[dict], float] | None = None,
                  **objective_kwargs) -> SearchResult:
    """Seeded random search; the first trial wins ties."""
    if n_trials < 1:
        raise ConfigurationError("n_trials must be at least 1")
    space = space or SearchSpace()
    objective = objective or holdout_objective(panel, **objective_kwargs)
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_trials):
        trial = sample_trial(space, rng)
        score = float(objective(trial))
        rows.append({"trial": i, **trial, "objective": score})
        log.info("trial %d objective %.5f", i, score)
    trials = pd.DataFrame(rows)
    best_i = int(np.argmin(trials["objective"].to_numpy()))
    best = {k: v for k, v in rows[best_i].items() if k not in ("trial", "objective")}
    return SearchResult(best, rows[best_i]["objective"], trials)


# -- reports ---------------------------------------------------------------------------

_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd")


def _svg_series(key: SeriesKey, truth: dict, model_points: dict[str, dict]) -> str:
    times = sorted(set().union(*[set(p) for p in model_points.values()]))
    w, h, pad = 800, 300, 40
    vals = [truth[t] for t in times] + [v for p in model_points.values() for v in p.values()]
    top = max(max(vals, default=1.0), 1.0)
    t0, t1 = times[0], max(times[-1], times[0] + 1)

    def xy(t, v):
        return (pad + (t - t0) / (t1 - t0) * (w - 2 * pad), h - pad - v / top * (h - 2 * pad))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
             f'viewBox="0 0 {w} {h}">',
             f'<title>location {key.location_id} code {key.event_code}</title>',
             f'<rect width="{w}" height="{h}" fill="white"/>']
    lines = [("truth", "black", truth)] + [(n, _COLORS[i % len(_COLORS)], pts)
                                          for i, (n, pts) in enumerate(model_points.items())]
    for name, color, series in lines:
        pts = " ".join("%.2f,%.2f" % xy(t, series[t]) for t in times if t in series)
        parts.append(f'<polyline class="{name}" fill="none" stroke="{color}" points="{pts}"/>')
    for t in times:
        x, y = xy(t, truth[t])
        dots = [f'<circle class="truth" cx="{x:.2f}" cy="{y:.2f}" r="2" fill="black"/>']
        for i, (name, series) in enumerate(model_points.items()):
            if t in series:
                x, y = xy(t, series[t])
                dots.append(f'<circle class="{name}" cx="{x:.2f}" cy="{y:.2f}" r="2" '
                            f'fill="{_COLORS[i % len(_COLORS)]}"/>')
        parts.append(f'<g data-t="{t}">' + "".join(dots) + "</g>")
    legend = " ".join(["truth"] + list(model_points))
    parts.append(f'<text x="{pad}" y="20" font-size="12">{legend}</text></svg>')
    return "\n".join(parts) + "\n"


def emit_report(table: MetricTable, panel: EventPanel, out_dir,
                manifest: dict | None = None) -> list[Path]:
    """Write metric CSVs, one SVG per series (one-step forecasts) and a manifest."""
    if not table.forecasts or table.summary.empty:
        raise ConfigurationError("report needs at least one model")
    out = Path(out_dir)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    written = []
    for name, df in (("summary.csv", table.summary), ("per_horizon.csv", table.per_horizon),
                     ("per_series.csv", table.per_series)):
        df.to_csv(out / name, index=False)
        written.append(out / name)
    for key in panel.series_keys():
        series = panel.series(key)
        points = {}
        for model, recs in table.forecasts.items():
            points[model] = {r.target_time: r.point for r in recs
                             if r.series == key and r.horizon == 1 and r.target_time <= panel.end_index}
        if not any(points.values()):
            continue
        times = set().union(*[set(p) for p in points.values()])
        truth = {t: float(series[panel.offset(t)]) for t in times}
        path = out / "plots" / f"series_{key.location_id}_{key.event_code}.svg"
        path.write_text(_svg_series(key, truth, points))
        written.append(path)
    meta = {"models": table.models, "metrics": sorted(set(table.summary["metric"])),
            "files": [str(p.relative_to(out)) for p in written], **(manifest or {})}
    (out / "manifest.json").write_text(json.dumps(meta, sort_keys=True, indent=2, default=str) + "\n")
    written.append(out / "manifest.json")
    return written


def records_frame(records: Sequence[ForecastRecord]) -> pd.DataFrame:
    return pd.DataFrame([{"location_id": r.series.location_id, "event_code": r.series.event_code,
                          "origin": r.origin, "horizon": r.horizon, "point": r.point,
                          "variance": r.variance, "pathway": r.pathway, "gate": r.gate}
                         for r in records])
