import json
import re

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from hybridcast.autodiff import ShapeError
from hybridcast.evalkit import (BacktestConfig, MetricTable, SearchSpace, emit_report, evaluate_records,
                                mae, mase, mean_pinball, model_variants, random_search, rmse,
                                rolling_backtest, sample_trial, validate_origins)
from hybridcast.forecaster import QUANTILE_LEVELS, ConfigurationError
from hybridcast.hybrid import ForecastRecord, forecast_panel

vectors = st.lists(st.floats(-100, 100), min_size=1, max_size=30)


def _oracle_model(panel, origins, horizon):
    out = []
    for key in panel:
        series = panel.series(key)
        for o in origins:
            for h in range(1, horizon + 1):
                y = float(series[panel.offset(o + h)])
                out.append(ForecastRecord(key, o, h, y, 0.0, "bursty", False, 0.0, 0.0, (y,) * 19))
    return out


def test_mae_rmse_examples():
    assert mae([1, 2], [1, 2]) == 0.0
    assert mae([0, 0], [1, 3]) == 2.0
    assert rmse([4, 4], [4, 4]) == 0.0
    assert rmse([0, 0], [3, 4]) == pytest.approx(3.5355, abs=1e-4)
    with pytest.raises(ShapeError):
        mae([1, 2], [1])
    with pytest.raises(ShapeError):
        rmse([], [])


@settings(max_examples=80, deadline=None)
@given(vectors, st.floats(-10, 10), st.data())
def test_metric_properties(a, c, data):
    b = data.draw(st.lists(st.floats(-100, 100), min_size=len(a), max_size=len(a)))
    a, b = np.array(a), np.array(b)
    assert mae(c * a, c * b) == pytest.approx(abs(c) * mae(a, b), rel=1e-9, abs=1e-9)
    assert rmse(a, b) >= mae(a, b) - 1e-9


def test_pinball_examples():
    assert mean_pinball([1.0], [[0.0, 0.0]], [0.25, 0.75]) == 0.5
    y = np.full(4, 3.0)
    assert mean_pinball(y, np.full((4, 19), 3.0)) == 0.0
    with pytest.raises(ShapeError):
        mean_pinball([1.0, 2.0], np.zeros((1, 19)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=19, max_size=19), st.floats(-50, 50))
def test_pinball_non_negative(q, y):
    assert mean_pinball([y], [sorted(q)], QUANTILE_LEVELS) >= 0


def test_mase():
    hist = np.array([1.0, 3.0, 2.0, 4.0])
    assert mase([2.0], [3.0], hist) == pytest.approx(1.0 / np.mean([2.0, 1.0, 2.0]))
    with pytest.raises(ZeroDivisionError):
        mase([1.0], [1.0], np.ones(5))


def test_perfect_model_scores_zero(fixture_panel):
    cfg = BacktestConfig(origins=(100,), horizon=1, models=("hybrid",))
    table = rolling_backtest(fixture_panel, {"hybrid": _oracle_model}, cfg)
    assert (table.summary["mean"] == 0).all()
    assert set(table.summary["metric"]) == {"MAE", "RMSE", "pinball"}


def test_summary_aggregation(fixture_panel):
    cfg = BacktestConfig(origins=(100, 101), horizon=2, models=("hybrid",))

    def shifted(panel, origins, horizon):
        return [ForecastRecord(r.series, r.origin, r.horizon, r.point + 1.0 + r.series.location_id, 0.0,
                               "bursty", False, 0.0, 0.0, r.quantiles)
                for r in _oracle_model(panel, origins, horizon)]

    table = rolling_backtest(fixture_panel, {"hybrid": shifted}, cfg)
    per = table.per_series[table.per_series.metric == "MAE"]["value"].to_numpy()
    assert sorted(per.tolist()) == [2.0, 2.0, 3.0, 3.0]
    assert table.value("hybrid", "MAE") == 2.5
    assert table.value("hybrid", "MAE", "std") == pytest.approx(np.std(per, ddof=1))
    ph = table.per_horizon[table.per_horizon.metric == "MAE"]
    assert ph["horizon"].tolist() == [1, 2] and (ph["mean"] == 2.5).all()


def test_forecaster_variant_equals_ungated_hybrid(fixture_model, fixture_panel):
    cfg = BacktestConfig(origins=range(100, 105), horizon=3)
    base = rolling_backtest(fixture_panel, model_variants(fixture_model, ("forecaster_only",)),
                            BacktestConfig(origins=cfg.origins, horizon=3, models=("forecaster_only",)))
    ungated = rolling_backtest(
        fixture_panel,
        {"forecaster_only": lambda p, o, h: forecast_panel(fixture_model, p, o, h, force_pathway="bursty",
                                                           gate_mode="off")},
        BacktestConfig(origins=cfg.origins, horizon=3, models=("forecaster_only",)))
    pd.testing.assert_frame_equal(base.summary, ungated.summary, check_exact=True)
    pd.testing.assert_frame_equal(base.per_series, ungated.per_series, check_exact=True)


def test_origin_validation(fixture_panel):
    with pytest.raises(ConfigurationError):
        validate_origins(fixture_panel, BacktestConfig(origins=(), horizon=1))
    with pytest.raises(ConfigurationError):
        validate_origins(fixture_panel, BacktestConfig(origins=(5,), horizon=1))
    with pytest.raises(ConfigurationError):
        validate_origins(fixture_panel, BacktestConfig(origins=(115,), horizon=10))
    with pytest.raises(ConfigurationError):
        BacktestConfig(metrics=("MAPE",))
    with pytest.raises(ConfigurationError):
        rolling_backtest(fixture_panel, {}, BacktestConfig(origins=(100,)))


def test_search_single_trial_wins():
    result = random_search(None, n_trials=1, seed=3, objective=lambda t: 7.0)
    assert result.best_objective == 7.0
    assert result.best == {k: v for k, v in result.trials.iloc[0].items() if k not in ("trial", "objective")}


def test_search_argmin_contract():
    result = random_search(None, n_trials=12, seed=5, objective=lambda t: abs(np.log10(t["learning_rate"]) + 3.5))
    assert result.best_objective <= result.trials["objective"].min()
    assert len(result.trials) == 12
    again = random_search(None, n_trials=12, seed=5, objective=lambda t: abs(np.log10(t["learning_rate"]) + 3.5))
    pd.testing.assert_frame_equal(result.trials, again.trials)


def test_learning_rate_sampling_range():
    rng = np.random.default_rng(0)
    space = SearchSpace()
    draws = [sample_trial(space, rng) for _ in range(1000)]
    lr = np.array([d["learning_rate"] for d in draws])
    assert lr.min() >= 1e-4 and lr.max() <= 1e-3
    # log-uniform: about half the draws fall below the geometric midpoint
    assert abs(np.mean(lr < np.sqrt(1e-4 * 1e-3)) - 0.5) < 0.05
    assert all(d["attention_heads"] in space.head_counts for d in draws)
    assert all(space.neighbors[0] <= d["neighbors"] <= space.neighbors[1] for d in draws)


def test_report_files(fixture_model, fixture_panel, tmp_path):
    origins = range(100, 110)
    table = rolling_backtest(fixture_panel, model_variants(fixture_model), BacktestConfig(origins=origins))
    paths = emit_report(table, fixture_panel, tmp_path, {"note": "x"})
    assert sorted(table.summary["model"].unique()) == ["forecaster_only", "hybrid"]
    mae_rows = table.summary[table.summary.metric == "MAE"]
    assert len(mae_rows) == 2
    plots = sorted((tmp_path / "plots").glob("*.svg"))
    assert len(plots) == 4
    for plot in plots:
        times = [int(t) for t in re.findall(r'data-t="(\d+)"', plot.read_text())]
        assert sorted(times) == list(range(101, 111))
    meta = json.loads((tmp_path / "manifest.json").read_text())
    assert meta["models"] == ["hybrid", "forecaster_only"] and meta["note"] == "x"
    assert all(p.exists() for p in paths)


def test_empty_report_rejected(fixture_panel, tmp_path):
    empty = MetricTable(pd.DataFrame(columns=["model", "metric", "mean", "std", "n_series"]),
                        pd.DataFrame(), pd.DataFrame(), {})
    with pytest.raises(ConfigurationError):
        emit_report(empty, fixture_panel, tmp_path)
    with pytest.raises(ConfigurationError):
        evaluate_records(fixture_panel, {})
