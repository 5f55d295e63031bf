"""Two-stage hybrid pipeline: sparsity routing, burst gating, residual
correction and the autoregressive multi-step forecasting loop.

Per (series, origin) the zero fraction of the last ``L`` observed counts
picks one pathway for the whole horizon:

* sparse: the ZINB head turns the forecaster's 19 quantiles into (mu,
  alpha, pi) and forecasts the ZINB mean ``(1 - pi) * mu``;
* bursty: the forecaster median ``g`` is corrected to ``g + B * w`` where
  ``w`` is the GP residual prediction and ``B`` the burst gate.

Each step's count forecast is log-transformed and appended to the window
for the next step.
"""
from __future__ import annotations

import hashlib
import json
import logging
import shutil
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import checkpoint
from .forecaster import (MEDIAN_INDEX, ConfigurationError, ForecasterConfig, ForecasterModel,
                         panel_predictions, predict_batch, train_forecaster, training_residuals)
from .panel import EventPanel, SeriesKey, empirical_quantile, save_panel
from .vnngp import KernelParams, ResidualField, VnngpModel, fit_vnngp, kernel_summary, predict_residuals
from .zinb import ZinbHeadConfig, ZinbHeadModel, train_zinb_head, zinb_predict_batch

log = logging.getLogger(__name__)

GATE_MODES = ("burst", "schedule", "always", "off")
PATHWAYS = ("sparse", "bursty")
Z95 = 1.6449
FORECAST_HEADER = ("location_id", "event_code", "origin", "horizon", "point", "variance", "pathway", "gate")


@dataclass
class RouterConfig:
    """Routing and gating settings.

    ``gate_mode`` selects the burst gate: ``burst`` is the operational
    peaks-over-threshold / predictive-failure rule, ``schedule`` fires when
    the target time is a multiple of ``spike_period``, ``always`` and
    ``off`` pin the gate.
    """

    theta_sparse: float = 0.9
    lookback: int = 20
    epsilon: float = 1.0
    pot_quantile: float = 0.95
    failure_factor: float = 0.7
    gate_mode: str = "burst"
    spike_period: int = 50

    def __post_init__(self):
        if not 0.0 < self.theta_sparse <= 1.0:
            raise ConfigurationError("theta_sparse must lie in (0, 1]")
        if not 0.0 < self.pot_quantile < 1.0:
            raise ConfigurationError("pot_quantile must lie in (0, 1)")
        if not 0.0 < self.failure_factor <= 1.0:
            raise ConfigurationError("failure_factor must lie in (0, 1]")
        if self.epsilon <= 0 or self.lookback < 1 or self.spike_period < 1:
            raise ConfigurationError("epsilon, lookback and spike_period must be positive")
        if self.gate_mode not in GATE_MODES:
            raise ConfigurationError(f"gate_mode must be one of {GATE_MODES}")


@dataclass
class VnngpFitConfig:
    """How the residual GP is fitted in the second stage.

    ``residual_times='schedule'`` keeps only residuals at multiples of the
    router's ``spike_period`` (a spike specialist). ``oracle_residuals``
    uses residuals from the whole panel, including the evaluation range;
    that is lookahead and is recorded as such.
    """

    neighbors: int = 10
    steps: int = 300
    vnngp_lr: float = 0.05
    noise_variance: float = 0.1
    vnngp_batch_size: int = 0
    learn_kernel: bool = True
    learn_noise: bool = True
    metric: str = "haversine"
    vnngp_seed: int = 0
    residual_times: str = "all"
    oracle_residuals: bool = False

    def __post_init__(self):
        if self.residual_times not in ("all", "schedule"):
            raise ConfigurationError("residual_times must be 'all' or 'schedule'")


@dataclass(frozen=True)
class ForecastRecord:
    """One (series, origin, horizon) forecast.

    ``variance`` is the variance of the log intensity on the bursty pathway
    and the ZINB count variance on the sparse pathway (``variance_scale``).
    ``quantiles`` are count-scale quantiles, shifted by the gated residual.
    """

    series: SeriesKey
    origin: int
    horizon: int
    point: float
    variance: float
    pathway: str
    gate: bool
    median_log: float
    residual: float
    quantiles: tuple = field(default=(), repr=False)
    variance_scale: str = "log"

    @property
    def target_time(self) -> int:
        return self.origin + self.horizon


@dataclass
class HybridModel:
    forecaster: ForecasterModel
    vnngp: VnngpModel | None
    zinb: ZinbHeadModel | None
    router: RouterConfig
    q95: dict
    train_end: int
    info: dict = field(default_factory=dict)


# -- elementary rules ------------------------------------------------------------------

def route(sparsity: float, theta: float) -> str:
    return "sparse" if sparsity > theta else "bursty"


def burst_gate(y_prev, q95_hist, g_hat, epsilon: float = 1.0, failure_factor: float = 0.7):
    """Peaks-over-threshold OR predictive failure; vectorises over arrays."""
    y_prev = np.asarray(y_prev, dtype=np.float64)
    if np.any(y_prev < 0):
        raise ValueError("y_prev must be non-negative")
    gate = (y_prev > q95_hist) | (np.asarray(g_hat) < np.log(failure_factor * y_prev + epsilon))
    return bool(gate) if gate.ndim == 0 else gate


def combine_bursty(g_hat, gate, w_hat):
    return np.where(gate, np.add(g_hat, w_hat), g_hat) if np.ndim(gate) else (
        g_hat + w_hat if gate else g_hat)


def to_count(log_intensity, epsilon: float = 1.0):
    return np.maximum(np.exp(log_intensity) - epsilon, 0.0)


def quantile_spread_sd(quantiles) -> np.ndarray:
    """Gaussian-equivalent sd from the 5%/95% quantile spread."""
    q = np.asarray(quantiles, dtype=np.float64)
    return (q[..., -1] - q[..., 0]) / (2.0 * Z95)


def predictive_variance(quantiles, gate, s2):
    if np.any(np.asarray(s2) < 0):
        raise ValueError("residual variance must be non-negative")
    return quantile_spread_sd(quantiles) ** 2 + np.where(gate, s2, 0.0)


# -- stage-wise fit ----------------------------------------------------------------------

def _residual_field(fc: ForecasterModel, panel: EventPanel, train_end: int,
                    cfg: VnngpFitConfig, router: RouterConfig) -> ResidualField:
    end = panel.end_index if cfg.oracle_residuals else train_end
    field_ = training_residuals(fc, panel, end)
    if cfg.residual_times == "schedule":
        field_ = field_.subset(field_.time % router.spike_period == 0)
    return field_


def sparse_training_set(fc: ForecasterModel, panel: EventPanel, train_end: int,
                        router: RouterConfig) -> tuple[np.ndarray, np.ndarray]:
    """Forecaster quantiles and next counts for training windows routed sparse."""
    data, keys, q = panel_predictions(fc, panel, train_end)
    counts = panel.matrix(keys)
    L = fc.lookback
    offsets = data.target_times - panel.start_index
    cols = offsets[:, None] - L + np.arange(L)
    windows = counts[data.series_pos[:, None], cols]
    sparse = (windows == 0).mean(axis=1) > router.theta_sparse
    return q[sparse], counts[data.series_pos[sparse], offsets[sparse]]


def frozen_q95(panel: EventPanel, train_end: int, tau: float) -> dict:
    stop = panel.offset(train_end) + 1
    return {k: empirical_quantile(panel.series(k)[:stop], tau) for k in panel.series_keys()}


def two_stage_fit(panel: EventPanel, forecaster_config: ForecasterConfig | None = None,
                  router: RouterConfig | None = None, vnngp_config: VnngpFitConfig | None = None,
                  kernel: KernelParams | None = None, zinb_config: ZinbHeadConfig | None = None,
                  train_end: int | None = None) -> HybridModel:
    """Stage 1 fits the forecaster; stage 2 fits the residual GP and ZINB head."""
    fcfg = forecaster_config or ForecasterConfig()
    router = router or RouterConfig(lookback=fcfg.lookback, epsilon=fcfg.epsilon)
    vcfg = vnngp_config or VnngpFitConfig()
    if router.lookback != fcfg.lookback or router.epsilon != fcfg.epsilon:
        raise ConfigurationError("router and forecaster must share lookback and epsilon")
    train_end = panel.end_index if train_end is None else train_end
    if panel.offset(train_end) + 1 < fcfg.lookback + 10:
        raise ConfigurationError(f"training range needs at least lookback + 10 = {fcfg.lookback + 10} steps")

    fc = train_forecaster(panel, fcfg, train_end)
    field_ = _residual_field(fc, panel, train_end, vcfg, router)
    gp = None
    if len(field_):
        gp = fit_vnngp(field_, m=vcfg.neighbors, init=kernel or KernelParams(), steps=vcfg.steps,
                       lr=vcfg.vnngp_lr, seed=vcfg.vnngp_seed, noise_variance=vcfg.noise_variance,
                       batch_size=vcfg.vnngp_batch_size or None, learn_kernel=vcfg.learn_kernel,
                       learn_noise=vcfg.learn_noise, metric=vcfg.metric)

    feats, ys = sparse_training_set(fc, panel, train_end, router)
    head = None
    if len(ys):
        head = train_zinb_head(feats, ys, zinb_config or ZinbHeadConfig())
    else:
        log.info("no sparse training windows; sparse pathway disabled")
    info = {"zinb_skipped": head is None, "lookahead": bool(vcfg.oracle_residuals),
            "residual_count": len(field_), "sparse_samples": int(len(ys)),
            "vnngp_config": asdict(vcfg)}
    return HybridModel(fc, gp, head, router, frozen_q95(panel, train_end, router.pot_quantile),
                       train_end, info)


# -- forecasting -------------------------------------------------------------------------

def _windows(panel: EventPanel, keys, origins, L: int) -> np.ndarray:
    counts = panel.matrix(keys).astype(np.float64)
    out = np.empty((len(origins) * len(keys), L))
    for a, o in enumerate(origins):
        off = panel.offset(o)
        if off + 1 < L:
            raise ConfigurationError(f"origin {o} has fewer than {L} observed steps")
        out[a * len(keys):(a + 1) * len(keys)] = counts[:, off - L + 1:off + 1]
    return out


def _rows(model_fc: ForecasterModel, keys, origins):
    idx = np.array([model_fc.series_index(k) for k in keys], dtype=np.int64).reshape(len(keys), 2)
    loc = np.tile(idx[:, 0], len(origins))
    code = np.tile(idx[:, 1], len(origins))
    org = np.repeat(np.asarray(origins, dtype=np.int64), len(keys))
    key_pos = np.tile(np.arange(len(keys)), len(origins))
    return loc, code, org, key_pos


def _sorted_records(records: list[ForecastRecord]) -> list[ForecastRecord]:
    return sorted(records, key=lambda r: (r.series, r.origin, r.horizon))


def forecast_panel(model: HybridModel, panel: EventPanel, origins, horizon: int, keys=None, *,
                   force_pathway: str | None = None, gate_mode: str | None = None) -> list[ForecastRecord]:
    """H-step forecasts for every (series, origin), batched across both.

    ``force_pathway`` overrides the router; ``gate_mode`` overrides the
    router's gate setting.
    """
    if horizon < 1:
        raise ConfigurationError("horizon must be at least 1")
    if force_pathway not in (None, *PATHWAYS):
        raise ConfigurationError(f"force_pathway must be one of {PATHWAYS}")
    fc, router = model.forecaster, model.router
    mode = gate_mode or router.gate_mode
    if mode not in GATE_MODES:
        raise ConfigurationError(f"gate_mode must be one of {GATE_MODES}")
    keys = list(panel.series_keys() if keys is None else keys)
    origins = list(origins)
    L, eps = fc.lookback, fc.config.epsilon
    counts = _windows(panel, keys, origins, L)
    loc, code, org, key_pos = _rows(fc, keys, origins)

    sparse = (counts == 0).mean(axis=1) > router.theta_sparse
    if force_pathway == "sparse":
        sparse[:] = True
    elif force_pathway == "bursty":
        sparse[:] = False
    if sparse.any() and model.zinb is None:
        if force_pathway == "sparse":
            raise ConfigurationError("sparse pathway forced but no ZINB head was trained")
        sparse[:] = False
    q95 = np.array([model.q95[keys[p]] for p in key_pos])
    lat = np.array([panel.location(keys[p].location_id).latitude for p in key_pos])
    lon = np.array([panel.location(keys[p].location_id).longitude for p in key_pos])

    logw = np.log(counts + eps)
    y_prev = counts[:, -1]
    out = []
    for h in range(1, horizon + 1):
        target = org + h
        q = predict_batch(fc, loc, code, logw, target)
        g = q[:, MEDIAN_INDEX]
        if mode == "burst":
            gate = burst_gate(y_prev, q95, g, router.epsilon, router.failure_factor)
        elif mode == "schedule":
            gate = target % router.spike_period == 0
        else:
            gate = np.full(len(g), mode == "always")
        gate = np.asarray(gate, dtype=bool) & ~sparse
        if model.vnngp is None:
            gate[:] = False
        w = np.zeros(len(g))
        s2 = np.zeros(len(g))
        if gate.any():
            pts = np.stack([lat[gate], lon[gate], target[gate].astype(np.float64)], axis=1)
            w[gate], s2[gate] = predict_residuals(model.vnngp, pts)
        mu = combine_bursty(g, gate, w)
        point = to_count(mu, eps)
        var = predictive_variance(q, gate, s2)
        qc = to_count(q + np.where(gate, w, 0.0)[:, None], eps)
        if sparse.any():
            zm, za, zp = zinb_predict_batch(model.zinb, q[sparse])
            point[sparse] = (1.0 - zp) * zm
            var[sparse] = (1.0 - zp) * zm * (1.0 + za * zm + zp * zm)
        for r in range(len(g)):
            out.append(ForecastRecord(keys[key_pos[r]], int(org[r]), h, float(point[r]), float(var[r]),
                                      "sparse" if sparse[r] else "bursty", bool(gate[r]), float(g[r]),
                                      float(w[r]), tuple(qc[r]), "count" if sparse[r] else "log"))
        logw = np.concatenate([logw[:, 1:], np.log(point + eps)[:, None]], axis=1)
        y_prev = point
    return _sorted_records(out)


def forecast_series(model: HybridModel, panel: EventPanel, series: SeriesKey, origin: int,
                    horizon: int, **kwargs) -> list[ForecastRecord]:
    return forecast_panel(model, panel, [origin], horizon, [series], **kwargs)


def forecaster_rollout(fc: ForecasterModel, panel: EventPanel, origins, horizon: int,
                       keys=None) -> list[ForecastRecord]:
    """Forecaster-only baseline: median forecasts fed back step by step."""
    keys = list(panel.series_keys() if keys is None else keys)
    origins = list(origins)
    L, eps = fc.lookback, fc.config.epsilon
    counts = _windows(panel, keys, origins, L)
    loc, code, org, key_pos = _rows(fc, keys, origins)
    logw = np.log(counts + eps)
    out = []
    for h in range(1, horizon + 1):
        q = predict_batch(fc, loc, code, logw, org + h)
        g = q[:, MEDIAN_INDEX]
        point = to_count(g, eps)
        var = quantile_spread_sd(q) ** 2
        qc = to_count(q, eps)
        for r in range(len(g)):
            out.append(ForecastRecord(keys[key_pos[r]], int(org[r]), h, float(point[r]), float(var[r]),
                                      "bursty", False, float(g[r]), 0.0, tuple(qc[r])))
        logw = np.concatenate([logw[:, 1:], np.log(point + eps)[:, None]], axis=1)
    return _sorted_records(out)


def write_forecasts(records, path) -> None:
    import csv

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FORECAST_HEADER)
        for r in records:
            w.writerow([r.series.location_id, r.series.event_code, r.origin, r.horizon,
                        repr(r.point), repr(r.variance), r.pathway, int(r.gate)])


# -- persistence -------------------------------------------------------------------------

CHECKPOINT_FILE = "checkpoint.npz"
MANIFEST_FILE = "manifest.json"
KERNEL_FILE = "kernel.txt"
PANEL_FILE = "panel.csv"


def config_hash(*configs) -> str:
    blob = json.dumps([asdict(c) if c is not None else None for c in configs], sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()


def save_model(model: HybridModel, out_dir, panel: EventPanel | None = None,
               extra_manifest: dict | None = None) -> Path:
    """Write checkpoint, manifest, kernel dump and (optionally) the panel copy."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays, meta = model.forecaster.to_arrays("forecaster")
    meta = {"forecaster": meta, "router": asdict(model.router), "train_end": model.train_end,
            "info": model.info}
    keys = sorted(model.q95)
    arrays["router/q95_keys"] = np.array([[k.location_id, k.event_code] for k in keys], dtype=np.int64)
    arrays["router/q95"] = np.array([model.q95[k] for k in keys])
    if model.vnngp is not None:
        a, m = model.vnngp.to_arrays("vnngp")
        arrays.update(a)
        meta["vnngp"] = m
        (out / KERNEL_FILE).write_text(kernel_summary(model.vnngp))
    if model.zinb is not None:
        a, m = model.zinb.to_arrays("zinb")
        arrays.update(a)
        meta["zinb"] = m
    checkpoint.save_arrays(out / CHECKPOINT_FILE, arrays, meta)
    manifest = {
        "checkpoint": CHECKPOINT_FILE,
        "components": [n for n, c in (("forecaster", model.forecaster), ("vnngp", model.vnngp),
                                      ("zinb", model.zinb)) if c is not None],
        "config_hash": config_hash(model.forecaster.config, model.router),
        "seeds": {"forecaster": model.forecaster.config.seed,
                  "vnngp": model.info.get("vnngp_config", {}).get("vnngp_seed"),
                  "zinb": None if model.zinb is None else model.zinb.config.zinb_seed},
        "zinb_skipped": model.zinb is None,
        "lookahead": bool(model.info.get("lookahead", False)),
        "zinb_variance_extrapolated": model.zinb is not None,
        "train_end": model.train_end,
        **(extra_manifest or {}),
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    if panel is not None:
        save_panel(panel, out / PANEL_FILE)
    return out


def load_model(ckpt_dir) -> HybridModel:
    arrays, meta = checkpoint.load_arrays(Path(ckpt_dir) / CHECKPOINT_FILE)
    fc = ForecasterModel.from_arrays(checkpoint.split_prefix(arrays, "forecaster"), meta["forecaster"])
    gp = VnngpModel.from_arrays(checkpoint.split_prefix(arrays, "vnngp"), meta["vnngp"]) \
        if "vnngp" in meta else None
    head = ZinbHeadModel.from_arrays(checkpoint.split_prefix(arrays, "zinb"), meta["zinb"]) \
        if "zinb" in meta else None
    q95 = {SeriesKey(int(a), int(b)): float(v)
           for (a, b), v in zip(arrays["router/q95_keys"], arrays["router/q95"])}
    router_fields = {f.name for f in fields(RouterConfig)}
    router = RouterConfig(**{k: v for k, v in meta["router"].items() if k in router_fields})
    return HybridModel(fc, gp, head, router, q95, int(meta["train_end"]), meta["info"])


def copy_panel(src, ckpt_dir) -> None:
    shutil.copyfile(src, Path(ckpt_dir) / PANEL_FILE)
