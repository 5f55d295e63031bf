"""Global quantile forecaster for log counts (a reduced Temporal Fusion design).

One network is shared by every series. Per sample it sees the last ``L``
log counts and a sinusoidal time-of-year code, plus static embeddings of the
series' location and event code, and emits 19 conditional quantiles of the
next log count.

Layout: static encoders (two GRNs over the summed embeddings) -> per-step
variable selection -> static enrichment GRN -> multi-head self-attention
read out at the final step -> gated skip + output GRN -> linear quantile
heads. The recurrent encoder/decoder of the full architecture is left out;
forecasts are produced one step at a time and fed back by the caller.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .panel import EventPanel, SeriesKey

log = logging.getLogger(__name__)

QUANTILE_LEVELS = tuple(round(0.05 * k, 2) for k in range(1, 20))
MEDIAN_INDEX = QUANTILE_LEVELS.index(0.5)
N_VARS = 3  # lagged log count, sin and cos of time-of-year


class ConfigurationError(ValueError):
    pass


@dataclass
class ForecasterConfig:
    hidden_width: int = 64
    attention_heads: int = 4
    dropout: float = 0.1
    learning_rate: float = 1e-3
    lookback: int = 20
    epochs: int = 20
    batch_size: int = 128
    seed: int = 0
    epsilon: float = 1.0
    season_period: float = 0.0  # 0 -> 52 for weekly panels, 365.25 for daily
    quantile_levels: tuple = QUANTILE_LEVELS

    def __post_init__(self):
        self.quantile_levels = tuple(float(q) for q in self.quantile_levels)
        if self.hidden_width % self.attention_heads:
            raise ConfigurationError("hidden_width must be divisible by attention_heads")
        q = np.asarray(self.quantile_levels)
        if q.ndim != 1 or np.any(np.diff(q) <= 0) or q[0] <= 0 or q[-1] >= 1:
            raise ConfigurationError("quantile_levels must be strictly increasing inside (0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")
        if self.lookback < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("lookback, epochs and batch_size must be positive")
        if self.epsilon <= 0 or self.learning_rate <= 0:
            raise ConfigurationError("epsilon and learning_rate must be positive")


@dataclass(frozen=True)
class QuantileForecast:
    series: SeriesKey
    origin: int
    horizon: int
    q: np.ndarray

    @property
    def median(self) -> float:
        return float(self.q[MEDIAN_INDEX])


@dataclass
class ForecasterModel:
    config: ForecasterConfig
    params: dict[str, np.ndarray]
    location_ids: tuple[int, ...]
    event_codes: tuple[int, ...]
    season_period: float
    loss_history: list[float] = field(default_factory=list)

    @property
    def lookback(self) -> int:
        return self.config.lookback

    def series_index(self, key: SeriesKey) -> tuple[int, int]:
        try:
            return self.location_ids.index(key.location_id), self.event_codes.index(key.event_code)
        except ValueError:
            raise KeyError(f"{key} was not seen in training") from None

    def to_arrays(self, prefix: str = "forecaster") -> tuple[dict, dict]:
        arrays = {f"{prefix}/{k}": v for k, v in self.params.items()}
        meta = {"config": asdict(self.config), "location_ids": list(self.location_ids),
                "event_codes": list(self.event_codes), "season_period": self.season_period,
                "loss_history": self.loss_history}
        return arrays, meta

    @classmethod
    def from_arrays(cls, params: dict, meta: dict) -> "ForecasterModel":
        cfg = dict(meta["config"])
        cfg["quantile_levels"] = tuple(cfg["quantile_levels"])
        return cls(ForecasterConfig(**cfg), dict(params), tuple(meta["location_ids"]),
                   tuple(meta["event_codes"]), float(meta["season_period"]),
                   list(meta["loss_history"]))


def pinball_loss(y, q, tau):
    """Quantile loss ``tau*max(y-q,0) + (1-tau)*max(q-y,0)`` (elementwise)."""
    tau_arr = np.asarray(tau, dtype=np.float64)
    if np.any(tau_arr <= 0) or np.any(tau_arr >= 1):
        raise ValueError("tau must lie in (0, 1)")
    diff = np.asarray(y, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    return tau_arr * np.maximum(diff, 0.0) + (1.0 - tau_arr) * np.maximum(-diff, 0.0)


def pinball_tensor(y: np.ndarray, q: Tensor, taus: np.ndarray) -> Tensor:
    """Mean pinball loss of predictions ``q`` (batch, n_levels) as a tape scalar."""
    diff = ad.sub(y[:, None], q)
    return ad.mean(ad.add(ad.mul(taus, ad.relu(diff)), ad.mul(1.0 - taus, ad.relu(ad.neg(diff)))))


# -- parameters ----------------------------------------------------------------

def _dense(rng, fan_in, fan_out, scale=1.0):
    return rng.normal(0.0, scale / np.sqrt(fan_in), size=(fan_in, fan_out))


def _grn_params(rng, prefix, d, context: bool) -> dict:
    p = {
        f"{prefix}.w2": _dense(rng, d, d), f"{prefix}.b2": np.zeros(d),
        f"{prefix}.w1": _dense(rng, d, d), f"{prefix}.b1": np.zeros(d),
        f"{prefix}.glu_w": _dense(rng, d, 2 * d, 0.5), f"{prefix}.glu_b": np.zeros(2 * d),
        f"{prefix}.ln_g": np.ones(d), f"{prefix}.ln_b": np.zeros(d),
    }
    if context:
        p[f"{prefix}.w3"] = _dense(rng, d, d)
    return p


def init_params(config: ForecasterConfig, n_locations: int, n_codes: int,
                rng: np.random.Generator, head_bias: np.ndarray | None = None) -> dict:
    d, L, nq = config.hidden_width, config.lookback, len(config.quantile_levels)
    p = {
        "loc_embedding": rng.normal(0.0, 0.1, size=(n_locations, d)),
        "code_embedding": rng.normal(0.0, 0.1, size=(n_codes, d)),
        "vs.var_w": rng.normal(0.0, 1.0, size=(N_VARS, d)),
        "vs.var_b": np.zeros((N_VARS, d)),
        "vs.w_in": _dense(rng, N_VARS, d),
        "vs.w_ctx": _dense(rng, d, d),
        "vs.b_in": np.zeros(d),
        "vs.w_out": _dense(rng, d, N_VARS),
        "vs.b_out": np.zeros(N_VARS),
        "pos": rng.normal(0.0, 0.1, size=(L, d)),
        "attn.wq": _dense(rng, d, d), "attn.wk": _dense(rng, d, d),
        "attn.wv": _dense(rng, d, d), "attn.wo": _dense(rng, d, d),
        "attn.glu_w": _dense(rng, d, 2 * d, 0.5), "attn.glu_b": np.zeros(2 * d),
        "attn.ln_g": np.ones(d), "attn.ln_b": np.zeros(d),
        "head.w": _dense(rng, d, nq, 0.1),
        "head.b": np.zeros(nq) if head_bias is None else np.array(head_bias, dtype=np.float64),
    }
    p.update(_grn_params(rng, "static_sel", d, context=False))
    p.update(_grn_params(rng, "static_enr", d, context=False))
    p.update(_grn_params(rng, "enrich", d, context=True))
    p.update(_grn_params(rng, "out", d, context=False))
    return p


# -- network -------------------------------------------------------------------------

def _glu(x, w, b, d):
    g = ad.add(ad.matmul(x, w), b)
    return ad.mul(ad.sigmoid(g[..., :d]), g[..., d:])


def _grn(P, prefix, a, context, drop):
    d = a.shape[-1]
    h = ad.add(ad.matmul(a, P[f"{prefix}.w2"]), P[f"{prefix}.b2"])
    if context is not None:
        h = ad.add(h, ad.matmul(context, P[f"{prefix}.w3"]))
    h = ad.elu(h)
    h = drop(ad.add(ad.matmul(h, P[f"{prefix}.w1"]), P[f"{prefix}.b1"]))
    h = ad.add(a, _glu(h, P[f"{prefix}.glu_w"], P[f"{prefix}.glu_b"], d))
    return ad.add(ad.mul(ad.layer_norm(h), P[f"{prefix}.ln_g"]), P[f"{prefix}.ln_b"])


def forward(P: dict, config: ForecasterConfig, loc_idx, code_idx, inputs: np.ndarray,
            training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Raw (unsorted) quantile outputs, shape (batch, n_levels).

    ``inputs`` has shape (batch, L, 3): lagged log count, sin and cos of the
    step's time-of-year. ``P`` maps parameter names to Tensors or arrays.
    """
    B, L, _ = inputs.shape
    d, nh = config.hidden_width, config.attention_heads
    dh = d // nh

    def drop(x):
        return ad.dropout(x, config.dropout, rng, training)

    emb = ad.add(ad.embedding_lookup(P["loc_embedding"], loc_idx),
                 ad.embedding_lookup(P["code_embedding"], code_idx))
    c_sel = _grn(P, "static_sel", emb, None, drop).reshape(B, 1, d)
    c_enr = _grn(P, "static_enr", emb, None, drop).reshape(B, 1, d)

    # variable selection: per-variable embeddings weighted by a softmax gate
    xi = ad.add(ad.mul(inputs[..., None], P["vs.var_w"]), P["vs.var_b"])  # (B, L, V, d)
    gate = ad.elu(ad.add(ad.add(ad.matmul(inputs, P["vs.w_in"]), ad.matmul(c_sel, P["vs.w_ctx"])),
                         P["vs.b_in"]))
    weights = ad.softmax(ad.add(ad.matmul(gate, P["vs.w_out"]), P["vs.b_out"]), axis=-1)
    h = ad.sum(ad.mul(xi, ad.reshape(weights, (B, L, N_VARS, 1))), axis=2)
    h = ad.add(h, P["pos"])
    h = _grn(P, "enrich", h, c_enr, drop)

    # attention: only the final step feeds the heads, so only its query row
    # is formed; every key is at or before it, which makes masking implicit
    last = h[:, L - 1:, :]
    q = ad.transpose(ad.reshape(ad.matmul(last, P["attn.wq"]), (B, 1, nh, dh)), (0, 2, 1, 3))
    k = ad.transpose(ad.reshape(ad.matmul(h, P["attn.wk"]), (B, L, nh, dh)), (0, 2, 3, 1))
    v = ad.transpose(ad.reshape(ad.matmul(h, P["attn.wv"]), (B, L, nh, dh)), (0, 2, 1, 3))
    att = ad.softmax(ad.mul(ad.matmul(q, k), 1.0 / np.sqrt(dh)), axis=-1)
    ctx = ad.reshape(ad.transpose(ad.matmul(att, v), (0, 2, 1, 3)), (B, 1, d))
    ctx = drop(ad.matmul(ctx, P["attn.wo"]))
    z = ad.add(last, _glu(ctx, P["attn.glu_w"], P["attn.glu_b"], d))
    z = ad.add(ad.mul(ad.layer_norm(z), P["attn.ln_g"]), P["attn.ln_b"])
    z = _grn(P, "out", z, None, drop).reshape(B, d)
    return ad.add(ad.matmul(z, P["head.w"]), P["head.b"])


# -- data assembly ---------------------------------------------------------------------

def season_period_for(panel_time_step: str, config: ForecasterConfig) -> float:
    if config.season_period > 0:
        return float(config.season_period)
    return 52.0 if panel_time_step == "weekly" else 365.25


def make_inputs(windows: np.ndarray, first_times: np.ndarray, period: float) -> np.ndarray:
    """Stack log-count windows (B, L) with time-of-year codes into (B, L, 3)."""
    windows = np.asarray(windows, dtype=np.float64)
    B, L = windows.shape
    t = np.asarray(first_times, dtype=np.float64)[:, None] + np.arange(L)
    phase = 2.0 * np.pi * t / period
    return np.stack([windows, np.sin(phase), np.cos(phase)], axis=-1)


@dataclass
class TrainingSet:
    """All one-step samples of a log-count matrix up to a cut-off."""

    loc_idx: np.ndarray
    code_idx: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray
    series_pos: np.ndarray
    target_times: np.ndarray


def build_samples(log_values: np.ndarray, loc_idx: np.ndarray, code_idx: np.ndarray,
                  start_index: int, lookback: int, period: float,
                  last_target: int | None = None) -> TrainingSet:
    """Samples with target offset ``t`` in ``[L, last_target]`` for every row."""
    S, T = log_values.shape
    last = T - 1 if last_target is None else last_target
    if last < lookback:
        raise ConfigurationError(f"series of length {last + 1} are shorter than lookback+1 = {lookback + 1}")
    t = np.arange(lookback, last + 1)
    s_pos = np.repeat(np.arange(S), len(t))
    t_off = np.tile(t, S)
    cols = t_off[:, None] - lookback + np.arange(lookback)
    windows = log_values[s_pos[:, None], cols]
    first_times = start_index + t_off - lookback
    return TrainingSet(loc_idx[s_pos], code_idx[s_pos], make_inputs(windows, first_times, period),
                       log_values[s_pos, t_off], s_pos, start_index + t_off)


def _as_tensors(tape: ad.Tape, params: dict) -> tuple[dict, list[str]]:
    names = sorted(params)
    return {n: tape.leaf(params[n]) for n in names}, names


def batch_loss(params: dict, config: ForecasterConfig, data: TrainingSet, idx: np.ndarray,
               training: bool = False, rng=None, tape: ad.Tape | None = None):
    """Mean pinball loss over a subset; returns (loss Tensor, param name order)."""
    taus = np.asarray(config.quantile_levels)
    if tape is None:
        P, names = params, sorted(params)
    else:
        P, names = _as_tensors(tape, params)
    out = forward(P, config, data.loc_idx[idx], data.code_idx[idx], data.inputs[idx], training, rng)
    return pinball_tensor(data.targets[idx], out, taus), names


def _eval_loss(params, config, data: TrainingSet, chunk: int = 2048) -> float:
    n = len(data.targets)
    total = 0.0
    for s in range(0, n, chunk):
        idx = np.arange(s, min(s + chunk, n))
        loss, _ = batch_loss(params, config, data, idx)
        total += float(loss.value) * len(idx)
    return total / n


def fit_log_series(log_values: np.ndarray, config: ForecasterConfig, *,
                   location_ids=None, event_codes=None, loc_idx=None, code_idx=None,
                   start_index: int = 0, period: float = 52.0,
                   last_target: int | None = None) -> ForecasterModel:
    """Train on a (series, time) matrix of log values.

    ``loc_idx``/``code_idx`` give each row's embedding rows; by default each
    row is its own location with a single shared event code.
    """
    log_values = np.asarray(log_values, dtype=np.float64)
    S = log_values.shape[0]
    loc_idx = np.arange(S) if loc_idx is None else np.asarray(loc_idx)
    code_idx = np.zeros(S, dtype=int) if code_idx is None else np.asarray(code_idx)
    location_ids = tuple(range(int(loc_idx.max()) + 1)) if location_ids is None else tuple(location_ids)
    event_codes = (0,) if event_codes is None else tuple(event_codes)

    data = build_samples(log_values, loc_idx, code_idx, start_index, config.lookback, period, last_target)
    rng = np.random.default_rng(config.seed)
    taus = np.asarray(config.quantile_levels)
    head_bias = np.quantile(data.targets, taus)
    params = init_params(config, len(location_ids), len(event_codes), rng, head_bias)

    n = len(data.targets)
    state = ad.AdamState()
    history: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            with ad.Tape() as tape:
                loss, names = batch_loss(params, config, data, idx, True, rng, tape)
                grads = ad.backward(tape, loss)
            new, state = ad.adam_step([params[k] for k in names], grads, state, config.learning_rate)
            params = dict(zip(names, new))
        history.append(_eval_loss(params, config, data))
        log.info("forecaster epoch %d loss %.5f", epoch + 1, history[-1])
    return ForecasterModel(config, params, location_ids, event_codes, period, history)


def train_forecaster(panel: EventPanel, config: ForecasterConfig,
                     train_end: int | None = None) -> ForecasterModel:
    """Fit the global forecaster on ``log(y + eps)`` for targets up to ``train_end``.

    ``train_end`` is an absolute time index (inclusive); default is the
    panel's last step.
    """
    keys = panel.series_keys()
    logs = np.log(panel.matrix(keys).astype(np.float64) + config.epsilon)
    loc_idx = np.array([panel.indices(k)[0] for k in keys])
    code_idx = np.array([panel.indices(k)[1] for k in keys])
    last = None if train_end is None else panel.offset(train_end)
    return fit_log_series(logs, config, location_ids=[l.id for l in panel.locations],
                          event_codes=panel.event_codes, loc_idx=loc_idx, code_idx=code_idx,
                          start_index=panel.start_index,
                          period=season_period_for(panel.time_step, config), last_target=last)


# -- inference ---------------------------------------------------------------------------

def predict_raw(model: ForecasterModel, loc_idx, code_idx, windows: np.ndarray,
                target_times) -> np.ndarray:
    """Head outputs (unsorted) for windows ending just before ``target_times``."""
    windows = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    L = model.lookback
    if windows.shape[1] != L:
        raise ad.ShapeError(f"window length {windows.shape[1]} != lookback {L}")
    first = np.asarray(target_times) - L
    inputs = make_inputs(windows, np.broadcast_to(first, (windows.shape[0],)), model.season_period)
    B = windows.shape[0]
    out = forward(model.params, model.config, np.broadcast_to(loc_idx, (B,)),
                  np.broadcast_to(code_idx, (B,)), inputs)
    return out.value


def predict_batch(model: ForecasterModel, loc_idx, code_idx, windows, target_times) -> np.ndarray:
    """Sorted quantiles (batch, 19); sorting removes any quantile crossing."""
    return np.sort(predict_raw(model, loc_idx, code_idx, windows, target_times), axis=-1)


def predict_quantiles(model: ForecasterModel, series: SeriesKey, history_window,
                      target_time: int) -> QuantileForecast:
    """Quantiles of ``log(y + eps)`` at ``target_time`` given the preceding ``L`` log counts."""
    window = np.asarray(history_window, dtype=np.float64)
    if window.ndim != 1 or window.shape[0] != model.lookback:
        raise ad.ShapeError(f"history window must have length {model.lookback}, got shape {window.shape}")
    li, ci = model.series_index(series)
    q = predict_batch(model, li, ci, window[None, :], [target_time])[0]
    return QuantileForecast(series, target_time - 1, 1, q)


def panel_predictions(model: ForecasterModel, panel: EventPanel, train_end: int | None = None,
                      chunk: int = 2048) -> tuple[TrainingSet, list[SeriesKey], np.ndarray]:
    """One-step quantiles for every (series, t) with a full lookback up to ``train_end``."""
    keys = panel.series_keys()
    logs = np.log(panel.matrix(keys).astype(np.float64) + model.config.epsilon)
    loc_idx = np.array([model.series_index(k)[0] for k in keys])
    code_idx = np.array([model.series_index(k)[1] for k in keys])
    last = None if train_end is None else panel.offset(train_end)
    data = build_samples(logs, loc_idx, code_idx, panel.start_index, model.lookback,
                         model.season_period, last)
    parts = []
    for s in range(0, len(data.targets), chunk):
        sl = np.s_[s:s + chunk]
        parts.append(forward(model.params, model.config, data.loc_idx[sl], data.code_idx[sl],
                             data.inputs[sl]).value)
    q = np.sort(np.concatenate(parts), axis=-1) if parts else np.zeros((0, 19))
    return data, keys, q


def training_residuals(model: ForecasterModel, panel: EventPanel, train_end: int | None = None):
    """Residuals ``log(y + eps) - median`` with their (lat, lon, t) coordinates."""
    from .vnngp import ResidualField

    data, keys, q = panel_predictions(model, panel, train_end)
    resid = data.targets - q[:, MEDIAN_INDEX]
    locs = [panel.location(keys[s].location_id) for s in data.series_pos]
    return ResidualField(
        lat=np.array([l.latitude for l in locs]),
        lon=np.array([l.longitude for l in locs]),
        time=data.target_times.astype(np.float64),
        values=resid,
        location_id=np.array([l.id for l in locs]),
        event_code=np.array([keys[s].event_code for s in data.series_pos]),
    )
