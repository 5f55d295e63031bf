"""Variational nearest-neighbour GP over a spatio-temporal residual field.

Inducing values sit at the distinct (location, time) points of the field,
ordered by time then location id. Each inducing value is conditioned on at
most ``m`` earlier points (highest kernel correlation first), which turns
the prior into a product of small Gaussian conditionals::

    p(u_j | u_N(j)) = N(B_j u_N(j), F_j),
    B_j = k_jN K_NN^{-1},  F_j = k_jj - k_jN K_NN^{-1} k_Nj.

With a mean-field Gaussian q(u) the KL term splits into one O(m^3) term per
point, and so does the Gaussian data term, so a uniformly drawn minibatch of
points rescaled by ``n / |batch|`` gives an unbiased ELBO estimate.

Covariance is separable: Matérn-3/2 in space (haversine km by default) times
Matérn-5/2 in time, plus a nugget on coincident points.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088
SQRT3 = np.sqrt(3.0)
SQRT5 = np.sqrt(5.0)
JITTERS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
METRICS = ("haversine", "euclidean")


class VnngpNumericalError(ArithmeticError):
    pass


class VnngpTrainingError(RuntimeError):
    pass


class VnngpStateError(RuntimeError):
    pass


@dataclass
class KernelParams:
    signal_variance: float = 1.0
    spatial_lengthscale: float = 200.0
    temporal_lengthscale: float = 6.0
    nugget: float = 1e-4

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"{k} must be strictly positive, got {v}")


@dataclass
class ResidualField:
    """Residual values at (lat, lon, time) points.

    ``location_id`` defaults to an id per distinct coordinate pair.
    ``event_code`` is bookkeeping only; the field is indexed by place and time.
    """

    lat: np.ndarray
    lon: np.ndarray
    time: np.ndarray
    values: np.ndarray
    location_id: np.ndarray | None = None
    event_code: np.ndarray | None = None

    def __post_init__(self):
        self.lat = np.asarray(self.lat, dtype=np.float64).reshape(-1)
        self.lon = np.asarray(self.lon, dtype=np.float64).reshape(-1)
        self.time = np.asarray(self.time, dtype=np.float64).reshape(-1)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        n = len(self.values)
        if not len(self.lat) == len(self.lon) == len(self.time) == n:
            raise ValueError("points and values differ in length")
        if self.location_id is None:
            _, inv = np.unique(np.stack([self.lat, self.lon], axis=1), axis=0, return_inverse=True)
            self.location_id = inv.reshape(-1)
        self.location_id = np.asarray(self.location_id).reshape(-1)

    def __len__(self):
        return len(self.values)

    @property
    def ordering(self) -> np.ndarray:
        """Permutation sorting points by (time, location id)."""
        return np.lexsort((self.location_id, self.time))

    def subset(self, mask) -> "ResidualField":
        ec = None if self.event_code is None else self.event_code[mask]
        return ResidualField(self.lat[mask], self.lon[mask], self.time[mask], self.values[mask],
                             self.location_id[mask], ec)

    @staticmethod
    def concat(fields) -> "ResidualField":
        fields = list(fields)
        codes = None if any(f.event_code is None for f in fields) else np.concatenate([f.event_code for f in fields])
        return ResidualField(*(np.concatenate([getattr(f, a) for f in fields])
                               for a in ("lat", "lon", "time", "values", "location_id")), codes)


# -- kernels -------------------------------------------------------------------------

def matern32(d, lengthscale):
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    if lengthscale <= 0:
        raise ValueError("lengthscale must be positive")
    r = SQRT3 * d / lengthscale
    return (1.0 + r) * np.exp(-r)


def matern52(d, lengthscale):
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    if lengthscale <= 0:
        raise ValueError("lengthscale must be positive")
    r = SQRT5 * d / lengthscale
    return (1.0 + r + r * r / 3.0) * np.exp(-r)


def haversine(lat1, lon1, lat2, lon2):
    """Great-circle distance in km."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def spatial_distance(lat1, lon1, lat2, lon2, metric: str = "haversine"):
    if metric == "haversine":
        return haversine(lat1, lon1, lat2, lon2)
    if metric == "euclidean":
        return np.hypot(np.asarray(lat2) - lat1, np.asarray(lon2) - lon1)
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def st_kernel(p1, p2, params: KernelParams, metric: str = "haversine") -> float:
    """Covariance between two (lat, lon, t) points."""
    d_sp = spatial_distance(p1[0], p1[1], p2[0], p2[1], metric)
    k = (params.signal_variance * matern32(d_sp, params.spatial_lengthscale)
         * matern52(abs(p1[2] - p2[2]), params.temporal_lengthscale))
    same = p1[0] == p2[0] and p1[1] == p2[1] and p1[2] == p2[2]
    return float(k + (params.nugget if same else 0.0))


def kernel_matrix(x1: np.ndarray, x2: np.ndarray, params: KernelParams,
                  metric: str = "haversine") -> np.ndarray:
    """Dense cross-covariance for point arrays of shape (n, 3)."""
    x1, x2 = np.atleast_2d(x1), np.atleast_2d(x2)
    d_sp = spatial_distance(x1[:, None, 0], x1[:, None, 1], x2[None, :, 0], x2[None, :, 1], metric)
    d_t = np.abs(x1[:, None, 2] - x2[None, :, 2])
    k = params.signal_variance * matern32(d_sp, params.spatial_lengthscale) \
        * matern52(d_t, params.temporal_lengthscale)
    same = np.all(x1[:, None, :] == x2[None, :, :], axis=-1)
    return k + params.nugget * same


def correlation(x1, x2, params: KernelParams, metric: str) -> np.ndarray:
    x1, x2 = np.atleast_2d(x1), np.atleast_2d(x2)
    d_sp = spatial_distance(x1[:, None, 0], x1[:, None, 1], x2[None, :, 0], x2[None, :, 1], metric)
    d_t = np.abs(x1[:, None, 2] - x2[None, :, 2])
    return matern32(d_sp, params.spatial_lengthscale) * matern52(d_t, params.temporal_lengthscale)


def _top_m(corr: np.ndarray, m: int) -> np.ndarray:
    """Indices of the ``m`` largest entries, ties to the lower index, ascending."""
    n = corr.shape[0]
    if m >= n:
        return np.arange(n)
    kth = np.partition(corr, n - m)[n - m]
    above = np.flatnonzero(corr > kth)
    ties = np.flatnonzero(corr == kth)[: m - len(above)]
    return np.sort(np.concatenate([above, ties]))


# -- neighbour graph -----------------------------------------------------------------

@dataclass
class NeighborGraph:
    """Ordered inducing points and their predecessor neighbour sets.

    ``neighbors[j]`` holds up to ``m`` indices ``< j`` (padded with -1).
    ``obs_index`` maps each field observation to its inducing point.
    """

    coords: np.ndarray
    location_id: np.ndarray
    neighbors: np.ndarray
    obs_index: np.ndarray

    @property
    def n(self) -> int:
        return len(self.coords)

    def sets(self) -> list[list[int]]:
        return [[int(i) for i in row if i >= 0] for row in self.neighbors]


def inducing_points(field: ResidualField) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct (time, location) points in order, their ids, and obs -> point map."""
    keys = np.stack([field.time, field.location_id.astype(np.float64)], axis=1)
    uniq, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    # np.unique sorts rows lexicographically: time first, then location id
    coords = np.stack([field.lat[first], field.lon[first], field.time[first]], axis=1)
    return coords, field.location_id[first], inv.reshape(-1)


def build_neighbor_graph(field: ResidualField, m: int, params: KernelParams | None = None,
                         metric: str = "haversine") -> NeighborGraph:
    """Condition each ordered point on its ``m`` most correlated predecessors."""
    if m < 1:
        raise ValueError("m must be at least 1")
    params = params or KernelParams()
    coords, loc_id, obs_index = inducing_points(field)
    n = len(coords)
    width = min(m, max(n - 1, 1))
    nb = np.full((n, width), -1, dtype=np.int64)
    for j in range(1, n):
        if j <= width:
            nb[j, :j] = np.arange(j)
            continue
        corr = correlation(coords[j], coords[:j], params, metric)[0]
        nb[j] = _top_m(corr, width)
    return NeighborGraph(coords, loc_id, nb, obs_index)


# -- model ----------------------------------------------------------------------------

@dataclass
class VnngpModel:
    kernel: KernelParams
    noise_variance: float
    graph: NeighborGraph
    m: int
    metric: str = "haversine"
    mean: np.ndarray | None = None
    var: np.ndarray | None = None
    elbo_trace: list = field(default_factory=list)

    @property
    def fitted(self) -> bool:
        return self.mean is not None and self.var is not None

    def shrinkage(self) -> float:
        return shrinkage_factor(self.kernel.signal_variance, self.noise_variance)

    def to_arrays(self, prefix: str = "vnngp") -> tuple[dict, dict]:
        g = self.graph
        arrays = {f"{prefix}/coords": g.coords, f"{prefix}/location_id": g.location_id,
                  f"{prefix}/neighbors": g.neighbors, f"{prefix}/obs_index": g.obs_index,
                  f"{prefix}/mean": self.mean, f"{prefix}/var": self.var}
        meta = {"kernel": asdict(self.kernel), "noise_variance": self.noise_variance,
                "m": self.m, "metric": self.metric, "elbo_trace": list(self.elbo_trace)}
        return arrays, meta

    @classmethod
    def from_arrays(cls, arrays: dict, meta: dict) -> "VnngpModel":
        g = NeighborGraph(arrays["coords"], arrays["location_id"], arrays["neighbors"],
                          arrays["obs_index"])
        return cls(KernelParams(**meta["kernel"]), float(meta["noise_variance"]), g,
                   int(meta["m"]), meta["metric"], arrays["mean"], arrays["var"],
                   list(meta["elbo_trace"]))


def shrinkage_factor(signal_variance: float, noise_variance: float) -> float:
    """GP posterior-mean contraction ``s / (s + noise)``."""
    if signal_variance <= 0 or noise_variance <= 0:
        raise ValueError("variances must be strictly positive")
    return signal_variance / (signal_variance + noise_variance)


@dataclass
class _Geometry:
    """Distances among each point's neighbours, precomputed once."""

    d_sp_nn: np.ndarray
    d_t_nn: np.ndarray
    d_sp_jn: np.ndarray
    d_t_jn: np.ndarray
    mask: np.ndarray
    nb_safe: np.ndarray


def _geometry(graph: NeighborGraph, metric: str) -> _Geometry:
    c, nb = graph.coords, graph.neighbors
    mask = nb >= 0
    safe = np.where(mask, nb, 0)
    cn = c[safe]  # (n, m, 3)
    d_sp_nn = spatial_distance(cn[:, :, None, 0], cn[:, :, None, 1], cn[:, None, :, 0], cn[:, None, :, 1], metric)
    d_t_nn = np.abs(cn[:, :, None, 2] - cn[:, None, :, 2])
    d_sp_jn = spatial_distance(c[:, None, 0], c[:, None, 1], cn[:, :, 0], cn[:, :, 1], metric)
    d_t_jn = np.abs(c[:, None, 2] - cn[:, :, 2])
    return _Geometry(d_sp_nn, d_t_nn, d_sp_jn, d_t_jn, mask, safe)


@dataclass
class _Stats:
    count: np.ndarray
    total: np.ndarray
    sumsq: np.ndarray


def _field_stats(graph: NeighborGraph, values: np.ndarray, obs_index: np.ndarray) -> _Stats:
    n = graph.n
    return _Stats(np.bincount(obs_index, minlength=n).astype(np.float64),
                  np.bincount(obs_index, weights=values, minlength=n),
                  np.bincount(obs_index, weights=values * values, minlength=n))


def _t_matern32(d, inv_ls):
    r = ad.mul(SQRT3 * d, inv_ls)
    return ad.mul(ad.add(1.0, r), ad.exp(ad.neg(r)))


def _t_matern52(d, inv_ls):
    r = ad.mul(SQRT5 * d, inv_ls)
    return ad.mul(ad.add(ad.add(1.0, r), ad.mul(ad.mul(r, r), 1.0 / 3.0)), ad.exp(ad.neg(r)))


def _with_jitter(K: ad.Tensor) -> ad.Tensor:
    eye = np.eye(K.shape[-1])
    for jit in JITTERS:
        try:
            np.linalg.cholesky(K.value + jit * eye)
        except np.linalg.LinAlgError:
            continue
        return K if jit == 0.0 else ad.add(K, jit * eye)
    raise VnngpNumericalError("neighbour covariance is not positive definite even with jitter 1e-4")


def _elbo_terms(theta: dict, mean, logvar, geo: _Geometry, stats: _Stats, idx: np.ndarray):
    """Per-point (data term, KL term) for inducing points ``idx``.

    ``theta`` holds log signal variance, log lengthscales, log nugget and log
    noise variance as Tensors or floats.
    """
    sk = ad.exp(theta["log_signal"])
    nug = ad.exp(theta["log_nugget"])
    inv_sp = ad.exp(ad.neg(theta["log_ls_space"]))
    inv_tm = ad.exp(ad.neg(theta["log_ls_time"]))
    noise = ad.exp(theta["log_noise"])

    mask = geo.mask[idx].astype(np.float64)  # (b, m)
    m = mask.shape[1]
    eye = np.eye(m)
    outer = mask[:, :, None] * mask[:, None, :]
    corr_nn = ad.mul(_t_matern32(geo.d_sp_nn[idx], inv_sp), _t_matern52(geo.d_t_nn[idx], inv_tm))
    K_nn = ad.add(ad.mul(ad.mul(corr_nn, sk), outer * (1.0 - eye)),
                  ad.add(ad.mul(ad.add(sk, nug), mask[:, :, None] * eye), (1.0 - mask)[:, :, None] * eye))
    k_jn = ad.mul(ad.mul(_t_matern32(geo.d_sp_jn[idx], inv_sp), _t_matern52(geo.d_t_jn[idx], inv_tm)),
                  ad.mul(sk, mask))
    K_nn = _with_jitter(K_nn)
    B = ad.reshape(ad.solve(K_nn, ad.reshape(k_jn, (len(idx), m, 1))), (len(idx), m))
    F = ad.sub(ad.add(sk, nug), ad.sum(ad.mul(k_jn, B), axis=1))

    var = ad.exp(logvar)
    m_j = ad.slice(mean, idx)
    v_j = ad.slice(var, idx)
    m_n = ad.slice(mean, geo.nb_safe[idx])
    v_n = ad.slice(var, geo.nb_safe[idx])
    resid = ad.sub(m_j, ad.sum(ad.mul(B, m_n), axis=1))
    quad = ad.add(ad.add(ad.mul(resid, resid), v_j), ad.sum(ad.mul(ad.mul(B, B), v_n), axis=1))
    kl = ad.mul(0.5, ad.add(ad.sub(ad.sub(ad.log(F), ad.slice(logvar, idx)), 1.0), ad.div(quad, F)))

    c, s1, s2 = stats.count[idx], stats.total[idx], stats.sumsq[idx]
    sq = ad.add(ad.sub(s2, ad.mul(2.0 * s1, m_j)), ad.mul(c, ad.add(ad.mul(m_j, m_j), v_j)))
    data = ad.sub(ad.mul(-0.5 * c, ad.log(ad.mul(2 * np.pi, noise))), ad.div(sq, ad.mul(2.0, noise)))
    return data, kl


def _theta(kernel: KernelParams, noise: float) -> dict:
    return {"log_signal": np.log(kernel.signal_variance),
            "log_ls_space": np.log(kernel.spatial_lengthscale),
            "log_ls_time": np.log(kernel.temporal_lengthscale),
            "log_nugget": np.log(kernel.nugget),
            "log_noise": np.log(noise)}


def _elbo_value(model: VnngpModel, geo: _Geometry, stats: _Stats, idx: np.ndarray) -> float:
    data, kl = _elbo_terms(_theta(model.kernel, model.noise_variance), model.mean,
                           np.log(model.var), geo, stats, idx)
    return float(model.graph.n / len(idx) * np.sum(data.value - kl.value))


def _resolve_batch(n: int, batch, seed) -> np.ndarray:
    if batch is None:
        return np.arange(n)
    if np.isscalar(batch):
        size = int(batch)
        if not 1 <= size <= n:
            raise ValueError(f"batch size must lie in [1, {n}]")
        return np.sort(np.random.default_rng(seed).choice(n, size=size, replace=False))
    idx = np.asarray(batch, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("batch must be non-empty")
    return idx


def _field_obs_index(graph: NeighborGraph, field: ResidualField) -> np.ndarray:
    lookup = {(t, int(l)): j for j, (t, l) in enumerate(zip(graph.coords[:, 2], graph.location_id))}
    try:
        return np.array([lookup[(t, int(l))] for t, l in zip(field.time, field.location_id)], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"field point {exc.args[0]} is not an inducing point of the model") from None


def elbo_minibatch(model: VnngpModel, field: ResidualField, batch=None, seed=None) -> float:
    """Unbiased ELBO estimate from a subset of inducing points.

    ``batch`` is ``None`` (all points, the exact ELBO), an integer size drawn
    uniformly without replacement using ``seed``, or explicit indices.
    """
    if not model.fitted:
        raise VnngpStateError("model has no variational parameters")
    graph = model.graph
    stats = _field_stats(graph, field.values, _field_obs_index(graph, field))
    idx = _resolve_batch(graph.n, batch, seed)
    return _elbo_value(model, _geometry(graph, model.metric), stats, idx)


def fit_vnngp(field: ResidualField, m: int = 10, init: KernelParams | None = None, steps: int = 500,
              lr: float = 0.05, seed: int = 0, *, noise_variance: float = 0.1,
              batch_size: int | None = None, learn_kernel: bool = True, learn_noise: bool = True,
              metric: str = "haversine", eval_every: int = 50, final_lr_fraction: float = 0.1,
              graph: NeighborGraph | None = None) -> VnngpModel:
    """Maximise the ELBO by Adam on means, log variances and (optionally) log hyperparameters.

    The learning rate decays geometrically to ``final_lr_fraction * lr``. The
    full-data ELBO is recorded every ``eval_every`` steps in ``elbo_trace``.
    """
    if len(field) == 0:
        raise ValueError("residual field is empty")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    init = init or KernelParams()
    graph = graph or build_neighbor_graph(field, m, init, metric)
    geo = _geometry(graph, metric)
    stats = _field_stats(graph, field.values, graph.obs_index)
    n = graph.n
    rng = np.random.default_rng(seed)

    # independent-point posterior as a starting value
    k0 = init.signal_variance + init.nugget
    var0 = 1.0 / (1.0 / k0 + stats.count / noise_variance)
    mean0 = var0 * stats.total / noise_variance
    theta = _theta(init, noise_variance)
    names = ["mean", "logvar"]
    if learn_kernel:
        names += ["log_signal", "log_ls_space", "log_ls_time", "log_nugget"]
    if learn_noise:
        names.append("log_noise")
    values = {"mean": mean0, "logvar": np.log(var0), **{k: np.array(v) for k, v in theta.items()}}

    def snapshot() -> VnngpModel:
        kern = KernelParams(float(np.exp(values["log_signal"])), float(np.exp(values["log_ls_space"])),
                            float(np.exp(values["log_ls_time"])), float(np.exp(values["log_nugget"])))
        return VnngpModel(kern, float(np.exp(values["log_noise"])), graph, m, metric,
                          values["mean"].copy(), np.exp(values["logvar"]))

    full = np.arange(n)
    trace = [_elbo_value(snapshot(), geo, stats, full)]
    state = ad.AdamState()
    decay = final_lr_fraction ** (1.0 / max(steps - 1, 1))
    for step in range(steps):
        idx = full if batch_size is None or batch_size >= n else \
            np.sort(rng.choice(n, size=batch_size, replace=False))
        with ad.Tape() as tape:
            leaves = {k: tape.leaf(values[k]) for k in names}
            th = {k: leaves.get(k, values[k]) for k in theta}
            data, kl = _elbo_terms(th, leaves["mean"], leaves["logvar"], geo, stats, idx)
            obj = ad.mul(-n / len(idx), ad.sum(ad.sub(data, kl)))
            if not np.isfinite(obj.value):
                raise VnngpTrainingError(f"ELBO became non-finite at step {step}")
            grads = ad.backward(tape, obj)
        new, state = ad.adam_step([values[k] for k in names], grads, state, lr * decay ** step)
        values.update(zip(names, new))
        if (step + 1) % eval_every == 0 or step + 1 == steps:
            val = _elbo_value(snapshot(), geo, stats, full)
            if not np.isfinite(val):
                raise VnngpTrainingError(f"ELBO became non-finite at step {step}")
            trace.append(val)
            log.debug("vnngp step %d elbo %.4f", step + 1, val)
    model = snapshot()
    model.elbo_trace = trace
    return model


# -- prediction -------------------------------------------------------------------------

def _solve_spd(K: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    eye = np.eye(K.shape[-1])
    for jit in JITTERS:
        try:
            np.linalg.cholesky(K + jit * eye)
        except np.linalg.LinAlgError:
            continue
        return np.linalg.solve(K + jit * eye, rhs)
    raise VnngpNumericalError("neighbour covariance is not positive definite even with jitter 1e-4")


def query_neighbors(model: VnngpModel, points: np.ndarray) -> np.ndarray:
    """The ``m`` most correlated inducing points for each query, shape (q, m')."""
    g = model.graph
    width = min(model.m, g.n)
    out = np.empty((len(points), width), dtype=np.int64)
    for s in range(0, len(points), 256):
        corr = correlation(points[s:s + 256], g.coords, model.kernel, model.metric)
        for r, row in enumerate(corr):
            out[s + r] = _top_m(row, width)
    return out


def predict_residuals(model: VnngpModel, points) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and variance of the residual at (q, 3) query points."""
    if not model.fitted:
        raise VnngpStateError("predict called on an unfitted model")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    g, kern = model.graph, model.kernel
    nb = query_neighbors(model, points)
    cn = g.coords[nb]  # (q, m, 3)
    K_nn = np.stack([kernel_matrix(c, c, kern, model.metric) for c in cn])
    k_star = np.stack([kernel_matrix(p[None], c, kern, model.metric)[0] for p, c in zip(points, cn)])
    A = _solve_spd(K_nn, k_star[..., None])[..., 0]
    mean = np.sum(A * model.mean[nb], axis=1)
    k_ss = kern.signal_variance + kern.nugget
    var = k_ss - np.sum(A * k_star, axis=1) + np.sum(A * A * model.var[nb], axis=1)
    return mean, np.maximum(var, 0.0)


def predict_residual(model: VnngpModel, point) -> tuple[float, float]:
    """Predictive (mean, variance) at one (lat, lon, t) point."""
    mean, var = predict_residuals(model, np.asarray(point, dtype=np.float64)[None, :])
    return float(mean[0]), float(var[0])


def kernel_summary(model: VnngpModel) -> str:
    k = model.kernel
    lines = [
        f"signal_variance = {k.signal_variance:.6g}",
        f"spatial_lengthscale = {k.spatial_lengthscale:.6g}",
        f"temporal_lengthscale = {k.temporal_lengthscale:.6g}",
        f"nugget = {k.nugget:.6g}",
        f"noise_variance = {model.noise_variance:.6g}",
        f"neighbors = {model.m}",
        f"metric = {model.metric}",
        f"inducing_points = {model.graph.n}",
        f"shrinkage_factor = {model.shrinkage():.6g}",
    ]
    return "\n".join(lines) + "\n"


def with_kernel(model: VnngpModel, kernel: KernelParams) -> VnngpModel:
    return replace(model, kernel=kernel)
