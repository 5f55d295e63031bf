"""Zero-inflated negative binomial likelihood and a small network head that
maps forecaster quantiles to conditional (mu, alpha, pi).

The negative binomial uses the mean/dispersion form: ``r = 1/alpha`` and
``p = 1/(1 + alpha*mu)``, giving mean ``mu`` and variance ``mu + alpha*mu^2``.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln

from . import autodiff as ad
from .forecaster import ConfigurationError

log = logging.getLogger(__name__)

PI_FLOOR = 1e-6


class ZinbDomainError(ValueError):
    pass


@dataclass(frozen=True)
class ZinbParams:
    mu: float
    alpha: float
    pi: float

    def __post_init__(self):
        _check(self.mu, self.alpha, self.pi)

    @property
    def mean(self) -> float:
        return zinb_point_forecast(self)

    @property
    def variance(self) -> float:
        return zinb_variance(self)


def _check(mu, alpha, pi=0.0):
    mu, alpha, pi = (np.asarray(v, dtype=np.float64) for v in (mu, alpha, pi))
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(alpha)) and np.all(np.isfinite(pi))):
        raise ZinbDomainError("parameters must be finite")
    if np.any(mu <= 0) or np.any(alpha <= 0):
        raise ZinbDomainError("mu and alpha must be strictly positive")
    if np.any(pi < 0) or np.any(pi >= 1):
        raise ZinbDomainError("pi must lie in [0, 1)")


def _check_counts(k):
    k = np.asarray(k)
    if np.any(k < 0) or np.any(np.floor(k) != k):
        raise ZinbDomainError("counts must be non-negative integers")
    return k.astype(np.float64)


def nb_logpmf(k, mu, alpha):
    _check(mu, alpha)
    k = _check_counts(k)
    mu, alpha = np.asarray(mu, np.float64), np.asarray(alpha, np.float64)
    r = 1.0 / alpha
    log1p_am = np.log1p(alpha * mu)
    return (gammaln(k + r) - gammaln(r) - gammaln(k + 1.0) - r * log1p_am
            + k * (np.log(alpha * mu) - log1p_am))


def nb_pmf(k, mu, alpha):
    return np.exp(nb_logpmf(k, mu, alpha))


def zinb_logpmf(k, mu, alpha, pi):
    _check(mu, alpha, pi)
    k = _check_counts(k)
    nb = nb_logpmf(k, mu, alpha)
    pi = np.asarray(pi, np.float64)
    with np.errstate(divide="ignore"):
        zero = np.logaddexp(np.log(pi), np.log1p(-pi) + nb)
    return np.where(k == 0, zero, np.log1p(-pi) + nb)


def zinb_pmf(k, params: ZinbParams):
    return np.exp(zinb_logpmf(k, params.mu, params.alpha, params.pi))


def zinb_nll(counts, mu, alpha=None, pi=None) -> float:
    """Summed negative log-likelihood.

    Accepts either three parameter arrays or a sequence of :class:`ZinbParams`.
    """
    if alpha is None and pi is None:
        plist = list(mu)
        mu = np.array([p.mu for p in plist])
        alpha = np.array([p.alpha for p in plist])
        pi = np.array([p.pi for p in plist])
    counts = np.asarray(counts)
    if counts.shape != np.shape(mu):
        raise ZinbDomainError(f"counts shape {counts.shape} != parameter shape {np.shape(mu)}")
    return float(-np.sum(zinb_logpmf(counts, mu, alpha, pi)))


def zinb_point_forecast(params: ZinbParams) -> float:
    return (1.0 - params.pi) * params.mu


def zinb_variance(params: ZinbParams) -> float:
    mu, a, pi = params.mu, params.alpha, params.pi
    return (1.0 - pi) * mu * (1.0 + a * mu + pi * mu)


def zinb_nll_tensor(counts: np.ndarray, mu, alpha, pi):
    """Mean NLL as a tape scalar; ``pi`` is clamped away from 0 and 1."""
    k = np.asarray(counts, dtype=np.float64)
    pi = ad.clip(pi, PI_FLOOR, 1.0 - PI_FLOOR)
    r = ad.div(1.0, alpha)
    am = ad.mul(alpha, mu)
    log1p_am = ad.log(ad.add(1.0, am))
    nb = ad.add(ad.sub(ad.sub(ad.lgamma(ad.add(r, k)), ad.lgamma(r)), gammaln(k + 1.0)),
                ad.sub(ad.mul(k, ad.sub(ad.log(am), log1p_am)), ad.mul(r, log1p_am)))
    log_keep = ad.log(ad.sub(1.0, pi))
    zero = ad.logaddexp(ad.log(pi), ad.add(log_keep, nb))
    pos = ad.add(log_keep, nb)
    is_zero = (k == 0).astype(np.float64)
    ll = ad.add(ad.mul(is_zero, zero), ad.mul(1.0 - is_zero, pos))
    return ad.neg(ad.mean(ll))


# -- head ------------------------------------------------------------------------

@dataclass
class ZinbHeadConfig:
    zinb_hidden_width: int = 64
    zinb_learning_rate: float = 1e-2
    zinb_epochs: int = 300
    zinb_batch_size: int = 0  # 0 -> full batch
    zinb_seed: int = 0

    def __post_init__(self):
        if self.zinb_hidden_width < 1 or self.zinb_epochs < 0 or self.zinb_batch_size < 0:
            raise ConfigurationError("invalid ZINB head configuration")
        if self.zinb_learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")


@dataclass
class ZinbHeadModel:
    config: ZinbHeadConfig
    params: dict[str, np.ndarray]
    loss_history: list[float] = field(default_factory=list)

    def to_arrays(self, prefix: str = "zinb") -> tuple[dict, dict]:
        return ({f"{prefix}/{k}": v for k, v in self.params.items()},
                {"config": asdict(self.config), "loss_history": self.loss_history})

    @classmethod
    def from_arrays(cls, params: dict, meta: dict) -> "ZinbHeadModel":
        return cls(ZinbHeadConfig(**meta["config"]), dict(params), list(meta["loss_history"]))


def _inv_softplus(y: float) -> float:
    return float(y + np.log(-np.expm1(-y)))


def init_head(config: ZinbHeadConfig, n_in: int, rng: np.random.Generator,
              mu0: float = 1.0, alpha0: float = 1.0, pi0: float = 0.5) -> dict:
    d = config.zinb_hidden_width
    p = {"w1": rng.normal(0, 1 / np.sqrt(n_in), (n_in, d)), "b1": np.zeros(d),
         "w2": rng.normal(0, 1 / np.sqrt(d), (d, d)), "b2": np.zeros(d)}
    for name, bias in (("mu", _inv_softplus(mu0)), ("alpha", _inv_softplus(alpha0)),
                       ("pi", float(np.log(pi0 / (1 - pi0))))):
        p[f"{name}_w"] = rng.normal(0, 0.01, (d,))
        p[f"{name}_b"] = np.array(bias)
    return p


def head_forward(P: dict, x):
    """(mu, alpha, pi) Tensors for feature rows ``x`` of shape (n, 19)."""
    h = ad.tanh(ad.add(ad.matmul(x, P["w1"]), P["b1"]))
    h = ad.tanh(ad.add(ad.matmul(h, P["w2"]), P["b2"]))

    def head(name):
        return ad.add(ad.sum(ad.mul(h, P[f"{name}_w"]), axis=-1), P[f"{name}_b"])

    return ad.softplus(head("mu")), ad.softplus(head("alpha")), ad.sigmoid(head("pi"))


def _check_features(x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if not np.all(np.isfinite(x)):
        raise ZinbDomainError("quantile features must be finite")
    return x


def zinb_predict_batch(head: ZinbHeadModel, quantiles) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = _check_features(quantiles)
    mu, alpha, pi = head_forward(head.params, x)
    # keep outputs inside the open domains even where the activations saturate
    tiny = np.finfo(np.float64).tiny
    return (np.maximum(mu.value, tiny), np.maximum(alpha.value, tiny),
            np.clip(pi.value, PI_FLOOR, 1.0 - PI_FLOOR))


def zinb_predict(head: ZinbHeadModel, quantiles) -> ZinbParams:
    q = np.asarray(quantiles, dtype=np.float64)
    if q.ndim != 1:
        raise ZinbDomainError("expected a single quantile vector")
    mu, alpha, pi = zinb_predict_batch(head, q[None, :])
    return ZinbParams(float(mu[0]), float(alpha[0]), float(pi[0]))


def train_zinb_head(features, counts, config: ZinbHeadConfig | None = None) -> ZinbHeadModel:
    """Fit the head by Adam on the mean ZINB negative log-likelihood.

    ``loss_history`` holds the full-data mean NLL after each epoch.
    """
    config = config or ZinbHeadConfig()
    x = _check_features(features) if np.size(features) else np.zeros((0, 1))
    y = np.asarray(counts, dtype=np.float64).reshape(-1)
    if len(y) == 0:
        raise ConfigurationError("no sparse-pathway training samples")
    if x.shape[0] != len(y):
        raise ZinbDomainError("features and counts differ in length")
    _check_counts(y)
    rng = np.random.default_rng(config.zinb_seed)
    zero_frac = float(np.mean(y == 0))
    pos = y[y > 0]
    mu0 = float(pos.mean()) if len(pos) else 0.1
    params = init_head(config, x.shape[1], rng, mu0=mu0, pi0=float(np.clip(zero_frac, 0.05, 0.95)))
    n = len(y)
    bs = config.zinb_batch_size
    bs = n if bs in (0, None) or bs >= n else bs
    state = ad.AdamState()
    history = []
    for _ in range(config.zinb_epochs):
        order = np.arange(n) if bs == n else rng.permutation(n)
        for s in range(0, n, bs):
            idx = order[s:s + bs]
            with ad.Tape() as tape:
                names = sorted(params)
                P = {k: tape.leaf(params[k]) for k in names}
                loss = zinb_nll_tensor(y[idx], *head_forward(P, x[idx]))
                grads = ad.backward(tape, loss)
            new, state = ad.adam_step([params[k] for k in names], grads, state, config.zinb_learning_rate)
            params = dict(zip(names, new))
        history.append(float(zinb_nll_tensor(y, *head_forward(params, x)).value))
    log.info("zinb head final nll %.5f", history[-1] if history else float("nan"))
    return ZinbHeadModel(config, params, history)
