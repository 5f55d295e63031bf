"""Seeded generators for the three controlled simulation designs.

Every series draws ``y_t ~ Poisson(base_t * 1[u_t > u_threshold] + spike_t)``
with ``u_t ~ U(0, 1)``, so the thinned base contributes a marginal mean of
``(1 - u_threshold) * base_t``.

* case 1 ("spike"): constant base, one spike at ``spike_time``;
* case 2 ("recurrent"): constant base, spikes at every multiple of ``spike_period``;
* case 3 ("drifting"): base ``lambda_base + 2 sin(2 pi t / 400)``, spikes as in case 2.

Series sit on a unit-spaced grid of synthetic coordinates; the simulations
have no spatial structure and the grid only exercises the spatial code path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .panel import EventPanel, Location

CASES = {1: "spike", 2: "recurrent", 3: "drifting"}
CASE_LENGTH = {"spike": 201, "recurrent": 400, "drifting": 801}
PROTOCOL = {"spike": (160, (161, 200)), "recurrent": (349, (350, 399)), "drifting": (750, (751, 800))}
SIM_EVENT_CODE = 1


def case_name(case) -> str:
    if isinstance(case, str) and case.isdigit():
        case = int(case)
    if case in CASES:
        return CASES[case]
    if case in CASES.values():
        return case
    raise ValueError(f"unknown simulation case {case!r}")


@dataclass
class SimConfig:
    case: str = "spike"
    n_series: int = 20
    length: int = 0  # 0 -> default length of the case
    lambda_base: float = 3.0
    lambda_spike: float = 25.0
    sparsity_u_threshold: float = 0.8
    spike_time: int = 150
    spike_period: int = 50
    sim_seed: int = 0

    def __post_init__(self):
        self.case = case_name(self.case)
        if self.length == 0:
            self.length = CASE_LENGTH[self.case]
        if self.n_series < 1 or self.length < 1:
            raise ValueError("n_series and length must be positive")
        if self.lambda_base < 0 or self.lambda_spike < 0:
            raise ValueError("intensities must be non-negative")
        if not 0.0 <= self.sparsity_u_threshold <= 1.0:
            raise ValueError("sparsity_u_threshold must lie in [0, 1]")


def intensity(case, t, config: SimConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(base before thinning, spike term) at time(s) ``t``."""
    name = case_name(case)
    config = config or SimConfig(case=name)
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= config.length):
        raise ValueError(f"t must lie in [0, {config.length})")
    if name == "drifting":
        base = config.lambda_base + 2.0 * np.sin(2.0 * np.pi * t / 400.0)
    else:
        base = np.full(t.shape, float(config.lambda_base))
    if name == "spike":
        spike = np.where(t == config.spike_time, config.lambda_spike, 0.0)
    else:
        spike = np.where(t % config.spike_period == 0, config.lambda_spike, 0.0)
    return base, spike


def poisson_inversion(lam: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Poisson draws by sequential inversion of the cdf at uniforms ``u``."""
    lam = np.asarray(lam, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    k = np.zeros(lam.shape, dtype=np.int64)
    p = np.exp(-lam)
    cdf = p.copy()
    active = u > cdf
    step = 0
    while active.any():
        step += 1
        p = np.where(active, p * lam / step, p)
        k = np.where(active, step, k)
        cdf = np.where(active, cdf + p, cdf)
        # float round-off can stall the cdf just below 1
        active &= (u > cdf) & (p > 0)
    return k


def grid_locations(n: int) -> list[Location]:
    cols = int(np.ceil(np.sqrt(n)))
    return [Location(i, float(i // cols), float(i % cols), f"grid-{i}") for i in range(n)]


@dataclass
class SimTruth:
    """Per-(series, t) intensity components behind a generated panel."""

    base: np.ndarray
    active: np.ndarray
    spike: np.ndarray

    @property
    def intensity(self) -> np.ndarray:
        return self.base * self.active + self.spike


def generate_with_truth(config: SimConfig) -> tuple[EventPanel, SimTruth]:
    t = np.arange(config.length)
    base, spike = intensity(config.case, t, config)
    children = np.random.SeedSequence(config.sim_seed).spawn(config.n_series)
    counts = np.empty((config.n_series, 1, config.length), dtype=np.int64)
    active = np.empty((config.n_series, config.length), dtype=bool)
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        thin = rng.random(config.length)
        draw = rng.random(config.length)
        active[i] = thin > config.sparsity_u_threshold
        counts[i, 0] = poisson_inversion(base * active[i] + spike, draw)
    panel = EventPanel(grid_locations(config.n_series), [SIM_EVENT_CODE], counts, time_step="weekly")
    n = config.n_series
    return panel, SimTruth(np.tile(base, (n, 1)), active, np.tile(spike, (n, 1)))


def generate(config: SimConfig) -> EventPanel:
    return generate_with_truth(config)[0]


def case_protocol(case) -> tuple[int, tuple[int, int]]:
    """(last training index, inclusive evaluation range)."""
    return PROTOCOL[case_name(case)]


def write_truth(truth: SimTruth, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["location_id", "time_index", "base", "active", "spike", "intensity"])
        lam = truth.intensity
        for i in range(truth.base.shape[0]):
            for t in range(truth.base.shape[1]):
                w.writerow([i, t, repr(float(truth.base[i, t])), int(truth.active[i, t]),
                            repr(float(truth.spike[i, t])), repr(float(lam[i, t]))])
