"""Regenerate the bundled fixture panel (2 locations x 2 codes x 120 weeks).

Two dense series carry recurring multi-week bursts; two are sparse, with a
few isolated events early on and silence afterwards.
"""
from pathlib import Path

import numpy as np

from hybridcast.panel import EventPanel, Location, save_panel

OUT = Path(__file__).resolve().parents[1] / "src" / "hybridcast" / "data" / "fixture_panel.csv"
WEEKS = 120
BURST_SHAPE = np.array([6.0, 4.0, 2.5, 1.5])


def bursty(rng, level, onsets, t):
    lam = level * (1.0 + 0.3 * np.sin(2 * np.pi * t / 52))
    for s in onsets:
        span = slice(s, min(s + len(BURST_SHAPE), WEEKS))
        lam[span] = lam[span] * BURST_SHAPE[: span.stop - span.start]
    return rng.poisson(lam)


def sparse(rng, rate, quiet_from, t):
    y = rng.poisson(np.where(t < quiet_from, rate, 0.0))
    return np.minimum(y, 3)


def main():
    rng = np.random.default_rng(20240601)
    t = np.arange(WEEKS)
    locs = [Location(1, 33.3152, 44.3661, "Baghdad"), Location(2, 33.5138, 36.2765, "Damascus")]
    counts = np.zeros((2, 2, WEEKS), dtype=np.int64)
    counts[0, 0] = bursty(rng, 3.0, [14, 41, 66, 93, 104, 113], t)   # (1, 14)
    counts[0, 1] = bursty(rng, 6.0, [20, 47, 72, 98, 108], t)        # (1, 19)
    counts[1, 0] = sparse(rng, 0.08, 70, t)                          # (2, 14)
    counts[1, 1] = sparse(rng, 0.12, 80, t)                          # (2, 19)
    save_panel(EventPanel(locs, [14, 19], counts, time_step="weekly", cameo=True), OUT)
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
