"""Empirical stability verdicts from simulated traces.

Finite runs cannot certify positive recurrence, so the verdicts are labeled
"-consistent". Two observables are used:

* nested-horizon averages: per-server time-average queue lengths over the
  first H/4, H/2 and H epochs, which settle for a stable network and keep
  growing for an unstable one;
* the growth slope of the total count: an OLS slope per seed (after a
  warm-up fraction is discarded), with a t confidence band across seeds.
  With a single seed the post-warm-up trace is cut into batches and the band
  comes from the spread of per-batch slopes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

STABLE = "stable-consistent"
UNSTABLE = "unstable-consistent"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class Thresholds:
    """Tunable verdict thresholds.

    ``nested_tol`` is the largest allowed relative spread of the nested-horizon
    averages; ``confidence`` the coverage of the slope band; ``warmup`` the
    fraction of each trace discarded before fitting slopes; ``batches`` the
    number of batches used when only one seed is available.
    """

    nested_tol: float = 0.15
    confidence: float = 0.95
    warmup: float = 0.1
    batches: int = 10

    def to_dict(self) -> dict:
        return {"nested_tol": self.nested_tol, "confidence": self.confidence,
                "warmup": self.warmup, "batches": self.batches}


@dataclass
class StabilityReport:
    horizon: int
    seeds: list
    nested_horizons: list
    nested_means: np.ndarray          # (3, servers), averaged over seeds
    nested_spread: np.ndarray         # per-server relative spread
    slope: float
    slope_low: float
    slope_high: float
    r_squared: float
    verdict: str
    thresholds: Thresholds = field(default_factory=Thresholds)

    @property
    def nested_agree(self) -> bool:
        return bool(np.all(self.nested_spread <= self.thresholds.nested_tol))

    @property
    def band_contains_zero(self) -> bool:
        return self.slope_low <= 0.0 <= self.slope_high

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "seeds": list(self.seeds),
            "nested_horizons": list(self.nested_horizons),
            "nested_means": np.asarray(self.nested_means).tolist(),
            "nested_spread": np.asarray(self.nested_spread).tolist(),
            "nested_agree": self.nested_agree,
            "slope": self.slope,
            "slope_band": [self.slope_low, self.slope_high],
            "r_squared": self.r_squared,
            "verdict": self.verdict,
            "thresholds": self.thresholds.to_dict(),
        }


def relative_spread(values) -> np.ndarray:
    """(max - min) / max along axis 0; zero where every value is zero."""
    v = np.asarray(values, dtype=float)
    hi, lo = v.max(axis=0), v.min(axis=0)
    return np.divide(hi - lo, hi, out=np.zeros_like(hi), where=hi > 0)


def nested_averages(epochs, server_counts, horizon: int) -> tuple:
    """Time averages of per-server counts over epochs <= H/4, H/2, H."""
    epochs = np.asarray(epochs)
    server_counts = np.asarray(server_counts, dtype=float)
    cuts = [horizon // 4, horizon // 2, horizon]
    means = []
    for c in cuts:
        mask = epochs <= c
        if not mask.any():
            raise ValueError(f"no records at or before epoch {c}")
        means.append(server_counts[mask].mean(axis=0))
    return cuts, np.array(means)


def ols(x, y) -> tuple:
    """Slope, intercept and R^2 of the least-squares line through (x, y)."""
    res = stats.linregress(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    return float(res.slope), float(res.intercept), float(res.rvalue ** 2)


def _post_warmup(epochs, totals, warmup: float):
    epochs = np.asarray(epochs)
    start = int(len(epochs) * warmup)
    return epochs[start:], np.asarray(totals, dtype=float)[start:]


def slope_band(series, thresholds: Thresholds = Thresholds()) -> tuple:
    """Mean slope and its two-sided confidence band.

    ``series`` is a list of (epochs, totals) pairs, one per seed.
    """
    if not series:
        raise ValueError("need at least one trace")
    if len(series) == 1:
        x, y = _post_warmup(*series[0], thresholds.warmup)
        if len(x) < 2:
            raise ValueError("trace too short to fit a slope")
        batches = max(1, min(thresholds.batches, len(x) // 3))
        parts = [p for p in zip(np.array_split(x, batches), np.array_split(y, batches))
                 if len(p[0]) >= 2]
        slopes = np.array([ols(px, py)[0] for px, py in parts])
    else:
        slopes = np.array([ols(*_post_warmup(e, t, thresholds.warmup))[0] for e, t in series])
    mean = float(slopes.mean())
    if len(slopes) < 2:
        return mean, -np.inf, np.inf
    se = float(slopes.std(ddof=1) / np.sqrt(len(slopes)))
    half = float(stats.t.ppf(0.5 + thresholds.confidence / 2, len(slopes) - 1)) * se
    return mean, mean - half, mean + half


def verdict(slope_low: float, slope_high: float, nested_agree: bool) -> str:
    if slope_low > 0:
        return UNSTABLE
    if slope_low <= 0 <= slope_high and nested_agree:
        return STABLE
    return INCONCLUSIVE


def assess(traces, thresholds: Thresholds = Thresholds()) -> StabilityReport:
    """Combine traces of one network (one per seed) into a StabilityReport.

    Nested averages and R^2 are taken on the seed-averaged trajectory; every
    trace must share the horizon and record stride.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one trace")
    horizon = traces[0].horizon
    epochs = traces[0].epochs
    for t in traces[1:]:
        if t.horizon != horizon or not np.array_equal(t.epochs, epochs):
            raise ValueError("traces must share horizon and record stride")
    servers = np.mean([t.server_totals for t in traces], axis=0)
    cuts, means = nested_averages(epochs, servers, horizon)
    spread = relative_spread(means)
    slope, lo, hi = slope_band([(t.epochs, t.totals) for t in traces], thresholds)
    x, y = _post_warmup(epochs, np.mean([t.totals for t in traces], axis=0), thresholds.warmup)
    r2 = ols(x, y)[2] if np.ptp(y) > 0 else 0.0
    nested_ok = bool(np.all(spread <= thresholds.nested_tol))
    return StabilityReport(horizon, [t.seed for t in traces], cuts, means, spread,
                           slope, lo, hi, r2, verdict(lo, hi, nested_ok), thresholds)
