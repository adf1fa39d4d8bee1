"""Log-normal demand fitting from per-regime sales samples.

Raw inputs are customer-comment counts; scaling them by the comment rate
and shifting by the comment lag yields demand estimates.  Fitting is the
closed-form maximum-likelihood estimate on log observations, validated
with a one-sample Kolmogorov-Smirnov test.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class SampleSet:
    """Demand observations for one product under one regime."""

    product_id: str
    regime: str
    observations: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.observations, dtype=float)
        if values.size == 0:
            raise ValueError(f"{self.product_id}/{self.regime}: observations are empty")
        bad = np.nonzero(values <= 0)[0]
        if bad.size:
            raise ValueError(
                f"{self.product_id}/{self.regime}: observation[{bad[0]}] = "
                f"{values[bad[0]]} is not positive"
            )
        object.__setattr__(self, "observations", values)


@dataclass(frozen=True)
class FitResult:
    mu: float
    sigma: float
    ks_p_value: float


def scale_comments(comment_counts, comment_rate: float, lag: int = 0) -> list[int]:
    """Turn comment counts into demand estimates.

    Divides by the comment rate and rounds; entry i of the result estimates
    demand for period i - lag (comments trail orders by ``lag`` periods, so
    the series is re-dated, not truncated).
    """
    counts = list(comment_counts)
    if not counts:
        raise ValueError("comment series is empty")
    if not 0 < comment_rate <= 1:
        raise ValueError("comment_rate must be in (0, 1]")
    if lag < 0:
        raise ValueError("lag must be >= 0")
    return [int(round(c / comment_rate)) for c in counts]


def _ks_p_value(observations: np.ndarray, mu: float, sigma: float) -> float:
    dist = stats.lognorm(s=sigma, scale=math.exp(mu))
    result = stats.kstest(observations, dist.cdf, method="asymp")
    return float(result.pvalue)


def fit_lognormal_mle(samples: SampleSet) -> FitResult:
    """Closed-form MLE fit: mu/sigma are the mean and population std of log observations."""
    values = samples.observations
    if values.size < 2:
        raise ValueError(f"{samples.product_id}/{samples.regime}: need at least 2 observations")
    logs = np.log(values)
    mu = float(logs.mean())
    sigma = float(np.sqrt(np.mean((logs - mu) ** 2)))
    if sigma <= 1e-12:
        raise ValueError(
            f"{samples.product_id}/{samples.regime}: degenerate sample (sigma = 0)"
        )
    return FitResult(mu=mu, sigma=sigma, ks_p_value=_ks_p_value(values, mu, sigma))


def ks_test(samples: SampleSet, fit: FitResult) -> float:
    """One-sample KS test of the observations against log-normal(mu, sigma)."""
    if fit.sigma <= 0:
        raise ValueError("fit.sigma must be > 0")
    return _ks_p_value(samples.observations, fit.mu, fit.sigma)


def read_samples_csv(path: str | Path) -> list[SampleSet]:
    """Load sample sets from CSV columns: product_id, period_start_date, regime, observation."""
    groups: dict[tuple[str, str], list[tuple[str, float]]] = {}
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        required = {"product_id", "period_start_date", "regime", "observation"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"{path}: expected columns {sorted(required)}")
        for row in reader:
            key = (row["product_id"], row["regime"])
            groups.setdefault(key, []).append(
                (row["period_start_date"], float(row["observation"]))
            )
    if not groups:
        raise ValueError(f"{path}: no sample rows")
    samples = []
    for (product_id, regime), rows in sorted(groups.items()):
        rows.sort(key=lambda item: item[0])
        samples.append(
            SampleSet(
                product_id=product_id,
                regime=regime,
                observations=np.array([value for _, value in rows]),
            )
        )
    return samples


def fits_to_dict(fits: dict[tuple[str, str], FitResult]) -> dict:
    out: dict[str, dict[str, dict]] = {}
    for (product_id, regime), fit in sorted(fits.items()):
        out.setdefault(product_id, {})[regime] = {
            "mu": fit.mu,
            "sigma": fit.sigma,
            "ks_p_value": fit.ks_p_value,
        }
    return out


def save_fits(fits: dict[tuple[str, str], FitResult], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(fits_to_dict(fits), handle, indent=2, sort_keys=True)
        handle.write("\n")
