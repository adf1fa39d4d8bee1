"""Demand scenario generation by moment matching.

Per regime, a small set of joint demand realizations with probabilities is
fitted so that each product's mean, variance and (standardized) skewness
match the fitted log-normal targets.  Periods are independent and
stationary within a regime, so a full tree over the horizon is the
cross-product of the per-period branch sets selected by the demand
pattern.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .core import InstanceConfig
from .scenario_reduce import ScenarioFan

DEFAULT_N_MOMENTS = 3
MATCH_TOLERANCE = 1e-6


def lognormal_moments(mu: float, sigma: float) -> tuple[float, float, float]:
    """Closed-form mean, variance and standardized skewness of log-normal(mu, sigma)."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    w = math.exp(sigma * sigma)
    mean = math.exp(mu + sigma * sigma / 2.0)
    variance = (w - 1.0) * math.exp(2.0 * mu + sigma * sigma)
    skewness = (w + 2.0) * math.sqrt(w - 1.0)
    return mean, variance, skewness


def branching_factor(n_products: int, horizon: int, n_moments: int = DEFAULT_N_MOMENTS) -> int:
    """Smallest branch count y with (D+1)*y - 1 >= D*m, D = n_products*horizon."""
    if min(n_products, horizon, n_moments) < 1:
        raise ValueError("n_products, horizon and n_moments must all be >= 1")
    dim = n_products * horizon
    return max(1, math.ceil((dim * n_moments + 1) / (dim + 1)))


@dataclass(frozen=True)
class MomentSpec:
    """Per-product target moments plus one weight per moment kind."""

    mean: np.ndarray
    variance: np.ndarray
    skewness: np.ndarray
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "variance", np.asarray(self.variance, dtype=float))
        object.__setattr__(self, "skewness", np.asarray(self.skewness, dtype=float))
        if np.any(self.variance <= 0):
            raise ValueError("target variances must be > 0")
        if any(w < 0 for w in self.weights):
            raise ValueError("moment weights must be >= 0")

    @property
    def n_products(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def from_lognormal(cls, params, weights=(1.0, 1.0, 1.0)) -> "MomentSpec":
        """Build targets from per-product (mu, sigma) log-normal parameters."""
        moments = np.array([lognormal_moments(mu, sigma) for mu, sigma in params])
        return cls(moments[:, 0], moments[:, 1], moments[:, 2], tuple(weights))


@dataclass(frozen=True)
class BranchSet:
    """One period's joint demand realizations (rows) with branch probabilities."""

    realizations: np.ndarray
    probabilities: np.ndarray
    objective: float | None = None
    within_tolerance: bool = True
    underspecified: bool = False

    def __post_init__(self):
        real = np.asarray(self.realizations, dtype=float)
        probs = np.asarray(self.probabilities, dtype=float)
        if real.ndim != 2 or real.shape[0] != probs.shape[0]:
            raise ValueError("realizations must be (branches, products) matching probabilities")
        if np.any(probs < -1e-12) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("branch probabilities must be >= 0 and sum to 1")
        if np.any(real < 0):
            raise ValueError("demand realizations must be >= 0")
        object.__setattr__(self, "realizations", real)
        object.__setattr__(self, "probabilities", probs)

    @property
    def n_branches(self) -> int:
        return self.realizations.shape[0]


def implied_moments(realizations, probabilities) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, variance and standardized skewness implied by a discrete branch set."""
    real = np.asarray(realizations, dtype=float)
    probs = np.asarray(probabilities, dtype=float)
    mean = probs @ real
    centered = real - mean
    variance = probs @ centered**2
    third = probs @ centered**3
    skewness = np.where(variance > 1e-12, third / np.maximum(variance, 1e-300) ** 1.5, 0.0)
    return mean, variance, skewness


def _match_objective(spec: MomentSpec, realizations, probabilities) -> float:
    mean, variance, skewness = implied_moments(realizations, probabilities)
    w_mean, w_var, w_skew = spec.weights
    return float(
        w_mean * np.sum((mean - spec.mean) ** 2)
        + w_var * np.sum((variance - spec.variance) ** 2)
        + w_skew * np.sum((skewness - spec.skewness) ** 2)
    )


def relative_residual(spec: MomentSpec, branch_set: BranchSet) -> float:
    """Root of summed squared moment deviations, each scaled by max(1, |target|)."""
    mean, variance, skewness = implied_moments(
        branch_set.realizations, branch_set.probabilities
    )
    terms = []
    for got, want in ((mean, spec.mean), (variance, spec.variance), (skewness, spec.skewness)):
        terms.append((got - want) / np.maximum(1.0, np.abs(want)))
    return float(np.sqrt(sum(np.sum(term**2) for term in terms)))


def _unpack(x: np.ndarray, y: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    realizations = np.exp(x[: y * n].reshape(y, n))
    if y == 1:
        return realizations, np.ones(1)
    squares = x[y * n :] ** 2
    return realizations, squares / squares.sum()


def match_moments(
    spec: MomentSpec,
    y: int,
    seed: int = 0,
    n_starts: int = 20,
    tolerance: float = MATCH_TOLERANCE,
) -> BranchSet:
    """Fit y joint realizations and probabilities to the target moments.

    Realizations are parameterized through exp() to stay positive and the
    probabilities through normalized squared auxiliaries, which removes the
    simplex constraints; each multi-start then runs an unconstrained
    quasi-Newton search.  The best start with objective below ``tolerance``
    wins; if none reaches it the overall best is returned with
    ``within_tolerance=False``.
    """
    if y < 1:
        raise ValueError("y must be >= 1")
    n = spec.n_products
    n_specs = 3 * n
    underspecified = y * (n + 1) - 1 < n_specs

    # Per-product log-scale start distribution implied by the target mean/variance.
    safe_mean = np.maximum(spec.mean, 1e-6)
    sigma_hat = np.sqrt(np.log1p(spec.variance / safe_mean**2))
    mu_hat = np.log(safe_mean) - sigma_hat**2 / 2.0

    n_params = y * n + (y if y > 1 else 0)
    bounds = [(-20.0, 20.0)] * (y * n) + [(1e-6, 10.0)] * (n_params - y * n)

    def objective(x: np.ndarray) -> float:
        realizations, probabilities = _unpack(x, y, n)
        return _match_objective(spec, realizations, probabilities)

    rng = np.random.default_rng(seed)
    best_x = None
    best_value = math.inf
    for _ in range(max(1, n_starts)):
        start_z = (mu_hat[None, :] + sigma_hat[None, :] * rng.standard_normal((y, n))).ravel()
        start = np.concatenate([start_z, rng.uniform(0.5, 1.5, n_params - y * n)])
        result = minimize(objective, start, method="L-BFGS-B", bounds=bounds)
        if result.fun < best_value:
            best_value = float(result.fun)
            best_x = result.x
        if best_value <= tolerance:
            break

    realizations, probabilities = _unpack(best_x, y, n)
    probabilities = probabilities / probabilities.sum()
    return BranchSet(
        realizations=realizations,
        probabilities=probabilities,
        objective=best_value,
        within_tolerance=best_value <= tolerance,
        underspecified=underspecified,
    )


@dataclass(frozen=True)
class ScenarioTree:
    """Stationary-within-regime tree: one branch set per regime, selected per period."""

    pattern: tuple[str, ...]
    branch_sets: dict[str, BranchSet]

    def __post_init__(self):
        missing = [r for r in self.pattern if r not in self.branch_sets]
        if missing:
            raise KeyError(f"pattern regimes without a branch set: {sorted(set(missing))}")

    @property
    def horizon(self) -> int:
        return len(self.pattern)

    @property
    def n_scenarios(self) -> int:
        count = 1
        for regime in self.pattern:
            count *= self.branch_sets[regime].n_branches
        return count

    def to_fan(self) -> ScenarioFan:
        """Enumerate every root-to-leaf path as a flat scenario fan."""
        period_sets = [self.branch_sets[regime] for regime in self.pattern]
        ranges = [range(bs.n_branches) for bs in period_sets]
        demands = []
        probabilities = []
        for combo in itertools.product(*ranges):
            prob = 1.0
            columns = []
            for t, branch in enumerate(combo):
                prob *= period_sets[t].probabilities[branch]
                columns.append(period_sets[t].realizations[branch])
            demands.append(np.column_stack(columns))
            probabilities.append(prob)
        return ScenarioFan(np.array(demands), np.array(probabilities))


def build_tree(config: InstanceConfig, branch_sets: dict[str, BranchSet]) -> ScenarioTree:
    return ScenarioTree(pattern=tuple(config.demand_pattern), branch_sets=dict(branch_sets))


def generate_tree(
    config: InstanceConfig,
    seed: int = 0,
    n_moments: int = DEFAULT_N_MOMENTS,
    branches: int | None = None,
    weights=(1.0, 1.0, 1.0),
) -> ScenarioTree:
    """Moment-match one branch set per regime in the pattern and assemble the tree."""
    if branches is None:
        branches = branching_factor(config.n_products, config.horizon, n_moments)
    branch_sets = {}
    for offset, regime in enumerate(sorted(set(config.demand_pattern))):
        spec = MomentSpec.from_lognormal(
            [params[regime] for params in config.regime_params], weights
        )
        branch_sets[regime] = match_moments(spec, branches, seed=seed + offset)
    return build_tree(config, branch_sets)


def mean_forecast(config: InstanceConfig) -> np.ndarray:
    """Per-period point forecast: the log-normal mean of each period's regime."""
    forecast = np.zeros((config.n_products, config.horizon))
    for t, regime in enumerate(config.demand_pattern):
        for i, params in enumerate(config.regime_params):
            mu, sigma = params[regime]
            forecast[i, t] = lognormal_moments(mu, sigma)[0]
    return forecast


def tree_to_dict(tree: ScenarioTree) -> dict:
    return {
        "pattern": list(tree.pattern),
        "regimes": {
            regime: {
                "probabilities": [float(p) for p in bs.probabilities],
                "realizations": [[float(v) for v in row] for row in bs.realizations],
            }
            for regime, bs in sorted(tree.branch_sets.items())
        },
    }


def tree_from_dict(data: dict) -> ScenarioTree:
    branch_sets = {
        regime: BranchSet(
            realizations=np.array(entry["realizations"], dtype=float),
            probabilities=np.array(entry["probabilities"], dtype=float),
        )
        for regime, entry in data["regimes"].items()
    }
    return ScenarioTree(pattern=tuple(data["pattern"]), branch_sets=branch_sets)


def save_tree(tree: ScenarioTree, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(tree_to_dict(tree), handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_tree(path: str | Path) -> ScenarioTree:
    with open(path, "r", encoding="utf-8") as handle:
        return tree_from_dict(json.load(handle))
