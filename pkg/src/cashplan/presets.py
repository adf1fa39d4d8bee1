"""Shipped reproduction presets.

The default instance is a three-product computer-peripherals retailer over
six two-week periods with the last two periods in the booming regime, and
three published per-regime branch sets are shipped as fixtures so the
reproduction studies do not depend on the nonlinear generator finding the
same local optima.
"""

from __future__ import annotations

import numpy as np

from .core import InstanceConfig, config_from_dict
from .scenario_gen import BranchSet, ScenarioTree

PRODUCTS = ("keyboard", "mouse", "headset")

# Fitted log-normal (mu, sigma) per product and regime.
REGIME_PARAMS = (
    {"normal": (3.66, 0.60), "booming": (5.79, 0.26)},
    {"normal": (4.13, 0.66), "booming": (5.91, 0.33)},
    {"normal": (3.54, 0.46), "booming": (4.96, 0.18)},
)

_FIXTURE_BRANCH_DATA = {
    1: {
        "normal": ([0.1, 0.598, 0.302], [[133, 246, 87], [30, 58, 39], [49, 57, 20]]),
        "booming": ([0.286, 0.318, 0.396], [[291, 597, 123], [468, 322, 124], [268, 293, 177]]),
    },
    2: {
        "normal": ([0.102, 0.694, 0.204], [[134, 246, 88], [32, 59, 37], [54, 56, 17]]),
        "booming": ([0.185, 0.556, 0.259], [[345, 341, 156], [269, 302, 123], [481, 611, 184]]),
    },
    3: {
        "normal": ([0.103, 0.476, 0.421], [[134, 246, 87], [28, 58, 24], [46, 58, 43]]),
        "booming": ([0.266, 0.34, 0.394], [[481, 608, 134], [317, 311, 181], [259, 309, 121]]),
    },
}

FIXTURE_TREE_IDS = (1, 2, 3)
DEFAULT_REDUCED_SIZE = 140


def paper_instance() -> InstanceConfig:
    """The default evaluation instance: prices 189/144/239, costs 120/70/150,
    20k initial cash, 2k overhead per period, 2-period receipt delay, 10k
    loan cap, pattern normal x4 then booming x2."""
    return config_from_dict(
        {
            "n_products": 3,
            "horizon": 6,
            "initial_cash": 20000.0,
            "initial_inventory": [0.0, 0.0, 0.0],
            "price": [189.0, 144.0, 239.0],
            "unit_cost": [120.0, 70.0, 150.0],
            "overhead": [2000.0] * 6,
            "receipt_delay": 2,
            "discount_rate": 0.01,
            "loan_rate": 0.015,
            "loan_limit": 10000.0,
            "demand_pattern": [0, 0, 0, 0, 1, 1],
            "regime_params": [
                {regime: list(pair) for regime, pair in params.items()}
                for params in REGIME_PARAMS
            ],
        }
    )


def fixture_branch_sets(tree_id: int) -> dict[str, BranchSet]:
    if tree_id not in _FIXTURE_BRANCH_DATA:
        raise KeyError(f"fixture tree id must be one of {FIXTURE_TREE_IDS}, got {tree_id}")
    return {
        regime: BranchSet(
            realizations=np.array(rows, dtype=float),
            probabilities=np.array(probs, dtype=float),
        )
        for regime, (probs, rows) in _FIXTURE_BRANCH_DATA[tree_id].items()
    }


def fixture_tree(tree_id: int, pattern=None) -> ScenarioTree:
    if pattern is None:
        pattern = paper_instance().demand_pattern
    return ScenarioTree(pattern=tuple(pattern), branch_sets=fixture_branch_sets(tree_id))
