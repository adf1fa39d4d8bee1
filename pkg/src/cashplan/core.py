"""Problem data model and the exact cash/inventory recursions.

The recursions here are the ground truth that every optimization model in
the package is cross-checked against: end-of-period inventory follows a
lost-sales max-recursion, sales revenue arrives after a receipt delay, and
the final-cash figure discounts receipts that fall past the horizon.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# JSON demand patterns may use the 0/1 shorthand for normal/booming periods.
REGIME_ALIASES = {"0": "normal", "1": "booming"}


@dataclass(frozen=True)
class InstanceConfig:
    """Operational and financial parameters of one planning instance."""

    n_products: int
    horizon: int
    initial_cash: float
    initial_inventory: tuple[float, ...]
    price: tuple[float, ...]
    unit_cost: tuple[float, ...]
    overhead: tuple[float, ...]
    receipt_delay: int
    discount_rate: float
    loan_rate: float
    loan_limit: float
    demand_pattern: tuple[str, ...]
    regime_params: tuple[dict[str, tuple[float, float]], ...]

    def replace(self, **changes) -> "InstanceConfig":
        fields = self.to_dict()
        fields.update(changes)
        return config_from_dict(fields)

    def to_dict(self) -> dict:
        return {
            "n_products": self.n_products,
            "horizon": self.horizon,
            "initial_cash": self.initial_cash,
            "initial_inventory": list(self.initial_inventory),
            "price": list(self.price),
            "unit_cost": list(self.unit_cost),
            "overhead": list(self.overhead),
            "receipt_delay": self.receipt_delay,
            "discount_rate": self.discount_rate,
            "loan_rate": self.loan_rate,
            "loan_limit": self.loan_limit,
            "demand_pattern": list(self.demand_pattern),
            "regime_params": [
                {regime: list(pair) for regime, pair in params.items()}
                for params in self.regime_params
            ],
        }


def config_from_dict(data: dict) -> InstanceConfig:
    pattern = tuple(
        REGIME_ALIASES.get(str(entry), str(entry)) for entry in data["demand_pattern"]
    )
    regime_params = tuple(
        {str(regime): (float(pair[0]), float(pair[1])) for regime, pair in params.items()}
        for params in data["regime_params"]
    )
    return InstanceConfig(
        n_products=int(data["n_products"]),
        horizon=int(data["horizon"]),
        initial_cash=float(data["initial_cash"]),
        initial_inventory=tuple(float(x) for x in data["initial_inventory"]),
        price=tuple(float(x) for x in data["price"]),
        unit_cost=tuple(float(x) for x in data["unit_cost"]),
        overhead=tuple(float(x) for x in data["overhead"]),
        receipt_delay=int(data["receipt_delay"]),
        discount_rate=float(data["discount_rate"]),
        loan_rate=float(data["loan_rate"]),
        loan_limit=float(data["loan_limit"]),
        demand_pattern=pattern,
        regime_params=regime_params,
    )


def load_config(path: str | Path) -> InstanceConfig:
    """Read an InstanceConfig from a JSON document (see docs/instance_schema.json)."""
    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    return config_from_dict(data)


def save_config(config: InstanceConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(config.to_dict(), handle, indent=2, sort_keys=True)
        handle.write("\n")


def validate(config: InstanceConfig) -> list[str]:
    """Check every invariant of the instance; return all violations, not just the first."""
    errors: list[str] = []
    n, t = config.n_products, config.horizon
    if n < 1:
        errors.append("n_products: must be >= 1")
    if t < 1:
        errors.append("horizon: must be >= 1")
    if not 0 <= config.receipt_delay <= t:
        errors.append("receipt_delay: must satisfy 0 <= receipt_delay <= horizon")
    if config.initial_cash < 0:
        errors.append("initial_cash: must be >= 0")
    if config.loan_limit < 0:
        errors.append("loan_limit: must be >= 0")
    if config.discount_rate < 0:
        errors.append("discount_rate: must be >= 0")
    if config.loan_rate < 0:
        errors.append("loan_rate: must be >= 0")

    for name, values, expected in (
        ("initial_inventory", config.initial_inventory, n),
        ("price", config.price, n),
        ("unit_cost", config.unit_cost, n),
        ("overhead", config.overhead, t),
    ):
        if len(values) != expected:
            errors.append(f"{name}: expected {expected} entries, got {len(values)}")
        for i, value in enumerate(values):
            if value < 0:
                errors.append(f"{name}[{i}]: must be >= 0")

    if len(config.demand_pattern) != t:
        errors.append(
            f"demand_pattern: expected {t} entries, got {len(config.demand_pattern)}"
        )
    if len(config.regime_params) != n:
        errors.append(
            f"regime_params: expected {n} per-product entries, got {len(config.regime_params)}"
        )
    for i, params in enumerate(config.regime_params):
        for regime, (_, sigma) in params.items():
            if sigma <= 0:
                errors.append(f"regime_params[{i}][{regime!r}]: sigma must be > 0")
    for j, regime in enumerate(config.demand_pattern):
        for i, params in enumerate(config.regime_params):
            if regime not in params:
                errors.append(
                    f"demand_pattern[{j}]: regime {regime!r} missing from regime_params[{i}]"
                )
    return errors


def require_valid(config: InstanceConfig) -> None:
    errors = validate(config)
    if errors:
        raise ValueError("invalid instance config: " + "; ".join(errors))


@dataclass(frozen=True)
class Trajectory:
    """Realized per-period state for one demand path and one ordering plan.

    Column t-1 of each period-indexed array holds period t (periods are
    1-based; index 0 of ``inventory``/``cash`` holds the initial state).
    ``revenue`` spans periods 1..T+L since receipts trail sales by the
    receipt delay.
    """

    order_quantities: np.ndarray
    loan_quantities: np.ndarray
    inventory: np.ndarray
    sales: np.ndarray
    revenue: np.ndarray
    cash: np.ndarray
    final_cash: float
    cash_violations: tuple[int, ...]
    loan_cap_excess: float
    loan_sales_violations: tuple[tuple[int, int], ...]

    @property
    def feasible(self) -> bool:
        return (
            not self.cash_violations
            and self.loan_cap_excess == 0.0
            and not self.loan_sales_violations
        )


def _as_matrix(name: str, values, n: int, t: int) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.shape != (n, t):
        raise ValueError(f"{name}: expected shape ({n}, {t}), got {array.shape}")
    if np.any(array < 0):
        raise ValueError(f"{name}: entries must be >= 0")
    return array


def simulate(
    config: InstanceConfig,
    demands,
    order_quantities,
    loan_quantities=None,
    loans_enabled: bool = False,
) -> Trajectory:
    """Run the exact forward recursions for a fixed plan on a fixed demand path.

    Inventory follows the lost-sales max-recursion; each period's sales
    revenue is received ``receipt_delay`` periods later.  When loans are
    enabled, the loaned share of an order is paid out immediately and the
    principal plus compounded interest is repaid when the delayed payment
    would have arrived, so the net cost of a loan is the interest.  Final
    cash adds receipts falling past the horizon, discounted per period.

    Constraint violations (per-period cash limits, the horizon loan cap,
    loans above realized sales) are reported on the trajectory instead of
    raised, so infeasible fixed plans can still be scored.
    """
    n, t_max, delay = config.n_products, config.horizon, config.receipt_delay
    demand = _as_matrix("demands", demands, n, t_max)
    orders = _as_matrix("order_quantities", order_quantities, n, t_max)
    if loan_quantities is None:
        loans = np.zeros((n, t_max))
    else:
        loans = _as_matrix("loan_quantities", loan_quantities, n, t_max)
    if not loans_enabled and np.any(loans > 0):
        raise ValueError("loan_quantities must be zero when loans_enabled is False")

    price = np.asarray(config.price, dtype=float)
    unit_cost = np.asarray(config.unit_cost, dtype=float)
    overhead = np.asarray(config.overhead, dtype=float)

    inventory = np.zeros((n, t_max + 1))
    inventory[:, 0] = config.initial_inventory
    for t in range(1, t_max + 1):
        inventory[:, t] = np.maximum(
            inventory[:, t - 1] + orders[:, t - 1] - demand[:, t - 1], 0.0
        )
    sales = inventory[:, :-1] + orders - inventory[:, 1:]

    repay_factor = (1.0 + config.loan_rate) ** delay
    revenue = np.zeros((n, t_max + delay))
    for t in range(1, t_max + delay + 1):
        received = np.zeros(n)
        if loans_enabled and t <= t_max:
            received += price * loans[:, t - 1]
        sale_period = t - delay
        if sale_period >= 1:
            received += price * sales[:, sale_period - 1]
            if loans_enabled:
                received -= price * loans[:, sale_period - 1] * repay_factor
        revenue[:, t - 1] = received

    cash = np.zeros(t_max + 1)
    cash[0] = config.initial_cash
    cash_violations = []
    for t in range(1, t_max + 1):
        spend = float(unit_cost @ orders[:, t - 1])
        if spend > cash[t - 1] + 1e-9:
            cash_violations.append(t)
        cash[t] = cash[t - 1] + revenue[:, t - 1].sum() - spend - overhead[t - 1]

    tail = sum(
        revenue[:, t_max + k - 1].sum() / (1.0 + config.discount_rate) ** k
        for k in range(1, delay + 1)
    )
    final_cash = float(cash[t_max] + tail)

    loan_cap_excess = max(0.0, float((price[:, None] * loans).sum() - config.loan_limit))
    if loan_cap_excess < 1e-9:
        loan_cap_excess = 0.0
    over_sales = [
        (i, t + 1)
        for i in range(n)
        for t in range(t_max)
        if loans[i, t] > sales[i, t] + 1e-9
    ]

    return Trajectory(
        order_quantities=orders,
        loan_quantities=loans,
        inventory=inventory,
        sales=sales,
        revenue=revenue,
        cash=cash,
        final_cash=final_cash,
        cash_violations=tuple(cash_violations),
        loan_cap_excess=loan_cap_excess,
        loan_sales_violations=tuple(over_sales),
    )
