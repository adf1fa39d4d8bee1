"""Evaluation studies comparing the deterministic and stochastic models.

Implements the three classic figures of merit (DV, SV, PV with
EVPI = PV - SV and VSS = SV - DV), in-sample/out-of-sample stability
across scenario trees, sample-size sweeps under reduction, and the profit
gap between planning with and without order-based loans.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import InstanceConfig, Trajectory, simulate
from .planner_models import (
    PlanSolution,
    build_ol_d,
    build_ol_s,
    build_so_d,
    build_so_s,
    solve,
)
from .scenario_gen import ScenarioTree, mean_forecast
from .scenario_reduce import ScenarioFan, fast_forward_select
from .solver_backend import SolveOptions

KINDS = ("so", "ol")
STABILITY_GAP_LIMIT = 0.05


def _check_kind(kind: str) -> str:
    kind = kind.lower()
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    return kind


def solve_deterministic(
    config: InstanceConfig, forecast, kind: str, options: SolveOptions | None = None
) -> PlanSolution:
    builder = build_so_d if _check_kind(kind) == "so" else build_ol_d
    return solve(builder(config, forecast), options)


def solve_stochastic(
    config: InstanceConfig,
    fan: ScenarioFan,
    kind: str,
    options: SolveOptions | None = None,
    fixed_first_orders=None,
) -> PlanSolution:
    builder = build_so_s if _check_kind(kind) == "so" else build_ol_s
    return solve(builder(config, fan, fixed_first_orders=fixed_first_orders), options)


def wait_and_see(
    config: InstanceConfig,
    fan: ScenarioFan,
    kind: str,
    options: SolveOptions | None = None,
) -> tuple[float, list[float]]:
    """Perfect-information value: solve each scenario as its own deterministic model."""
    per_scenario = []
    for s in range(fan.n_scenarios):
        solution = solve_deterministic(config, fan.demands[s], kind, options)
        per_scenario.append(solution.objective)
    pv = float(np.dot(fan.probabilities, per_scenario))
    return pv, per_scenario


def repair_fixed_plan(
    config: InstanceConfig,
    demands,
    orders,
    loans,
    loans_enabled: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Make a scenario-independent plan feasible for one demand path.

    When a period's purchases exceed available cash, all of that period's
    orders are scaled by one common factor; loans are clipped to realized
    sales and to the remaining loan cap (products in index order).
    """
    n, horizon, delay = config.n_products, config.horizon, config.receipt_delay
    demand = np.asarray(demands, dtype=float)
    plan_orders = np.asarray(orders, dtype=float)
    plan_loans = np.asarray(loans, dtype=float) if loans_enabled else np.zeros((n, horizon))
    price = np.asarray(config.price, dtype=float)
    unit_cost = np.asarray(config.unit_cost, dtype=float)
    repay_factor = (1.0 + config.loan_rate) ** delay

    repaired_orders = np.zeros((n, horizon))
    repaired_loans = np.zeros((n, horizon))
    sales = np.zeros((n, horizon))
    stock = np.asarray(config.initial_inventory, dtype=float).copy()
    cash = config.initial_cash
    headroom = config.loan_limit

    for t in range(1, horizon + 1):
        wanted = plan_orders[:, t - 1]
        spend = float(unit_cost @ wanted)
        scale = 1.0
        if spend > cash:
            scale = max(0.0, cash) / spend if spend > 0 else 0.0
        bought = scale * wanted
        repaired_orders[:, t - 1] = bought

        new_stock = np.maximum(stock + bought - demand[:, t - 1], 0.0)
        sales[:, t - 1] = stock + bought - new_stock
        stock = new_stock

        if loans_enabled:
            clipped = np.minimum(plan_loans[:, t - 1], sales[:, t - 1])
            for i in range(n):
                if price[i] > 0:
                    clipped[i] = min(clipped[i], max(0.0, headroom) / price[i])
                headroom -= price[i] * clipped[i]
            repaired_loans[:, t - 1] = clipped

        received = 0.0
        if loans_enabled:
            received += float(price @ repaired_loans[:, t - 1])
        if t - delay >= 1:
            received += float(price @ sales[:, t - delay - 1])
            if loans_enabled:
                received -= float(price @ repaired_loans[:, t - delay - 1]) * repay_factor
        cash = cash + received - float(unit_cost @ bought) - config.overhead[t - 1]

    return repaired_orders, repaired_loans


def expected_value_of_deterministic(
    config: InstanceConfig,
    fan: ScenarioFan,
    kind: str,
    forecast=None,
    options: SolveOptions | None = None,
) -> tuple[float, PlanSolution, list[Trajectory]]:
    """Score the deterministic plan inside the stochastic world (the DV figure)."""
    kind = _check_kind(kind)
    if forecast is None:
        forecast = mean_forecast(config)
    deterministic = solve_deterministic(config, forecast, kind, options)
    plan = deterministic.trajectories[0]
    loans_enabled = kind == "ol"

    trajectories = []
    values = []
    for s in range(fan.n_scenarios):
        orders, loans = repair_fixed_plan(
            config,
            fan.demands[s],
            plan.order_quantities,
            plan.loan_quantities,
            loans_enabled,
        )
        trajectory = simulate(config, fan.demands[s], orders, loans, loans_enabled)
        trajectories.append(trajectory)
        values.append(trajectory.final_cash)
    dv = float(np.dot(fan.probabilities, values))
    return dv, deterministic, trajectories


@dataclass(frozen=True)
class VssEvpiReport:
    dv: float
    sv: float
    pv: float

    @property
    def evpi(self) -> float:
        return self.pv - self.sv

    @property
    def vss(self) -> float:
        return self.sv - self.dv

    def to_dict(self) -> dict:
        return {
            "dv": self.dv,
            "sv": self.sv,
            "pv": self.pv,
            "evpi": self.evpi,
            "vss": self.vss,
        }


def vss_evpi(
    config: InstanceConfig,
    fan: ScenarioFan,
    kind: str,
    options: SolveOptions | None = None,
) -> VssEvpiReport:
    sv = solve_stochastic(config, fan, kind, options).objective
    pv, _ = wait_and_see(config, fan, kind, options)
    dv, _, _ = expected_value_of_deterministic(config, fan, kind, options=options)
    return VssEvpiReport(dv=dv, sv=sv, pv=pv)


@dataclass(frozen=True)
class StabilityResult:
    """Cross-tree substitution objectives; entry (a, b) re-solves tree b with
    tree a's first-period orders fixed."""

    objectives: np.ndarray
    first_period_orders: list[np.ndarray]
    max_relative_gap: float
    stable: bool

    def to_dict(self) -> dict:
        return {
            "objectives": self.objectives.tolist(),
            "first_period_orders": [orders.tolist() for orders in self.first_period_orders],
            "max_relative_gap": self.max_relative_gap,
            "stable": self.stable,
        }


def stability_matrix(
    config: InstanceConfig,
    fans: list[ScenarioFan],
    kind: str,
    options: SolveOptions | None = None,
) -> StabilityResult:
    """In-/out-of-sample stability across trees of identical structure."""
    if len(fans) < 2:
        raise ValueError("stability test needs at least 2 scenario trees")
    shape = fans[0].demands.shape
    for index, fan in enumerate(fans[1:], start=1):
        if fan.demands.shape != shape:
            raise ValueError(
                f"tree {index} has structure {fan.demands.shape}, expected {shape}"
            )

    count = len(fans)
    diagonal = [solve_stochastic(config, fan, kind, options) for fan in fans]
    objectives = np.zeros((count, count))
    for a in range(count):
        for b in range(count):
            if a == b:
                objectives[a, b] = diagonal[a].objective
            else:
                substituted = solve_stochastic(
                    config,
                    fans[b],
                    kind,
                    options,
                    fixed_first_orders=diagonal[a].first_period_orders,
                )
                objectives[a, b] = substituted.objective

    flat = objectives.ravel()
    worst = 0.0
    for x in flat:
        for z in flat:
            denom = max(abs(x), abs(z), 1e-12)
            worst = max(worst, abs(x - z) / denom)
    return StabilityResult(
        objectives=objectives,
        first_period_orders=[sol.first_period_orders for sol in diagonal],
        max_relative_gap=worst,
        stable=worst < STABILITY_GAP_LIMIT,
    )


def sample_size_sweep(
    config: InstanceConfig,
    fan: ScenarioFan,
    sizes,
    kind: str,
    options: SolveOptions | None = None,
) -> list[tuple[int, float]]:
    """Objective as a function of the reduced scenario count."""
    rows = []
    for size in sizes:
        if not 1 <= size <= fan.n_scenarios:
            raise ValueError(f"sweep size {size} out of range 1..{fan.n_scenarios}")
        if size == fan.n_scenarios:
            reduced = fan
        else:
            reduced = fast_forward_select(fan, size).reduced_fan(fan)
        solution = solve_stochastic(config, reduced, kind, options)
        rows.append((int(size), solution.objective))
    return rows


PROFIT_GAP_PARAMETERS = ("initial_cash", "receipt_delay", "overhead", "pattern")


def _apply_parameter(config: InstanceConfig, parameter: str, value) -> InstanceConfig:
    if parameter == "initial_cash":
        return config.replace(initial_cash=float(value))
    if parameter == "receipt_delay":
        return config.replace(receipt_delay=int(value))
    if parameter == "overhead":
        return config.replace(overhead=[float(value)] * config.horizon)
    if parameter == "pattern":
        return config.replace(demand_pattern=list(value))
    raise ValueError(
        f"parameter must be one of {PROFIT_GAP_PARAMETERS}, got {parameter!r}"
    )


def _fan_for(config: InstanceConfig, tree: ScenarioTree, reduce_to: int | None) -> ScenarioFan:
    rebuilt = ScenarioTree(pattern=tuple(config.demand_pattern), branch_sets=tree.branch_sets)
    fan = rebuilt.to_fan()
    if reduce_to is not None and reduce_to < fan.n_scenarios:
        fan = fast_forward_select(fan, reduce_to).reduced_fan(fan)
    return fan


def profit_gap_study(
    config: InstanceConfig,
    tree: ScenarioTree,
    parameter: str,
    values,
    reduce_to: int | None = None,
    options: SolveOptions | None = None,
) -> list[dict]:
    """Loan-vs-no-loan expected profit gap as one instance parameter varies.

    Gap is (OL-S - SO-S) / SO-S in percent.  Changing the demand pattern
    rebuilds the fan from the tree's branch sets; other parameters reuse it.
    """
    base_fan = _fan_for(config, tree, reduce_to)
    rows = []
    for value in values:
        varied = _apply_parameter(config, parameter, value)
        fan = _fan_for(varied, tree, reduce_to) if parameter == "pattern" else base_fan
        without_loan = solve_stochastic(varied, fan, "so", options)
        with_loan = solve_stochastic(varied, fan, "ol", options)
        gap = (
            (with_loan.objective - without_loan.objective)
            / max(abs(without_loan.objective), 1e-12)
            * 100.0
        )
        rows.append(
            {
                "parameter": parameter,
                "value": value if parameter == "pattern" else float(value),
                "so_objective": without_loan.objective,
                "ol_objective": with_loan.objective,
                "gap_percent": float(gap),
                "so_gap": without_loan.gap,
                "ol_gap": with_loan.gap,
            }
        )
    return rows


def vss_evpi_study(
    config: InstanceConfig,
    tree: ScenarioTree,
    kind: str,
    parameter: str | None = None,
    values=None,
    reduce_to: int | None = None,
    options: SolveOptions | None = None,
) -> list[dict]:
    """VSS/EVPI at the base instance or swept over one parameter."""
    if parameter is None:
        settings = [(None, config)]
    else:
        if values is None:
            raise ValueError("values are required when a parameter is given")
        settings = [(value, _apply_parameter(config, parameter, value)) for value in values]
    base_fan = _fan_for(config, tree, reduce_to)
    rows = []
    for value, varied in settings:
        fan = _fan_for(varied, tree, reduce_to) if parameter == "pattern" else base_fan
        report = vss_evpi(varied, fan, kind, options)
        row = {"parameter": parameter, "value": value, "kind": kind}
        row.update(report.to_dict())
        rows.append(row)
    return rows


@dataclass
class EvaluationReport:
    """Bundle of whichever studies a run performed."""

    vss_evpi_rows: list[dict] | None = None
    stability: dict[str, StabilityResult] | None = None
    sweep_rows: dict[str, list[tuple[int, float]]] | None = None
    profit_gap_rows: list[dict] | None = None

    def to_dict(self) -> dict:
        out: dict = {}
        if self.vss_evpi_rows is not None:
            out["vss_evpi"] = self.vss_evpi_rows
        if self.stability is not None:
            out["stability"] = {k: v.to_dict() for k, v in self.stability.items()}
        if self.sweep_rows is not None:
            out["sweep"] = {
                k: [{"size": size, "objective": obj} for size, obj in rows]
                for k, rows in self.sweep_rows.items()
            }
        if self.profit_gap_rows is not None:
            out["profit_gap"] = self.profit_gap_rows
        return out

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, indent=2, sort_keys=True)
            handle.write("\n")
