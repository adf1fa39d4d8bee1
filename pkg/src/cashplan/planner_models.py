"""MILP builders for the four planning models and solution extraction.

Two model families (self-owned cash only vs order-based loans), each in a
deterministic and a scenario-programming variant.  The deterministic
models are the single-scenario special case, so all four share one
builder.  Stochastic non-anticipativity is enforced structurally: order
decisions live on the pre-demand tree node (history through the previous
period) and inventory/indicator/loan decisions on the post-demand node,
with nodes recovered from the scenario fan by exact demand-prefix
matching.  A per-scenario formulation with explicit averaging constraints
is kept for equivalence testing.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import InstanceConfig, Trajectory, require_valid, simulate
from .scenario_gen import ScenarioTree, mean_forecast
from .scenario_reduce import ScenarioFan
from .solver_backend import LinearModel, SolveOptions, SolveOutcome, solve_model

MODEL_KINDS = ("so-d", "ol-d", "so-s", "ol-s")


@dataclass(frozen=True)
class BigMPlan:
    """Per-product, per-period linearization constants for the inventory flow."""

    values: np.ndarray


def compute_big_m(config: InstanceConfig, demand_ceiling) -> BigMPlan:
    """Constants dominating any feasible pre-sales stock and any demand.

    Stock at (n, t) is bounded by initial inventory plus cumulative demand
    plus the most units ever purchasable, where purchasing power is capped
    by initial cash, the loan limit and all revenue receivable so far.
    """
    ceiling = np.asarray(demand_ceiling, dtype=float)
    n, t = config.n_products, config.horizon
    if ceiling.shape != (n, t):
        raise ValueError(f"demand_ceiling: expected shape ({n}, {t})")
    unit_cost = np.asarray(config.unit_cost, dtype=float)
    zero_cost = np.nonzero(unit_cost == 0)[0]
    if zero_cost.size:
        raise ValueError(
            f"unit_cost[{zero_cost[0]}] is 0: purchases are unbounded, no valid big-M"
        )
    price = np.asarray(config.price, dtype=float)
    cumulative_demand = np.cumsum(ceiling, axis=1)
    cumulative_revenue = np.cumsum((price[:, None] * ceiling).sum(axis=0))
    purchasable = (
        config.initial_cash + config.loan_limit + cumulative_revenue
    )[None, :] / unit_cost[:, None]
    values = np.asarray(config.initial_inventory, dtype=float)[:, None] + (
        cumulative_demand + purchasable
    )
    return BigMPlan(values=values)


@dataclass
class _Node:
    level: int
    index: int
    parent: int
    scenarios: list[int]
    demand: np.ndarray | None


def _build_levels(demands: np.ndarray) -> tuple[list[list[_Node]], np.ndarray]:
    """Group scenarios into tree nodes by exact demand-prefix matching."""
    n_scen, _, horizon = demands.shape
    root = _Node(level=0, index=0, parent=-1, scenarios=list(range(n_scen)), demand=None)
    levels = [[root]]
    node_of = np.zeros((n_scen, horizon + 1), dtype=int)
    for t in range(1, horizon + 1):
        nodes: list[_Node] = []
        for parent in levels[t - 1]:
            groups: dict[bytes, _Node] = {}
            for s in parent.scenarios:
                key = demands[s, :, t - 1].tobytes()
                node = groups.get(key)
                if node is None:
                    node = _Node(
                        level=t,
                        index=len(nodes),
                        parent=parent.index,
                        scenarios=[],
                        demand=demands[s, :, t - 1],
                    )
                    groups[key] = node
                    nodes.append(node)
                node.scenarios.append(s)
                node_of[s, t] = node.index
        levels.append(nodes)
    return levels, node_of


@dataclass
class PlannerModel:
    """A built MILP plus the index maps needed to extract a solution."""

    kind: str
    loans: bool
    formulation: str
    config: InstanceConfig
    fan: ScenarioFan
    model: LinearModel
    big_m: BigMPlan
    order_vars: dict
    inventory_vars: dict
    indicator_vars: dict
    loan_vars: dict
    revenue_vars: dict
    cash_vars: dict
    final_cash_vars: dict
    node_of: np.ndarray | None


def _as_fan(demand_input) -> ScenarioFan:
    if isinstance(demand_input, ScenarioFan):
        return demand_input
    if isinstance(demand_input, ScenarioTree):
        return demand_input.to_fan()
    raise TypeError("demand input must be a ScenarioFan or ScenarioTree")


def _forecast_fan(config: InstanceConfig, forecast) -> ScenarioFan:
    matrix = np.asarray(forecast, dtype=float)
    if matrix.shape != (config.n_products, config.horizon):
        raise ValueError(
            f"forecast: expected shape ({config.n_products}, {config.horizon})"
        )
    if np.any(matrix < 0):
        raise ValueError("forecast demands must be >= 0")
    return ScenarioFan(matrix[None, :, :], np.array([1.0]))


def _build(
    config: InstanceConfig,
    fan: ScenarioFan,
    kind: str,
    loans: bool,
    formulation: str = "node",
    fixed_first_orders=None,
) -> PlannerModel:
    require_valid(config)
    if formulation not in ("node", "scenario"):
        raise ValueError(f"unknown formulation {formulation!r}")
    n, horizon, delay = config.n_products, config.horizon, config.receipt_delay
    if fan.n_products != n or fan.horizon != horizon:
        raise ValueError(
            f"scenario fan shape ({fan.n_products}, {fan.horizon}) does not match "
            f"instance ({n}, {horizon})"
        )
    n_scen = fan.n_scenarios
    price = np.asarray(config.price, dtype=float)
    unit_cost = np.asarray(config.unit_cost, dtype=float)
    repay_factor = (1.0 + config.loan_rate) ** delay

    big_m = compute_big_m(config, fan.demands.max(axis=0))
    model = LinearModel(name=f"{kind}", maximize=True)

    levels = None
    node_of = None
    if formulation == "node":
        levels, node_of = _build_levels(fan.demands)

    order_vars: dict = {}
    inventory_vars: dict = {}
    indicator_vars: dict = {}
    loan_vars: dict = {}

    if formulation == "node":
        for t in range(1, horizon + 1):
            for node in levels[t - 1]:
                for i in range(n):
                    order_vars[(t, node.index, i)] = model.add_variable(
                        f"q_t{t}_u{node.index}_n{i}"
                    )
            for node in levels[t]:
                for i in range(n):
                    inventory_vars[(t, node.index, i)] = model.add_variable(
                        f"i_t{t}_u{node.index}_n{i}"
                    )
                    indicator_vars[(t, node.index, i)] = model.add_variable(
                        f"b_t{t}_u{node.index}_n{i}", binary=True
                    )
                    if loans:
                        loan_vars[(t, node.index, i)] = model.add_variable(
                            f"g_t{t}_u{node.index}_n{i}"
                        )

        def order_of(s, t, i):
            return order_vars[(t, node_of[s, t - 1], i)]

        def inventory_of(s, t, i):
            return inventory_vars[(t, node_of[s, t], i)]

        def loan_of(s, t, i):
            return loan_vars[(t, node_of[s, t], i)]

    else:
        for t in range(1, horizon + 1):
            for s in range(n_scen):
                for i in range(n):
                    order_vars[(t, s, i)] = model.add_variable(f"q_t{t}_s{s}_n{i}")
                    inventory_vars[(t, s, i)] = model.add_variable(f"i_t{t}_s{s}_n{i}")
                    indicator_vars[(t, s, i)] = model.add_variable(
                        f"b_t{t}_s{s}_n{i}", binary=True
                    )
                    if loans:
                        loan_vars[(t, s, i)] = model.add_variable(f"g_t{t}_s{s}_n{i}")

        def order_of(s, t, i):
            return order_vars[(t, s, i)]

        def inventory_of(s, t, i):
            return inventory_vars[(t, s, i)]

        def loan_of(s, t, i):
            return loan_vars[(t, s, i)]

    revenue_vars = {
        (s, t, i): model.add_variable(f"r_t{t}_s{s}_n{i}", lb=-math.inf)
        for s in range(n_scen)
        for t in range(1, horizon + delay + 1)
        for i in range(n)
    }
    cash_vars = {
        (s, t): model.add_variable(f"c_t{t}_s{s}", lb=-math.inf)
        for s in range(n_scen)
        for t in range(horizon + 1)
    }
    final_cash_vars = {
        s: model.add_variable(f"fc_s{s}", lb=-math.inf) for s in range(n_scen)
    }
    for s in range(n_scen):
        model.fix_variable(cash_vars[(s, 0)], config.initial_cash)

    # Inventory flow linearization (one block per post-demand decision unit).
    if formulation == "node":
        flow_units = [
            (t, node, node.scenarios[0]) for t in range(1, horizon + 1) for node in levels[t]
        ]
    else:
        flow_units = [
            (t, None, s) for t in range(1, horizon + 1) for s in range(n_scen)
        ]
    for t, node, s in flow_units:
        for i in range(n):
            inv = inventory_of(s, t, i)
            flag = (
                indicator_vars[(t, node.index, i)]
                if formulation == "node"
                else indicator_vars[(t, s, i)]
            )
            order = order_of(s, t, i)
            demand = float(fan.demands[s, i, t - 1])
            limit = float(big_m.values[i, t - 1])
            flow = [(order, 1.0)]
            flow_const = 0.0
            if t == 1:
                flow_const = float(config.initial_inventory[i])
            else:
                flow.append((inventory_of(s, t - 1, i), 1.0))
            negative_flow = [(var, -coef) for var, coef in flow]

            model.add_constraint(
                [(inv, 1.0), *negative_flow, (flag, limit)],
                "<=",
                flow_const - demand + limit,
            )
            model.add_constraint(
                [(inv, 1.0), *negative_flow, (flag, -limit)],
                ">=",
                flow_const - demand - limit,
            )
            model.add_constraint(
                [*flow, (flag, -limit)], ">=", demand - limit - flow_const
            )
            model.add_constraint([*flow, (flag, -limit)], "<=", demand - flow_const)
            model.add_constraint([(inv, 1.0), (flag, -limit)], "<=", 0.0)
            if loans:
                loan = loan_of(s, t, i)
                model.add_constraint(
                    [(loan, 1.0), *negative_flow, (inv, 1.0)], "<=", flow_const
                )

    # Revenue definitions over periods 1..T+L.
    for s in range(n_scen):
        for t in range(1, horizon + delay + 1):
            sale_period = t - delay
            for i in range(n):
                coeffs = [(revenue_vars[(s, t, i)], 1.0)]
                rhs = 0.0
                if loans and t <= horizon:
                    coeffs.append((loan_of(s, t, i), -price[i]))
                if sale_period >= 1:
                    coeffs.append((order_of(s, sale_period, i), -price[i]))
                    coeffs.append((inventory_of(s, sale_period, i), price[i]))
                    if sale_period == 1:
                        rhs += price[i] * float(config.initial_inventory[i])
                    else:
                        coeffs.append((inventory_of(s, sale_period - 1, i), -price[i]))
                    if loans:
                        coeffs.append((loan_of(s, sale_period, i), price[i] * repay_factor))
                model.add_constraint(coeffs, "==", rhs)

    # Cash balance and the per-period cash constraint on purchases.
    for s in range(n_scen):
        for t in range(1, horizon + 1):
            coeffs = [(cash_vars[(s, t)], 1.0), (cash_vars[(s, t - 1)], -1.0)]
            for i in range(n):
                coeffs.append((revenue_vars[(s, t, i)], -1.0))
                coeffs.append((order_of(s, t, i), unit_cost[i]))
            model.add_constraint(coeffs, "==", -float(config.overhead[t - 1]))

    if formulation == "node":
        purchase_units = [
            (t, node.scenarios[0]) for t in range(1, horizon + 1) for node in levels[t - 1]
        ]
    else:
        purchase_units = [(t, s) for t in range(1, horizon + 1) for s in range(n_scen)]
    for t, s in purchase_units:
        coeffs = [(order_of(s, t, i), unit_cost[i]) for i in range(n)]
        coeffs.append((cash_vars[(s, t - 1)], -1.0))
        model.add_constraint(coeffs, "<=", 0.0)

    # Final cash: end-of-horizon balance plus discounted tail receipts.
    for s in range(n_scen):
        coeffs = [(final_cash_vars[s], 1.0), (cash_vars[(s, horizon)], -1.0)]
        for k in range(1, delay + 1):
            discount = (1.0 + config.discount_rate) ** (-k)
            for i in range(n):
                coeffs.append((revenue_vars[(s, horizon + k, i)], -discount))
        model.add_constraint(coeffs, "==", 0.0)

    # Horizon loan cap per scenario.
    if loans:
        for s in range(n_scen):
            coeffs = [
                (loan_of(s, t, i), price[i])
                for t in range(1, horizon + 1)
                for i in range(n)
            ]
            model.add_constraint(coeffs, "<=", config.loan_limit)

    # Explicit non-anticipativity (scenario formulation only): each decision
    # equals the probability-weighted average over its information class.
    if formulation == "scenario":
        prefixes = [
            {s: fan.demands[s, :, :t].tobytes() for s in range(n_scen)}
            for t in range(horizon + 1)
        ]
        probs = fan.probabilities

        def add_averaging(var_of, t, info_t):
            classes: dict[bytes, list[int]] = {}
            for s in range(n_scen):
                classes.setdefault(prefixes[info_t][s], []).append(s)
            for members in classes.values():
                if len(members) < 2:
                    continue
                total = float(probs[members].sum())
                for i in range(n):
                    for s in members:
                        coeffs = {var_of(m, t, i): float(probs[m]) for m in members}
                        key = var_of(s, t, i)
                        coeffs[key] = coeffs.get(key, 0.0) - total
                        model.add_constraint(coeffs, "==", 0.0)

        for t in range(1, horizon + 1):
            add_averaging(order_of, t, t - 1)
            add_averaging(inventory_of, t, t)
            add_averaging(
                lambda s, tt, i: (
                    indicator_vars[(tt, s, i)]
                ),
                t,
                t,
            )
            if loans:
                add_averaging(loan_of, t, t)

    if fixed_first_orders is not None:
        fixed = np.asarray(fixed_first_orders, dtype=float)
        if fixed.shape != (n,):
            raise ValueError(f"fixed_first_orders: expected shape ({n},)")
        seen = set()
        for s in range(n_scen):
            for i in range(n):
                var = order_of(s, 1, i)
                if var not in seen:
                    model.fix_variable(var, max(0.0, float(fixed[i])))
                    seen.add(var)

    model.set_objective(
        {final_cash_vars[s]: float(fan.probabilities[s]) for s in range(n_scen)}
    )

    return PlannerModel(
        kind=kind,
        loans=loans,
        formulation=formulation,
        config=config,
        fan=fan,
        model=model,
        big_m=big_m,
        order_vars=order_vars,
        inventory_vars=inventory_vars,
        indicator_vars=indicator_vars,
        loan_vars=loan_vars,
        revenue_vars=revenue_vars,
        cash_vars=cash_vars,
        final_cash_vars=final_cash_vars,
        node_of=node_of,
    )


def build_so_d(config: InstanceConfig, forecast=None) -> PlannerModel:
    """Deterministic model, self-owned cash only; forecast defaults to regime means."""
    if forecast is None:
        forecast = mean_forecast(config)
    return _build(config, _forecast_fan(config, forecast), "so-d", loans=False)


def build_ol_d(config: InstanceConfig, forecast=None) -> PlannerModel:
    """Deterministic model with order-based loans."""
    if forecast is None:
        forecast = mean_forecast(config)
    return _build(config, _forecast_fan(config, forecast), "ol-d", loans=True)


def build_so_s(
    config: InstanceConfig,
    scenarios,
    formulation: str = "node",
    fixed_first_orders=None,
) -> PlannerModel:
    """Stochastic model, self-owned cash only, over a tree or fan."""
    return _build(
        config,
        _as_fan(scenarios),
        "so-s",
        loans=False,
        formulation=formulation,
        fixed_first_orders=fixed_first_orders,
    )


def build_ol_s(
    config: InstanceConfig,
    scenarios,
    formulation: str = "node",
    fixed_first_orders=None,
) -> PlannerModel:
    """Stochastic model with order-based loans, over a tree or fan."""
    return _build(
        config,
        _as_fan(scenarios),
        "ol-s",
        loans=True,
        formulation=formulation,
        fixed_first_orders=fixed_first_orders,
    )


@dataclass(frozen=True)
class ScenarioRaw:
    """Raw solver values for one scenario, before any replay through core."""

    orders: np.ndarray
    loans: np.ndarray
    inventory: np.ndarray
    indicators: np.ndarray
    revenue: np.ndarray
    cash: np.ndarray
    final_cash: float


@dataclass
class PlanSolution:
    """Solved plan: objective, per-scenario trajectories and raw solver values."""

    kind: str
    status: str
    objective: float
    gap: float | None
    wall_time: float
    probabilities: np.ndarray
    trajectories: list[Trajectory]
    raw: list[ScenarioRaw]
    first_period_orders: np.ndarray

    @property
    def expected_final_cash(self) -> float:
        return float(
            sum(p * t.final_cash for p, t in zip(self.probabilities, self.trajectories))
        )

    def replay_deviation(self) -> float:
        """Largest absolute gap between raw solver state and the exact recursions."""
        worst = 0.0
        for raw, trajectory in zip(self.raw, self.trajectories):
            worst = max(
                worst,
                float(np.max(np.abs(raw.inventory - trajectory.inventory[:, 1:]))),
                float(np.max(np.abs(raw.revenue - trajectory.revenue))),
                float(np.max(np.abs(raw.cash - trajectory.cash))),
                abs(raw.final_cash - trajectory.final_cash),
            )
        return worst


def solve(planner: PlannerModel, options: SolveOptions | None = None) -> PlanSolution:
    """Solve a built model, extract per-scenario plans and cross-check them.

    Infeasibility is fatal by design: the zero-order plan is always
    feasible, so it can only mean the model was built wrong.  A time limit
    returns the best incumbent flagged as non-optimal.
    """
    outcome = solve_model(planner.model, options)
    if outcome.status == "infeasible":
        raise RuntimeError(
            f"{planner.kind}: solver reports infeasible, which indicates a model "
            f"construction bug ({outcome.message})"
        )
    if not outcome.has_solution:
        raise RuntimeError(f"{planner.kind}: solve failed: {outcome.status} {outcome.message}")

    solution = _extract(planner, outcome)
    _check_solution(planner, solution, outcome)
    return solution


def _extract(planner: PlannerModel, outcome: SolveOutcome) -> PlanSolution:
    values = outcome.values
    config = planner.config
    fan = planner.fan
    n, horizon, delay = config.n_products, config.horizon, config.receipt_delay
    node_of = planner.node_of

    def order_var(s, t, i):
        if planner.formulation == "node":
            return planner.order_vars[(t, node_of[s, t - 1], i)]
        return planner.order_vars[(t, s, i)]

    def post_var(table, s, t, i):
        if planner.formulation == "node":
            return table[(t, node_of[s, t], i)]
        return table[(t, s, i)]

    trajectories = []
    raws = []
    for s in range(fan.n_scenarios):
        orders = np.array(
            [[values[order_var(s, t, i)] for t in range(1, horizon + 1)] for i in range(n)]
        )
        if planner.loans:
            loans = np.array(
                [
                    [values[post_var(planner.loan_vars, s, t, i)] for t in range(1, horizon + 1)]
                    for i in range(n)
                ]
            )
        else:
            loans = np.zeros((n, horizon))
        inventory = np.array(
            [
                [values[post_var(planner.inventory_vars, s, t, i)] for t in range(1, horizon + 1)]
                for i in range(n)
            ]
        )
        indicators = np.array(
            [
                [values[post_var(planner.indicator_vars, s, t, i)] for t in range(1, horizon + 1)]
                for i in range(n)
            ]
        )
        revenue = np.array(
            [
                [values[planner.revenue_vars[(s, t, i)]] for t in range(1, horizon + delay + 1)]
                for i in range(n)
            ]
        )
        cash = np.array([values[planner.cash_vars[(s, t)]] for t in range(horizon + 1)])
        final_cash = float(values[planner.final_cash_vars[s]])
        raws.append(
            ScenarioRaw(
                orders=orders,
                loans=loans,
                inventory=inventory,
                indicators=indicators,
                revenue=revenue,
                cash=cash,
                final_cash=final_cash,
            )
        )
        trajectories.append(
            simulate(
                config,
                fan.demands[s],
                np.maximum(orders, 0.0),
                np.maximum(loans, 0.0),
                loans_enabled=planner.loans,
            )
        )

    first = np.array(
        [values[order_var(0, 1, i)] for i in range(n)]
    )
    return PlanSolution(
        kind=planner.kind,
        status=outcome.status,
        objective=float(outcome.objective),
        gap=outcome.gap,
        wall_time=outcome.wall_time,
        probabilities=fan.probabilities.copy(),
        trajectories=trajectories,
        raw=raws,
        first_period_orders=first,
    )


def _check_solution(planner: PlannerModel, solution: PlanSolution, outcome: SolveOutcome) -> None:
    config = planner.config
    scale = max(1.0, abs(solution.objective))
    recomputed = solution.expected_final_cash
    if abs(recomputed - solution.objective) > 1e-4 * scale:
        raise RuntimeError(
            f"{planner.kind}: objective {solution.objective} does not reconstruct from "
            f"replayed trajectories ({recomputed})"
        )
    unit_cost = np.asarray(config.unit_cost, dtype=float)
    price = np.asarray(config.price, dtype=float)
    for s, raw in enumerate(solution.raw):
        fc_scale = max(1.0, abs(raw.final_cash))
        if abs(raw.final_cash - solution.trajectories[s].final_cash) > 1e-4 * fc_scale:
            raise RuntimeError(
                f"{planner.kind}: scenario {s} final cash mismatch between solver "
                f"({raw.final_cash}) and replay ({solution.trajectories[s].final_cash})"
            )
        for t in range(1, config.horizon + 1):
            spend = float(unit_cost @ raw.orders[:, t - 1])
            if spend > raw.cash[t - 1] + 1e-6 * max(1.0, abs(raw.cash[t - 1])):
                raise RuntimeError(
                    f"{planner.kind}: scenario {s} period {t} violates the cash constraint"
                )
        if planner.loans:
            used = float((price[:, None] * raw.loans).sum())
            if used > config.loan_limit + 1e-6 * max(1.0, config.loan_limit):
                raise RuntimeError(
                    f"{planner.kind}: scenario {s} exceeds the loan cap ({used})"
                )


# ---------------------------------------------------------------------------
# Solution export
# ---------------------------------------------------------------------------

def solution_to_dict(solution: PlanSolution) -> dict:
    scenarios = []
    for s, trajectory in enumerate(solution.trajectories):
        scenarios.append(
            {
                "probability": float(solution.probabilities[s]),
                "order_quantities": trajectory.order_quantities.tolist(),
                "loan_quantities": trajectory.loan_quantities.tolist(),
                "inventory": trajectory.inventory.tolist(),
                "revenue": trajectory.revenue.tolist(),
                "cash": trajectory.cash.tolist(),
                "final_cash": trajectory.final_cash,
            }
        )
    return {
        "kind": solution.kind,
        "status": solution.status,
        "objective": solution.objective,
        "gap": solution.gap,
        "first_period_orders": solution.first_period_orders.tolist(),
        "scenarios": scenarios,
    }


def save_solution(solution: PlanSolution, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(solution_to_dict(solution), handle, indent=2, sort_keys=True)
        handle.write("\n")


def save_solution_summary(
    solution: PlanSolution, config: InstanceConfig, path: str | Path
) -> None:
    """One CSV row per scenario: probability, final cash, total loan revenue used."""
    price = np.asarray(config.price, dtype=float)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["scenario", "probability", "final_cash", "loan_revenue_used"])
        for s, trajectory in enumerate(solution.trajectories):
            used = float((price[:, None] * trajectory.loan_quantities).sum())
            writer.writerow(
                [
                    s,
                    repr(float(solution.probabilities[s])),
                    repr(float(trajectory.final_cash)),
                    repr(used),
                ]
            )
