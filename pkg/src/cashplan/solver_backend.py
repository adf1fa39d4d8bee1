"""Solver-agnostic MILP layer.

Planner code builds a :class:`LinearModel` and calls :func:`solve_model`;
nothing outside this module touches a concrete solver.  The default (and
currently only) backend is HiGHS through ``scipy.optimize.milp``, selected
via the ``PLANNER_SOLVER`` environment variable.  HiGHS runs
single-threaded and deterministic, which the test suite relies on.

Models can be dumped to and re-read from a plain LP text format for
debugging; the exact grammar emitted is documented in docs/formats.md.
"""

from __future__ import annotations

import math
import os
import re
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, milp

_SENSES = ("<=", ">=", "==")


@dataclass
class SolveOptions:
    gap: float = 1e-6
    time_limit: float = 600.0
    verbose: bool = False


@dataclass
class SolveOutcome:
    status: str
    objective: float | None
    values: np.ndarray | None
    gap: float | None
    wall_time: float
    message: str = ""

    @property
    def has_solution(self) -> bool:
        return self.status in ("optimal", "feasible")


@dataclass
class _Constraint:
    coeffs: dict[int, float]
    sense: str
    rhs: float
    name: str


class LinearModel:
    """A mutable linear program/MILP: variables, linear rows, one objective."""

    def __init__(self, name: str = "model", maximize: bool = True):
        self.name = name
        self.maximize = maximize
        self.var_names: list[str] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.binary: list[bool] = []
        self.constraints: list[_Constraint] = []
        self.objective: dict[int, float] = {}
        self.objective_constant: float = 0.0

    @property
    def n_variables(self) -> int:
        return len(self.var_names)

    def add_variable(
        self,
        name: str | None = None,
        lb: float = 0.0,
        ub: float = math.inf,
        binary: bool = False,
    ) -> int:
        index = len(self.var_names)
        self.var_names.append(name if name is not None else f"x{index}")
        if binary:
            lb, ub = 0.0, 1.0
        if not (math.isfinite(lb) or lb == -math.inf) or math.isnan(ub):
            raise ValueError(f"variable {name}: bad bounds ({lb}, {ub})")
        self.lower.append(lb)
        self.upper.append(ub)
        self.binary.append(binary)
        return index

    def fix_variable(self, index: int, value: float) -> None:
        self.lower[index] = value
        self.upper[index] = value

    def add_constraint(self, coeffs, sense: str, rhs: float, name: str | None = None) -> int:
        if sense not in _SENSES:
            raise ValueError(f"unknown constraint sense {sense!r}")
        merged: dict[int, float] = {}
        items = coeffs.items() if isinstance(coeffs, dict) else coeffs
        for index, coef in items:
            if not 0 <= index < len(self.var_names):
                raise ValueError(f"constraint references undeclared variable index {index}")
            if not math.isfinite(coef):
                raise ValueError(f"non-finite coefficient {coef} on variable {index}")
            merged[index] = merged.get(index, 0.0) + float(coef)
        row = _Constraint(merged, sense, float(rhs), name or f"c{len(self.constraints)}")
        self.constraints.append(row)
        return len(self.constraints) - 1

    def set_objective(self, coeffs, constant: float = 0.0) -> None:
        merged: dict[int, float] = {}
        items = coeffs.items() if isinstance(coeffs, dict) else coeffs
        for index, coef in items:
            if not 0 <= index < len(self.var_names):
                raise ValueError(f"objective references undeclared variable index {index}")
            merged[index] = merged.get(index, 0.0) + float(coef)
        self.objective = merged
        self.objective_constant = float(constant)


def solve_model(model: LinearModel, options: SolveOptions | None = None) -> SolveOutcome:
    """Solve the model with the backend named by PLANNER_SOLVER (default highs)."""
    backend = os.environ.get("PLANNER_SOLVER", "highs").lower()
    if backend != "highs":
        raise ValueError(f"unknown solver backend {backend!r} (supported: highs)")
    return _solve_highs(model, options or SolveOptions())


def _solve_highs(model: LinearModel, options: SolveOptions) -> SolveOutcome:
    n = model.n_variables
    cost = np.zeros(n)
    for index, coef in model.objective.items():
        cost[index] = -coef if model.maximize else coef

    integrality = np.array([1 if flag else 0 for flag in model.binary])
    bounds = Bounds(np.array(model.lower), np.array(model.upper))

    constraints = []
    if model.constraints:
        data, row_idx, col_idx = [], [], []
        low = np.empty(len(model.constraints))
        high = np.empty(len(model.constraints))
        for r, row in enumerate(model.constraints):
            for index, coef in row.coeffs.items():
                data.append(coef)
                row_idx.append(r)
                col_idx.append(index)
            if row.sense == "<=":
                low[r], high[r] = -np.inf, row.rhs
            elif row.sense == ">=":
                low[r], high[r] = row.rhs, np.inf
            else:
                low[r], high[r] = row.rhs, row.rhs
        matrix = sparse.csr_array(
            (data, (row_idx, col_idx)), shape=(len(model.constraints), n)
        )
        constraints = [LinearConstraint(matrix, low, high)]

    milp_options = {
        "disp": options.verbose,
        "mip_rel_gap": options.gap,
        "time_limit": options.time_limit,
        "presolve": True,
    }
    start = time.perf_counter()
    result = milp(
        c=cost,
        constraints=constraints,
        integrality=integrality,
        bounds=bounds,
        options=milp_options,
    )
    elapsed = time.perf_counter() - start

    status_map = {0: "optimal", 1: "feasible", 2: "infeasible", 3: "unbounded", 4: "error"}
    status = status_map.get(result.status, "error")
    if status == "feasible" and result.x is None:
        status = "error"

    objective = None
    values = None
    if result.x is not None:
        values = np.asarray(result.x, dtype=float)
        raw = float(result.fun)
        objective = (-raw if model.maximize else raw) + model.objective_constant
    gap = getattr(result, "mip_gap", None)
    if gap is None and status == "optimal":
        gap = 0.0
    return SolveOutcome(
        status=status,
        objective=objective,
        values=values,
        gap=gap,
        wall_time=elapsed,
        message=str(result.message),
    )


# ---------------------------------------------------------------------------
# LP text dump (subset of the CPLEX LP grammar; see docs/formats.md)
# ---------------------------------------------------------------------------

def _format_terms(coeffs: dict[int, float]) -> str:
    parts = []
    for index in sorted(coeffs):
        coef = coeffs[index]
        if coef == 0.0:
            continue
        sign = "-" if coef < 0 else "+"
        parts.append(f"{sign} {abs(coef)!r} x{index}")
    if not parts:
        return "0 x0"
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


def write_lp(model: LinearModel) -> str:
    """Serialize the model to LP text with canonical x{i}/c{j} names."""
    lines = [f"\\ cashplan lp dump: {model.name}"]
    if model.objective_constant:
        lines.append(f"\\ objective-constant: {model.objective_constant!r}")
    lines.append("Maximize" if model.maximize else "Minimize")
    lines.append(f" obj: {_format_terms(model.objective)}")
    lines.append("Subject To")
    sense_text = {"<=": "<=", ">=": ">=", "==": "="}
    for r, row in enumerate(model.constraints):
        lines.append(f" c{r}: {_format_terms(row.coeffs)} {sense_text[row.sense]} {row.rhs!r}")
    lines.append("Bounds")
    for index in range(model.n_variables):
        if model.binary[index]:
            continue
        lb, ub = model.lower[index], model.upper[index]
        lo = "-inf" if lb == -math.inf else repr(lb)
        hi = "+inf" if ub == math.inf else repr(ub)
        lines.append(f" {lo} <= x{index} <= {hi}")
    binaries = [f"x{i}" for i in range(model.n_variables) if model.binary[i]]
    if binaries:
        lines.append("Binaries")
        lines.append(" " + " ".join(binaries))
    lines.append("End")
    return "\n".join(lines) + "\n"


_VAR_RE = re.compile(r"^x(\d+)$")


def _parse_terms(tokens: list[str]) -> dict[int, float]:
    coeffs: dict[int, float] = {}
    sign = 1.0
    pending: float | None = None
    for token in tokens:
        if token == "+":
            sign, pending = 1.0, None
            continue
        if token == "-":
            sign, pending = -1.0, None
            continue
        match = _VAR_RE.match(token)
        if match:
            index = int(match.group(1))
            coef = sign * (pending if pending is not None else 1.0)
            coeffs[index] = coeffs.get(index, 0.0) + coef
            sign, pending = 1.0, None
        else:
            pending = float(token)
    return coeffs


def read_lp(text: str) -> LinearModel:
    """Parse LP text produced by :func:`write_lp` back into a LinearModel."""
    maximize = True
    objective_constant = 0.0
    objective: dict[int, float] = {}
    rows: list[tuple[dict[int, float], str, float]] = []
    bounds: dict[int, tuple[float, float]] = {}
    binaries: set[int] = set()
    max_index = -1
    section = None

    for raw_line in text.splitlines():
        line = raw_line.strip()
        if not line:
            continue
        if line.startswith("\\"):
            comment = line[1:].strip()
            if comment.startswith("objective-constant:"):
                objective_constant = float(comment.split(":", 1)[1])
            continue
        keyword = line.lower()
        if keyword in ("maximize", "minimize"):
            maximize = keyword == "maximize"
            section = "objective"
            continue
        if keyword == "subject to":
            section = "constraints"
            continue
        if keyword == "bounds":
            section = "bounds"
            continue
        if keyword == "binaries":
            section = "binaries"
            continue
        if keyword == "end":
            break

        if section == "objective":
            body = line.split(":", 1)[1] if ":" in line else line
            objective = _parse_terms(body.split())
            if objective:
                max_index = max(max_index, max(objective))
        elif section == "constraints":
            body = line.split(":", 1)[1] if ":" in line else line
            tokens = body.split()
            sense_pos = next(i for i, tok in enumerate(tokens) if tok in ("<=", ">=", "="))
            sense = "==" if tokens[sense_pos] == "=" else tokens[sense_pos]
            coeffs = _parse_terms(tokens[:sense_pos])
            rhs = float(tokens[sense_pos + 1])
            rows.append((coeffs, sense, rhs))
            if coeffs:
                max_index = max(max_index, max(coeffs))
        elif section == "bounds":
            tokens = line.split()
            # form: <lo> <= x<i> <= <hi>
            lo = -math.inf if tokens[0] == "-inf" else float(tokens[0])
            hi = math.inf if tokens[4] == "+inf" else float(tokens[4])
            index = int(_VAR_RE.match(tokens[2]).group(1))
            bounds[index] = (lo, hi)
            max_index = max(max_index, index)
        elif section == "binaries":
            for token in line.split():
                index = int(_VAR_RE.match(token).group(1))
                binaries.add(index)
                max_index = max(max_index, index)

    model = LinearModel(name="lp-import", maximize=maximize)
    for index in range(max_index + 1):
        if index in binaries:
            model.add_variable(binary=True)
        else:
            lo, hi = bounds.get(index, (0.0, math.inf))
            model.add_variable(lb=lo, ub=hi)
    for coeffs, sense, rhs in rows:
        model.add_constraint(coeffs, sense, rhs)
    model.set_objective(objective, constant=objective_constant)
    return model
