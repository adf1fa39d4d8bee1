"""Scenario reduction by fast forward selection.

Greedy selection: repeatedly pick the scenario minimizing the total
probability-weighted distance from the unselected scenarios to the
selected set, then hand each unselected scenario's probability to its
nearest selected neighbor.  The selection order is deterministic and the
selection for a smaller target count is always a prefix of the selection
for a larger one.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class ScenarioFan:
    """Flat list of full-horizon demand paths (scenarios, products, periods)."""

    demands: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        demands = np.asarray(self.demands, dtype=float)
        probs = np.asarray(self.probabilities, dtype=float)
        if demands.ndim != 3:
            raise ValueError("demands must have shape (scenarios, products, periods)")
        if probs.shape != (demands.shape[0],):
            raise ValueError("probabilities must have one entry per scenario")
        if np.any(probs < -1e-12):
            raise ValueError("scenario probabilities must be >= 0")
        if abs(probs.sum() - 1.0) > 1e-6:
            raise ValueError(f"scenario probabilities must sum to 1 (got {probs.sum()})")
        object.__setattr__(self, "demands", demands)
        object.__setattr__(self, "probabilities", probs)

    @property
    def n_scenarios(self) -> int:
        return self.demands.shape[0]

    @property
    def n_products(self) -> int:
        return self.demands.shape[1]

    @property
    def horizon(self) -> int:
        return self.demands.shape[2]

    def duplicate_groups(self) -> list[list[int]]:
        """Indices of scenarios sharing an identical demand path."""
        seen: dict[bytes, list[int]] = {}
        for index in range(self.n_scenarios):
            seen.setdefault(self.demands[index].tobytes(), []).append(index)
        return [group for group in seen.values() if len(group) > 1]


def pairwise_distance(a, b) -> float:
    """Euclidean distance between two (products, periods) demand matrices."""
    first = np.asarray(a, dtype=float)
    second = np.asarray(b, dtype=float)
    if first.shape != second.shape:
        raise ValueError(f"scenario shapes differ: {first.shape} vs {second.shape}")
    return float(np.linalg.norm(first - second))


@dataclass(frozen=True)
class ReductionResult:
    """Outcome of one fast-forward-selection run."""

    selection_order: tuple[int, ...]
    probabilities: np.ndarray  # aligned with selection_order
    assignment: dict[int, int]  # unselected index -> nearest selected index
    total_weighted_distance: float
    n_original: int

    def reduced_fan(self, fan: ScenarioFan) -> ScenarioFan:
        """Selected scenarios (ascending original index) with redistributed probabilities."""
        order = np.argsort(self.selection_order)
        indices = np.array(self.selection_order)[order]
        probs = self.probabilities[order]
        return ScenarioFan(fan.demands[indices], probs / probs.sum())

    def to_dict(self) -> dict:
        return {
            "n_original": self.n_original,
            "selection_order": [int(i) for i in self.selection_order],
            "probabilities": {
                str(int(i)): float(p)
                for i, p in zip(self.selection_order, self.probabilities)
            },
            "assignment": {str(int(j)): int(i) for j, i in sorted(self.assignment.items())},
            "total_weighted_distance": float(self.total_weighted_distance),
        }


def fast_forward_select(fan: ScenarioFan, k: int) -> ReductionResult:
    """Reduce the fan to k scenarios; ties in every argmin break to the lowest index."""
    size = fan.n_scenarios
    if not 1 <= k <= size:
        raise ValueError(f"k must satisfy 1 <= k <= {size}, got {k}")

    flat = fan.demands.reshape(size, -1)
    base_distance = cdist(flat, flat)
    probs = fan.probabilities

    distance = base_distance.copy()
    unselected = np.arange(size)
    selection: list[int] = []
    for _ in range(k):
        block = distance[np.ix_(unselected, unselected)]
        weighted = probs[unselected] @ block
        pick = unselected[int(np.argmin(weighted))]
        selection.append(int(pick))
        keep = unselected != pick
        remaining = unselected[keep]
        if remaining.size:
            sub = distance[np.ix_(remaining, remaining)]
            against_pick = distance[remaining, pick][:, None]
            distance[np.ix_(remaining, remaining)] = np.minimum(sub, against_pick)
        unselected = remaining

    selected_sorted = np.sort(np.array(selection))
    new_probs = {index: float(probs[index]) for index in selection}
    assignment: dict[int, int] = {}
    total = 0.0
    for j in unselected:
        nearest = selected_sorted[int(np.argmin(base_distance[j, selected_sorted]))]
        assignment[int(j)] = int(nearest)
        new_probs[int(nearest)] += float(probs[j])
        total += float(probs[j] * base_distance[j, nearest])

    return ReductionResult(
        selection_order=tuple(selection),
        probabilities=np.array([new_probs[index] for index in selection]),
        assignment=assignment,
        total_weighted_distance=total,
        n_original=size,
    )


# ---------------------------------------------------------------------------
# Fan CSV format: one row per path, probability first, then demand values in
# (period-major, product-minor) order.  Headers carry the t/n labels.
# ---------------------------------------------------------------------------

def write_fan_csv(fan: ScenarioFan, path: str | Path) -> None:
    header = ["probability"] + [
        f"d_t{t + 1}_n{n + 1}" for t in range(fan.horizon) for n in range(fan.n_products)
    ]
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for s in range(fan.n_scenarios):
            row = [repr(float(fan.probabilities[s]))]
            for t in range(fan.horizon):
                row.extend(repr(float(v)) for v in fan.demands[s, :, t])
            writer.writerow(row)


def read_fan_csv(path: str | Path) -> ScenarioFan:
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[0] != "probability":
            raise ValueError(f"{path}: not a scenario fan CSV")
        labels = header[1:]
        n_products = max(int(lab.split("_n")[1]) for lab in labels)
        horizon = max(int(lab.split("_t")[1].split("_n")[0]) for lab in labels)
        probabilities = []
        demands = []
        for row in reader:
            if not row:
                continue
            probabilities.append(float(row[0]))
            values = np.array([float(v) for v in row[1:]])
            demands.append(values.reshape(horizon, n_products).T)
    if not probabilities:
        raise ValueError(f"{path}: fan CSV has no scenarios")
    return ScenarioFan(np.array(demands), np.array(probabilities))


def save_reduction(result: ReductionResult, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(result.to_dict(), handle, indent=2, sort_keys=True)
        handle.write("\n")
