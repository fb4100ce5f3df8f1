"""Turn an affinity matrix into hard seed assignments for constrained EM.

Strong relations survive a threshold; connected components of the surviving
graph that are large enough become seed groups; samples whose strong
neighborhood touches more than one seed group are released back to Free.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .affinity import AffinityMatrix
from .core import ConfigError, DataError

FREE = -1


class SeedingFailure(RuntimeError):
    """Fewer qualifying components than requested clusters."""

    def __init__(self, needed: int, achieved: int, min_component: int):
        self.needed = needed
        self.achieved = achieved
        self.min_component = min_component
        super().__init__(
            f"needed {needed} components of size >= {min_component}, found {achieved}")


@dataclass
class LatentConstraints:
    """Per-sample assignment: FREE (-1) or a seed component id in 0..K-1."""
    assignments: np.ndarray
    num_components: int

    def __post_init__(self):
        arr = np.asarray(self.assignments, dtype=np.int64)
        if arr.ndim != 1:
            raise DataError("assignments must be a vector")
        if self.num_components < 1:
            raise ConfigError("num_components must be positive")
        if arr.max(initial=FREE) >= self.num_components or arr.min(initial=FREE) < FREE:
            raise DataError("assignment ids out of range")
        self.assignments = arr

    @property
    def n(self) -> int:
        return self.assignments.shape[0]

    def component_sizes(self) -> np.ndarray:
        fixed = self.assignments[self.assignments >= 0]
        return np.bincount(fixed, minlength=self.num_components)

    def to_list(self) -> list:
        return ["free" if a == FREE else int(a) for a in self.assignments]

    @classmethod
    def from_list(cls, raw: list, num_components: int) -> "LatentConstraints":
        arr = np.array([FREE if a == "free" else int(a) for a in raw], dtype=np.int64)
        return cls(arr, num_components)


def threshold_filter(aff: AffinityMatrix, threshold: float) -> AffinityMatrix:
    """Zero every off-diagonal entry below the threshold; keep the diagonal at 1."""
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError("threshold must lie in [0, 1]")
    vals = np.where(aff.values >= threshold, aff.values, 0.0)
    np.fill_diagonal(vals, 1.0)
    return AffinityMatrix(vals, mode=aff.mode)


def _adjacency(aff: AffinityMatrix) -> np.ndarray:
    adj = aff.values > 0.0
    np.fill_diagonal(adj, False)
    return adj


def connected_components(aff: AffinityMatrix) -> np.ndarray:
    """Component id per sample over edges {a_ij > 0, i != j}; ids follow first members."""
    adj = _adjacency(aff)
    comp = np.full(aff.n, -1, dtype=np.int64)
    current = 0
    for start in range(aff.n):
        if comp[start] >= 0:
            continue
        comp[start] = current
        stack = [start]
        while stack:
            i = stack.pop()
            fresh = np.flatnonzero(adj[i] & (comp < 0))
            comp[fresh] = current
            stack.extend(fresh.tolist())
        current += 1
    return comp


def seed_constraints(aff: AffinityMatrix, num_clusters: int,
                     min_component: int) -> LatentConstraints:
    """Promote the K largest components (size >= min_component) to seed groups.

    Ranking is by size descending, then by smallest member index. Raises
    SeedingFailure when fewer than K components qualify.
    """
    if num_clusters < 1:
        raise ConfigError("num_clusters must be positive")
    if min_component < 1:
        raise ConfigError("min_component must be positive")
    comp = connected_components(aff)
    sizes = np.bincount(comp)
    qualifying = np.flatnonzero(sizes >= min_component)
    if qualifying.size < num_clusters:
        raise SeedingFailure(num_clusters, int(qualifying.size), min_component)
    # component ids ascend with their first member, so a stable sort on size
    # descending breaks ties toward the smaller first member
    order = qualifying[np.argsort(-sizes[qualifying], kind="stable")]
    winners = order[:num_clusters]
    assignments = np.full(aff.n, FREE, dtype=np.int64)
    for rank, cid in enumerate(winners):
        assignments[comp == cid] = rank
    return LatentConstraints(assignments, num_clusters)


def mutual_exclusion(aff: AffinityMatrix,
                     constraints: LatentConstraints) -> LatentConstraints:
    """Release samples whose strong neighbors span two or more seed groups.

    Decisions are simultaneous against the incoming assignment. Afterwards no
    Fixed sample of one group is adjacent to a Fixed sample of another.
    """
    if constraints.n != aff.n:
        raise DataError("constraints do not match the affinity matrix")
    adj = _adjacency(aff)
    assignments = constraints.assignments.copy()
    fixed = constraints.assignments >= 0
    for i in range(aff.n):
        neighbor_tags = constraints.assignments[adj[i] & fixed]
        if neighbor_tags.size and np.unique(neighbor_tags).size >= 2:
            assignments[i] = FREE
    return LatentConstraints(assignments, constraints.num_components)


def save_constraints(constraints: LatentConstraints, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(constraints.to_list(), fh)


def load_constraints(path, num_components: int) -> LatentConstraints:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise DataError(f"{path}: expected a JSON array")
    return LatentConstraints.from_list(raw, num_components)
