"""Shared types: datasets, pipeline configuration, seeded randomness, CSV ingestion."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class ConfigError(ValueError):
    """Invalid pipeline configuration."""


class NumericalError(RuntimeError):
    """A numerical routine failed to converge or produced an unusable result."""


_U64_MASK = 0xFFFF_FFFF_FFFF_FFFF


class RandomStream:
    """Deterministic random source keyed by (seed, stream).

    The same key yields a bit-identical draw sequence across runs, processes
    and platforms, which is what makes tree-level parallelism safe: worker t
    always consumes RandomStream(seed, t) regardless of execution order.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(entropy=self.seed & _U64_MASK,
                                    spawn_key=(self.stream,))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, stream: int) -> "RandomStream":
        return RandomStream(self.seed, stream)

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream={self.stream})"


_FAMILIES = ("axis", "linear", "quadratic", "gmm")
_DEFAULT_SCHEDULE = {"0-1": "axis", "2-4": "linear", "5+": "quadratic"}


class LearnerSchedule:
    """Maps node depth to the weak-learner family tried at that depth.

    The mapping is given as {"0-1": "axis", "2-4": "linear", "5+": "quadratic"}:
    inclusive ranges, "a+" open-ended, single depths as "3". Depths not covered
    by any range fall back to axis-aligned splits.
    """

    def __init__(self, spec: dict | None = None):
        spec = dict(spec) if spec is not None else dict(_DEFAULT_SCHEDULE)
        ranges = []
        for key, family in spec.items():
            if family not in _FAMILIES:
                raise ConfigError(f"unknown learner family {family!r}")
            lo, hi = self._parse_range(str(key))
            ranges.append((lo, hi, family))
        ranges.sort(key=lambda r: r[0])
        self._ranges = ranges
        self._spec = spec

    @staticmethod
    def _parse_range(key: str) -> tuple[int, int | None]:
        key = key.strip()
        try:
            if key.endswith("+") or key.endswith("-"):
                return int(key[:-1]), None
            if "-" in key:
                lo, hi = key.split("-", 1)
                lo, hi = int(lo), int(hi)
                if hi < lo:
                    raise ValueError
                return lo, hi
            return int(key), int(key)
        except ValueError:
            raise ConfigError(f"bad depth range {key!r}") from None

    def family_at(self, depth: int) -> str:
        for lo, hi, family in self._ranges:
            if depth >= lo and (hi is None or depth <= hi):
                return family
        return "axis"

    def to_spec(self) -> dict:
        return dict(self._spec)

    def __eq__(self, other):
        return isinstance(other, LearnerSchedule) and self._ranges == other._ranges

    def __repr__(self):
        return f"LearnerSchedule({self._spec!r})"


@dataclass
class PipelineConfig:
    """Knobs shared by every pipeline stage.

    num_trees and m_try default to the published operating point (200 trees,
    5 candidate splits per node); the rest are artifact defaults.
    min_component=None resolves to max(5, n // (10 * num_clusters)) at run time.
    """

    num_trees: int = 200
    m_try: int = 5
    num_clusters: int = 3
    threshold: float = 0.8
    max_depth: int = 32
    min_leaf: int = 5
    cov_regularizer: float = 1e-6
    em_tol: float = 1e-8
    em_max_iter: int = 500
    seed: int = 0
    learner_schedule: LearnerSchedule = field(default_factory=LearnerSchedule)
    affinity_mode: str = "uniform"
    min_component: int | None = None

    def __post_init__(self):
        if isinstance(self.learner_schedule, dict):
            self.learner_schedule = LearnerSchedule(self.learner_schedule)
        if self.num_trees < 1:
            raise ConfigError("num_trees must be positive")
        if self.m_try < 1:
            raise ConfigError("m_try must be positive")
        if self.num_clusters < 1:
            raise ConfigError("num_clusters must be positive")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")
        if self.max_depth < 0:
            raise ConfigError("max_depth must be non-negative")
        if self.min_leaf < 2:
            raise ConfigError("min_leaf must be at least 2")
        if self.cov_regularizer <= 0.0:
            raise ConfigError("cov_regularizer must be positive")
        if self.em_tol <= 0.0:
            raise ConfigError("em_tol must be positive")
        if self.em_max_iter < 1:
            raise ConfigError("em_max_iter must be positive")
        if self.affinity_mode not in ("binary", "uniform", "adaptive"):
            raise ConfigError(f"unknown affinity_mode {self.affinity_mode!r}")
        if self.min_component is not None and self.min_component < 1:
            raise ConfigError("min_component must be positive when given")

    def resolve_min_component(self, n: int) -> int:
        if self.min_component is not None:
            return self.min_component
        return max(5, n // (10 * self.num_clusters))

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.to_spec() if f.name == "learner_schedule" else value
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_json_file(cls, path) -> "PipelineConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(raw)


@dataclass
class Dataset:
    """Feature matrix with optional integer labels in the last position.

    Labels are remapped to contiguous ids 0..C-1 (ascending original value)
    so downstream contingency tables can index directly.
    """

    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise DataError("features must be a 2-d array")
        n, d = feats.shape
        if n < 1 or d < 1:
            raise DataError("need at least one row and one feature")
        if not np.all(np.isfinite(feats)):
            raise DataError("features contain non-finite values")
        self.features = feats
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (n,):
                raise DataError("labels must align with rows")
            _, inverse = np.unique(labels, return_inverse=True)
            self.labels = inverse.astype(np.int64)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


def load_csv(path, has_labels: bool = False, skip_header: bool = False) -> Dataset:
    """Read a comma-separated UTF-8 file into a Dataset.

    Labels, when present, occupy the final column and must be integral.
    Errors report 1-based physical line numbers.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    rows = []
    width = None
    start = 1 if skip_header else 0
    for lineno, line in enumerate(lines, start=1):
        if lineno == 1 and skip_header:
            continue
        text = line.strip()
        if not text:
            continue
        cells = text.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise DataError(
                f"line {lineno}: expected {width} columns, got {len(cells)}")
        values = []
        for cell in cells:
            try:
                value = float(cell)
            except ValueError:
                raise DataError(
                    f"line {lineno}: non-numeric value {cell.strip()!r}") from None
            if not np.isfinite(value):
                raise DataError(f"line {lineno}: non-finite value {cell.strip()!r}")
            values.append(value)
        rows.append((lineno, values))

    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.array([values for _, values in rows], dtype=np.float64)
    if not has_labels:
        return Dataset(data)
    if data.shape[1] < 2:
        raise DataError(f"{path}: need a feature column besides the label column")
    raw_labels = data[:, -1]
    for (lineno, _), value in zip(rows, raw_labels):
        if value != int(value):
            raise DataError(f"line {lineno}: label {value!r} is not an integer")
    return Dataset(data[:, :-1], raw_labels.astype(np.int64))


def save_csv(ds: Dataset, path) -> None:
    """Write features (and labels, if any) back out; floats keep full precision."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(ds.n):
            cells = [repr(float(v)) for v in ds.features[i]]
            if ds.labels is not None:
                cells.append(str(int(ds.labels[i])))
            fh.write(",".join(cells) + "\n")


def standardize(ds: Dataset) -> Dataset:
    """Min-max scale each feature to [0, 1]; constant columns map to zeros.

    Applying the transform twice equals applying it once.
    """
    lo = ds.features.min(axis=0)
    hi = ds.features.max(axis=0)
    span = hi - lo
    scaled = np.zeros_like(ds.features)
    live = span > 0
    scaled[:, live] = (ds.features[:, live] - lo[live]) / span[live]
    return Dataset(scaled, None if ds.labels is None else ds.labels.copy())
