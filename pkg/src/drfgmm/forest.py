"""Unsupervised random forest trained by differential-entropy gain.

Split candidates are weak learners drawn from a depth schedule: axis-aligned
thresholds near the root, banded linear projections in the middle, banded
quadratic forms below, and optionally a two-component mixture router. A
learner output of 1 routes a sample to the left child.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (ConfigError, DataError, Dataset, NumericalError,
                   PipelineConfig, RandomStream)
from .gmm import GaussianMixture, e_step, fit_em, log_gaussian_pdf

_LOG_2PI_E = math.log(2.0 * math.pi * math.e)
_BAND_TRIES = 3


class DegenerateSampleError(ValueError):
    """Raised when a sample set is too small for a covariance estimate."""


@dataclass
class AxisAligned:
    """Route left when the chosen feature is below the threshold."""
    feature: int
    threshold: float
    kind = "axis"

    def decide(self, X) -> np.ndarray:
        return X[:, self.feature] < self.threshold

    def to_dict(self) -> dict:
        return {"kind": self.kind, "feature": int(self.feature),
                "threshold": float(self.threshold)}


def _linear_scores(X, features, direction) -> np.ndarray:
    # fixed-order accumulation: a row's score must not depend on batch size,
    # because band endpoints are exact training scores
    scores = np.zeros(X.shape[0])
    for j, f in enumerate(features):
        scores += direction[j] * X[:, f]
    return scores


def _quadratic_scores(X, features, matrix) -> np.ndarray:
    cols = [X[:, f] for f in features]
    scores = np.zeros(X.shape[0])
    for j in range(len(features)):
        for k in range(len(features)):
            scores += matrix[j, k] * (cols[j] * cols[k])
    return scores


@dataclass
class LinearBand:
    """Route left when a unit-norm projection of a feature subset falls in (t_low, t_high)."""
    features: np.ndarray
    direction: np.ndarray
    t_low: float
    t_high: float
    kind = "linear"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.int64)
        self.direction = np.asarray(self.direction, dtype=np.float64)
        if not self.t_low < self.t_high:
            raise ConfigError("band requires t_low < t_high")

    def scores(self, X) -> np.ndarray:
        return _linear_scores(X, self.features, self.direction)

    def decide(self, X) -> np.ndarray:
        s = self.scores(X)
        return (s > self.t_low) & (s < self.t_high)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "features": self.features.tolist(),
                "direction": self.direction.tolist(),
                "t_low": float(self.t_low), "t_high": float(self.t_high)}


@dataclass
class QuadraticBand:
    """Route left when x' M x over a feature subset falls in (t_low, t_high); M is symmetric."""
    features: np.ndarray
    matrix: np.ndarray
    t_low: float
    t_high: float
    kind = "quadratic"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.int64)
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if not np.array_equal(self.matrix, self.matrix.T):
            raise ConfigError("quadratic form must be exactly symmetric")
        if not self.t_low < self.t_high:
            raise ConfigError("band requires t_low < t_high")

    def scores(self, X) -> np.ndarray:
        return _quadratic_scores(X, self.features, self.matrix)

    def decide(self, X) -> np.ndarray:
        s = self.scores(X)
        return (s > self.t_low) & (s < self.t_high)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "features": self.features.tolist(),
                "matrix": self.matrix.tolist(),
                "t_low": float(self.t_low), "t_high": float(self.t_high)}


@dataclass
class MixtureRoute:
    """Route left when component 0 of a two-part mixture owns the sample."""
    mixture: GaussianMixture
    kind = "gmm"

    def decide(self, X) -> np.ndarray:
        resp = e_step(X, self.mixture)
        return resp[:, 0] >= 0.5

    def to_dict(self) -> dict:
        d = self.mixture.to_dict()
        return {"kind": self.kind, "weights": d["weights"],
                "means": d["means"], "covariances": d["covariances"]}


def learner_from_dict(raw: dict):
    kind = raw.get("kind")
    if kind == "axis":
        return AxisAligned(raw["feature"], raw["threshold"])
    if kind == "linear":
        return LinearBand(np.array(raw["features"]), np.array(raw["direction"]),
                          raw["t_low"], raw["t_high"])
    if kind == "quadratic":
        return QuadraticBand(np.array(raw["features"]), np.array(raw["matrix"]),
                             raw["t_low"], raw["t_high"])
    if kind == "gmm":
        return MixtureRoute(GaussianMixture(np.array(raw["weights"]),
                                            np.array(raw["means"]),
                                            np.array(raw["covariances"])))
    raise DataError(f"unknown learner kind {kind!r}")


@dataclass
class Node:
    """Tree node in an arena; leaves carry Gaussian statistics."""
    depth: int
    count: int
    learner: object | None = None
    left: int = -1
    right: int = -1
    mean: np.ndarray | None = None
    cov: np.ndarray | None = None

    @property
    def is_leaf(self) -> bool:
        return self.learner is None


@dataclass
class Tree:
    nodes: list = field(default_factory=list)
    root: int = 0

    def node_count(self) -> int:
        return len(self.nodes)


@dataclass
class Forest:
    trees: list
    config: PipelineConfig
    n_training: int
    d: int


def _sample_cov(S) -> np.ndarray:
    dev = S - S.mean(axis=0)
    return dev.T @ dev / (S.shape[0] - 1)


def _reg_logdet(S, cov_regularizer) -> float:
    cov = _sample_cov(S)
    cov[np.diag_indices_from(cov)] += cov_regularizer
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise NumericalError("regularized covariance lost positive definiteness")
    return float(logdet)


def gaussian_entropy(S, cov_regularizer: float = 1e-6) -> float:
    """Differential entropy of a Gaussian fit to S (unbiased covariance + reg*I)."""
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if S.shape[0] < 2:
        raise DegenerateSampleError("entropy needs at least two samples")
    d = S.shape[1]
    return 0.5 * (d * _LOG_2PI_E + _reg_logdet(S, cov_regularizer))


def info_gain(parent, left, right, cov_regularizer: float = 1e-6,
              min_leaf: int = 2) -> float:
    """Entropy drop of splitting parent into (left, right).

    Constant terms cancel, so this is the log-determinant form. A side smaller
    than min_leaf (or than 2, where no covariance exists) scores -inf, which
    rejects the split without raising.
    """
    parent = np.atleast_2d(np.asarray(parent, dtype=np.float64))
    left = np.atleast_2d(np.asarray(left, dtype=np.float64))
    right = np.atleast_2d(np.asarray(right, dtype=np.float64))
    n, nl, nr = parent.shape[0], left.shape[0], right.shape[0]
    if nl + nr != n:
        raise DataError("split sides must partition the parent set")
    floor = max(min_leaf, 2)
    if nl < floor or nr < floor:
        return float("-inf")
    return (_reg_logdet(parent, cov_regularizer)
            - (nl / n) * _reg_logdet(left, cov_regularizer)
            - (nr / n) * _reg_logdet(right, cov_regularizer))


def _sample_axis(S, rng):
    d = S.shape[1]
    for f in rng.gen.permutation(d):
        lo = S[:, f].min()
        hi = S[:, f].max()
        if hi > lo:
            return AxisAligned(int(f), float(rng.gen.uniform(lo, hi)))
    return None


def _band_endpoints(scores, rng):
    levels = np.unique(scores)
    if levels.size < 3:
        return None
    a = int(rng.gen.integers(0, levels.size - 2))
    b = int(rng.gen.integers(a + 2, levels.size))
    return float(levels[a]), float(levels[b])


def _sample_linear(S, rng):
    d = S.shape[1]
    p = min(d, 5)
    for _ in range(_BAND_TRIES):
        feats = rng.gen.choice(d, size=p, replace=False)
        direction = rng.gen.standard_normal(p)
        norm = np.linalg.norm(direction)
        if norm == 0.0:
            continue
        direction /= norm
        band = _band_endpoints(_linear_scores(S, feats, direction), rng)
        if band is not None:
            return LinearBand(feats, direction, band[0], band[1])
    return _sample_axis(S, rng)


def _sample_quadratic(S, rng):
    d = S.shape[1]
    p = min(d, 5)
    for _ in range(_BAND_TRIES):
        feats = rng.gen.choice(d, size=p, replace=False)
        raw = rng.gen.standard_normal((p, p))
        matrix = (raw + raw.T) / 2.0
        norm = np.linalg.norm(matrix)
        if norm == 0.0:
            continue
        matrix /= norm
        band = _band_endpoints(_quadratic_scores(S, feats, matrix), rng)
        if band is not None:
            return QuadraticBand(feats, matrix, band[0], band[1])
    return _sample_axis(S, rng)


def _sample_mixture_route(S, cov_regularizer):
    # deterministic given the node sample; kept cheap with a short EM budget
    if np.unique(S, axis=0).shape[0] < 2:
        return None
    cfg = PipelineConfig(num_clusters=2, em_tol=1e-6, em_max_iter=40,
                         cov_regularizer=cov_regularizer)
    return MixtureRoute(fit_em(S, None, cfg).mixture)


def sample_weak_learner(S, depth: int, schedule, rng: RandomStream,
                        cov_regularizer: float = 1e-6):
    """Draw one candidate learner for a node at the given depth.

    Degenerate draws fall back to an axis-aligned split on another feature;
    None means the node sample cannot be split at all and should become a leaf.
    """
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    family = schedule.family_at(depth)
    if family == "axis":
        return _sample_axis(S, rng)
    if family == "linear":
        return _sample_linear(S, rng)
    if family == "quadratic":
        return _sample_quadratic(S, rng)
    if family == "gmm":
        learner = _sample_mixture_route(S, cov_regularizer)
        return learner if learner is not None else _sample_axis(S, rng)
    raise ConfigError(f"unknown learner family {family!r}")


def _make_leaf(S, depth, cov_regularizer):
    d = S.shape[1]
    cov = cov_regularizer * np.eye(d)
    if S.shape[0] >= 2:
        cov = _sample_cov(S) + cov
    return Node(depth=depth, count=S.shape[0], mean=S.mean(axis=0), cov=cov)


def train_tree(ds: Dataset, config: PipelineConfig, rng: RandomStream) -> Tree:
    """Grow one tree greedily; at each node the best of m_try candidates wins.

    A node becomes a leaf at max_depth, below 2*min_leaf samples, or when no
    candidate achieves positive gain. Ties keep the earliest candidate.
    """
    X = ds.features
    lam = config.cov_regularizer
    nodes: list = []

    def build(idx: np.ndarray, depth: int) -> int:
        nid = len(nodes)
        nodes.append(None)
        chosen = None
        if depth < config.max_depth and idx.size >= 2 * config.min_leaf:
            S = X[idx]
            parent_logdet = _reg_logdet(S, lam)
            best_gain = 0.0
            for _ in range(config.m_try):
                learner = sample_weak_learner(S, depth, config.learner_schedule,
                                              rng, cov_regularizer=lam)
                if learner is None:
                    break
                mask = learner.decide(S)
                nl = int(mask.sum())
                nr = idx.size - nl
                if nl < config.min_leaf or nr < config.min_leaf:
                    continue
                gain = parent_logdet - (nl * _reg_logdet(S[mask], lam)
                                        + nr * _reg_logdet(S[~mask], lam)) / idx.size
                if gain > best_gain:
                    best_gain = gain
                    chosen = (learner, mask)
        if chosen is None:
            nodes[nid] = _make_leaf(X[idx], depth, lam)
            return nid
        learner, mask = chosen
        left = build(idx[mask], depth + 1)
        right = build(idx[~mask], depth + 1)
        nodes[nid] = Node(depth=depth, count=idx.size, learner=learner,
                          left=left, right=right)
        return nid

    build(np.arange(ds.n), 0)
    return Tree(nodes=nodes)


def train_forest(ds: Dataset, config: PipelineConfig,
                 parallel: bool = False) -> Forest:
    """Train num_trees trees; tree t always consumes RandomStream(seed, t).

    Because every tree owns its stream, the parallel path returns the same
    forest as the serial one.
    """
    indices = range(config.num_trees)
    if parallel:
        with ThreadPoolExecutor() as pool:
            trees = list(pool.map(
                lambda t: train_tree(ds, config, RandomStream(config.seed, t)),
                indices))
    else:
        trees = [train_tree(ds, config, RandomStream(config.seed, t))
                 for t in indices]
    return Forest(trees=trees, config=config, n_training=ds.n, d=ds.d)


def traverse(tree: Tree, x) -> list:
    """Node ids visited from the root to the leaf that owns x."""
    x = np.asarray(x, dtype=np.float64)[None, :]
    path = []
    nid = tree.root
    while True:
        path.append(nid)
        node = tree.nodes[nid]
        if node.is_leaf:
            return path
        nid = node.left if bool(node.learner.decide(x)[0]) else node.right


def route_members(tree: Tree, X) -> list:
    """For each node id, the row indices of X that reach that node."""
    members: list = [None] * len(tree.nodes)
    members[tree.root] = np.arange(X.shape[0])
    for nid, node in enumerate(tree.nodes):
        idx = members[nid]
        if node.is_leaf or idx is None:
            continue
        mask = node.learner.decide(X[idx])
        members[node.left] = idx[mask]
        members[node.right] = idx[~mask]
    return [m if m is not None else np.empty(0, dtype=np.int64) for m in members]


def forest_density(forest: Forest, x) -> float:
    """Average over trees of the leaf Gaussian density weighted by leaf mass."""
    x = np.asarray(x, dtype=np.float64)
    total = 0.0
    for tree in forest.trees:
        leaf = tree.nodes[traverse(tree, x)[-1]]
        weight = leaf.count / forest.n_training
        total += weight * math.exp(log_gaussian_pdf(x, leaf.mean, leaf.cov))
    return total / len(forest.trees)


def _node_to_dict(node: Node) -> dict:
    if node.is_leaf:
        return {"kind": "leaf", "depth": node.depth, "count": node.count,
                "mean": node.mean.tolist(), "cov": node.cov.tolist()}
    return {"kind": "internal", "depth": node.depth, "count": node.count,
            "learner": node.learner.to_dict(),
            "left": node.left, "right": node.right}


def _node_from_dict(raw: dict) -> Node:
    if raw["kind"] == "leaf":
        return Node(depth=raw["depth"], count=raw["count"],
                    mean=np.array(raw["mean"], dtype=np.float64),
                    cov=np.array(raw["cov"], dtype=np.float64))
    return Node(depth=raw["depth"], count=raw["count"],
                learner=learner_from_dict(raw["learner"]),
                left=raw["left"], right=raw["right"])


FOREST_FORMAT = "drfgmm-forest"
FOREST_VERSION = 1


def forest_to_dict(forest: Forest) -> dict:
    return {
        "format": FOREST_FORMAT,
        "version": FOREST_VERSION,
        "n_training": forest.n_training,
        "d": forest.d,
        "config": forest.config.to_dict(),
        "trees": [{"nodes": [_node_to_dict(nd) for nd in tree.nodes]}
                  for tree in forest.trees],
    }


def forest_from_dict(raw: dict) -> Forest:
    if raw.get("format") != FOREST_FORMAT:
        raise DataError("not a forest document")
    if raw.get("version") != FOREST_VERSION:
        raise DataError(f"unsupported forest version {raw.get('version')!r}")
    trees = [Tree(nodes=[_node_from_dict(nd) for nd in t["nodes"]])
             for t in raw["trees"]]
    return Forest(trees=trees, config=PipelineConfig.from_dict(raw["config"]),
                  n_training=raw["n_training"], d=raw["d"])


def save_forest(forest: Forest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(forest_to_dict(forest), fh)


def load_forest(path) -> Forest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc
    return forest_from_dict(raw)
