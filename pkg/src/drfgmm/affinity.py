"""Pairwise affinity models over a trained forest.

All three models average a per-tree score over trees in index order and
produce an exactly symmetric matrix with unit diagonal and entries in [0, 1]:

* binary: 1 when two samples share a leaf, else 0.
* uniform: shared root path edges divided by the edge count of the deeper
  of the two paths; a pair sharing its leaf scores 1 (0/0 counts as 1 in the
  single-leaf tree).
* adaptive: like uniform but each edge weighs 1 - |child|/|parent| (training
  counts), so uninformative splits contribute little; the denominator is the
  heavier of the two path weights and 0/0 again counts as 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import DataError
from .forest import Forest, route_members

MODES = ("binary", "uniform", "adaptive")


@dataclass
class AffinityMatrix:
    values: np.ndarray
    mode: str = "custom"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1] or vals.shape[0] < 1:
            raise DataError("affinity matrix must be square and non-empty")
        if not np.array_equal(vals, vals.T):
            raise DataError("affinity matrix must be exactly symmetric")
        if not np.all(np.diag(vals) == 1.0):
            raise DataError("affinity diagonal must be exactly one")
        if vals.min() < 0.0 or vals.max() > 1.0:
            raise DataError("affinity entries must lie in [0, 1]")
        self.values = vals

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _leaf_layout(tree, members, n):
    """Per-sample leaf id and leaf depth under the given membership."""
    leaf_of = np.zeros(n, dtype=np.int64)
    depth_of = np.zeros(n, dtype=np.float64)
    for nid, node in enumerate(tree.nodes):
        if node.is_leaf and members[nid].size:
            leaf_of[members[nid]] = nid
            depth_of[members[nid]] = node.depth
    return leaf_of, depth_of


def _accumulate(forest: Forest, X, per_tree) -> np.ndarray:
    total = np.zeros((X.shape[0], X.shape[0]))
    for tree in forest.trees:
        total += per_tree(tree)
    total /= len(forest.trees)
    # guard against accumulation rounding a hair past the closed interval
    np.clip(total, 0.0, 1.0, out=total)
    return total


def binary_affinity(forest: Forest, ds) -> AffinityMatrix:
    """Fraction of trees in which two samples land in the same leaf."""
    X = ds.features

    def per_tree(tree):
        members = route_members(tree, X)
        leaf_of, _ = _leaf_layout(tree, members, X.shape[0])
        return (leaf_of[:, None] == leaf_of[None, :]).astype(np.float64)

    return AffinityMatrix(_accumulate(forest, X, per_tree), mode="binary")


def path_affinity_uniform(forest: Forest, ds) -> AffinityMatrix:
    """Path-overlap score: shared edges over the deeper path's edge count."""
    X = ds.features
    n = X.shape[0]

    def per_tree(tree):
        members = route_members(tree, X)
        _, depth_of = _leaf_layout(tree, members, n)
        score = np.ones((n, n))
        for node in tree.nodes:
            if node.is_leaf:
                continue
            L = members[node.left]
            R = members[node.right]
            if L.size == 0 or R.size == 0:
                continue
            # pairs split here share exactly node.depth edges from the root
            deeper = np.maximum(depth_of[L][:, None], depth_of[R][None, :])
            block = node.depth / deeper
            score[np.ix_(L, R)] = block
            score[np.ix_(R, L)] = block.T
        return score

    return AffinityMatrix(_accumulate(forest, X, per_tree), mode="uniform")


def path_affinity_adaptive(forest: Forest, ds) -> AffinityMatrix:
    """Path-overlap score with split-informativeness edge weights."""
    X = ds.features
    n = X.shape[0]

    def per_tree(tree):
        members = route_members(tree, X)
        # cumulative root-to-node edge weight, from training-time counts
        weight_to = np.zeros(len(tree.nodes))
        for nid, node in enumerate(tree.nodes):
            if node.is_leaf:
                continue
            for child in (node.left, node.right):
                share = tree.nodes[child].count / node.count
                weight_to[child] = weight_to[nid] + (1.0 - share)
        leaf_of, _ = _leaf_layout(tree, members, n)
        leaf_weight = weight_to[leaf_of]
        score = np.ones((n, n))
        for nid, node in enumerate(tree.nodes):
            if node.is_leaf:
                continue
            L = members[node.left]
            R = members[node.right]
            if L.size == 0 or R.size == 0:
                continue
            heavier = np.maximum(leaf_weight[L][:, None], leaf_weight[R][None, :])
            block = weight_to[nid] / heavier
            score[np.ix_(L, R)] = block
            score[np.ix_(R, L)] = block.T
        return score

    return AffinityMatrix(_accumulate(forest, X, per_tree), mode="adaptive")


def compute_affinity(forest: Forest, ds, mode: str) -> AffinityMatrix:
    if mode == "binary":
        return binary_affinity(forest, ds)
    if mode == "uniform":
        return path_affinity_uniform(forest, ds)
    if mode == "adaptive":
        return path_affinity_adaptive(forest, ds)
    raise DataError(f"unknown affinity mode {mode!r}")


def affinity_heatmap(aff: AffinityMatrix, order=None) -> np.ndarray:
    """8-bit grayscale image of the matrix; order permutes rows and columns."""
    vals = aff.values
    if order is not None:
        order = np.asarray(order, dtype=np.int64)
        if not np.array_equal(np.sort(order), np.arange(aff.n)):
            raise DataError("order must be a permutation of all row indices")
        vals = vals[np.ix_(order, order)]
    return np.rint(vals * 255.0).astype(np.uint8)


def save_pgm(image: np.ndarray, path) -> None:
    """Write a binary PGM (P5, maxval 255)."""
    if image.ndim != 2 or image.dtype != np.uint8:
        raise DataError("PGM export expects a 2-d uint8 image")
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(image.tobytes())


def save_affinity(aff: AffinityMatrix, path) -> None:
    """Binary layout: u64 little-endian n, then n*n little-endian float64 row-major."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", aff.n))
        fh.write(np.ascontiguousarray(aff.values, dtype="<f8").tobytes())


def load_affinity(path, mode: str = "custom") -> AffinityMatrix:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(blob) < 8:
        raise DataError(f"{path}: truncated affinity file")
    (n,) = struct.unpack_from("<Q", blob, 0)
    expected = 8 + n * n * 8
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes for n={n}, got {len(blob)}")
    vals = np.frombuffer(blob, dtype="<f8", offset=8).reshape(n, n)
    return AffinityMatrix(vals.astype(np.float64), mode=mode)
