"""Boundary-aware sampling and regression-tree subdivision of a box.

Samples are labelled by their safety margin. When a region contains both
safe and unsafe samples, fresh batches are thinned by a rank-based
elimination rule that favours points close to the safety boundary. A
regression tree fitted to the margins then cuts the region; its leaves are
the candidate hulls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .gauss import BoxRegion, GaussianInput, box_probability, combined_sample
from .model import Network, SafetySpec, margins as margin_vectors_of


@dataclass(frozen=True)
class SampleBatch:
    points: np.ndarray  # (n, d)
    margin_vectors: np.ndarray  # (n, k)

    def __post_init__(self):
        if self.points.shape[0] != self.margin_vectors.shape[0]:
            raise ConfigError("points and margins must have equal length")

    @classmethod
    def evaluate(cls, net: Network, spec: SafetySpec, points) -> "SampleBatch":
        points = np.asarray(points, dtype=np.float64).reshape(-1, net.input_dim)
        return cls(points, np.atleast_2d(margin_vectors_of(net, spec, points)).reshape(len(points), -1))

    def __len__(self):
        return self.points.shape[0]

    @property
    def margins(self) -> np.ndarray:
        """Scalar regression target: the smallest constraint margin."""
        return self.margin_vectors.min(axis=1)

    @property
    def distances(self) -> np.ndarray:
        """Distance to the nearest constraint boundary in output space."""
        return np.abs(self.margin_vectors).min(axis=1)

    @property
    def labels(self) -> np.ndarray:
        """True for safe points."""
        return self.margins >= 0

    def subset(self, mask) -> "SampleBatch":
        return SampleBatch(self.points[mask], self.margin_vectors[mask])

    @staticmethod
    def concat(batches, d: int, k: int) -> "SampleBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            return SampleBatch(np.empty((0, d)), np.empty((0, k)))
        return SampleBatch(
            np.concatenate([b.points for b in batches]),
            np.concatenate([b.margin_vectors for b in batches]),
        )


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int = 5
    min_leaf_samples: int = 2
    alpha: float = 0.05
    beta: float = 0.75
    weights: tuple = (0.5, 0.5)  # (w_uniform, w_distribution)
    n_samples: int = 100
    max_attempts: int = 10
    rank_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if self.min_leaf_samples < 1:
            raise ConfigError("min_leaf_samples must be >= 1")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")
        w_u, w_d = self.weights
        if w_u < 0 or w_d < 0 or not math.isclose(w_u + w_d, 1.0, abs_tol=1e-9):
            raise ConfigError(f"sampling weights must be nonnegative and sum to 1, got {self.weights}")
        if self.n_samples < 1 or self.max_attempts < 0:
            raise ConfigError("n_samples must be >= 1 and max_attempts >= 0")
        if self.rank_scale <= 0:
            raise ConfigError("rank_scale must be > 0")


def elimination_probability(rank, rank_scale: float = 1.0):
    return 1.0 - np.exp(-rank_scale * np.asarray(rank, dtype=np.float64))


def eliminate_samples(batch: SampleBatch, rank_scale: float, rng: np.random.Generator) -> SampleBatch:
    """Keep each point with probability ``exp(-rank_scale * rank)``.

    ``rank`` is the 0-based position by ascending boundary distance (ties by
    original index), so the nearest point always survives.
    """
    if len(batch) == 0:
        raise ConfigError("cannot eliminate from an empty batch")
    order = np.argsort(batch.distances, kind="stable")
    rank = np.empty(len(batch))
    rank[order] = np.arange(len(batch))
    keep = rng.random(len(batch)) < np.exp(-rank_scale * rank)
    return batch.subset(keep)


def boundary_aware_sample(
    g: GaussianInput,
    net: Network,
    spec: SafetySpec,
    r: BoxRegion,
    cfg: TreeConfig,
    rng: np.random.Generator,
    n: int | None = None,
) -> SampleBatch:
    """Sample ``r``, concentrating points near the safety boundary if it is present."""
    n = cfg.n_samples if n is None else n
    base = SampleBatch.evaluate(net, spec, combined_sample(g, r, n, cfg.weights, rng))
    labels = base.labels
    if labels.all() or not labels.any():
        return base
    kept, count, attempts = [], 0, 0
    while count < n and attempts < cfg.max_attempts:
        fresh = SampleBatch.evaluate(net, spec, combined_sample(g, r, n, cfg.weights, rng))
        accepted = eliminate_samples(fresh, cfg.rank_scale, rng)
        kept.append(accepted)
        count += len(accepted)
        attempts += 1
    if count < n:
        kept.append(SampleBatch.evaluate(net, spec, combined_sample(g, r, n - count, cfg.weights, rng)))
    return SampleBatch.concat(kept, net.input_dim, spec.num_constraints)


def impurity(left, right, extent: float, alpha: float) -> float:
    """``(|S_l| Var(S_l) + |S_r| Var(S_r)) / extent**alpha`` with population variances."""
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.size == 0 or right.size == 0:
        raise ConfigError("both sides of a split need samples")
    if extent <= 0:
        raise ConfigError("sample extent must be positive")
    mse = left.var() * left.size + right.var() * right.size
    return float(mse / extent**alpha)


@dataclass
class Node:
    box: BoxRegion
    depth: int
    n_samples: int
    mode: str | None = None  # "longest" or "impurity" for internal nodes
    dim: int | None = None
    threshold: float | None = None
    left: "Node | None" = None
    right: "Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class RegressionTree:
    root: Node
    config: TreeConfig = field(repr=False)

    def nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)

    @property
    def depth(self) -> int:
        return max(node.depth for node in self.nodes())


def longest_dimension(box: BoxRegion) -> int:
    return int(np.argmax(box.widths))  # first maximum on ties


def best_impurity_split(points, targets, box: BoxRegion, alpha: float, min_leaf: int):
    """Lowest-impurity axis split among midpoints of consecutive distinct
    sample coordinates. Returns ``(dim, threshold, impurity)`` or ``None``."""
    n, d = points.shape
    best = None
    for j in range(d):
        order = np.argsort(points[:, j], kind="stable")
        xs = points[order, j]
        extent = xs[-1] - xs[0]
        if extent <= 0:
            continue
        ys = targets[order]
        s1 = np.cumsum(ys)
        s2 = np.cumsum(ys * ys)
        cnt = np.arange(1, n + 1, dtype=np.float64)
        # split after position i: left = [0..i], right = [i+1..n-1]
        i = np.arange(n - 1)
        n_left = cnt[:-1]
        n_right = n - n_left
        sse_left = s2[:-1] - s1[:-1] ** 2 / n_left
        sse_right = (s2[-1] - s2[:-1]) - (s1[-1] - s1[:-1]) ** 2 / n_right
        thresholds = 0.5 * (xs[:-1] + xs[1:])
        valid = (
            (xs[:-1] < xs[1:])
            & (n_left >= min_leaf)
            & (n_right >= min_leaf)
            & (thresholds > box.lower[j])
            & (thresholds < box.upper[j])
        )
        if not valid.any():
            continue
        score = (np.maximum(sse_left, 0) + np.maximum(sse_right, 0)) / extent**alpha
        score = np.where(valid, score, np.inf)
        pos = int(np.argmin(score))
        if best is None or score[pos] < best[2]:
            best = (j, float(thresholds[pos]), float(score[pos]))
    return best


def uses_longest_split(probability: float, beta: float) -> bool:
    """Scheduler rule: halve the longest side while the node holds more than
    ``1 - beta`` of the probability, then switch to impurity splits.

    ``beta = 1`` never leaves longest-side mode; ``beta = 0`` starts with
    impurity splits at the root.
    """
    return probability > 1.0 - beta


def build_tree(batch: SampleBatch, r: BoxRegion, g: GaussianInput, cfg: TreeConfig) -> RegressionTree:
    """Fit a regression tree on the sample margins inside ``r``.

    Heavy nodes are halved along their longest side (see
    ``uses_longest_split``); lighter nodes take the impurity-minimizing split. Leaves
    keep the geometric sub-box, so the leaves tile ``r``.
    """
    if len(batch) == 0:
        raise ConfigError("cannot build a tree from an empty batch")
    points = batch.points
    targets = batch.margins

    def grow(box: BoxRegion, idx: np.ndarray, depth: int) -> Node:
        node = Node(box, depth, idx.size)
        if depth >= cfg.max_depth or idx.size < 2 * cfg.min_leaf_samples:
            return node
        y = targets[idx]
        if np.ptp(y) == 0:
            return node
        if uses_longest_split(box_probability(g, box), cfg.beta):
            dim = longest_dimension(box)
            if box.widths[dim] <= 0:
                return node
            threshold = float(box.center[dim])
            mode = "longest"
        else:
            found = best_impurity_split(points[idx], y, box, cfg.alpha, cfg.min_leaf_samples)
            if found is None:
                return node
            dim, threshold, _ = found
            mode = "impurity"
        left_box, right_box = box.split(dim, threshold)
        go_left = points[idx, dim] <= threshold
        node.mode, node.dim, node.threshold = mode, dim, threshold
        node.left = grow(left_box, idx[go_left], depth + 1)
        node.right = grow(right_box, idx[~go_left], depth + 1)
        return node

    inside = np.flatnonzero(r.contains(points))
    return RegressionTree(grow(r, inside, 0), cfg)


def extract_leaf_regions(tree: RegressionTree) -> list:
    """Leaf boxes in depth-first, left-first order."""
    return [node.box for node in tree.nodes() if node.is_leaf]
