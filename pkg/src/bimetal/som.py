"""Self-organizing map periodization.

A small rectangular Kohonen map (default 5x5, 25 nodes) is trained online on
the standardized feature vectors. Its code vectors are then reduced to a
handful of macro-classes by Ward agglomeration, and each week inherits the
macro-class of its best-matching node, yielding a periodization of the
dataset into contiguous (mostly) intervals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage

from .data import FeatureSet
from .errors import ValidationError


@dataclass(frozen=True)
class SomSchedule:
    """Linear decay schedule for the online Kohonen updates.

    Learning rate and neighborhood radius both decay linearly over the
    total number of update steps (epochs * n_observations). A radius_start
    of None means max(rows, cols) / 2.
    """

    epochs: int = 100
    lr_start: float = 0.5
    lr_end: float = 0.01
    radius_start: float | None = None
    radius_end: float = 0.5

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "lr_start": self.lr_start,
            "lr_end": self.lr_end,
            "radius_start": self.radius_start,
            "radius_end": self.radius_end,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SomSchedule":
        return cls(**d)


@dataclass
class SomGrid:
    """A trained (or freshly initialized) map: one code vector per node.

    Nodes are indexed row-major; node i sits at grid position
    (i // cols, i % cols) and grid distance is Euclidean on those positions.
    """

    rows: int
    cols: int
    code_vectors: np.ndarray  # (rows*cols, dim)
    trained_epochs: int
    seed: int
    schedule: SomSchedule

    @property
    def n_nodes(self) -> int:
        return self.rows * self.cols

    @property
    def dim(self) -> int:
        return self.code_vectors.shape[1]

    def positions(self) -> np.ndarray:
        r, c = np.divmod(np.arange(self.n_nodes), self.cols)
        return np.column_stack([r, c]).astype(float)


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, FeatureSet):
        return features.standardized
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def initialize_grid(features, rows=5, cols=5, schedule=None, seed=0, _rng=None) -> SomGrid:
    """Seeded random-sample initialization: code vectors drawn from the data."""
    X = _as_matrix(features)
    if X.shape[0] == 0:
        raise ValidationError("empty input: cannot initialize a SOM")
    if rows < 1 or cols < 1:
        raise ValidationError("grid must have at least one node")
    schedule = schedule or SomSchedule()
    n_nodes = rows * cols
    rng = _rng if _rng is not None else np.random.default_rng(seed)
    idx = rng.choice(X.shape[0], size=n_nodes, replace=X.shape[0] < n_nodes)
    return SomGrid(
        rows=rows,
        cols=cols,
        code_vectors=X[idx].copy(),
        trained_epochs=0,
        seed=seed,
        schedule=schedule,
    )


def train_som(features, rows=5, cols=5, schedule=None, seed=0) -> SomGrid:
    """Train by the online Kohonen rule; deterministic given the seed.

    Each step pulls the best-matching node and its (Gaussian-weighted) grid
    neighborhood toward the presented observation, with learning rate and
    radius decaying per the schedule. Observation order is reshuffled every
    epoch from the same seeded generator used for initialization.
    """
    X = _as_matrix(features)
    rng = np.random.default_rng(seed)
    grid = initialize_grid(X, rows=rows, cols=cols, schedule=schedule, seed=seed, _rng=rng)
    schedule = grid.schedule
    n, _ = X.shape
    code = grid.code_vectors

    pos = grid.positions()
    # Pairwise squared grid distances between nodes, reused every step.
    grid_d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2)

    r_start = schedule.radius_start
    if r_start is None:
        r_start = max(rows, cols) / 2.0

    total = max(schedule.epochs * n - 1, 1)
    step = 0
    for _ in range(schedule.epochs):
        order = rng.permutation(n)
        for i in order:
            frac = step / total
            lr = schedule.lr_start + (schedule.lr_end - schedule.lr_start) * frac
            radius = r_start + (schedule.radius_end - r_start) * frac
            x = X[i]
            bmu = int(((code - x) ** 2).sum(axis=1).argmin())
            h = np.exp(-grid_d2[bmu] / (2.0 * radius * radius))
            code += (lr * h)[:, None] * (x - code)
            step += 1

    grid.trained_epochs = schedule.epochs
    return grid


def best_matching_unit(grid: SomGrid, v) -> int:
    """Index of the node with minimal squared distance; ties -> lowest index."""
    v = np.asarray(v, dtype=float)
    if v.shape != (grid.dim,):
        raise ValidationError(
            f"dimension mismatch: vector has shape {v.shape}, grid dim {grid.dim}"
        )
    return int(((grid.code_vectors - v) ** 2).sum(axis=1).argmin())


def bmu_indices(grid: SomGrid, features) -> np.ndarray:
    """Vectorized best_matching_unit over the rows of a matrix."""
    X = _as_matrix(features)
    if X.shape[1] != grid.dim:
        raise ValidationError(
            f"dimension mismatch: data dim {X.shape[1]}, grid dim {grid.dim}"
        )
    d2 = ((X[:, None, :] - grid.code_vectors[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def quantization_error(grid: SomGrid, features) -> float:
    """Mean squared distance of each observation to its best-matching node."""
    X = _as_matrix(features)
    d2 = ((X[:, None, :] - grid.code_vectors[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).mean())


# ---------------------------------------------------------------------------
# Macro-classes
# ---------------------------------------------------------------------------

@dataclass
class MacroClassification:
    """Node -> macro-class map plus, once periodize() has run, the week
    assignments, per-class raw-variable means, and contiguous intervals.

    Class ids are 1..k, assigned by order of first node appearance so the
    labeling is deterministic.
    """

    k: int
    node_to_class: np.ndarray
    linkage_history: tuple  # merges (node_a, node_b, height, size) from Ward
    week_to_class: np.ndarray | None = None
    class_means: dict | None = None
    intervals: tuple | None = None
    class_counts: dict | None = None


def _canonical_relabel(labels: np.ndarray) -> np.ndarray:
    """Relabel cluster ids to 1..k by order of first appearance."""
    mapping: dict[int, int] = {}
    out = np.empty(len(labels), dtype=int)
    for i, lab in enumerate(labels):
        if lab not in mapping:
            mapping[lab] = len(mapping) + 1
        out[i] = mapping[lab]
    return out


def hac_macro_classes(grid: SomGrid, k: int = 6) -> MacroClassification:
    """Ward agglomeration of the code vectors, cut at k clusters.

    The cut applies the first (n_nodes - k) merges, so moving from k to k-1
    classes can only merge groups, never split them.
    """
    n = grid.n_nodes
    if not 1 <= k <= n:
        raise ValidationError(f"k={k} out of range 1..{n}")
    if n == 1:
        return MacroClassification(
            k=1, node_to_class=np.array([1]), linkage_history=()
        )
    Z = linkage(grid.code_vectors, method="ward")
    labels = cut_tree(Z, n_clusters=k).ravel()
    history = tuple(
        (int(a), int(b), float(h), int(size)) for a, b, h, size in Z
    )
    return MacroClassification(
        k=k,
        node_to_class=_canonical_relabel(labels),
        linkage_history=history,
    )


def periodize(
    features, grid: SomGrid, classification: MacroClassification
) -> MacroClassification:
    """Assign each week its BMU's macro-class and summarize the classes.

    Per-class means are computed on the raw (unstandardized) variables when
    a FeatureSet is given; contiguous runs of equal class are reported as
    closed intervals (start_index, end_index, class_id).
    """
    bmus = bmu_indices(grid, features)
    week_to_class = classification.node_to_class[bmus]

    if isinstance(features, FeatureSet):
        raw = features.raw_matrix
        names = features.raw_names
    else:
        raw = _as_matrix(features)
        names = tuple(f"x{i}" for i in range(raw.shape[1]))

    class_means: dict[int, dict[str, float]] = {}
    class_counts: dict[int, int] = {}
    for cls in sorted(set(week_to_class.tolist())):
        member = week_to_class == cls
        class_counts[int(cls)] = int(member.sum())
        means = raw[member].mean(axis=0)
        class_means[int(cls)] = {nm: float(m) for nm, m in zip(names, means)}

    intervals = []
    start = 0
    for i in range(1, len(week_to_class) + 1):
        if i == len(week_to_class) or week_to_class[i] != week_to_class[start]:
            intervals.append((start, i - 1, int(week_to_class[start])))
            start = i

    return MacroClassification(
        k=classification.k,
        node_to_class=classification.node_to_class,
        linkage_history=classification.linkage_history,
        week_to_class=week_to_class,
        class_means=class_means,
        intervals=tuple(intervals),
        class_counts=class_counts,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def som_grid_to_dict(grid: SomGrid) -> dict:
    return {
        "rows": grid.rows,
        "cols": grid.cols,
        "code_vectors": grid.code_vectors.tolist(),
        "trained_epochs": grid.trained_epochs,
        "seed": grid.seed,
        "schedule": grid.schedule.to_dict(),
    }


def som_grid_from_dict(d: dict) -> SomGrid:
    return SomGrid(
        rows=d["rows"],
        cols=d["cols"],
        code_vectors=np.array(d["code_vectors"]),
        trained_epochs=d["trained_epochs"],
        seed=d["seed"],
        schedule=SomSchedule.from_dict(d["schedule"]),
    )


def classification_to_dict(mc: MacroClassification) -> dict:
    return {
        "k": mc.k,
        "node_to_class": mc.node_to_class.tolist(),
        "linkage_history": [list(m) for m in mc.linkage_history],
        "week_to_class": None if mc.week_to_class is None else mc.week_to_class.tolist(),
        "class_means": mc.class_means,
        "intervals": None if mc.intervals is None else [list(iv) for iv in mc.intervals],
        "class_counts": mc.class_counts,
    }


def classification_from_dict(d: dict) -> MacroClassification:
    means = d["class_means"]
    counts = d["class_counts"]
    return MacroClassification(
        k=d["k"],
        node_to_class=np.array(d["node_to_class"]),
        linkage_history=tuple(tuple(m) for m in d["linkage_history"]),
        week_to_class=None if d["week_to_class"] is None else np.array(d["week_to_class"]),
        class_means=None if means is None else {int(c): v for c, v in means.items()},
        intervals=None if d["intervals"] is None else tuple(tuple(iv) for iv in d["intervals"]),
        class_counts=None if counts is None else {int(c): v for c, v in counts.items()},
    )
