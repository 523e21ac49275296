"""Multiple change-point detection by penalized-contrast minimization.

A segmentation of the series into K blocks is scored by the sum of
per-segment contrasts: the within-segment sum of squared deviations when
only the mean is allowed to shift, or length * log(variance-MLE) when both
mean and variance may shift. Dynamic programming over the full cost table
gives the exact optimal segmentation for every K up to K_max; the number
of segments is then chosen adaptively from the shape of the optimal-cost
curve (the last big drop, measured by normalized second differences).

Indices follow the half-open convention: a change-point tau means one
segment ends at tau-1 and the next starts at tau, so the interior
change-points satisfy 0 < tau_1 < ... < tau_{K-1} < T.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ValidationError

_VAR_FLOOR_ABS = 1e-300


class SegMode(Enum):
    """What is allowed to change between segments."""

    MEAN = "mean"
    MEAN_VAR = "meanvar"

    @classmethod
    def parse(cls, value) -> "SegMode":
        if isinstance(value, cls):
            return value
        for member in cls:
            if member.value == value:
                return member
        raise ValidationError(f"unknown segmentation mode {value!r}")


def default_min_seg_len(mode: SegMode) -> int:
    return 2 if mode is SegMode.MEAN_VAR else 1


def _variance_floor(series: np.ndarray) -> float:
    return max(float(series.var()) * 1e-12, _VAR_FLOOR_ABS)


def _check_series(series) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    if series.ndim != 1 or series.shape[0] == 0:
        raise ValidationError("series must be a non-empty 1-d array")
    if not np.all(np.isfinite(series)):
        raise ValidationError("series contains non-finite values")
    return series


def segment_cost(series, i, j, mode, min_seg_len=None, variance_floor=None) -> float:
    """Contrast of treating series[i:j] as a single segment."""
    series = _check_series(series)
    mode = SegMode.parse(mode)
    if min_seg_len is None:
        min_seg_len = default_min_seg_len(mode)
    n = j - i
    if not 0 <= i <= j <= series.shape[0]:
        raise ValidationError(f"bad segment bounds ({i}, {j})")
    if n < min_seg_len:
        raise ValidationError(
            f"segment ({i}, {j}) shorter than min_seg_len={min_seg_len}"
        )
    seg = series[i:j]
    sse = float(((seg - seg.mean()) ** 2).sum())
    if mode is SegMode.MEAN:
        return sse
    floor = variance_floor if variance_floor is not None else _variance_floor(series)
    return n * float(np.log(max(sse / n, floor)))


@dataclass
class SegCostTable:
    """Full (T+1)x(T+1) contrast table; entry (i, j) covers series[i:j].

    Infeasible pairs (segments shorter than min_seg_len) hold +inf. Total
    costs of multi-segment configurations come only from the DP summing
    these entries; no subadditivity is assumed.
    """

    mode: SegMode
    min_seg_len: int
    variance_floor: float
    matrix: np.ndarray

    @property
    def T(self) -> int:
        return self.matrix.shape[0] - 1

    def cost(self, i: int, j: int) -> float:
        return float(self.matrix[i, j])

    @classmethod
    def build(cls, series, mode, min_seg_len=None, variance_floor=None) -> "SegCostTable":
        series = _check_series(series)
        mode = SegMode.parse(mode)
        if min_seg_len is None:
            min_seg_len = default_min_seg_len(mode)
        if min_seg_len < default_min_seg_len(mode):
            raise ValidationError(
                f"min_seg_len={min_seg_len} too small for mode {mode.value}"
            )
        if variance_floor is None:
            variance_floor = _variance_floor(series)

        T = series.shape[0]
        c1 = np.concatenate([[0.0], np.cumsum(series)])
        c2 = np.concatenate([[0.0], np.cumsum(series * series)])
        n = np.arange(T + 1)[None, :] - np.arange(T + 1)[:, None]  # j - i
        with np.errstate(divide="ignore", invalid="ignore"):
            sums = c1[None, :] - c1[:, None]
            sse = (c2[None, :] - c2[:, None]) - sums * sums / n
            sse = np.maximum(sse, 0.0)  # guard tiny negative rounding
            if mode is SegMode.MEAN:
                cost = sse
            else:
                cost = n * np.log(np.maximum(sse / n, variance_floor))
        cost[n < min_seg_len] = np.inf
        return cls(
            mode=mode, min_seg_len=min_seg_len,
            variance_floor=variance_floor, matrix=cost,
        )


def _suffix_tables(table: SegCostTable, K_max: int) -> np.ndarray:
    """G[k, i] = minimal contrast of splitting series[i:] into k segments."""
    T = table.T
    G = np.full((K_max + 1, T + 1), np.inf)
    G[1] = table.matrix[:, T]
    for k in range(2, K_max + 1):
        G[k] = (table.matrix + G[k - 1][None, :]).min(axis=1)
    return G


def _backtrack(table: SegCostTable, G: np.ndarray, K: int) -> tuple[int, ...]:
    """Left-to-right backtracking; first-occurrence argmin at each stage
    yields the lexicographically smallest optimal change-point tuple."""
    tau = []
    i = 0
    for k in range(K, 1, -1):
        vals = table.matrix[i, :] + G[k - 1]
        j = int(np.argmin(vals))
        tau.append(j)
        i = j
    return tuple(tau)


@dataclass
class SelectionDiagnostics:
    """Contrast curve and the adaptive decision trail."""

    scheme: str
    K_max: int
    contrasts: tuple          # J_K for K = 1..K_max
    normalized: tuple | None  # rescaled curve (adaptive scheme)
    second_differences: dict | None  # K -> D_K (adaptive scheme)
    threshold: float | None
    chosen_K: int

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "K_max": self.K_max,
            "contrasts": list(self.contrasts),
            "normalized": None if self.normalized is None else list(self.normalized),
            "second_differences": self.second_differences,
            "threshold": self.threshold,
            "chosen_K": self.chosen_K,
        }


@dataclass
class Segmentation:
    """Change-point configuration with per-segment estimates.

    ``tau`` holds the interior change-points only (the implicit endpoints 0
    and T are excluded), so the number of segments is len(tau) + 1 and the
    reported change-point count is len(tau). ``segment_covs`` carries one
    1x1 covariance matrix per segment (biased variance estimate).
    ``penalty_used`` records the adaptive threshold (or the explicit beta
    of a manual penalty) that selected the number of segments; it is None
    for fixed-K segmentations.
    """

    mode: SegMode
    T: int
    tau: tuple[int, ...]
    segment_means: tuple[float, ...]
    segment_covs: tuple
    contrast_value: float
    min_seg_len: int
    penalty_used: float | None = None
    selection: SelectionDiagnostics | None = None

    @property
    def n_segments(self) -> int:
        return len(self.tau) + 1

    @property
    def n_change_points(self) -> int:
        return len(self.tau)

    @property
    def boundaries(self) -> tuple[int, ...]:
        return (0,) + self.tau + (self.T,)

    def segment_of(self, t: int) -> int:
        return int(np.searchsorted(np.asarray(self.tau), t, side="right"))

    def to_dict(self, labels=None) -> dict:
        d = {
            "mode": self.mode.value,
            "T": self.T,
            "n_segments": self.n_segments,
            "tau": list(self.tau),
            "segment_means": list(self.segment_means),
            "segment_covs": [
                [[float(c[0][0])]] for c in self.segment_covs
            ],
            "contrast_value": self.contrast_value,
            "min_seg_len": self.min_seg_len,
            "penalty_used": self.penalty_used,
            "selection": None if self.selection is None else self.selection.to_dict(),
        }
        if labels is not None:
            d["tau_labels"] = [labels[t] for t in self.tau]
        return d


def segmentation_from_dict(d: dict) -> Segmentation:
    sel = d.get("selection")
    diagnostics = None
    if sel is not None:
        diagnostics = SelectionDiagnostics(
            scheme=sel["scheme"],
            K_max=sel["K_max"],
            contrasts=tuple(sel["contrasts"]),
            normalized=None if sel["normalized"] is None else tuple(sel["normalized"]),
            second_differences=(
                None
                if sel["second_differences"] is None
                else {int(k): v for k, v in sel["second_differences"].items()}
            ),
            threshold=sel["threshold"],
            chosen_K=sel["chosen_K"],
        )
    return Segmentation(
        mode=SegMode.parse(d["mode"]),
        T=d["T"],
        tau=tuple(d["tau"]),
        segment_means=tuple(d["segment_means"]),
        segment_covs=tuple(np.array(c) for c in d["segment_covs"]),
        contrast_value=d["contrast_value"],
        min_seg_len=d["min_seg_len"],
        penalty_used=d["penalty_used"],
        selection=diagnostics,
    )


def _segment_estimates(series, boundaries):
    means, covs = [], []
    for a, b in zip(boundaries, boundaries[1:]):
        seg = series[a:b]
        means.append(float(seg.mean()))
        covs.append(np.array([[float(seg.var())]]))
    return tuple(means), tuple(covs)


def _feasible_K(table: SegCostTable, K: int) -> bool:
    return K >= 1 and K * table.min_seg_len <= table.T


def optimal_segmentation_for_k(
    series, K, mode, min_seg_len=None, variance_floor=None, _table=None, _G=None
) -> Segmentation:
    """Exact global minimum-contrast segmentation into K segments.

    Dynamic programming over the cost table; ties resolved to the earliest
    (lexicographically smallest) change-point configuration.
    """
    series = _check_series(series)
    table = _table if _table is not None else SegCostTable.build(
        series, mode, min_seg_len, variance_floor
    )
    if not _feasible_K(table, K):
        raise ValidationError(
            f"K={K} infeasible for series of length {table.T} "
            f"with min_seg_len={table.min_seg_len}"
        )
    G = _G if _G is not None else _suffix_tables(table, K)
    total = float(G[K, 0])
    if not np.isfinite(total):
        raise ValidationError(f"no feasible segmentation into {K} segments")
    tau = _backtrack(table, G, K)
    means, covs = _segment_estimates(series, (0,) + tau + (table.T,))
    return Segmentation(
        mode=table.mode,
        T=table.T,
        tau=tau,
        segment_means=means,
        segment_covs=covs,
        contrast_value=total,
        min_seg_len=table.min_seg_len,
    )


def select_num_segments(
    series,
    K_max,
    mode,
    threshold: float = 0.75,
    penalty: float | None = None,
    min_seg_len=None,
    variance_floor=None,
    _table=None,
    _G=None,
) -> tuple[int, SelectionDiagnostics]:
    """Choose the number of segments from the optimal-contrast curve.

    Default adaptive scheme: rescale J_K so the curve falls from K_max to 1,
    take second differences D_K, and keep the largest K with D_K above the
    threshold (no such K means a single segment). Passing an explicit
    ``penalty`` beta switches to minimizing J_K + beta * K instead.
    """
    series = _check_series(series)
    table = _table if _table is not None else SegCostTable.build(
        series, mode, min_seg_len, variance_floor
    )
    if not _feasible_K(table, K_max):
        raise ValidationError(
            f"K_max={K_max} infeasible for series of length {table.T} "
            f"with min_seg_len={table.min_seg_len}"
        )
    G = _G if _G is not None else _suffix_tables(table, K_max)
    J = G[1 : K_max + 1, 0]

    if penalty is not None:
        chosen = int(np.argmin(J + penalty * np.arange(1, K_max + 1))) + 1
        diagnostics = SelectionDiagnostics(
            scheme="penalty",
            K_max=K_max,
            contrasts=tuple(float(v) for v in J),
            normalized=None,
            second_differences=None,
            threshold=penalty,
            chosen_K=chosen,
        )
        return chosen, diagnostics

    span = J[0] - J[K_max - 1]
    if K_max < 3 or span <= 0:
        normalized = tuple(float(v) for v in np.ones_like(J))
        diagnostics = SelectionDiagnostics(
            scheme="adaptive",
            K_max=K_max,
            contrasts=tuple(float(v) for v in J),
            normalized=normalized,
            second_differences={},
            threshold=threshold,
            chosen_K=1,
        )
        return 1, diagnostics

    Jn = (J - J[K_max - 1]) / span * (K_max - 1) + 1  # falls from K_max to 1
    # Second differences are taken along the lower convex hull of the curve:
    # a K off the hull is never the minimizer of J_K + beta*K for any
    # penalty beta, and the jagged steps it induces (pairs of cuts jointly
    # removing a bump) would otherwise mimic a big drop on change-free data.
    # At a hull vertex the slope change equals the length of the beta
    # interval selecting that K, in normalized units.
    hull = [0]
    for k in range(1, K_max):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            if (Jn[b] - Jn[a]) * (k - b) >= (Jn[k] - Jn[b]) * (b - a):
                hull.pop()
            else:
                break
        hull.append(k)
    D = {}
    for pos in range(1, len(hull) - 1):
        a, b, c = hull[pos - 1], hull[pos], hull[pos + 1]
        slope_in = (Jn[b] - Jn[a]) / (b - a)
        slope_out = (Jn[c] - Jn[b]) / (c - b)
        D[b + 1] = float(slope_out - slope_in)  # keys are K values (1-based)
    above = [K for K, v in D.items() if v > threshold]
    chosen = max(above) if above else 1
    diagnostics = SelectionDiagnostics(
        scheme="adaptive",
        K_max=K_max,
        contrasts=tuple(float(v) for v in J),
        normalized=tuple(float(v) for v in Jn),
        second_differences=D,
        threshold=threshold,
        chosen_K=chosen,
    )
    return chosen, diagnostics


def auto_k_max(T: int, min_seg_len: int) -> int:
    return max(2, min(20, T // max(10, 2 * min_seg_len)))


def detect(
    series,
    mode,
    K_max: int | None = None,
    threshold: float = 0.75,
    penalty: float | None = None,
    min_seg_len=None,
    variance_floor=None,
) -> Segmentation:
    """Full detection: cost table, per-K dynamic programs, and selection."""
    series = _check_series(series)
    table = SegCostTable.build(series, mode, min_seg_len, variance_floor)
    if K_max is None:
        K_max = auto_k_max(table.T, table.min_seg_len)
        while K_max > 1 and not _feasible_K(table, K_max):
            K_max -= 1
    G = _suffix_tables(table, K_max)
    chosen, diagnostics = select_num_segments(
        series, K_max, mode, threshold=threshold, penalty=penalty,
        _table=table, _G=G,
    )
    seg = optimal_segmentation_for_k(series, chosen, mode, _table=table, _G=G)
    seg.penalty_used = penalty if penalty is not None else threshold
    seg.selection = diagnostics
    return seg
