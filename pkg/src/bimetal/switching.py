"""Two-regime Markov-switching autoregression fitted by EM.

The observed series follows, in each period, one of a small set of
autoregressive conditional-mean models (affine or one-hidden-layer
perceptron) with regime-specific Gaussian noise; the active regime is an
unobserved first-order Markov chain. The transition matrix is
column-stochastic: entry (i, j) is the probability of moving to regime i
from regime j, so for two regimes the diagonal holds the persistence
probabilities (p, q).

Estimation is classic EM: the Hamilton filter and Kim smoother give the
a-posteriori regime probabilities (E-step), then the transition matrix,
conditional means, and noise scales are reweighted (M-step). Filtering
starts from the stationary distribution of the current transition matrix;
the transition update therefore maximizes the *full* expected complete-data
log-likelihood, including the initial-state term, via a safeguarded line
search from the count-ratio candidate. That keeps the log-likelihood
non-decreasing at every iteration, which the tests assert unconditionally.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateModelError, MonotonicityError, NumericalError, ValidationError
from .regression import LinearMean, MlpMean, make_design, mean_from_dict

MEAN_FAMILIES = ("linear", "mlp")

_SIGMA_TINY = 1e-150


@dataclass(frozen=True)
class MsSpec:
    """Model shape: number of regimes, lag order, mean family per regime."""

    n_regimes: int = 2
    lag: int = 1
    families: tuple[str, ...] = ("mlp", "linear")
    hidden_units: int = 3

    def __post_init__(self):
        if self.n_regimes < 2:
            raise ValidationError("need at least two regimes")
        if self.lag < 1:
            raise ValidationError("lag must be >= 1")
        if self.hidden_units < 1:
            raise ValidationError("hidden_units must be >= 1")
        families = self.families
        if isinstance(families, str):
            families = (families,) * self.n_regimes
        if len(families) != self.n_regimes:
            raise ValidationError(
                f"{len(families)} mean families for {self.n_regimes} regimes"
            )
        for fam in families:
            if fam not in MEAN_FAMILIES:
                raise ValidationError(f"unknown mean family {fam!r}")
        object.__setattr__(self, "families", tuple(families))

    @property
    def n_params(self) -> int:
        per_mean = []
        for fam in self.families:
            if fam == "linear":
                per_mean.append(self.lag + 1)
            else:
                per_mean.append(self.hidden_units * (self.lag + 2) + 1)
        return self.n_regimes * (self.n_regimes - 1) + sum(per_mean) + self.n_regimes

    def to_dict(self) -> dict:
        return {
            "n_regimes": self.n_regimes,
            "lag": self.lag,
            "families": list(self.families),
            "hidden_units": self.hidden_units,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MsSpec":
        return cls(
            n_regimes=d["n_regimes"],
            lag=d["lag"],
            families=tuple(d["families"]),
            hidden_units=d["hidden_units"],
        )


@dataclass
class MsParams:
    """Transition matrix (column-stochastic), one mean model and one noise
    scale per regime."""

    transition: np.ndarray
    means: tuple
    sigmas: np.ndarray

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.sigmas = np.asarray(self.sigmas, dtype=float)
        self.means = tuple(self.means)

    @property
    def n_regimes(self) -> int:
        return self.transition.shape[0]

    @property
    def lag(self) -> int:
        return self.means[0].lag

    @property
    def p(self) -> float:
        """Persistence of regime 1 (stay probability)."""
        return float(self.transition[0, 0])

    @property
    def q(self) -> float:
        """Persistence of regime 2."""
        return float(self.transition[1, 1])

    def validate(self, allow_degenerate=False, allow_zero_sigma=False) -> None:
        A = self.transition
        n = self.n_regimes
        if A.shape != (n, n):
            raise ValidationError("transition matrix must be square")
        if np.any(A < 0) or np.any(A > 1):
            raise ValidationError("transition entries must lie in [0, 1]")
        if not np.allclose(A.sum(axis=0), 1.0, atol=1e-9):
            raise ValidationError("transition columns must sum to 1")
        if not allow_degenerate and (np.any(A <= 0) or np.any(A >= 1)):
            raise ValidationError(
                "transition entries must lie strictly inside (0, 1)"
            )
        if len(self.means) != n or self.sigmas.shape != (n,):
            raise ValidationError("one mean model and one sigma per regime")
        lags = {m.lag for m in self.means}
        if len(lags) != 1:
            raise ValidationError("all regimes must share the same lag order")
        if np.any(self.sigmas < 0) or (not allow_zero_sigma and np.any(self.sigmas == 0)):
            raise ValidationError("sigmas must be strictly positive")

    def permuted(self, order) -> "MsParams":
        """Relabel regimes: new regime k is old regime order[k]."""
        order = list(order)
        A = self.transition[np.ix_(order, order)]
        return MsParams(
            transition=A,
            means=tuple(self.means[i] for i in order),
            sigmas=self.sigmas[order],
        )

    def swapped(self) -> "MsParams":
        """Exchange the two regime labels (n_regimes == 2)."""
        return self.permuted([1, 0])

    def to_dict(self) -> dict:
        return {
            "transition": self.transition.tolist(),
            "means": [m.to_dict() for m in self.means],
            "sigmas": self.sigmas.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MsParams":
        return cls(
            transition=np.array(d["transition"]),
            means=tuple(mean_from_dict(m) for m in d["means"]),
            sigmas=np.array(d["sigmas"]),
        )


def transition_from_pq(p: float, q: float) -> np.ndarray:
    return np.array([[p, 1.0 - q], [1.0 - p, q]])


def stationary_distribution(transition) -> np.ndarray:
    """Invariant probability vector of a column-stochastic chain.

    For two regimes this is ((1-q)/D, (1-p)/D) with D = (1-p) + (1-q);
    a degenerate chain (p = q = 1) has no unique invariant vector.
    """
    A = np.asarray(transition, dtype=float)
    n = A.shape[0]
    if n == 2:
        p, q = A[0, 0], A[1, 1]
        denom = (1.0 - p) + (1.0 - q)
        if denom <= 0:
            raise NumericalError(
                "degenerate chain (p = q = 1): stationary distribution undefined"
            )
        return np.array([(1.0 - q) / denom, (1.0 - p) / denom])
    if np.allclose(A, np.eye(n)):
        raise NumericalError("degenerate chain: stationary distribution undefined")
    M = np.vstack([A - np.eye(n), np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def simulate(
    params: MsParams,
    T: int,
    seed: int = 0,
    burn_in: int = 100,
    initial_state: int | None = None,
    initial_lags=None,
    allow_degenerate: bool = False,
    allow_zero_sigma: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (series, states) of length T from the generative model.

    The chain starts from its stationary distribution (or from
    ``initial_state``); lag values start at ``initial_lags`` (default
    zeros) and ``burn_in`` initial samples are discarded. Deterministic
    given the seed. Degenerate chains (p=q=1) and zero noise are allowed
    only with the explicit flags.
    """
    if T < 1:
        raise ValidationError("T must be >= 1")
    params.validate(allow_degenerate=allow_degenerate, allow_zero_sigma=allow_zero_sigma)
    rng = np.random.default_rng(seed)
    A = params.transition
    n = params.n_regimes
    lag = params.lag

    if initial_state is None:
        pi = stationary_distribution(A)
        state = int(np.searchsorted(np.cumsum(pi), rng.random()))
    else:
        state = int(initial_state)
        if not 0 <= state < n:
            raise ValidationError(f"initial_state {state} out of range 0..{n - 1}")

    if initial_lags is None:
        lags = np.zeros(lag)
    else:
        lags = np.asarray(initial_lags, dtype=float).copy()
        if lags.shape != (lag,):
            raise ValidationError(f"initial_lags must have length {lag}")
    cum_cols = np.cumsum(A, axis=0)

    total = burn_in + T
    ys = np.empty(total)
    states = np.empty(total, dtype=int)
    for t in range(total):
        mean = float(params.means[state].predict(lags[None, :])[0])
        ys[t] = mean + params.sigmas[state] * rng.standard_normal()
        states[t] = state
        lags[1:] = lags[:-1]
        lags[0] = ys[t]
        state = int(np.searchsorted(cum_cols[:, state], rng.random()))
        state = min(state, n - 1)
    return ys[burn_in:], states[burn_in:]


# ---------------------------------------------------------------------------
# Filtering and smoothing
# ---------------------------------------------------------------------------

@dataclass
class RegimeProbabilities:
    """A-posteriori regime memberships for the usable steps t = lag..T-1.

    ``offset`` is the number of leading observations that only condition
    the recursion and carry no probability row.
    """

    filtered: np.ndarray
    smoothed: np.ndarray
    loglik: float
    offset: int

    def to_dict(self) -> dict:
        return {
            "offset": self.offset,
            "loglik": self.loglik,
            "filtered": self.filtered.tolist(),
            "smoothed": self.smoothed.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegimeProbabilities":
        return cls(
            filtered=np.array(d["filtered"]),
            smoothed=np.array(d["smoothed"]),
            loglik=d["loglik"],
            offset=d["offset"],
        )

    def swapped_columns(self) -> "RegimeProbabilities":
        return RegimeProbabilities(
            filtered=self.filtered[:, ::-1].copy(),
            smoothed=self.smoothed[:, ::-1].copy(),
            loglik=self.loglik,
            offset=self.offset,
        )


@dataclass
class FilterResult:
    """Forward-pass output; ``predicted[t]`` is P(x_t | data before t)."""

    filtered: np.ndarray
    predicted: np.ndarray
    log_densities: np.ndarray
    loglik: float
    offset: int


def _log_densities(params: MsParams, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    n_use = y.shape[0]
    L = np.empty((n_use, params.n_regimes))
    for i, (mean, sigma) in enumerate(zip(params.means, params.sigmas)):
        if sigma < _SIGMA_TINY:
            raise NumericalError(f"sigma underflow in regime {i + 1}")
        resid = y - mean.predict(X)
        L[:, i] = (
            -0.5 * np.log(2.0 * np.pi)
            - np.log(sigma)
            - 0.5 * (resid / sigma) ** 2
        )
    return L


def hamilton_filter(params: MsParams, series) -> FilterResult:
    """Forward recursion: filtered regime probabilities and log-likelihood.

    The first ``lag`` observations condition the recursion and contribute
    no likelihood terms. Probability updates run in the log domain.
    """
    series = np.asarray(series, dtype=float)
    if not np.all(np.isfinite(series)):
        raise ValidationError("series contains non-finite values")
    params.validate()
    lag = params.lag
    X, y = make_design(series, lag)
    L = _log_densities(params, X, y)
    A = params.transition
    n_use = y.shape[0]
    n = params.n_regimes

    filtered = np.empty((n_use, n))
    predicted = np.empty((n_use, n))
    with np.errstate(divide="ignore"):
        pred = stationary_distribution(A)
        loglik = 0.0
        for t in range(n_use):
            predicted[t] = pred
            joint = np.log(pred) + L[t]
            m = joint.max()
            if not np.isfinite(m):
                raise NumericalError(
                    f"vanishing likelihood at step {t}: check sigmas"
                )
            w = np.exp(joint - m)
            s = w.sum()
            loglik += m + np.log(s)
            f = w / s
            filtered[t] = f
            pred = A @ f
    return FilterResult(
        filtered=filtered, predicted=predicted, log_densities=L,
        loglik=float(loglik), offset=lag,
    )


def kim_smoother(params: MsParams, filt: FilterResult) -> np.ndarray:
    """Backward recursion: P(x_t | whole sample) from the filter output."""
    A = params.transition
    filtered, predicted = filt.filtered, filt.predicted
    n_use = filtered.shape[0]
    smoothed = np.empty_like(filtered)
    smoothed[-1] = filtered[-1]
    for t in range(n_use - 2, -1, -1):
        ratio = smoothed[t + 1] / predicted[t + 1]
        smoothed[t] = filtered[t] * (A.T @ ratio)
        smoothed[t] /= smoothed[t].sum()
    return smoothed


def posterior_probabilities(params: MsParams, series) -> RegimeProbabilities:
    """Filtered and smoothed regime probabilities in one call."""
    filt = hamilton_filter(params, series)
    smoothed = kim_smoother(params, filt)
    return RegimeProbabilities(
        filtered=filt.filtered, smoothed=smoothed,
        loglik=filt.loglik, offset=filt.offset,
    )


def _pairwise_counts(params, filt, smoothed) -> np.ndarray:
    """xi[i, j] = expected number of j -> i transitions over usable steps."""
    A = params.transition
    filtered, predicted = filt.filtered, filt.predicted
    ratio = smoothed[1:] / predicted[1:]          # (n_use-1, n)
    # xi_t(i, j) = ratio[t, i] * A[i, j] * filtered[t-1, j]
    return A * (ratio.T @ filtered[:-1])


# ---------------------------------------------------------------------------
# EM estimation
# ---------------------------------------------------------------------------

class _DegenerateRestart(Exception):
    """Internal: one restart collapsed; try the next."""


def _transition_q_value(A, xi, sm0) -> float:
    """Expected complete-data log-likelihood terms that involve A,
    including the stationary initial-state term."""
    with np.errstate(divide="ignore", invalid="ignore"):
        logA = np.log(A)
        val = float(np.sum(np.where(xi > 0, xi * logA, 0.0)))
        if np.any((xi > 0) & (A <= 0)):
            return -np.inf
        try:
            pi = stationary_distribution(A)
        except NumericalError:
            return -np.inf
        logpi = np.log(pi)
        if np.any((sm0 > 0) & (pi <= 0)):
            return -np.inf
        val += float(np.sum(np.where(sm0 > 0, sm0 * logpi, 0.0)))
    return val


def _update_transition(A_old, xi, sm0) -> np.ndarray:
    """Monotone transition update.

    The count-ratio candidate maximizes the transition term alone; because
    filtering starts from the stationary distribution of A, the initial
    term also moves with A. A halving line search from the candidate back
    toward the current matrix keeps the full Q value non-decreasing.
    The candidate is floored away from the boundary so iterates stay
    strictly inside (0, 1) in floating point.
    """
    col = xi.sum(axis=0)
    if np.any(col <= 0):
        raise _DegenerateRestart("empty transition column")
    candidate = np.maximum(xi / col, 1e-10)
    candidate /= candidate.sum(axis=0)
    q_old = _transition_q_value(A_old, xi, sm0)
    step = 1.0
    for _ in range(60):
        A_new = A_old + step * (candidate - A_old)
        if _transition_q_value(A_new, xi, sm0) >= q_old:
            return A_new
        step *= 0.5
    return A_old


@dataclass
class EmResult:
    params: MsParams
    probabilities: RegimeProbabilities
    trace: tuple
    converged: bool
    n_iter: int
    restart: int
    restart_logliks: tuple
    spec: MsSpec | None = None
    seed: int | None = None

    @property
    def loglik(self) -> float:
        return self.trace[-1]

    def to_dict(self) -> dict:
        return {
            "spec": None if self.spec is None else self.spec.to_dict(),
            "seed": self.seed,
            "params": self.params.to_dict(),
            "probabilities": self.probabilities.to_dict(),
            "trace": list(self.trace),
            "converged": self.converged,
            "n_iter": self.n_iter,
            "restart": self.restart,
            "restart_logliks": [
                None if v is None else v for v in self.restart_logliks
            ],
        }


def _initial_params(spec: MsSpec, series, rng) -> MsParams:
    """Jittered initialization around a global AR fit."""
    X, y = make_design(series, spec.lag)
    base = LinearMean(np.zeros(spec.lag + 1)).fit_weighted(X, y, np.ones(y.shape[0]))
    resid_std = float(np.std(y - base.predict(X), ddof=0))
    scale = max(resid_std, 1e-3 * max(float(np.std(y)), 1.0), 1e-12)

    means = []
    for fam in spec.families:
        if fam == "linear":
            jitter = rng.standard_normal(spec.lag + 1) * (
                0.5 * np.abs(base.coef) + 0.5 * scale
            )
            means.append(LinearMean(base.coef + jitter))
        else:
            means.append(
                MlpMean.random(
                    spec.lag, spec.hidden_units, rng,
                    scale=0.5, output_level=float(y.mean()),
                )
            )
    sigmas = scale * rng.uniform(0.5, 1.5, size=spec.n_regimes)
    diag = rng.uniform(0.7, 0.95, size=spec.n_regimes)
    A = np.empty((spec.n_regimes, spec.n_regimes))
    for j in range(spec.n_regimes):
        off = (1.0 - diag[j]) / (spec.n_regimes - 1)
        A[:, j] = off
        A[j, j] = diag[j]
    return MsParams(transition=A, means=tuple(means), sigmas=sigmas)


def _m_step(params, X, y, smoothed, xi, min_weight, mlp_steps) -> MsParams:
    masses = smoothed.sum(axis=0)
    if np.any(masses < min_weight):
        weak = int(np.argmin(masses))
        raise _DegenerateRestart(
            f"regime {weak + 1} holds {masses[weak]:.3g} observation-equivalents"
        )
    A = _update_transition(params.transition, xi, smoothed[0])
    means = []
    sigmas = np.empty(params.n_regimes)
    for i, mean in enumerate(params.means):
        w = smoothed[:, i]
        if isinstance(mean, MlpMean):
            new_mean = mean.fit_weighted(X, y, w, steps=mlp_steps)
        else:
            new_mean = mean.fit_weighted(X, y, w)
        resid = y - new_mean.predict(X)
        var = float(np.sum(w * resid * resid) / masses[i])
        if var < _SIGMA_TINY**2:
            raise _DegenerateRestart(f"sigma underflow in regime {i + 1}")
        means.append(new_mean)
        sigmas[i] = np.sqrt(var)
    return MsParams(transition=A, means=tuple(means), sigmas=sigmas)


def _em_single(spec, series, params, tol, max_iter, min_weight, mlp_steps):
    X, y = make_design(series, spec.lag)
    trace: list[float] = []
    prev = -np.inf
    converged = False
    probs = None
    for _ in range(max_iter):
        filt = hamilton_filter(params, series)
        smoothed = kim_smoother(params, filt)
        trace.append(filt.loglik)
        if filt.loglik < prev - 1e-8:
            raise MonotonicityError(
                f"EM log-likelihood decreased from {prev!r} to {filt.loglik!r}"
            )
        if len(trace) > 1 and filt.loglik - prev < tol:
            probs = RegimeProbabilities(
                filtered=filt.filtered, smoothed=smoothed,
                loglik=filt.loglik, offset=filt.offset,
            )
            converged = True
            break
        prev = filt.loglik
        xi = _pairwise_counts(params, filt, smoothed)
        params = _m_step(params, X, y, smoothed, xi, min_weight, mlp_steps)
    if probs is None:
        filt = hamilton_filter(params, series)
        smoothed = kim_smoother(params, filt)
        trace.append(filt.loglik)
        if filt.loglik < prev - 1e-8:
            raise MonotonicityError(
                f"EM log-likelihood decreased from {prev!r} to {filt.loglik!r}"
            )
        probs = RegimeProbabilities(
            filtered=filt.filtered, smoothed=smoothed,
            loglik=filt.loglik, offset=filt.offset,
        )
    return params, probs, trace, converged


def canonical_regime_order(params: MsParams) -> list[int]:
    """Regimes sorted by stationary probability, largest first (stable)."""
    pi = stationary_distribution(params.transition)
    return list(np.argsort(-pi, kind="stable"))


def em_fit(
    spec: MsSpec,
    series,
    init: MsParams | None = None,
    seed: int = 0,
    tol: float = 1e-6,
    max_iter: int = 200,
    n_restarts: int = 10,
    min_weight: float = 1.0,
    mlp_steps: int = 200,
) -> EmResult:
    """Fit by EM; best of ``n_restarts`` seeded jittered initializations.

    When ``init`` params are given a single run starts from them instead.
    Regimes in the result are relabeled so regime 1 has the larger
    stationary probability. A restart aborts as degenerate when a regime's
    total posterior mass drops below ``min_weight`` observation-equivalents;
    if every restart degenerates the model is likely over-specified and a
    DegenerateModelError suggests fewer regimes.
    """
    series = np.asarray(series, dtype=float)
    if not np.all(np.isfinite(series)):
        raise ValidationError("series contains non-finite values")
    n_use = series.shape[0]
    if n_use < 10 * spec.n_params:
        warnings.warn(
            f"series length {n_use} is short for {spec.n_params} parameters "
            f"(< 10 per parameter); estimates may be unstable",
            stacklevel=2,
        )

    if init is not None:
        starts = [init]
    else:
        children = np.random.SeedSequence(seed).spawn(n_restarts)
        starts = [
            _initial_params(spec, series, np.random.default_rng(child))
            for child in children
        ]

    best = None
    restart_logliks: list[float | None] = []
    failures: list[str] = []
    for r, start in enumerate(starts):
        try:
            params, probs, trace, converged = _em_single(
                spec, series, start, tol, max_iter, min_weight, mlp_steps
            )
        except _DegenerateRestart as exc:
            restart_logliks.append(None)
            failures.append(str(exc))
            continue
        restart_logliks.append(trace[-1])
        if best is None or trace[-1] > best[2][-1]:
            best = (params, probs, trace, converged, r)

    if best is None:
        raise DegenerateModelError(
            "all restarts degenerate (" + "; ".join(failures[:3]) +
            "); try fewer regimes"
        )

    params, probs, trace, converged, restart = best
    order = canonical_regime_order(params)
    if order != list(range(spec.n_regimes)):
        params = params.permuted(order)
        probs = RegimeProbabilities(
            filtered=probs.filtered[:, order].copy(),
            smoothed=probs.smoothed[:, order].copy(),
            loglik=probs.loglik,
            offset=probs.offset,
        )
    return EmResult(
        params=params,
        probabilities=probs,
        trace=tuple(trace),
        converged=converged,
        n_iter=len(trace),
        restart=restart,
        restart_logliks=tuple(restart_logliks),
        spec=spec,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Cross-tabulation against a periodization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassRegimeRow:
    """One macro-class row: size, share ruled by regime 1, spread volatility."""

    class_id: int
    n_obs: int
    pct_regime1: float
    spread_std: float


def cross_tabulate(probs: RegimeProbabilities, classification, spread) -> list[ClassRegimeRow]:
    """Per macro-class: week count, share of weeks with smoothed
    P(regime 1) > 0.5, and the standard deviation of the spread."""
    week_to_class = classification.week_to_class
    if week_to_class is None:
        raise ValidationError("classification lacks week assignments; run periodize")
    n_weeks = week_to_class.shape[0]
    values = spread.values
    if values.shape[0] != n_weeks:
        raise ValidationError(
            f"misaligned indices: {n_weeks} classified weeks vs "
            f"{values.shape[0]} spread observations"
        )
    if probs.offset + probs.smoothed.shape[0] != n_weeks:
        raise ValidationError(
            f"misaligned indices: probabilities cover {probs.smoothed.shape[0]} "
            f"steps from week {probs.offset}, dataset has {n_weeks} weeks"
        )

    regime1 = np.zeros(n_weeks, dtype=bool)
    has_prob = np.zeros(n_weeks, dtype=bool)
    regime1[probs.offset:] = probs.smoothed[:, 0] > 0.5
    has_prob[probs.offset:] = True

    rows = []
    for cls in sorted(set(week_to_class.tolist())):
        member = week_to_class == cls
        with_prob = member & has_prob
        share = float(regime1[with_prob].mean()) if with_prob.any() else float("nan")
        rows.append(
            ClassRegimeRow(
                class_id=int(cls),
                n_obs=int(member.sum()),
                pct_regime1=share,
                spread_std=float(values[member].std(ddof=0)),
            )
        )
    return rows


def cross_tab_to_dict(rows: list[ClassRegimeRow]) -> dict:
    return {
        "columns": ["class", "n_obs", "pct_regime1", "spread_std"],
        "rows": [
            [r.class_id, r.n_obs, r.pct_regime1, r.spread_std] for r in rows
        ],
    }
