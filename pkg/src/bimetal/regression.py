"""Conditional-mean families for the switching autoregression.

Both families map the last l values of the series to a predicted level:
an affine function of the lags, or a one-hidden-layer tanh perceptron with
linear output. Each knows how to refit itself against posterior weights,
which is all the EM M-step needs: the linear family in closed form, the
perceptron by monotone (step-halving) gradient descent on the weighted
squared error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def make_design(series: np.ndarray, lag: int) -> tuple[np.ndarray, np.ndarray]:
    """Lagged design matrix and targets: X[t] = (y_{t-1}, ..., y_{t-lag}).

    Returns (X, y) with one row per usable step t = lag..T-1.
    """
    series = np.asarray(series, dtype=float)
    if lag < 1:
        raise ValueError("lag must be >= 1")
    T = series.shape[0]
    if T <= lag:
        raise ValueError(f"series of length {T} has no usable steps at lag {lag}")
    X = np.column_stack([series[lag - 1 - i : T - 1 - i] for i in range(lag)])
    return X, series[lag:]


@dataclass
class LinearMean:
    """Affine conditional mean: a_0 + a_1 y_{t-1} + ... + a_l y_{t-l}."""

    coef: np.ndarray  # (lag + 1,), intercept first

    def __post_init__(self):
        self.coef = np.asarray(self.coef, dtype=float)

    @property
    def lag(self) -> int:
        return self.coef.shape[0] - 1

    @property
    def n_params(self) -> int:
        return self.coef.shape[0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.coef[0] + X @ self.coef[1:]

    def fit_weighted(self, X, y, w) -> "LinearMean":
        """Closed-form weighted least squares (exact M-step maximizer)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        design = np.column_stack([np.ones(X.shape[0]), X])
        sw = np.sqrt(np.asarray(w, dtype=float))
        coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
        return LinearMean(coef)

    def to_dict(self) -> dict:
        return {"kind": "linear", "coef": self.coef.tolist()}


@dataclass
class MlpMean:
    """One-hidden-layer perceptron: w2 . tanh(W1 x + b1) + b2."""

    w1: np.ndarray  # (hidden, lag)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=float)
        self.b1 = np.asarray(self.b1, dtype=float)
        self.w2 = np.asarray(self.w2, dtype=float)
        self.b2 = float(self.b2)

    @classmethod
    def random(cls, lag: int, hidden: int, rng, scale: float = 0.5,
               output_level: float = 0.0) -> "MlpMean":
        """Small random weights; output bias set near the target level."""
        return cls(
            w1=scale * rng.standard_normal((hidden, lag)),
            b1=scale * rng.standard_normal(hidden),
            w2=scale * rng.standard_normal(hidden),
            b2=output_level + 0.1 * scale * rng.standard_normal(),
        )

    @property
    def lag(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def n_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.tanh(X @ self.w1.T + self.b1) @ self.w2 + self.b2

    def loss(self, X, y, w) -> float:
        """Weighted half sum of squared errors."""
        r = self.predict(X) - y
        return float(0.5 * np.sum(w * r * r))

    def gradient(self, X, y, w) -> np.ndarray:
        """Backpropagated gradient of loss(), flattened like flat_params()."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        H = np.tanh(X @ self.w1.T + self.b1)
        r = H @ self.w2 + self.b2 - y
        wr = w * r
        g_b2 = wr.sum()
        g_w2 = H.T @ wr
        dz = (wr[:, None] * self.w2[None, :]) * (1.0 - H * H)
        g_b1 = dz.sum(axis=0)
        g_w1 = dz.T @ X
        return np.concatenate([g_w1.ravel(), g_b1, g_w2, [g_b2]])

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    def with_flat_params(self, theta: np.ndarray) -> "MlpMean":
        h, l = self.w1.shape
        i = h * l
        return MlpMean(
            w1=theta[:i].reshape(h, l),
            b1=theta[i : i + h],
            w2=theta[i + h : i + 2 * h],
            b2=theta[i + 2 * h],
        )

    def fit_weighted(self, X, y, w, steps: int = 200, lr: float = 1.0) -> "MlpMean":
        """Gradient descent on the weighted squared error, starting here.

        A step that fails to improve the loss is rejected and the step size
        halved, so the loss is non-increasing: exactly what a generalized
        (monotone) EM M-step requires.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        w = np.asarray(w, dtype=float)
        current = self
        loss = current.loss(X, y, w)
        theta = current.flat_params()
        for _ in range(steps):
            grad = current.gradient(X, y, w)
            candidate = current.with_flat_params(theta - lr * grad)
            cand_loss = candidate.loss(X, y, w)
            if np.isfinite(cand_loss) and cand_loss <= loss:
                current, loss, theta = candidate, cand_loss, candidate.flat_params()
            else:
                lr *= 0.5
                if lr < 1e-18:
                    break
        return current

    def to_dict(self) -> dict:
        return {
            "kind": "mlp",
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2,
        }


def mean_from_dict(d: dict):
    if d["kind"] == "linear":
        return LinearMean(np.array(d["coef"]))
    if d["kind"] == "mlp":
        return MlpMean(
            w1=np.array(d["w1"]),
            b1=np.array(d["b1"]),
            w2=np.array(d["w2"]),
            b2=d["b2"],
        )
    raise ValueError(f"unknown mean family {d['kind']!r}")
