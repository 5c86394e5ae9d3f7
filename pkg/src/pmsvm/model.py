"""Linear multi-class models, losses, and per-example gradients.

Three objective families live here:

* the exact Crammer-Singer hinge (one slack per sample, charged to the
  most-violating class) used by the weight-perturbation path, whose dual
  structure is what the sensitivity constant is computed from;
* a smoothed multi-class hinge that sums a softened ramp over all wrong
  classes, plus a pairwise weight-difference regularizer and a ridge term,
  used by the gradient-perturbation path (smooth and strongly convex, so
  per-example gradients are well defined everywhere);
* binary hinge / smoothed hinge and softmax cross-entropy for the
  one-vs-rest and linear baselines.

The smoothing is g_s(t) = (t + sqrt(t^2 + s^2)) / 2, which decreases to
max(0, t) as s -> 0. Per-example gradients carry a 1/n share of every
regularizer so that summing them over the dataset reproduces the full
objective gradient exactly; that convention is what makes per-example
clipping meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset

__all__ = [
    "LinearModel",
    "LossParams",
    "predict",
    "predict_batch",
    "margins",
    "smoothed_loss",
    "smoothed_grad_example",
    "smoothed_full_grad",
    "smoothed_coeffs",
    "cs_hinge_loss",
    "cs_subgrad",
    "binary_hinge_loss",
    "binary_hinge_grad",
    "binary_smoothed_loss",
    "binary_smoothed_grad_example",
    "ce_loss",
    "ce_grad_example",
    "ce_coeffs",
    "save_model",
    "load_model",
    "accuracy",
]


@dataclass(frozen=True)
class LinearModel:
    """Weight matrix W (d x c) with an optional bias vector (c,).

    Scores are W^T x (+ b). Weight perturbation requires bias-free models:
    the sensitivity argument is stated for the support function over class
    weight vectors alone.
    """

    weights: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=np.float64)
        if W.ndim != 2:
            raise ValueError(f"weights must be d x c, got shape {W.shape}")
        if not np.isfinite(W).all():
            raise ValueError("weights contain non-finite entries")
        object.__setattr__(self, "weights", W)
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float64)
            if b.shape != (W.shape[1],):
                raise ValueError(
                    f"bias shape {b.shape} does not match {W.shape[1]} classes"
                )
            if not np.isfinite(b).all():
                raise ValueError("bias contains non-finite entries")
            object.__setattr__(self, "bias", b)

    @property
    def d(self) -> int:
        return self.weights.shape[0]

    @property
    def c(self) -> int:
        return self.weights.shape[1]

    @property
    def with_bias(self) -> bool:
        return self.bias is not None

    @classmethod
    def zeros(cls, d: int, c: int, with_bias: bool = False) -> "LinearModel":
        return cls(np.zeros((d, c)), np.zeros(c) if with_bias else None)

    def scores(self, X: np.ndarray) -> np.ndarray:
        S = X @ self.weights
        if self.bias is not None:
            S = S + self.bias
        return S


@dataclass(frozen=True)
class LossParams:
    """Weights of the smoothed multi-class objective.

    C: slack weight of the exact hinge objective (enters the smoothed
       objective only through the default pairwise coupling).
    lam: pairwise weight-difference regularizer; None means "couple to C/n"
       with n taken from the dataset at evaluation time.
    mu: ridge weight on (||W||_F^2 + ||b||^2); must be positive for the
       gradient-perturbation path (strong convexity).
    varsigma: smoothing radius; 0 selects the exact (nonsmooth) hinge.
    """

    C: float = 1.0
    lam: float | None = None
    mu: float = 1e-4
    varsigma: float = 0.5

    def __post_init__(self):
        if self.C < 0 or self.mu < 0 or self.varsigma < 0:
            raise ValueError("loss parameters must be nonnegative")
        if self.lam is not None and self.lam < 0:
            raise ValueError("pairwise weight must be nonnegative")

    def effective_lambda(self, n: int) -> float:
        return self.lam if self.lam is not None else self.C / n


def predict(model: LinearModel, x: np.ndarray) -> int:
    """Argmax class score; ties break to the lowest index."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.d,):
        raise ValueError(f"expected a vector of length {model.d}, got {x.shape}")
    return int(np.argmax(model.scores(x[None, :])[0]))


def predict_batch(model: LinearModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise ValueError(f"expected an (m, {model.d}) matrix, got {X.shape}")
    return np.argmax(model.scores(X), axis=1)


def accuracy(model: LinearModel, dataset: Dataset) -> float:
    return float(np.mean(predict_batch(model, dataset.features) == dataset.labels))


def margins(model: LinearModel, x: np.ndarray, y: int) -> np.ndarray:
    """Hinge arguments 1 - (s_y - s_k) for k != y, increasing k."""
    y = int(y)
    if not 0 <= y < model.c:
        raise ValueError(f"label {y} outside [0, {model.c})")
    s = model.scores(np.asarray(x, dtype=np.float64)[None, :])[0]
    gam = 1.0 - (s[y] - s)
    return np.delete(gam, y)


def _smooth_ramp(t: np.ndarray, varsigma: float) -> np.ndarray:
    # (t + sqrt(t^2 + s^2)) / 2; equals max(0, t) at s = 0.
    return 0.5 * (t + np.sqrt(t * t + varsigma * varsigma))


def _smooth_ramp_slope(t: np.ndarray, varsigma: float) -> np.ndarray:
    # d/dt of the ramp: (t + r) / (2r) with r = sqrt(t^2 + s^2). In (0, 1).
    r = np.sqrt(t * t + varsigma * varsigma)
    return 0.5 * (1.0 + t / r)


def _pairwise_sq(W: np.ndarray) -> float:
    # sum_{k<l} ||w_k - w_l||^2 = c ||W||_F^2 - ||sum_k w_k||^2
    c = W.shape[1]
    s = W.sum(axis=1)
    return float(c * np.sum(W * W) - np.dot(s, s))


def smoothed_loss(model: LinearModel, dataset: Dataset, params: LossParams) -> float:
    """Smoothed sum-over-wrong-classes objective with both regularizers."""
    S = model.scores(dataset.features)
    n = dataset.n
    true = S[np.arange(n), dataset.labels]
    gam = 1.0 - (true[:, None] - S)
    ramp = _smooth_ramp(gam, params.varsigma)
    ramp[np.arange(n), dataset.labels] = 0.0
    lam = params.effective_lambda(n)
    val = float(ramp.sum()) + lam * _pairwise_sq(model.weights)
    val += params.mu * float(np.sum(model.weights**2))
    if model.bias is not None:
        val += params.mu * float(np.dot(model.bias, model.bias))
    return val


def smoothed_coeffs(
    S: np.ndarray, labels: np.ndarray, varsigma: float
) -> np.ndarray:
    """Per-example score-space gradient coefficients of the smoothed loss.

    Row i holds d(loss_i)/d(s_ik): the ramp slope at gamma_ik for k != y_i
    and minus their sum at k = y_i. The data-dependent part of every
    gradient is then x_i outer coeffs_i.
    """
    m = S.shape[0]
    rows = np.arange(m)
    true = S[rows, labels]
    gam = 1.0 - (true[:, None] - S)
    co = _smooth_ramp_slope(gam, varsigma)
    co[rows, labels] = 0.0
    co[rows, labels] = -co.sum(axis=1)
    return co


def _reg_grad(model: LinearModel, lam: float, mu: float) -> np.ndarray:
    # Gradient of lam * pairwise + mu * ||W||_F^2 with respect to W.
    W = model.weights
    c = W.shape[1]
    return 2.0 * lam * (c * W - W.sum(axis=1, keepdims=True)) + 2.0 * mu * W


def smoothed_grad_example(
    model: LinearModel,
    x: np.ndarray,
    y: int,
    params: LossParams,
    n: int,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Exact gradient of one example's share of the smoothed objective.

    The share is the example's ramp terms plus 1/n of both regularizers, so
    the per-example gradients sum to the full objective gradient.
    """
    if params.varsigma <= 0:
        raise ValueError(
            "per-example gradients need varsigma > 0; the exact hinge is "
            "nonsmooth, use the subgradient path"
        )
    x = np.asarray(x, dtype=np.float64)
    S = model.scores(x[None, :])
    co = smoothed_coeffs(S, np.array([int(y)]), params.varsigma)[0]
    lam = params.effective_lambda(n)
    gW = np.outer(x, co) + _reg_grad(model, lam, params.mu) / n
    if model.bias is None:
        return gW, None
    gb = co + 2.0 * params.mu * model.bias / n
    return gW, gb


def smoothed_full_grad(
    model: LinearModel, dataset: Dataset, params: LossParams
) -> tuple[np.ndarray, np.ndarray | None]:
    """Full-batch objective gradient, assembled directly (not by summing
    per-example records); used by the non-private smoothed solver."""
    if params.varsigma <= 0:
        raise ValueError("smoothed gradient needs varsigma > 0")
    S = model.scores(dataset.features)
    co = smoothed_coeffs(S, dataset.labels, params.varsigma)
    lam = params.effective_lambda(dataset.n)
    gW = dataset.features.T @ co + _reg_grad(model, lam, params.mu)
    if model.bias is None:
        return gW, None
    gb = co.sum(axis=0) + 2.0 * params.mu * model.bias
    return gW, gb


def cs_hinge_loss(model: LinearModel, dataset: Dataset, C: float) -> float:
    """Single-slack multi-class hinge: the slack of each sample is the
    worst violation over wrong classes, weighted C/n, plus half the
    squared Frobenius norm of W."""
    S = model.scores(dataset.features)
    n = dataset.n
    rows = np.arange(n)
    true = S[rows, dataset.labels]
    gam = 1.0 - (true[:, None] - S)
    gam[rows, dataset.labels] = -np.inf
    slack = np.maximum(0.0, gam.max(axis=1))
    return 0.5 * float(np.sum(model.weights**2)) + (C / n) * float(slack.sum())


def cs_subgrad(
    model: LinearModel, x: np.ndarray, y: int, C: float, n: int
) -> np.ndarray:
    """One example's share of a subgradient of the single-slack objective.

    Ridge share W/n; if the worst wrong-class violation is positive, the
    lowest-index violator j gets +(C/n) x and the true class -(C/n) x.
    Bias-free models only (the weight-perturbation contract).
    """
    if model.bias is not None:
        raise ValueError("single-slack subgradient is defined for bias-free models")
    x = np.asarray(x, dtype=np.float64)
    y = int(y)
    s = model.scores(x[None, :])[0]
    gam = 1.0 - (s[y] - s)
    gam[y] = -np.inf
    j = int(np.argmax(gam))
    g = model.weights / n
    if gam[j] > 0.0:
        g = g.copy()
        g[:, j] += (C / n) * x
        g[:, y] -= (C / n) * x
    return g


def binary_hinge_loss(
    w: np.ndarray, b: float | None, X: np.ndarray, y: np.ndarray, C: float
) -> float:
    """Half ||w||^2 plus C/n-weighted hinge on margins y (w.x + b)."""
    f = X @ w + (b if b is not None else 0.0)
    slack = np.maximum(0.0, 1.0 - y * f)
    return 0.5 * float(np.dot(w, w)) + (C / len(y)) * float(slack.sum())


def binary_hinge_grad(
    w: np.ndarray, b: float | None, X: np.ndarray, y: np.ndarray, C: float
) -> tuple[np.ndarray, float | None]:
    """Full-batch subgradient; active terms contribute slope -y_i x_i."""
    n = len(y)
    f = X @ w + (b if b is not None else 0.0)
    active = (1.0 - y * f) > 0.0
    coef = np.where(active, -y, 0.0) * (C / n)
    gw = w + X.T @ coef
    gb = float(coef.sum()) if b is not None else None
    return gw, gb


def binary_smoothed_loss(
    w: np.ndarray,
    b: float | None,
    X: np.ndarray,
    y: np.ndarray,
    mu: float,
    varsigma: float,
) -> float:
    """Smoothed-ramp binary hinge plus ridge mu (||w||^2 + b^2)."""
    f = X @ w + (b if b is not None else 0.0)
    val = float(_smooth_ramp(1.0 - y * f, varsigma).sum())
    val += mu * float(np.dot(w, w))
    if b is not None:
        val += mu * b * b
    return val


def binary_smoothed_grad_example(
    w: np.ndarray,
    b: float | None,
    x: np.ndarray,
    y: float,
    mu: float,
    varsigma: float,
    n: int,
) -> tuple[np.ndarray, float | None]:
    """One example's share: slope * (-y x) plus 1/n of the ridge gradient."""
    if varsigma <= 0:
        raise ValueError("smoothed gradient needs varsigma > 0")
    f = float(np.dot(w, x)) + (b if b is not None else 0.0)
    slope = float(_smooth_ramp_slope(np.array([1.0 - y * f]), varsigma)[0])
    gw = (-y * slope) * np.asarray(x, dtype=np.float64) + (2.0 * mu / n) * w
    gb = (-y * slope) + (2.0 * mu / n) * b if b is not None else None
    return gw, gb


def ce_coeffs(S: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Softmax probabilities minus one-hot labels, row per example."""
    Z = S - S.max(axis=1, keepdims=True)
    P = np.exp(Z)
    P /= P.sum(axis=1, keepdims=True)
    P[np.arange(S.shape[0]), labels] -= 1.0
    return P


def ce_loss(
    model: LinearModel, dataset: Dataset, mu: float = 0.0
) -> float:
    """Summed softmax cross-entropy of the scores, optional ridge."""
    S = model.scores(dataset.features)
    Z = S - S.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(Z).sum(axis=1))
    val = float(np.sum(logsum - Z[np.arange(dataset.n), dataset.labels]))
    val += mu * float(np.sum(model.weights**2))
    if model.bias is not None:
        val += mu * float(np.dot(model.bias, model.bias))
    return val


def ce_grad_example(
    model: LinearModel, x: np.ndarray, y: int, mu: float, n: int
) -> tuple[np.ndarray, np.ndarray | None]:
    """Per-example cross-entropy gradient with the 1/n ridge share."""
    x = np.asarray(x, dtype=np.float64)
    S = model.scores(x[None, :])
    co = ce_coeffs(S, np.array([int(y)]))[0]
    gW = np.outer(x, co) + (2.0 * mu / n) * model.weights
    if model.bias is None:
        return gW, None
    gb = co + (2.0 * mu / n) * model.bias
    return gW, gb


def save_model(path: str, model: LinearModel) -> None:
    """Plain-text serialization: "d c with_bias" header, then one line per
    feature row of W, then the bias line. 17 significant digits, which
    round-trips IEEE doubles exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{model.d} {model.c} {int(model.with_bias)}\n")
        for row in model.weights:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
        if model.bias is not None:
            fh.write(" ".join(f"{v:.17g}" for v in model.bias) + "\n")


def load_model(path: str) -> LinearModel:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: malformed model header")
        d, c, wb = int(header[0]), int(header[1]), int(header[2])
        W = np.empty((d, c))
        for i in range(d):
            vals = fh.readline().split()
            if len(vals) != c:
                raise ValueError(f"{path}: weight row {i} has {len(vals)} values")
            W[i] = [float(v) for v in vals]
        bias = None
        if wb:
            vals = fh.readline().split()
            if len(vals) != c:
                raise ValueError(f"{path}: bias line has {len(vals)} values")
            bias = np.array([float(v) for v in vals])
    return LinearModel(W, bias)
