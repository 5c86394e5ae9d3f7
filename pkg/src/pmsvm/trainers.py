"""Private training procedures and the non-private solvers they share.

Weight perturbation solves the exact single-slack multi-class hinge
deterministically, then adds analytically calibrated Gaussian noise sized
by the closed-form sensitivity bound. Gradient perturbation runs noisy
clipped-gradient descent on the smoothed objective with Poisson batches,
charging every step (including empty batches) to a Renyi ledger. The
one-vs-rest baselines split the same total budget evenly across per-class
binary classifiers, which is exactly the handicap the joint formulations
avoid: one data access per sample per step pays for all classes at once.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as M
from .data import Dataset
from .model import LinearModel, LossParams
from .numerics import RandomSource, poisson_subsample, sample_gaussian
from .privacy import (
    PrivacyBudget,
    RdpLedger,
    SIGMA_FLOOR,
    calibrate_analytic_gaussian,
    compose_budgets,
    lambda_max_preset,
    perturb_weights,
    sigma_for_budget,
    split_budget_ovr,
    weight_sensitivity,
)

NORM_SLACK = 1e-9


class SolverError(RuntimeError):
    """Raised when an iteration cap is hit before the stop criterion.

    Carries the last iterate and the achieved criterion value so callers
    can inspect (or deliberately continue from) the partial solve.
    """

    def __init__(self, message: str, model: LinearModel, achieved: float):
        super().__init__(message)
        self.model = model
        self.achieved = achieved


@dataclass(frozen=True)
class WpConfig:
    """Weight-perturbation hyperparameters.

    C_over_n is the slack weight as a per-sample ratio (the quantity the
    sensitivity bound is expressed in). The encoding preset selects the
    spectral constant: crammer_singer (2), binary (1), or conservative (c).
    """

    C_over_n: float = 0.005
    tol: float = 1e-4
    max_iter: int = 200_000
    encoding: str = "crammer_singer"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("solver tolerance must be positive")
        if self.C_over_n < 0:
            raise ValueError("C_over_n must be nonnegative")


@dataclass(frozen=True)
class GpConfig:
    """Gradient-perturbation hyperparameters.

    sigma_override is a diagnostic escape hatch: it bypasses the accountant
    entirely (the run is then NOT private and the report carries no
    consumed budget). q is the Poisson sampling rate; T the step count.
    """

    loss: LossParams = field(default_factory=LossParams)
    R: float = 1.0
    T: int = 100
    q: float = 1.0
    schedule: str = "constant"
    base_lr: float = 0.1
    optimizer: str = "plain"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_gamma: float = 1e-8
    with_bias: bool = True
    sigma_override: float | None = None
    trace_every: int = 1

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("clipping bound R must be positive")
        if self.T < 1:
            raise ValueError("need at least one step")
        if not 0.0 < self.q <= 1.0:
            raise ValueError("sampling rate must lie in (0, 1]")
        if self.schedule not in ("constant", "inverse", "linear"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.optimizer not in ("plain", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if not self.adam_gamma > 0:
            raise ValueError("adam stabilizer must be positive")


@dataclass
class TrainReport:
    """Everything a single training run produced.

    consumed is None only for sigma_override diagnostics runs, which opt
    out of the privacy contract. Traces are parallel arrays over recorded
    steps; test_acc is NaN when no test set was supplied.
    """

    model: LinearModel
    method: str
    seed: int
    sigma: float
    requested: PrivacyBudget | None
    consumed: PrivacyBudget | None
    steps: np.ndarray
    loss_trace: np.ndarray
    train_acc_trace: np.ndarray
    test_acc_trace: np.ndarray
    wall_clock: float
    config: dict
    extras: dict

    def final_test_acc(self) -> float:
        return float(self.test_acc_trace[-1])


def schedule_step(
    kind: str,
    base: float,
    t: int,
    lambda_strong: float | None = None,
    T: int | None = None,
) -> float:
    """Learning rate at step t (1-based)."""
    if t < 1:
        raise ValueError("steps are 1-based")
    if kind == "constant":
        return base
    if kind == "inverse":
        if lambda_strong is None or lambda_strong <= 0:
            raise ValueError("inverse decay needs a positive strong-convexity rate")
        return 1.0 / (lambda_strong * t)
    if kind == "linear":
        if T is None or T < 1:
            raise ValueError("linear decay needs the horizon T")
        return base * (1.0 - t / T)
    raise ValueError(f"unknown schedule {kind!r}")


def _require_classes(dataset: Dataset) -> None:
    counts = dataset.class_counts()
    if dataset.n == 0:
        raise ValueError("dataset is empty")
    if (counts == 0).any():
        missing = int(np.argmin(counts))
        raise ValueError(f"class {missing} has no training samples")


def _require_unit_ball(dataset: Dataset) -> None:
    worst = float(np.linalg.norm(dataset.features, axis=1).max(initial=0.0))
    if worst > 1.0 + NORM_SLACK:
        raise ValueError(
            f"weight perturbation needs rows inside the unit ball; "
            f"max row norm is {worst:.6g} (scale the data first)"
        )


def _cs_full_subgrad(
    W: np.ndarray, X: np.ndarray, y: np.ndarray, C_over_n: float
) -> np.ndarray:
    """Full-batch subgradient of the single-slack objective at W."""
    n = X.shape[0]
    S = X @ W
    rows = np.arange(n)
    gam = 1.0 - (S[rows, y][:, None] - S)
    gam[rows, y] = -np.inf
    j = np.argmax(gam, axis=1)  # lowest index wins ties
    active = gam[rows, j] > 0.0
    Z = np.zeros_like(S)
    idx = np.flatnonzero(active)
    Z[idx, j[idx]] = C_over_n
    Z[idx, y[idx]] -= C_over_n
    return W + X.T @ Z


def _solve_cs_subgradient(
    dataset: Dataset,
    C: float,
    tol: float,
    max_iter: int,
    window: int = 50,
    loss_trace: list | None = None,
) -> LinearModel:
    """Deterministic subgradient descent with 1/t steps and running-average
    (Polyak) iterates; stops when the averaged objective improves by less
    than tol over a window."""
    X, y = dataset.features, dataset.labels
    n, d, c = dataset.n, dataset.d, dataset.num_classes
    C_over_n = C / n
    W = np.zeros((d, c))
    Wbar = np.zeros((d, c))
    prev_obj = math.inf
    improvement = math.inf
    for t in range(1, max_iter + 1):
        G = _cs_full_subgrad(W, X, y, C_over_n)
        W -= (1.0 / t) * G
        Wbar += (W - Wbar) / t
        if t % window == 0:
            obj = M.cs_hinge_loss(LinearModel(Wbar), dataset, C)
            if loss_trace is not None:
                loss_trace.append(obj)
            improvement = prev_obj - obj
            if improvement < tol:
                return LinearModel(Wbar)
            prev_obj = obj
    raise SolverError(
        f"single-slack solver hit max_iter={max_iter} with last window "
        f"improvement {improvement:.3g} >= tol={tol:.3g}",
        LinearModel(Wbar),
        improvement,
    )


def _solve_smoothed_descent(
    dataset: Dataset,
    params: LossParams,
    tol: float,
    max_iter: int,
    with_bias: bool,
    loss_trace: list | None = None,
) -> LinearModel:
    """Full-batch descent with backtracking line search until the gradient
    norm drops to tol. Monotone in the objective by construction."""
    model = LinearModel.zeros(dataset.d, dataset.num_classes, with_bias)
    fval = M.smoothed_loss(model, dataset, params)
    if loss_trace is not None:
        loss_trace.append(fval)
    eta = 1.0
    gnorm = math.inf
    for _ in range(max_iter):
        gW, gb = M.smoothed_full_grad(model, dataset, params)
        gnorm2 = float(np.sum(gW * gW)) + (float(np.dot(gb, gb)) if gb is not None else 0.0)
        gnorm = math.sqrt(gnorm2)
        if gnorm <= tol:
            return model
        # Armijo backtracking, with a gentle growth so steps recover after
        # an early conservative region.
        eta = min(eta * 2.0, 1e6)
        while True:
            cand = LinearModel(
                model.weights - eta * gW,
                model.bias - eta * gb if gb is not None else None,
            )
            cand_val = M.smoothed_loss(cand, dataset, params)
            if cand_val <= fval - 1e-4 * eta * gnorm2:
                break
            eta *= 0.5
            if eta < 1e-18:
                raise SolverError(
                    "backtracking step collapsed before reaching tolerance",
                    model,
                    gnorm,
                )
        model, fval = cand, cand_val
        if loss_trace is not None:
            loss_trace.append(fval)
    raise SolverError(
        f"smoothed solver hit max_iter={max_iter} at gradient norm {gnorm:.3g}",
        model,
        gnorm,
    )


def solve_allinone(
    dataset: Dataset,
    loss: str,
    params: LossParams,
    tol: float = 1e-4,
    max_iter: int = 200_000,
    rng: RandomSource | None = None,
    with_bias: bool = False,
    loss_trace: list | None = None,
) -> LinearModel:
    """Non-private minimizer of either multi-class objective.

    loss="cs_hinge": exact single-slack hinge via averaged subgradient
    descent (deterministic; rng unused). loss="smoothed": the smooth
    objective via backtracking full-batch descent to gradient norm <= tol.
    Passing a list as loss_trace collects the objective along the run.
    """
    _require_classes(dataset)
    if loss == "cs_hinge":
        C = params.C if params.C > 0 else 0.0
        if C == 0.0:
            return LinearModel.zeros(dataset.d, dataset.num_classes)
        return _solve_cs_subgradient(
            dataset, C, tol, max_iter, loss_trace=loss_trace
        )
    if loss == "smoothed":
        return _solve_smoothed_descent(
            dataset, params, tol, max_iter, with_bias, loss_trace=loss_trace
        )
    raise ValueError(f"unknown loss {loss!r}")


def _project_capped_zero_sum(z: list, ub: list) -> list:
    """argmin ||b - z|| subject to b_k <= ub_k and sum_k b_k = 0.

    Water-filling: b_k = min(z_k - theta, ub_k) with theta the unique root
    of the decreasing piecewise-linear sum. Plain-float implementation;
    at the class counts seen here this beats vectorization handily.
    """
    c = len(z)
    bp = sorted(range(c), key=lambda k: ub[k] - z[k])  # descending z - ub
    U = 0.0
    Z = sum(z)
    m = c
    for j in range(c + 1):
        if m > 0:
            theta = (U + Z) / m
            lo = z[bp[j]] - ub[bp[j]] if j < c else -math.inf
            hi = z[bp[j - 1]] - ub[bp[j - 1]] if j > 0 else math.inf
            if lo <= theta <= hi:
                return [min(z[k] - theta, ub[k]) for k in range(c)]
        if j < c:
            k = bp[j]
            U += ub[k]
            Z -= z[k]
            m -= 1
    raise AssertionError("projection root not bracketed")


def _cs_dual_solve(
    X: np.ndarray,
    y: np.ndarray,
    c: int,
    a: float,
    gap_tol: float = 1e-10,
    max_epochs: int = 200_000,
    beta0: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Certified minimizer of the single-slack objective via its dual.

    Exact blockwise maximization of D(beta) = -||X^T beta||^2/2 + sum_i
    beta_{i, y_i} over the per-sample sets {sum_k beta_ik = 0, beta_ik <=
    a*[k == y_i]}, where W(beta) = X^T beta recovers the primal weights.
    Returns (W, beta, gap); the duality gap certifies ||W - W*||_F <=
    sqrt(2*gap) because the primal is 1-strongly convex. Used where a
    provable weight accuracy matters (the leave-one-out bound check); the
    training path keeps the simpler subgradient scheme.
    """
    n, d = X.shape
    if a == 0.0:  # pure ridge: W*=0 with a tight certificate for free
        return np.zeros((d, c)), np.zeros((n, c)), 0.0
    beta = np.zeros((n, c)) if beta0 is None else np.array(beta0)
    W = X.T @ beta
    h = np.sum(X * X, axis=1)
    rows = np.arange(n)
    C_total = a * n
    order_rng = np.random.Generator(np.random.Philox(key=0))
    best = math.inf
    stall = 0
    gap = math.inf
    for _epoch in range(max_epochs):
        for i in order_rng.permutation(n):
            yi = int(y[i])
            bi = beta[i]
            if h[i] == 0.0:
                # sample never enters W; park beta at its tie-free optimum
                bi[:] = -a / (c - 1)
                bi[yi] = a
                continue
            x = X[i]
            v = W.T @ x - h[i] * bi  # scores of W without sample i's block
            z = (-v / h[i]).tolist()
            z[yi] += 1.0 / h[i]
            ub = [0.0] * c
            ub[yi] = a
            newb = _project_capped_zero_sum(z, ub)
            delta = np.array(newb) - bi
            W += x[:, None] * delta[None, :]
            beta[i] = newb
        S = X @ W
        gam = S - S[rows, y][:, None] + 1.0
        gam[rows, y] = 0.0
        reg = 0.5 * float(np.sum(W * W))
        primal = reg + a * float(np.max(gam, axis=1).sum())
        dual = -reg + float(beta[rows, y].sum())
        gap = primal - dual
        if gap <= gap_tol:
            return W, beta, gap
        if gap < best * (1.0 - 1e-3):
            best = gap
            stall = 0
        else:
            stall += 1
            # float roundoff floors the measurable gap; accept a stagnated
            # bracket when it still certifies far below the caller's slack
            if stall >= 200 and best <= max(gap_tol, 1e-9):
                return W, beta, gap
    raise SolverError(
        f"dual solver stalled at duality gap {gap:.3g} (C={C_total:.3g})",
        LinearModel(W),
        gap,
    )


def _solve_binary_hinge(
    X: np.ndarray, y: np.ndarray, C: float, tol: float, max_iter: int, window: int = 50
) -> np.ndarray:
    """Averaged subgradient descent for the bias-free binary hinge."""
    n, d = X.shape
    w = np.zeros(d)
    wbar = np.zeros(d)
    prev_obj = math.inf
    C_over_n = C / n
    for t in range(1, max_iter + 1):
        f = X @ w
        active = (1.0 - y * f) > 0.0
        coef = np.where(active, -y, 0.0) * C_over_n
        g = w + X.T @ coef
        w -= (1.0 / t) * g
        wbar += (w - wbar) / t
        if t % window == 0:
            obj = M.binary_hinge_loss(wbar, None, X, y, C)
            if prev_obj - obj < tol:
                return wbar
            prev_obj = obj
    raise SolverError(
        f"binary hinge solver hit max_iter={max_iter}",
        LinearModel(wbar[:, None]),
        prev_obj,
    )


# ---------------------------------------------------------------------------
# Clipped noisy batch machinery shared by all gradient-perturbation loops.


def clipped_noisy_sum(
    model: LinearModel,
    X_batch: np.ndarray,
    coeffs: np.ndarray,
    reg_W: np.ndarray,
    reg_b: np.ndarray | None,
    R: float,
    sigma: float,
    rng: RandomSource,
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    """Sum of per-example gradients clipped to R, plus N(0, (sigma R)^2 I).

    Per-example gradients have the form outer(x_i, coeffs_i) + reg_W for
    the weights (reg_W is the common 1/n regularizer share) and
    coeffs_i + reg_b for the bias, so clipping factors and the clipped sum
    are computed without materializing any (m, d, c) tensor. Returns the
    weight sum, bias sum (or None), and the per-example clipped norms.
    """
    m = X_batch.shape[0]
    d, c = model.d, model.c
    with_bias = reg_b is not None
    if m == 0:
        norms = np.zeros(0)
        sum_W = np.zeros((d, c))
        sum_b = np.zeros(c) if with_bias else None
    else:
        xx = np.sum(X_batch * X_batch, axis=1)
        cc = np.sum(coeffs * coeffs, axis=1)
        cross = np.sum((X_batch @ reg_W) * coeffs, axis=1)
        n2 = xx * cc + 2.0 * cross + float(np.sum(reg_W * reg_W))
        if with_bias:
            bpart = coeffs + reg_b[None, :]
            n2 = n2 + np.sum(bpart * bpart, axis=1)
        raw = np.sqrt(np.maximum(n2, 0.0))
        factor = np.where(raw > R, R / np.maximum(raw, 1e-300), 1.0)
        norms = raw * factor
        fc = coeffs * factor[:, None]
        sum_W = X_batch.T @ fc + factor.sum() * reg_W
        sum_b = fc.sum(axis=0) + factor.sum() * reg_b if with_bias else None
    if sigma > 0.0:
        z = sample_gaussian(rng, sigma * R, d * c + (c if with_bias else 0))
        sum_W = sum_W + z[: d * c].reshape(d, c)
        if with_bias:
            sum_b = sum_b + z[d * c :]
    return sum_W, sum_b, norms


def _dpsgd_loop(
    dataset: Dataset,
    budget: PrivacyBudget | None,
    cfg: GpConfig,
    rng: RandomSource,
    grad_kind: str,
    method: str,
    test_set: Dataset | None,
    sigma: float,
) -> TrainReport:
    """Shared noisy clipped-gradient loop for the multi-class objectives.

    grad_kind selects the per-example coefficient map: "smoothed" for the
    softened multi-class hinge, "ce" for softmax cross-entropy.
    """
    t0 = time.perf_counter()
    _require_classes(dataset)
    X, y = dataset.features, dataset.labels
    n, d, c = dataset.n, dataset.d, dataset.num_classes
    params = cfg.loss
    lam = params.effective_lambda(n)
    W = np.zeros((d, c))
    b = np.zeros(c) if cfg.with_bias else None
    mom1_W = np.zeros_like(W)
    mom2_W = np.zeros_like(W)
    mom1_b = np.zeros(c) if cfg.with_bias else None
    mom2_b = np.zeros(c) if cfg.with_bias else None
    ledger = RdpLedger()
    lam_strong = 2.0 * params.mu
    denom = cfg.q * n
    rec_steps: list[int] = []
    rec_loss: list[float] = []
    rec_tracc: list[float] = []
    rec_teacc: list[float] = []
    max_clipped = 0.0

    def objective(mod: LinearModel) -> float:
        if grad_kind == "ce":
            return M.ce_loss(mod, dataset, params.mu)
        return M.smoothed_loss(mod, dataset, params)

    for t in range(1, cfg.T + 1):
        idx = poisson_subsample(rng, n, cfg.q)
        model_t = LinearModel(W, b)
        if grad_kind == "ce":
            reg_W = (2.0 * params.mu / n) * W
        else:
            reg_W = M._reg_grad(model_t, lam, params.mu) / n
        reg_b = (2.0 * params.mu / n) * b if cfg.with_bias else None
        if len(idx):
            S = model_t.scores(X[idx])
            if grad_kind == "ce":
                co = M.ce_coeffs(S, y[idx])
            else:
                co = M.smoothed_coeffs(S, y[idx], params.varsigma)
        else:
            co = np.zeros((0, c))
        sum_W, sum_b, norms = clipped_noisy_sum(
            model_t, X[idx], co, reg_W, reg_b, cfg.R, sigma, rng
        )
        if len(norms):
            max_clipped = max(max_clipped, float(norms.max()))
        ledger.rdp_step(cfg.q, sigma if sigma > 0 else SIGMA_FLOOR)
        gW = sum_W / denom
        gb = sum_b / denom if cfg.with_bias else None
        eta = schedule_step(cfg.schedule, cfg.base_lr, t, lam_strong, cfg.T)
        if cfg.optimizer == "adam":
            mom1_W = cfg.beta1 * mom1_W + (1.0 - cfg.beta1) * gW
            mom2_W = cfg.beta2 * mom2_W + (1.0 - cfg.beta2) * gW * gW
            mhat = mom1_W / (1.0 - cfg.beta1**t)
            vhat = mom2_W / (1.0 - cfg.beta2**t)
            W = W - eta * mhat / (np.sqrt(vhat) + cfg.adam_gamma)
            if cfg.with_bias:
                mom1_b = cfg.beta1 * mom1_b + (1.0 - cfg.beta1) * gb
                mom2_b = cfg.beta2 * mom2_b + (1.0 - cfg.beta2) * gb * gb
                mhb = mom1_b / (1.0 - cfg.beta1**t)
                vhb = mom2_b / (1.0 - cfg.beta2**t)
                b = b - eta * mhb / (np.sqrt(vhb) + cfg.adam_gamma)
        else:
            W = W - eta * gW
            if cfg.with_bias:
                b = b - eta * gb
        if t % cfg.trace_every == 0 or t == cfg.T:
            mod = LinearModel(W, b)
            rec_steps.append(t)
            rec_loss.append(objective(mod))
            rec_tracc.append(M.accuracy(mod, dataset))
            rec_teacc.append(
                M.accuracy(mod, test_set) if test_set is not None else math.nan
            )

    final = LinearModel(W, b)
    if cfg.sigma_override is None:
        assert budget is not None
        spent = ledger.rdp_epsilon(budget.delta)
        assert spent <= budget.epsilon + 1e-12, (
            f"accountant overspent: {spent} > {budget.epsilon}"
        )
        consumed = PrivacyBudget(spent, budget.delta)
        requested = budget
    else:
        consumed, requested = None, budget
    return TrainReport(
        model=final,
        method=method,
        seed=rng.seed,
        sigma=sigma,
        requested=requested,
        consumed=consumed,
        steps=np.array(rec_steps),
        loss_trace=np.array(rec_loss),
        train_acc_trace=np.array(rec_tracc),
        test_acc_trace=np.array(rec_teacc),
        wall_clock=time.perf_counter() - t0,
        config=_gp_config_echo(cfg, lam),
        extras={"max_clipped_norm": max_clipped, "effective_lambda": lam},
    )


def _gp_config_echo(cfg: GpConfig, lam: float) -> dict:
    return {
        "C": cfg.loss.C,
        "lambda": lam,
        "mu": cfg.loss.mu,
        "varsigma": cfg.loss.varsigma,
        "R": cfg.R,
        "T": cfg.T,
        "q": cfg.q,
        "schedule": cfg.schedule,
        "base_lr": cfg.base_lr,
        "optimizer": cfg.optimizer,
        "with_bias": cfg.with_bias,
    }


def pmsvm_gp(
    dataset: Dataset,
    budget: PrivacyBudget,
    cfg: GpConfig,
    rng: RandomSource,
    test_set: Dataset | None = None,
) -> TrainReport:
    """Joint multi-class DP-SGD on the smoothed objective."""
    if cfg.loss.varsigma <= 0:
        raise ValueError("gradient perturbation needs varsigma > 0")
    if cfg.loss.mu <= 0:
        raise ValueError("gradient perturbation needs mu > 0 (strong convexity)")
    sigma = (
        cfg.sigma_override
        if cfg.sigma_override is not None
        else sigma_for_budget(cfg.q, cfg.T, budget)
    )
    return _dpsgd_loop(
        dataset, budget, cfg, rng, "smoothed", "pmsvm_gp", test_set, sigma
    )


def pmsvm_agp(
    dataset: Dataset,
    budget: PrivacyBudget,
    cfg: GpConfig,
    rng: RandomSource,
    test_set: Dataset | None = None,
) -> TrainReport:
    """Adaptive variant: identical noisy gradients fed through moment
    estimates with bias correction; privacy cost is unchanged because the
    optimizer only post-processes the noisy sums."""
    cfg = replace(cfg, optimizer="adam")
    report = pmsvm_gp(dataset, budget, cfg, rng, test_set)
    report.method = "pmsvm_agp"
    return report


def linear_ce_gp(
    dataset: Dataset,
    budget: PrivacyBudget,
    cfg: GpConfig,
    rng: RandomSource,
    test_set: Dataset | None = None,
) -> TrainReport:
    """Linear softmax cross-entropy baseline under the same DP-SGD loop."""
    if cfg.loss.mu <= 0:
        raise ValueError("gradient perturbation needs mu > 0")
    sigma = (
        cfg.sigma_override
        if cfg.sigma_override is not None
        else sigma_for_budget(cfg.q, cfg.T, budget)
    )
    return _dpsgd_loop(dataset, budget, cfg, rng, "ce", "linear_ce_gp", test_set, sigma)


def pmsvm_wp(
    dataset: Dataset,
    budget: PrivacyBudget,
    cfg: WpConfig,
    rng: RandomSource,
    test_set: Dataset | None = None,
    warm_model: LinearModel | None = None,
) -> TrainReport:
    """Solve the exact single-slack objective, then release W + noise.

    warm_model, when given, must be the non-private solution for the same
    (dataset, cfg); the solver is deterministic and random-free, so reusing
    it across seeds changes nothing except wall-clock.
    """
    t0 = time.perf_counter()
    _require_classes(dataset)
    _require_unit_ball(dataset)
    n, c = dataset.n, dataset.num_classes
    C = cfg.C_over_n * n
    if warm_model is not None:
        clean = warm_model
    else:
        clean = solve_allinone(
            dataset, "cs_hinge", LossParams(C=C, mu=0.0, varsigma=0.0),
            tol=cfg.tol, max_iter=cfg.max_iter,
        )
    lam_max = lambda_max_preset(cfg.encoding, c)
    bound = weight_sensitivity(cfg.C_over_n, lam_max)
    if bound.delta_w > 0:
        sigma = calibrate_analytic_gaussian(bound.delta_w, budget)
        noisy = perturb_weights(clean, sigma, rng)
    else:
        sigma = 0.0
        noisy = clean
    loss = M.cs_hinge_loss(noisy, dataset, C)
    report = TrainReport(
        model=noisy,
        method="pmsvm_wp",
        seed=rng.seed,
        sigma=sigma,
        requested=budget,
        consumed=budget,  # the analytic mechanism spends the budget exactly
        steps=np.array([0]),
        loss_trace=np.array([loss]),
        train_acc_trace=np.array([M.accuracy(noisy, dataset)]),
        test_acc_trace=np.array(
            [M.accuracy(noisy, test_set) if test_set is not None else math.nan]
        ),
        wall_clock=time.perf_counter() - t0,
        config={
            "C_over_n": cfg.C_over_n,
            "tol": cfg.tol,
            "max_iter": cfg.max_iter,
            "encoding": cfg.encoding,
        },
        extras={"delta_w": bound.delta_w, "lambda_max": lam_max},
    )
    return report


def ovr_wp(
    dataset: Dataset,
    total_budget: PrivacyBudget,
    cfg: WpConfig,
    rng: RandomSource,
    test_set: Dataset | None = None,
    warm_columns: np.ndarray | None = None,
) -> TrainReport:
    """One-vs-rest weight perturbation: c binary hinge classifiers, each
    trained on all the data and noised at the split budget (eps/c, delta/c)
    with the binary sensitivity 2C/n. Decision is argmax of noisy scores."""
    t0 = time.perf_counter()
    _require_classes(dataset)
    _require_unit_ball(dataset)
    n, d, c = dataset.n, dataset.d, dataset.num_classes
    share = split_budget_ovr(total_budget, c)
    bound = weight_sensitivity(cfg.C_over_n, lambda_max_preset("binary", c))
    C = cfg.C_over_n * n
    if warm_columns is None:
        warm_columns = np.stack(
            [
                _solve_binary_hinge(
                    dataset.features, dataset.relabel_binary(k), C,
                    cfg.tol, cfg.max_iter,
                )
                for k in range(c)
            ],
            axis=1,
        )
    if bound.delta_w > 0:
        sigma = calibrate_analytic_gaussian(bound.delta_w, share)
        noise = np.stack(
            [
                sample_gaussian(rng.split(f"class_{k}"), sigma, d)
                for k in range(c)
            ],
            axis=1,
        )
        W = warm_columns + noise
    else:
        sigma = 0.0
        W = warm_columns
    noisy = LinearModel(W)
    consumed = compose_budgets([share] * c)
    report = TrainReport(
        model=noisy,
        method="ovr_wp",
        seed=rng.seed,
        sigma=sigma,
        requested=total_budget,
        consumed=consumed,
        steps=np.array([0]),
        loss_trace=np.array(
            [
                math.fsum(
                    M.binary_hinge_loss(
                        W[:, k], None, dataset.features,
                        dataset.relabel_binary(k), C,
                    )
                    for k in range(c)
                )
            ]
        ),
        train_acc_trace=np.array([M.accuracy(noisy, dataset)]),
        test_acc_trace=np.array(
            [M.accuracy(noisy, test_set) if test_set is not None else math.nan]
        ),
        wall_clock=time.perf_counter() - t0,
        config={
            "C_over_n": cfg.C_over_n,
            "tol": cfg.tol,
            "max_iter": cfg.max_iter,
            "encoding": "binary",
        },
        extras={"delta_w": bound.delta_w, "per_class_epsilon": share.epsilon},
    )
    return report


def ovr_gp(
    dataset: Dataset,
    total_budget: PrivacyBudget,
    cfg: GpConfig,
    rng: RandomSource,
    test_set: Dataset | None = None,
) -> TrainReport:
    """One-vs-rest gradient perturbation: c independent binary smoothed-
    hinge DP-SGD runs, each at (eps/c, delta/c); argmax decision.

    Traces are reconstructed on the assembled multi-class model from
    per-class weight snapshots, so the trace shows what the combined
    classifier would have scored at each recorded step.
    """
    t0 = time.perf_counter()
    _require_classes(dataset)
    if cfg.loss.varsigma <= 0 or cfg.loss.mu <= 0:
        raise ValueError("gradient perturbation needs varsigma > 0 and mu > 0")
    X = dataset.features
    n, d, c = dataset.n, dataset.d, dataset.num_classes
    params = cfg.loss
    share = split_budget_ovr(total_budget, c)
    sigma = (
        cfg.sigma_override
        if cfg.sigma_override is not None
        else sigma_for_budget(cfg.q, cfg.T, share)
    )
    lam_strong = 2.0 * params.mu
    denom = cfg.q * n
    rec_steps = sorted(
        {t for t in range(1, cfg.T + 1) if t % cfg.trace_every == 0} | {cfg.T}
    )
    snapshots_W = np.zeros((len(rec_steps), d, c))
    snapshots_b = np.zeros((len(rec_steps), c)) if cfg.with_bias else None
    consumed_parts: list[PrivacyBudget] = []
    max_clipped = 0.0
    for k in range(c):
        yk = dataset.relabel_binary(k)
        crng = rng.split(f"class_{k}")
        w = np.zeros(d)
        bk = 0.0 if cfg.with_bias else None
        m1w = np.zeros(d); m2w = np.zeros(d); m1b = 0.0; m2b = 0.0
        ledger = RdpLedger()
        snap_i = 0
        for t in range(1, cfg.T + 1):
            idx = poisson_subsample(crng, n, cfg.q)
            Xb, yb = X[idx], yk[idx]
            if len(idx):
                f = Xb @ w + (bk if cfg.with_bias else 0.0)
                gamma = 1.0 - yb * f
                r = np.sqrt(gamma * gamma + params.varsigma**2)
                slopes = 0.5 * (1.0 + gamma / r)
                coef = -yb * slopes
                regw = (2.0 * params.mu / n) * w
                regb = (2.0 * params.mu / n) * bk if cfg.with_bias else 0.0
                # per-example grad = coef_i * x_i + regw (+ bias coef_i + regb)
                xx = np.sum(Xb * Xb, axis=1)
                n2 = coef * coef * xx + 2.0 * coef * (Xb @ regw) + float(
                    np.dot(regw, regw)
                )
                if cfg.with_bias:
                    n2 = n2 + (coef + regb) ** 2
                raw = np.sqrt(np.maximum(n2, 0.0))
                factor = np.where(raw > cfg.R, cfg.R / np.maximum(raw, 1e-300), 1.0)
                if len(raw):
                    max_clipped = max(max_clipped, float((raw * factor).max()))
                fc = coef * factor
                sum_w = Xb.T @ fc + factor.sum() * regw
                sum_b = float(fc.sum() + factor.sum() * regb) if cfg.with_bias else 0.0
            else:
                sum_w = np.zeros(d)
                sum_b = 0.0
            if sigma > 0:
                z = sample_gaussian(
                    crng, sigma * cfg.R, d + (1 if cfg.with_bias else 0)
                )
                sum_w = sum_w + z[:d]
                if cfg.with_bias:
                    sum_b = sum_b + float(z[d])
            ledger.rdp_step(cfg.q, sigma if sigma > 0 else SIGMA_FLOOR)
            gw = sum_w / denom
            gb = sum_b / denom
            eta = schedule_step(cfg.schedule, cfg.base_lr, t, lam_strong, cfg.T)
            if cfg.optimizer == "adam":
                m1w = cfg.beta1 * m1w + (1 - cfg.beta1) * gw
                m2w = cfg.beta2 * m2w + (1 - cfg.beta2) * gw * gw
                w = w - eta * (m1w / (1 - cfg.beta1**t)) / (
                    np.sqrt(m2w / (1 - cfg.beta2**t)) + cfg.adam_gamma
                )
                if cfg.with_bias:
                    m1b = cfg.beta1 * m1b + (1 - cfg.beta1) * gb
                    m2b = cfg.beta2 * m2b + (1 - cfg.beta2) * gb * gb
                    bk = bk - eta * (m1b / (1 - cfg.beta1**t)) / (
                        math.sqrt(m2b / (1 - cfg.beta2**t)) + cfg.adam_gamma
                    )
            else:
                w = w - eta * gw
                if cfg.with_bias:
                    bk = bk - eta * gb
            if snap_i < len(rec_steps) and t == rec_steps[snap_i]:
                snapshots_W[snap_i, :, k] = w
                if cfg.with_bias:
                    snapshots_b[snap_i, k] = bk
                snap_i += 1
        if cfg.sigma_override is None:
            spent = ledger.rdp_epsilon(share.delta)
            assert spent <= share.epsilon + 1e-12
            consumed_parts.append(PrivacyBudget(spent, share.delta))

    rec_loss, rec_tracc, rec_teacc = [], [], []
    for i, _t in enumerate(rec_steps):
        mod = LinearModel(
            snapshots_W[i], snapshots_b[i] if cfg.with_bias else None
        )
        total = math.fsum(
            M.binary_smoothed_loss(
                snapshots_W[i][:, k],
                float(snapshots_b[i][k]) if cfg.with_bias else None,
                X, dataset.relabel_binary(k), params.mu, params.varsigma,
            )
            for k in range(c)
        )
        rec_loss.append(total)
        rec_tracc.append(M.accuracy(mod, dataset))
        rec_teacc.append(
            M.accuracy(mod, test_set) if test_set is not None else math.nan
        )
    final = LinearModel(
        snapshots_W[-1], snapshots_b[-1] if cfg.with_bias else None
    )
    consumed = (
        compose_budgets(consumed_parts) if consumed_parts else None
    )
    if consumed is not None:
        assert consumed.epsilon <= total_budget.epsilon + 1e-9
    return TrainReport(
        model=final,
        method="ovr_gp",
        seed=rng.seed,
        sigma=sigma,
        requested=total_budget,
        consumed=consumed if cfg.sigma_override is None else None,
        steps=np.array(rec_steps),
        loss_trace=np.array(rec_loss),
        train_acc_trace=np.array(rec_tracc),
        test_acc_trace=np.array(rec_teacc),
        wall_clock=time.perf_counter() - t0,
        config=_gp_config_echo(cfg, params.effective_lambda(n)),
        extras={
            "max_clipped_norm": max_clipped,
            "per_class_epsilon": share.epsilon,
            "per_class_sigma": sigma,
        },
    )
