"""Sensitivity bounds, Gaussian calibration, composition, and accounting.

Two release mechanisms are supported end to end:

* Weight perturbation. The trained weight matrix of the single-slack
  multi-class SVM moves by at most 2 (C/n) sqrt(lambda_max(G)) in Frobenius
  norm when one training sample is replaced, where G is the Gram matrix of
  the class-encoding vectors of the active wrong classes (replacement
  adjacency doubles the removal bound through the triangle inequality, and
  feature norms are capped at 1 upstream). Gaussian noise is then calibrated
  with the exact necessary-and-sufficient condition
      Phi(D/(2s) - e s/D) - exp(e) Phi(-D/(2s) - e s/D) <= delta,
  which is tighter than the classical sqrt(2 log(1.25/delta)) rule.

* Gradient perturbation. Each noisy clipped-gradient step is charged to a
  Renyi-divergence ledger at integer orders 2..256 (closed form alpha/(2 s^2)
  for full batches, the log-binomial subsampled-Gaussian bound for Poisson
  batches), and the ledger converts to (eps, delta) with the tight standard
  conversion  min_a [rdp(a) + log((a-1)/a) - (log delta + log a)/(a-1)].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special as _sp

from .model import LinearModel
from .numerics import RandomSource, sample_gaussian

SIGMA_CEILING = 1e6
SIGMA_FLOOR = 1e-6

# log k! for k = 0..257, covering binomial coefficients up to the default
# maximum order 256.
_LOG_FACTORIAL = _sp.gammaln(np.arange(0, 258, dtype=np.float64) + 1.0)


class BudgetUnreachable(RuntimeError):
    """No noise scale below the search ceiling meets the requested budget."""


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0,1), got {self.delta}")


@dataclass(frozen=True)
class ClassEncoding:
    """Difference (or indicator) vectors of class directions in the dual.

    crammer_singer: nu_{y,p} = e_y - e_p for a wrong class p; two nonzeros.
    binary: nu_p = e_p; one nonzero.
    """

    num_classes: int
    scheme: str = "crammer_singer"

    def __post_init__(self):
        if self.scheme not in ("crammer_singer", "binary"):
            raise ValueError(f"unknown encoding scheme {self.scheme!r}")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")

    def nu(self, y: int, p: int) -> np.ndarray:
        v = np.zeros(self.num_classes)
        if self.scheme == "crammer_singer":
            if y == p:
                raise ValueError("crammer_singer encoding needs p != y")
            v[y] = 1.0
            v[p] = -1.0
        else:
            v[p] = 1.0
        return v


@dataclass(frozen=True)
class SensitivityBound:
    delta_w: float
    lambda_max: float
    C_over_n: float


def gram_matrix(
    enc: ClassEncoding, active: list[int], true_class: int | None = None
) -> np.ndarray:
    """Inner products of the encoding vectors over the active wrong classes."""
    if len(active) == 0:
        raise ValueError("active class set must be nonempty")
    active = [int(p) for p in active]
    for p in active:
        if not 0 <= p < enc.num_classes:
            raise ValueError(f"active class {p} outside [0, {enc.num_classes})")
    if enc.scheme == "crammer_singer":
        if true_class is None:
            rest = [k for k in range(enc.num_classes) if k not in set(active)]
            if not rest:
                raise ValueError("active set leaves no candidate true class")
            true_class = rest[0]
        if true_class in active:
            raise ValueError("true class cannot be in the active set")
        V = np.stack([enc.nu(true_class, p) for p in active])
    else:
        V = np.stack([enc.nu(0, p) for p in active])
    return V @ V.T


def lambda_max(G: np.ndarray, tol: float = 1e-12, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    G = np.asarray(G, dtype=np.float64)
    if G.shape[0] != G.shape[1]:
        raise ValueError(f"matrix must be square, got {G.shape}")
    if G.shape[0] == 1:
        return float(G[0, 0])
    v = np.ones(G.shape[0]) / math.sqrt(G.shape[0])
    lam = float(v @ G @ v)
    for _ in range(max_iter):
        w = G @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        new = float(v @ G @ v)
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            return new
        lam = new
    raise RuntimeError(f"power iteration did not converge in {max_iter} iterations")


def lambda_max_preset(preset: str, c: int) -> float:
    """Closed-form spectral constants for the supported encodings.

    crammer_singer: one active wrong class, G = [2].
    binary: indicator encoding, G = [1].
    conservative: all c-1 wrong classes active, G = I + ones, top value c.
    """
    table = {
        "crammer_singer": 2.0,
        "binary": 1.0,
        "conservative": float(c),
    }
    if preset not in table:
        raise ValueError(f"unknown sensitivity preset {preset!r}")
    return table[preset]


def weight_sensitivity(C_over_n: float, lam_max: float) -> SensitivityBound:
    """Replacement-adjacency L2 sensitivity 2 (C/n) sqrt(lambda_max).

    Assumes every feature vector has L2 norm <= 1 (the data module's
    min-max + unit-ball pipeline enforces this).
    """
    if C_over_n < 0 or lam_max < 0:
        raise ValueError("sensitivity inputs must be nonnegative")
    return SensitivityBound(
        delta_w=2.0 * C_over_n * math.sqrt(lam_max),
        lambda_max=lam_max,
        C_over_n=C_over_n,
    )


def _gauss_constraint_lhs(sigma: float, eps: float) -> float:
    """Exact Gaussian-mechanism constraint at unit sensitivity.

    Phi(1/(2s) - e s) - exp(e) Phi(-1/(2s) - e s), evaluated in log space.
    The second exponent eps + log Phi(b) is bounded above by
    eps/2 - 1/(8 s^2) - eps^2 s^2 / 2 <= 0 (AM-GM), so it never overflows
    even for the eps = 1e6 non-private proxy.
    """
    a = 1.0 / (2.0 * sigma) - eps * sigma
    b = -1.0 / (2.0 * sigma) - eps * sigma
    t1 = math.exp(_sp.log_ndtr(a))
    t2 = math.exp(min(0.0, eps + _sp.log_ndtr(b)))
    return t1 - t2


def calibrate_analytic_gaussian(delta_sens: float, budget: PrivacyBudget) -> float:
    """Smallest noise scale meeting the exact Gaussian constraint.

    The constraint left-hand side depends on sigma/delta_sens only, so
    calibration runs at unit sensitivity and rescales; that makes
    sigma(2 D) = 2 sigma(D) hold to machine precision. Bisection returns
    the conservative (upper) end of the final bracket, with the constraint
    met to within 1e-9 absolute and the bracket at 1e-9 relative width.
    """
    if not delta_sens > 0:
        raise ValueError(f"sensitivity must be positive, got {delta_sens}")
    eps, delta = budget.epsilon, budget.delta
    hi = 1.0
    grow = 0
    while _gauss_constraint_lhs(hi, eps) > delta:
        hi *= 2.0
        grow += 1
        if grow > 200:
            raise RuntimeError("calibration bracket failed to close from above")
    lo = hi / 2.0
    shrink = 0
    while _gauss_constraint_lhs(lo, eps) <= delta:
        lo /= 2.0
        shrink += 1
        if shrink > 2000:
            # The constraint tends to delta < 1 as sigma -> 0 only when
            # delta >= 1; treat as degenerate rather than looping forever.
            break
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _gauss_constraint_lhs(mid, eps) > delta:
            lo = mid
        else:
            hi = mid
        if (hi - lo) <= 1e-9 * hi and abs(_gauss_constraint_lhs(hi, eps) - delta) <= 1e-9:
            break
    return hi * delta_sens


def compose_budgets(budgets: list[PrivacyBudget]) -> PrivacyBudget:
    """Basic composition: epsilons and deltas add (compensated, so that
    composing the c equal shares of a split reproduces the total exactly)."""
    if not budgets:
        raise ValueError("cannot compose an empty budget list")
    return PrivacyBudget(
        epsilon=math.fsum(b.epsilon for b in budgets),
        delta=math.fsum(b.delta for b in budgets),
    )


def _exact_share(total: float, c: int) -> float:
    """Largest-preference representable share s with fsum(c copies of s)
    == total.

    Plain total/c can land one ulp off (fsum of ten copies of 1e-5/10 is
    1.0000000000000003e-05), breaking the split/compose inverse pair. The
    recomposed grid has spacing ~c*ulp(s) ~ ulp(total), so a neighbor of
    total/c recomposes exactly for almost every input; prefer the candidate
    whose exact real sum does not exceed the total (the conservative
    privacy claim), then the nearest. For the rare pairs where the grid
    skips the total's rounding window entirely (no double recomposes to it,
    e.g. total=1e-5 with c=10), fall back to the candidate that recomposes
    closest, from below on ties.
    """
    s0 = total / c
    cands: list[float] = []
    for k in (0, -1, 1, -2, 2, -3, 3):
        s = s0
        toward = 0.0 if k < 0 else math.inf
        for _ in range(abs(k)):
            s = math.nextafter(s, toward)
        cands.append(s)
    exact = [s for s in cands if math.fsum([s] * c) == total]
    if exact:
        below = [s for s in exact if math.fsum([s] * c + [-total]) <= 0.0]
        pool = below or exact
        return min(pool, key=lambda s: (abs(s - s0), s))
    return min(cands, key=lambda s: (abs(math.fsum([s] * c) - total), s))


def split_budget_ovr(total: PrivacyBudget, c: int) -> PrivacyBudget:
    """Equal share (eps/c, delta/c) per one-vs-rest classifier.

    Each component is the representable value nearest total/c for which
    composing c copies reproduces the total exactly.
    """
    if c < 2:
        raise ValueError(f"need at least 2 classifiers, got {c}")
    return PrivacyBudget(
        _exact_share(total.epsilon, c), _exact_share(total.delta, c)
    )


def _subsampled_gaussian_rdp(q: float, sigma: float, orders: np.ndarray) -> np.ndarray:
    """Per-order Renyi divergence of one noisy step at sampling rate q.

    q = 1 is the Gaussian closed form alpha/(2 sigma^2). For q < 1 the
    standard upper bound at integer alpha is
        (1/(alpha-1)) log sum_j C(alpha,j) q^j (1-q)^(alpha-j)
                                 exp(j (j-1) / (2 sigma^2)),
    accumulated in log space. The j = alpha term alone reproduces the
    closed form as q -> 1, so the two branches agree at the boundary.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"sampling rate must lie in [0,1], got {q}")
    orders = np.asarray(orders, dtype=np.float64)
    if q == 0.0:
        return np.zeros_like(orders)
    out = np.empty_like(orders)
    logq = math.log(q)
    # At q = 1 every j < alpha term carries (1-q)^(alpha-j) = 0; writing its
    # log as -inf collapses the sum to the j = alpha term, which is exactly
    # the Gaussian closed form alpha/(2 sigma^2).
    log1mq = math.log1p(-q) if q < 1.0 else -math.inf
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    for i, a in enumerate(orders):
        ai = int(round(a))
        j = np.arange(ai + 1, dtype=np.float64)
        ji = np.arange(ai + 1)
        if ai + 1 < len(_LOG_FACTORIAL):
            logbin = _LOG_FACTORIAL[ai] - _LOG_FACTORIAL[ji] - _LOG_FACTORIAL[ai - ji]
        else:
            logbin = (
                _sp.gammaln(ai + 1) - _sp.gammaln(j + 1) - _sp.gammaln(ai - j + 1)
            )
        tail = np.zeros(ai + 1)
        tail[:-1] = (ai - j[:-1]) * log1mq
        terms = logbin + j * logq + tail + j * (j - 1.0) * inv2s2
        out[i] = max(0.0, _sp.logsumexp(terms)) / (a - 1.0)
    return out


def _rdp_to_eps(accum: np.ndarray, orders: np.ndarray, delta: float) -> float:
    """Tight standard conversion from a Renyi curve to (eps, delta).

    An identically-zero curve means the mechanism ignored the data (q = 0
    steps); that is a 0-DP release, reported as exactly 0 rather than the
    conversion formula's finite-order residue.
    """
    if not accum.any():
        return 0.0
    a = np.asarray(orders, dtype=np.float64)
    eps = accum + np.log((a - 1.0) / a) - (math.log(delta) + np.log(a)) / (a - 1.0)
    return float(max(0.0, eps.min()))


class RdpLedger:
    """Accumulated Renyi divergence per order; single-owner, append-only."""

    def __init__(self, orders: np.ndarray | None = None):
        if orders is None:
            orders = np.arange(2, 257, dtype=np.float64)
        orders = np.asarray(orders, dtype=np.float64)
        if orders.ndim != 1 or len(orders) == 0:
            raise ValueError("orders must be a nonempty 1-D sequence")
        if (orders <= 1).any() or (np.diff(orders) <= 0).any():
            raise ValueError("orders must be increasing and all > 1")
        self.orders = orders
        self.accum = np.zeros_like(orders)
        self.steps = 0
        self._memo: tuple[float, float, np.ndarray] | None = None

    def rdp_step(self, q: float, sigma: float) -> None:
        """Charge one subsampled-Gaussian release to the ledger."""
        if self._memo is not None and self._memo[0] == q and self._memo[1] == sigma:
            step = self._memo[2]
        else:
            step = _subsampled_gaussian_rdp(q, sigma, self.orders)
            self._memo = (q, sigma, step)
        self.accum = self.accum + step
        self.steps += 1

    def rdp_epsilon(self, delta: float) -> float:
        """Spent epsilon at the given delta; 0 when nothing was recorded."""
        if not 0 < delta < 1:
            raise ValueError(f"delta must lie in (0,1), got {delta}")
        if self.steps == 0:
            return 0.0
        return _rdp_to_eps(self.accum, self.orders, delta)


def sigma_for_budget(
    q: float, T: int, budget: PrivacyBudget, orders: np.ndarray | None = None
) -> float:
    """Smallest sigma whose T-step ledger stays within the budget.

    Geometric bracket growth followed by bisection to 1e-3 relative; the
    returned value is the conservative (upper) end. Raises
    BudgetUnreachable when no sigma <= 1e6 reaches the target epsilon.
    """
    if T < 1:
        raise ValueError(f"need at least one step, got T={T}")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"sampling rate must lie in [0,1], got {q}")
    if q == 0.0:
        return SIGMA_FLOOR
    if orders is None:
        return _sigma_search_cached(q, int(T), budget.epsilon, budget.delta)
    return _sigma_search(q, int(T), budget.epsilon, budget.delta, orders)


def _sigma_search(
    q: float, T: int, epsilon: float, delta: float, orders: np.ndarray
) -> float:
    def spent(sigma: float) -> float:
        accum = T * _subsampled_gaussian_rdp(q, sigma, orders)
        return _rdp_to_eps(accum, orders, delta)

    hi = 1.0
    while spent(hi) > epsilon:
        hi *= 2.0
        if hi > SIGMA_CEILING:
            raise BudgetUnreachable(
                f"budget epsilon={epsilon} unreachable with sigma <= "
                f"{SIGMA_CEILING:g} at q={q}, T={T}"
            )
    lo = hi / 2.0
    while spent(lo) <= epsilon:
        lo /= 2.0
        if lo < SIGMA_FLOOR:
            return max(lo * 2.0, SIGMA_FLOOR)
    while (hi - lo) > 1e-3 * hi:
        mid = 0.5 * (lo + hi)
        if spent(mid) <= epsilon:
            hi = mid
        else:
            lo = mid
    return hi


@lru_cache(maxsize=1024)
def _sigma_search_cached(q: float, T: int, epsilon: float, delta: float) -> float:
    return _sigma_search(q, T, epsilon, delta, np.arange(2, 257, dtype=np.float64))


def perturb_weights(model: LinearModel, sigma: float, rng: RandomSource) -> LinearModel:
    """Add i.i.d. Gaussian noise to every weight entry (bias-free models)."""
    if model.with_bias:
        raise ValueError("weight perturbation is defined for bias-free models")
    z = sample_gaussian(rng, sigma, model.d * model.c)
    return LinearModel(model.weights + z.reshape(model.d, model.c))
