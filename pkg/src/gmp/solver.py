"""L2-regularized hinge-loss linear classifier, self-contained.

Two training paths share one interface:

* unconstrained problems run dual coordinate descent with exact one-variable
  dual updates (the per-loss weight is folded into the box constraint as
  C = 1/lambda, which leaves the primal minimizer unchanged);
* nonnegativity-constrained problems run dual coordinate ascent on the
  constrained primal's dual, where the weight vector is the projection
  [sum_i alpha_i y_i x_i]_+ / lambda onto the nonnegative orthant,
  re-applied after every coordinate update.

There is no bias term; callers append a constant feature if they need one.
The solver returns its best iterate: the primal objective is evaluated
after every pass and the lowest-objective snapshot (including the zero
vector) is kept, so reported per-pass objectives are non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SvmProblem:
    features: np.ndarray  # (n, dim) float64
    labels: np.ndarray  # (n,) values in {-1, +1}
    lam: float = 1.0
    nonneg: bool = False

    def __post_init__(self) -> None:
        x, y = self.features, self.labels
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("features must be a nonempty (n, dim) array")
        if y.shape != (x.shape[0],):
            raise ValueError("labels must align with features")
        if not np.isin(y, (-1, 1)).all():
            raise ValueError("labels must be -1 or +1")
        if not np.isfinite(x).all():
            raise ValueError("features must be finite")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


@dataclass(frozen=True)
class SvmSolution:
    weights: np.ndarray
    objective: float
    iterations: int
    pass_objectives: np.ndarray = field(default_factory=lambda: np.empty(0))
    dual: np.ndarray | None = None  # final dual variables, reusable as a warm start

    def __post_init__(self) -> None:
        if not np.isfinite(self.objective):
            raise ValueError("objective must be finite")


def primal_objective(prob: SvmProblem, w: np.ndarray) -> float:
    """(lam/2)||w||^2 + sum_i max(0, 1 - y_i w.x_i), evaluated exactly."""
    if w.shape != (prob.features.shape[1],):
        raise ValueError(
            f"weight dim {w.shape} does not match feature dim {prob.features.shape[1]}"
        )
    margins = prob.labels * (prob.features @ w)
    hinge = np.maximum(0.0, 1.0 - margins).sum()
    return float(0.5 * prob.lam * (w @ w) + hinge)


def _dual_cd(
    prob: SvmProblem,
    tol: float,
    max_pass: int,
    rng: np.random.Generator,
    warm_alpha: np.ndarray | None,
) -> tuple[np.ndarray, int, list[float], np.ndarray]:
    x = prob.features
    y = prob.labels.astype(np.float64)
    n = x.shape[0]
    C = np.inf if prob.lam == 0 else 1.0 / prob.lam
    qii = np.einsum("ij,ij->i", x, x)
    if warm_alpha is not None and warm_alpha.shape == (n,):
        alpha = np.clip(warm_alpha, 0.0, C)
        w = x.T @ (alpha * y)
    else:
        alpha = np.zeros(n)
        w = np.zeros(x.shape[1])

    # track the best primal iterate; the zero vector (objective = n) is
    # always a candidate, so the returned objective never exceeds it
    best_w = np.zeros(x.shape[1])
    best_obj = float(n)
    start_obj = primal_objective(prob, w)
    if start_obj < best_obj:
        best_obj, best_w = start_obj, w.copy()
    trace = [best_obj]
    passes = 0
    dot = np.dot
    for _ in range(max_pass):
        passes += 1
        max_violation = 0.0
        for i in rng.permutation(n):
            q = qii[i]
            if q == 0.0:
                continue  # zero rows cannot move w; their hinge is constant
            xi = x[i]
            yi = y[i]
            a = alpha[i]
            g = yi * dot(w, xi) - 1.0
            if a == 0.0:
                pg = g if g < 0.0 else 0.0
            elif a == C:
                pg = g if g > 0.0 else 0.0
            else:
                pg = g
            if pg != 0.0:
                if -pg > max_violation or pg > max_violation:
                    max_violation = abs(pg)
                new_alpha = a - g / q
                if new_alpha < 0.0:
                    new_alpha = 0.0
                elif new_alpha > C:
                    new_alpha = C
                if new_alpha != a:
                    w += ((new_alpha - a) * yi) * xi
                    alpha[i] = new_alpha
        obj = primal_objective(prob, w)
        if obj < best_obj:
            best_obj = obj
            best_w = w.copy()
        trace.append(best_obj)
        if max_violation < tol:
            break
    return best_w, passes, trace, alpha


def _max_concave_step(u: np.ndarray, v: np.ndarray, lam: float, lo: float, hi: float) -> float:
    """Exact argmax over [lo, hi] of delta - ||[u + delta v]_+||^2 / (2 lam).

    The derivative phi(delta) = 1 - [u + delta v]_+ . v / lam is continuous,
    piecewise linear, and non-increasing; the root (or the nearer bound) is
    located by walking the sign-change breakpoints of the clipped terms.
    """

    def phi(d: float) -> float:
        return 1.0 - float(np.maximum(u + d * v, 0.0) @ v) / lam

    if phi(lo) <= 0.0:
        return lo
    if phi(hi) >= 0.0:
        return hi
    active = v != 0.0
    bps = -u[active] / v[active]
    bps = np.unique(bps[(bps > lo) & (bps < hi)])
    left = lo
    phi_left = phi(lo)
    for bp in bps:
        phi_bp = phi(float(bp))
        if phi_bp <= 0.0:
            # root inside [left, bp]; phi is linear on this segment
            return left + phi_left * (bp - left) / (phi_left - phi_bp)
        left, phi_left = float(bp), phi_bp
    phi_hi = phi(hi)
    return left + phi_left * (hi - left) / (phi_left - phi_hi)


def _nonneg_dual_cd(
    prob: SvmProblem,
    tol: float,
    max_pass: int,
    rng: np.random.Generator,
    warm_alpha: np.ndarray | None,
) -> tuple[np.ndarray, int, list[float], np.ndarray]:
    """Dual coordinate ascent for the nonnegativity-constrained primal.

    The constrained primal's KKT system gives w = [sum_i alpha_i y_i x_i]_+
    / lam with alpha in [0, 1]; the weights are re-projected onto the
    nonnegative orthant after every coordinate update.  The dual is smooth
    and concave, so coordinate ascent reaches the global constrained
    optimum (plain coordinate descent on the non-smooth primal can stall
    on kinks shared between coordinates).
    """
    if prob.lam <= 0:
        raise ValueError("nonnegative training requires lambda > 0")
    x = prob.features
    y = prob.labels.astype(np.float64)
    n = x.shape[0]
    lam = prob.lam
    if warm_alpha is not None and warm_alpha.shape == (n,):
        alpha = np.clip(warm_alpha, 0.0, 1.0)
        u = x.T @ (alpha * y)
    else:
        alpha = np.zeros(n)
        u = np.zeros(x.shape[1])

    def project(vec: np.ndarray) -> np.ndarray:
        return np.maximum(vec, 0.0) / lam

    best_w = np.zeros(x.shape[1])
    best_obj = float(n)
    start_obj = primal_objective(prob, project(u))
    if start_obj < best_obj:
        best_obj, best_w = start_obj, project(u)
    trace = [best_obj]
    passes = 0
    for _ in range(max_pass):
        passes += 1
        max_violation = 0.0
        for i in rng.permutation(n):
            v = y[i] * x[i]
            g = 1.0 - float(np.maximum(u, 0.0) @ v) / lam
            a = alpha[i]
            if a == 0.0:
                pg = g if g > 0.0 else 0.0
            elif a == 1.0:
                pg = g if g < 0.0 else 0.0
            else:
                pg = g
            if pg != 0.0:
                max_violation = max(max_violation, abs(pg))
                delta = _max_concave_step(u, v, lam, -a, 1.0 - a)
                if delta != 0.0:
                    u += delta * v
                    alpha[i] = a + delta
        obj = primal_objective(prob, project(u))
        if obj < best_obj:
            best_obj = obj
            best_w = project(u)
        trace.append(best_obj)
        if max_violation < tol:
            break
    return best_w, passes, trace, alpha


def svm_train(
    prob: SvmProblem,
    tol: float = 1e-5,
    max_pass: int = 1000,
    seed: int = 0,
    warm_start: np.ndarray | None = None,
) -> SvmSolution:
    """Train the classifier; deterministic given (problem, tol, max_pass, seed).

    Coordinate order is reshuffled every pass from the seeded generator.
    Both paths stop when the largest projected dual gradient in a pass
    drops below tol.  warm_start is a previous solution's dual vector; it
    accelerates repeated closely-related solves without changing the
    fixed point.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    rng = np.random.default_rng(seed)
    if prob.nonneg:
        w, passes, trace, dual = _nonneg_dual_cd(prob, tol, max_pass, rng, warm_start)
    else:
        w, passes, trace, dual = _dual_cd(prob, tol, max_pass, rng, warm_start)
    return SvmSolution(
        weights=w,
        objective=primal_objective(prob, w),
        iterations=passes,
        pass_objectives=np.asarray(trace),
        dual=dual,
    )
