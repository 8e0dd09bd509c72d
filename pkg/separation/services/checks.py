"""
Self-validation suite behind the `check_separation` management command.

Each suite runs per dimension N and yields CheckResult rows:

    commutation_identity T(I⊗X)T == X⊗I exactly, 100 random X
    cs_bijectivity       cs_inv(cs(A)) == A and T·cs(A) == cs(Aᵀ) exactly
    t_involution         T·T == I exactly
    gradient_caseK       −4·cs(Q) (in cs(Δ) order) vs central differences, rel 1e-4
    hessian_caseK        P̃·T·W·P̃ᵀ vs Richardson-extrapolated differences, rel 1e-3 on
                         entries above 1e-6, abs 1e-6 below
    model_caseK          remainder of the quadratic model shrinks with slope ≥ 2.7
    scale_caseK          cost invariant, Q and Δ conjugated by positive row scalings
    fixed_point_caseK    exact independence oracle gives Q = 0, Δ = 0 and an invertible Hessian

A w_hook lets tests mutate W before it reaches the Hessian comparison, which is
how the suite proves it can fail.
"""
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional
import logging

import numpy as np

from separation.schemas import MixtureSpec
from separation.services.cost_kurtosis import get_cost_model
from separation.services.evaluation import (
    case_costfn,
    fd_gradient,
    fd_hessian,
    generate_mixture,
    independent_oracle_moments,
)
from separation.services.moments import center, estimate_moments
from separation.services.newton import matrix_exp, restricted_hessian
from separation.services.tensor_algebra import (
    build_P_tilde,
    build_T,
    cs,
    cs_inv,
    kron,
    offdiagonal_slots,
)

logger = logging.getLogger(__name__)

CASES = ("case1", "case2")
CHECK_SAMPLES = 10_000
MODEL_STEPS = (1e-1, 10 ** -1.5, 1e-2, 10 ** -2.5, 1e-3)
MODEL_MIN_SLOPE = 2.7
HESSIAN_CHECK_STEP = 2e-3
HESSIAN_REL_TOL = 1e-3
HESSIAN_ABS_FLOOR = 1e-6
DEFAULT_SEEDS = (0, 1, 2)

WHook = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CheckResult:
    name: str
    dim: int
    passed: bool
    max_error: float
    detail: str = ""


def _rng(*keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(keys))))


def _check_state(n: int, seed: int):
    """Centered synthetic data and a generic (non-separating) unmixing matrix."""
    names = ["uniform", "laplacian", "two_point(0.3)", "rademacher"]
    spec = MixtureSpec(
        n_sources=n,
        distributions=[names[i % len(names)] for i in range(n)],
        condition=50.0,
        samples=CHECK_SAMPLES,
        seed=seed,
    )
    x, _, _ = generate_mixture(spec)
    x = center(x)
    C = np.eye(n) + 0.2 * _rng(seed, 1).standard_normal((n, n))
    return x, C


def _rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> float:
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + floor))) if analytic.size else 0.0


def check_commutation_identity(n: int, repeats: int = 100) -> CheckResult:
    T = build_T(n).matrix
    eye = np.eye(n)
    worst = 0.0
    rng = _rng(n, 11)
    for _ in range(repeats):
        X = rng.standard_normal((n, n))
        worst = max(worst, float(np.max(np.abs(T @ kron(eye, X) @ T - kron(X, eye)))))
    return CheckResult("commutation_identity", n, worst == 0.0, worst)


def check_cs_bijectivity(n: int, repeats: int = 100) -> CheckResult:
    T = build_T(n)
    worst = 0.0
    rng = _rng(n, 12)
    for _ in range(repeats):
        A = rng.standard_normal((n, n))
        worst = max(
            worst,
            float(np.max(np.abs(cs_inv(cs(A)) - A))),
            float(np.max(np.abs((T @ cs(A)).data - cs(A.T).data))),
        )
    return CheckResult("cs_bijectivity", n, worst == 0.0, worst)


def check_t_involution(n: int) -> CheckResult:
    T = build_T(n).matrix
    worst = float(np.max(np.abs(T @ T - np.eye(n * n))))
    return CheckResult("t_involution", n, worst == 0.0, worst)


def check_gradient(n: int, case: str, seed: int) -> CheckResult:
    model = get_cost_model(case)
    x, C = _check_state(n, seed)
    moments = estimate_moments(x.apply(C))
    analytic = (build_T(n) @ model.gradient_vec(model.stats(moments))).data
    numeric = fd_gradient(case_costfn(case), C, x).data
    slots = offdiagonal_slots(n)
    # |a − b| <= 1e-4·|b| + 1e-8
    error = _rel_error(analytic[slots], numeric[slots], floor=1e-4)
    return CheckResult(f"gradient_{case}", n, error <= 1e-4, error, f"seed={seed}")


def extrapolated_fd_hessian(case: str, C: np.ndarray, x) -> np.ndarray:
    """Richardson combination (4·H(h) − H(2h)) / 3 of two finite-difference Hessians, projected to P̃."""
    costfn = case_costfn(case)
    P_tilde = build_P_tilde(C.shape[0]).matrix
    fine = fd_hessian(costfn, C, x, h=HESSIAN_CHECK_STEP)
    coarse = fd_hessian(costfn, C, x, h=2 * HESSIAN_CHECK_STEP)
    return P_tilde @ ((4.0 * fine - coarse) / 3.0) @ P_tilde.T


def hessian_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Relative error on entries with |analytic| > HESSIAN_ABS_FLOOR, absolute error (scaled by 1e3) elsewhere."""
    denominator = np.where(np.abs(analytic) > HESSIAN_ABS_FLOOR, np.abs(analytic), HESSIAN_ABS_FLOOR / HESSIAN_REL_TOL)
    return float(np.max(np.abs(analytic - numeric) / denominator)) if analytic.size else 0.0


def check_hessian(n: int, case: str, seed: int, w_hook: Optional[WHook] = None) -> CheckResult:
    model = get_cost_model(case)
    x, C = _check_state(n, seed)
    moments = estimate_moments(x.apply(C))
    W = model.assemble_w(model.stats(moments), moments)
    if w_hook is not None:
        W = w_hook(W)
    analytic = restricted_hessian(W)
    error = hessian_error(analytic, extrapolated_fd_hessian(case, C, x))
    return CheckResult(f"hessian_{case}", n, error <= HESSIAN_REL_TOL, error, f"seed={seed}")


def model_remainder_slope(n: int, case: str, seed: int) -> float:
    """Log-log slope of |f(e^{tΔ}C) − model(tΔ)| over MODEL_STEPS for a random unit Δ."""
    model = get_cost_model(case)
    x, C = _check_state(n, seed)
    moments = estimate_moments(x.apply(C))
    stats = model.stats(moments)
    costfn = case_costfn(case)
    delta = _rng(seed, 2).standard_normal((n, n))
    np.fill_diagonal(delta, 0.0)
    delta /= np.linalg.norm(delta)
    errors = [
        abs(costfn(matrix_exp(t * delta) @ C, x) - model.quadratic_model(t * delta, moments, stats))
        for t in MODEL_STEPS
    ]
    slope, _ = np.polyfit(np.log(MODEL_STEPS), np.log(np.maximum(errors, 1e-300)), 1)
    return float(slope)


def check_model(n: int, case: str, seed: int) -> CheckResult:
    slope = model_remainder_slope(n, case, seed)
    return CheckResult(f"model_{case}", n, slope >= MODEL_MIN_SLOPE, slope, f"seed={seed} slope={slope:.3f}")


def check_scale_covariance(n: int, case: str, seed: int) -> CheckResult:
    model = get_cost_model(case)
    x, C = _check_state(n, seed)
    D = np.diag(np.exp(_rng(seed, 3).uniform(-1.0, 1.0, n)))
    D_inv = np.diag(1.0 / np.diag(D))

    base = estimate_moments(x.apply(C))
    scaled = estimate_moments(x.apply(D @ C))
    stats, stats_scaled = model.stats(base), model.stats(scaled)
    Q = model.stationarity_matrix(stats)
    Q_scaled = model.stationarity_matrix(stats_scaled)
    step = model.solve_delta(stats, base)
    step_scaled = model.solve_delta(stats_scaled, scaled)

    value, value_scaled = model.value(base), model.value(scaled)
    cost_error = abs(value - value_scaled) / max(abs(value), 1e-300)
    Q_target = D @ Q @ D_inv
    Q_error = np.linalg.norm(Q_scaled - Q_target) / max(np.linalg.norm(Q_target), 1e-300)
    delta_target = D @ step.delta @ D_inv
    delta_error = np.linalg.norm(step_scaled.delta - delta_target) / max(np.linalg.norm(delta_target), 1e-300)
    error = float(max(cost_error, Q_error, delta_error))
    return CheckResult(f"scale_{case}", n, error <= 1e-10, error, f"seed={seed}")


def check_fixed_point(n: int, case: str) -> CheckResult:
    model = get_cost_model(case)
    rng = _rng(n, 13)
    # keep every κ away from 3 so the oracle Hessian is invertible for both cases
    kappas = np.where(rng.uniform(size=n) < 0.5, rng.uniform(1.2, 2.5, n), rng.uniform(4.0, 6.0, n))
    moments = independent_oracle_moments(kappas)
    stats = model.stats(moments)
    Q = model.stationarity_matrix(stats)
    step = model.solve_delta(stats, moments)
    H = restricted_hessian(model.assemble_w(stats, moments))
    invertible = n == 1 or (np.isfinite(np.linalg.cond(H)) and np.linalg.cond(H) < 1e12)
    error = float(max(np.max(np.abs(Q)), np.max(np.abs(step.delta))))
    return CheckResult(f"fixed_point_{case}", n, error == 0.0 and bool(invertible), error)


def run_checks(
    dims: Iterable[int] = (2, 3, 5),
    seeds: Iterable[int] = DEFAULT_SEEDS,
    w_hook: Optional[WHook] = None,
) -> List[CheckResult]:
    """Run every suite for every dimension; finite-difference suites also loop over seeds."""
    seeds = list(seeds)
    results: List[CheckResult] = []
    for n in dims:
        results += [check_commutation_identity(n), check_cs_bijectivity(n), check_t_involution(n)]
        if n < 2:
            continue
        for case in CASES:
            for seed in seeds:
                results += [
                    check_gradient(n, case, seed),
                    check_hessian(n, case, seed, w_hook),
                    check_model(n, case, seed),
                    check_scale_covariance(n, case, seed),
                ]
            results.append(check_fixed_point(n, case))
    failed = [r for r in results if not r.passed]
    if failed:
        logger.warning(f"{len(failed)} of {len(results)} checks failed")
    else:
        logger.info(f"All {len(results)} checks passed")
    return results
