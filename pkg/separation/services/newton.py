"""
Newton iteration on the scaling coset and its convergence diagnostics.

Each Newton step estimates the moments of Y = C·X, solves the configured cost
model's saddle-point system for a zero-diagonal Δ, optionally damps it, and
applies the multiplicative update C ← e^Δ·C. Because Δ has zero diagonal,
det(e^Δ) = e^{tr Δ} = 1 and the determinant of C never changes.

Run phases (IterationRecord.phase):
    - warm_start: line-searched relative-gradient steps before the Newton phase
    - newton: a solved and possibly damped Newton step
    - fallback: a line-searched gradient step taken because the Newton system
      was ill-conditioned or every damped Newton step was rejected

Warm-start merit:
    F(C) = −Σ_k φ(κ_k − 3) + λ·(−log det Corr(C·X))

    φ is |·| for Case I and (·)² for Case II (CostModel.row_contrast). The kurtosis
    part alone is separable by rows, so two rows can settle on the same source;
    the correlation term (λ = correlation_weight) rules those points out. Its
    relative gradient is dφ/dκ_k·(−4 Q_lk) + 2λ R1_lk, and F is invariant to
    row scaling.

Damping (damping="halving"):
    Δ is halved until ‖Δ‖ ≤ max_step_norm, then halved further (up to
    MERIT_HALVINGS times) until the scaled stationarity residual at e^Δ·C drops
    below the current one. A step that never passes raises StepRejectedError
    and the run takes a fallback step instead. damping="none" applies the
    solved Δ unchanged.

Stopping:
    The run converges at the first Newton step with ‖Δ_t‖_F < tol_delta. It fails
    (converged=False, error set) on a degenerate channel, a non-finite iterate, or
    more than max_fallbacks consecutive fallbacks. max_iters exhausted without
    convergence is not an error.

Diagnostics:
    - hessian_at: off-diagonal Hessian block P̃·T·[(I−P)W(I−P)+P]·P̃ᵀ
    - convergence_order: log-log slope of successive step norms
    - coset_coordinate / coordinate_convergence_order: the same fit measured in
      the zero-diagonal logarithmic coordinate around the final iterate
"""
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
import pandas as pd
from scipy.linalg import expm, logm

from separation.exceptions import (
    ConfigurationError,
    DimensionError,
    IllConditionedSystemError,
    NonFiniteInputError,
    SeparationError,
    StepRejectedError,
)
from separation.schemas import SolverConfig
from separation.services.cost_kurtosis import CostModel, get_cost_model
from separation.services.moments import (
    ContrastMoments,
    MomentSet,
    SignalMatrix,
    center,
    estimate_contrast_moments,
    estimate_moments,
)
from separation.services.tensor_algebra import build_P, build_P_tilde, build_T

logger = logging.getLogger(__name__)

ORDER_WINDOW = (1e-13, 1e-2)
ORDER_MIN_VALUES = 3
FALLBACK_RATE = 0.1
MERIT_HALVINGS = 4
MERIT_FLOOR = 1e-10

PHASE_WARM_START = "warm_start"
PHASE_NEWTON = "newton"
PHASE_FALLBACK = "fallback"


def matrix_exp(delta: np.ndarray) -> np.ndarray:
    """
    e^Δ by scaling and squaring with a Padé approximant (scipy.linalg.expm).

    Raises:
        NonFiniteInputError: Δ has NaN or infinite entries.
    """
    delta = np.asarray(delta, dtype=float)
    if not np.all(np.isfinite(delta)):
        raise NonFiniteInputError("matrix_exp received non-finite entries")
    return expm(delta)


@dataclass(frozen=True)
class IterationRecord:
    t: int
    phase: str
    delta_norm: float
    cost: float
    system_condition: Optional[float]
    damping_halvings: int
    stationarity_norm: float


@dataclass
class IterationTrace:
    records: List[IterationRecord] = field(default_factory=list)

    def append(self, record: IterationRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def phase_records(self, phase: str) -> List[IterationRecord]:
        return [r for r in self.records if r.phase == phase]

    def delta_norms(self, phase: Optional[str] = None) -> List[float]:
        """Step norms in order, restricted to one phase when given."""
        return [r.delta_norm for r in self.records if phase is None or r.phase == phase]

    def newton_runs(self) -> List[List[float]]:
        """Step norms of maximal stretches of back-to-back Newton records."""
        runs: List[List[float]] = []
        current: List[float] = []
        for record in self.records:
            if record.phase == PHASE_NEWTON:
                current.append(record.delta_norm)
            elif current:
                runs.append(current)
                current = []
        if current:
            runs.append(current)
        return runs

    def to_frame(self) -> pd.DataFrame:
        columns = list(IterationRecord.__dataclass_fields__)
        return pd.DataFrame([r.__dict__ for r in self.records], columns=columns)


@dataclass
class SeparationResult:
    C_final: np.ndarray
    Y: SignalMatrix
    trace: IterationTrace
    converged: bool
    convergence_order: Optional[float] = None
    error: Optional[str] = None
    history: List[np.ndarray] = field(default_factory=list)

    @property
    def newton_iterations(self) -> int:
        return sum(1 for r in self.trace if r.phase != PHASE_WARM_START)

    @property
    def warm_start_steps(self) -> int:
        return len(self.trace.phase_records(PHASE_WARM_START))

    @property
    def fallbacks(self) -> int:
        return len(self.trace.phase_records(PHASE_FALLBACK))

    @property
    def final_record(self) -> Optional[IterationRecord]:
        return self.trace.records[-1] if self.trace.records else None


def scaled_stationarity(S: np.ndarray, second_moments: np.ndarray, frozen: Optional[np.ndarray] = None) -> float:
    """
    ‖S̃‖_F with S̃[p, i] = S[p, i]·√m_i / √m_p, the stationarity matrix of the
    unit-variance rows; invariant to positive row scaling of C.

    Columns of frozen rows are left out.
    """
    root = np.sqrt(second_moments)
    scaled = S * root[np.newaxis, :] / root[:, np.newaxis]
    if frozen is not None:
        scaled = scaled[:, ~np.asarray(frozen, dtype=bool)]
    return float(np.linalg.norm(scaled))


@dataclass(frozen=True)
class Evaluation:
    """Moments, model statistics and scaled stationarity of C·x."""

    C: np.ndarray
    moments: MomentSet
    stats: object
    stationarity: float


def evaluate(C: np.ndarray, x: SignalMatrix, model: CostModel) -> Evaluation:
    moments = estimate_moments(x.apply(C))
    stats = model.stats(moments)
    residual = scaled_stationarity(model.stationarity_matrix(stats), moments.second_moments)
    return Evaluation(C=C, moments=moments, stats=stats, stationarity=residual)


def _newton_step(
    current: Evaluation,
    x: SignalMatrix,
    cfg: SolverConfig,
    t: int,
    model: CostModel,
) -> Tuple[np.ndarray, IterationRecord, Optional[Evaluation]]:
    C, moments, stats = current.C, current.moments, current.stats
    frozen = model.frozen_rows(moments, cfg.freeze_ratio)
    solved = model.solve_delta(stats, moments, cfg.condition_limit, frozen)

    delta = solved.delta
    halvings = 0
    accepted: Optional[Evaluation] = None
    if cfg.damping == "halving":
        while np.linalg.norm(delta) > cfg.max_step_norm:
            delta = 0.5 * delta
            halvings += 1
        residual = scaled_stationarity(model.stationarity_matrix(stats), moments.second_moments, frozen)
        trial_residual = residual
        for extra in range(MERIT_HALVINGS + 1):
            if extra:
                delta = 0.5 * delta
                halvings += 1
            trial = evaluate(matrix_exp(delta) @ C, x, model)
            trial_residual = scaled_stationarity(
                model.stationarity_matrix(trial.stats), trial.moments.second_moments, frozen,
            )
            if (
                trial_residual < residual
                or trial_residual < MERIT_FLOOR
                or np.linalg.norm(delta) < cfg.tol_delta
            ):
                accepted = trial
                break
        if accepted is None:
            raise StepRejectedError(residual, trial_residual, halvings)
    if halvings:
        logger.warning(f"Step {t} damped by {halvings} halvings (|Δ| {np.linalg.norm(solved.delta):.3e})")

    record = IterationRecord(
        t=t,
        phase=PHASE_NEWTON,
        delta_norm=float(np.linalg.norm(delta)),
        cost=model.value(moments),
        system_condition=solved.system_condition,
        damping_halvings=halvings,
        stationarity_norm=current.stationarity,
    )
    logger.debug(
        f"t={t} |Δ|={record.delta_norm:.3e} cost={record.cost:.10g} "
        f"cond={solved.system_condition:.3e} halvings={halvings}"
        + (f" frozen={np.flatnonzero(frozen).tolist()}" if frozen is not None else "")
    )
    C_next = accepted.C if accepted is not None else matrix_exp(delta) @ C
    return C_next, record, accepted


def step(
    C: np.ndarray,
    x: SignalMatrix,
    cfg: SolverConfig,
    t: int = 1,
    model: Optional[CostModel] = None,
) -> Tuple[np.ndarray, IterationRecord]:
    """
    One Newton step C ↦ e^Δ·C.

    Args:
        C: current unmixing matrix
        x: (centered) observations; not re-centered here
        cfg: solver configuration (case, damping, condition limit, freeze ratio)
        t: iteration index stored in the record
        model: cost model override, resolved from cfg.cost_case by default

    Returns:
        (C_next, record); record.delta_norm is the norm of the applied (damped) Δ.

    Raises:
        DegenerateChannelError: a channel of C·x has vanishing second moment.
        IllConditionedSystemError: the Newton system exceeds cfg.condition_limit.
        StepRejectedError: no damped step reduced the stationarity residual.
    """
    model = model or get_cost_model(cfg.cost_case)
    C_next, record, _ = _newton_step(evaluate(np.asarray(C, dtype=float), x, model), x, cfg, t, model)
    return C_next, record


def normalize_rows(C: np.ndarray, x: SignalMatrix) -> np.ndarray:
    """Rescale the rows of C so every component of C·x has unit second moment."""
    y = x.apply(C).data
    return C / np.sqrt(np.mean(y * y, axis=1))[:, np.newaxis]


@dataclass(frozen=True)
class MeritPoint:
    """Warm-start merit F at C with its zero-diagonal relative gradient ∂F/∂Δ_kl."""

    C: np.ndarray
    value: float
    gradient: np.ndarray
    moments: ContrastMoments


def merit_point(C: np.ndarray, x: SignalMatrix, model: CostModel, weight: float) -> MeritPoint:
    """
    Evaluate F(C) = −Σ φ(κ_k − 3) − λ·log det Corr(C·x).

    A singular correlation matrix gives F = +inf.
    """
    cm = estimate_contrast_moments(x.apply(C))
    contrast, slope = model.row_contrast(cm.excess())
    sign, logdet = np.linalg.slogdet(cm.correlation)
    barrier = -logdet if sign > 0 else np.inf
    gradient = slope[:, np.newaxis] * (-4.0 * cm.case1_stationarity().T) + 2.0 * weight * cm.R1.T
    np.fill_diagonal(gradient, 0.0)
    return MeritPoint(C=C, value=float(contrast + weight * barrier), gradient=gradient, moments=cm)


class BacktrackingLineSearch:
    """
    Armijo backtracking along a relative-gradient direction.

    The first trial moves ‖Δ‖ = initial_step_size; later searches start from
    the step that would reproduce the previous decrease, times `optimism`.
    Trials are retracted onto the coset by `retract` and capped at
    max_step_norm.
    """

    def __init__(
        self,
        contraction_factor: float = 0.5,
        optimism: float = 2.0,
        sufficient_decrease: float = 1e-4,
        max_iterations: int = 25,
        initial_step_size: float = 1.0,
        max_step_norm: Optional[float] = None,
    ):
        self.contraction_factor = contraction_factor
        self.optimism = optimism
        self.sufficient_decrease = sufficient_decrease
        self.max_iterations = max_iterations
        self.initial_step_size = initial_step_size
        self.max_step_norm = max_step_norm

        self._oldf0: Optional[float] = None

    def search(
        self,
        objective: Callable[[np.ndarray], MeritPoint],
        retract: Callable[[np.ndarray, np.ndarray], np.ndarray],
        point: MeritPoint,
        d: np.ndarray,
        df0: float,
    ) -> Tuple[float, MeritPoint]:
        """
        Returns:
            (step_size, new_point); step_size is ‖αd‖, and 0 with the original
            point when no trial decreased the merit.
        """
        norm_d = float(np.linalg.norm(d))
        f0 = point.value
        alpha = 0.0
        if self._oldf0 is not None and df0 < 0:
            alpha = self.optimism * 2.0 * (f0 - self._oldf0) / df0
        if not np.isfinite(alpha) or alpha <= 0:
            alpha = self.initial_step_size / norm_d
        if self.max_step_norm is not None:
            alpha = min(alpha, self.max_step_norm / norm_d)

        new_point = objective(retract(point.C, alpha * d))
        step_count = 1
        while (
            not new_point.value <= f0 + self.sufficient_decrease * alpha * df0
            and step_count <= self.max_iterations
        ):
            alpha *= self.contraction_factor
            new_point = objective(retract(point.C, alpha * d))
            step_count += 1

        if not new_point.value < f0:
            alpha = 0.0
            new_point = point

        self._oldf0 = f0
        return alpha * norm_d, new_point


def _line_search_step(
    point: MeritPoint,
    x: SignalMatrix,
    cfg: SolverConfig,
    model: CostModel,
    search: BacktrackingLineSearch,
    t: int,
    phase: str,
) -> Tuple[MeritPoint, IterationRecord]:
    gradient = point.gradient
    step_size, new_point = search.search(
        lambda C: merit_point(C, x, model, cfg.correlation_weight),
        lambda C, delta: normalize_rows(matrix_exp(delta) @ C, x),
        point,
        -gradient,
        -float(np.sum(gradient * gradient)),
    )
    record = IterationRecord(
        t=t,
        phase=phase,
        delta_norm=step_size,
        cost=model.value(point.moments),
        system_condition=None,
        damping_halvings=0,
        stationarity_norm=scaled_stationarity(
            model.contrast_stationarity(point.moments), point.moments.second_moments,
        ),
    )
    return new_point, record


def gradient_step(
    C: np.ndarray,
    x: SignalMatrix,
    cfg: SolverConfig,
    t: int = 1,
    phase: str = PHASE_FALLBACK,
    model: Optional[CostModel] = None,
    search: Optional[BacktrackingLineSearch] = None,
) -> Tuple[np.ndarray, IterationRecord]:
    """One line-searched descent step on the warm-start merit, rows renormalized."""
    model = model or get_cost_model(cfg.cost_case)
    rate = cfg.warm_start.rate if cfg.warm_start is not None else FALLBACK_RATE
    search = search or BacktrackingLineSearch(initial_step_size=rate, max_step_norm=cfg.max_step_norm)
    point = merit_point(np.asarray(C, dtype=float), x, model, cfg.correlation_weight)
    new_point, record = _line_search_step(point, x, cfg, model, search, t, phase)
    return new_point.C, record


def warm_start(
    C: np.ndarray,
    x: SignalMatrix,
    cfg: SolverConfig,
    model: CostModel,
    trace: IterationTrace,
    history: List[np.ndarray],
) -> np.ndarray:
    """
    Descend the warm-start merit until its gradient norm drops below
    cfg.warm_start.tol, the line search stalls, or n_steps are used.
    """
    plan = cfg.warm_start
    search = BacktrackingLineSearch(initial_step_size=plan.rate, max_step_norm=cfg.max_step_norm)
    point = merit_point(normalize_rows(C, x), x, model, cfg.correlation_weight)
    if not np.isfinite(point.value):
        logger.warning("Warm start skipped: the components are linearly dependent")
        return C
    for k in range(1, plan.n_steps + 1):
        gradient_norm = float(np.linalg.norm(point.gradient))
        if gradient_norm < plan.tol:
            logger.info(f"Warm start settled after {k - 1} steps (|grad| {gradient_norm:.2e})")
            break
        point, record = _line_search_step(point, x, cfg, model, search, k, PHASE_WARM_START)
        trace.append(record)
        if cfg.keep_history:
            history.append(point.C.copy())
        if record.delta_norm == 0.0:
            logger.info(f"Warm start stalled at step {k} (|grad| {gradient_norm:.2e})")
            break
    return point.C


def _initial_matrix(C0: Optional[np.ndarray], n: int) -> np.ndarray:
    if C0 is None:
        return np.eye(n)
    C0 = np.array(C0, dtype=float)
    if C0.shape != (n, n):
        raise DimensionError(f"C0 must be {n}x{n}, got {C0.shape}")
    if not np.all(np.isfinite(C0)):
        raise NonFiniteInputError("C0 contains non-finite entries")
    if np.linalg.cond(C0) > 1.0 / np.finfo(float).eps:
        raise ConfigurationError("C0 is singular")
    return C0


def run(x: SignalMatrix, C0: Optional[np.ndarray] = None, cfg: Optional[SolverConfig] = None) -> SeparationResult:
    """
    Full separation: optional warm start, then Newton steps until ‖Δ_t‖ < tol_delta.

    No whitening is applied; x is only centered when cfg.center is set.

    Returns:
        SeparationResult; step failures are reported through `error` with the
        trace so far, never raised.

    Raises:
        DimensionError / ConfigurationError: invalid C0.
    """
    cfg = cfg or SolverConfig.from_settings()
    model = get_cost_model(cfg.cost_case)
    data = center(x) if cfg.center else x
    C = _initial_matrix(C0, data.channels)

    trace = IterationTrace()
    history = [C.copy()] if cfg.keep_history else []
    converged = False
    error = None
    logger.info(
        f"Separation started: case={cfg.cost_case} N={data.channels} S={data.samples} "
        f"tol={cfg.tol_delta:.1e} max_iters={cfg.max_iters} warm_start={cfg.warm_start or 'off'}"
    )

    try:
        if cfg.warm_start is not None and cfg.max_iters > 0:
            C = warm_start(C, data, cfg, model, trace, history)

        rate = cfg.warm_start.rate if cfg.warm_start is not None else FALLBACK_RATE
        fallback_search = BacktrackingLineSearch(initial_step_size=rate, max_step_norm=cfg.max_step_norm)
        consecutive_fallbacks = 0
        current: Optional[Evaluation] = None
        for t in range(1, cfg.max_iters + 1):
            current = current or evaluate(C, data, model)
            try:
                C_next, record, current = _newton_step(current, data, cfg, t, model)
                consecutive_fallbacks = 0
            except (IllConditionedSystemError, StepRejectedError) as exc:
                consecutive_fallbacks += 1
                if consecutive_fallbacks > cfg.max_fallbacks:
                    raise
                logger.warning(f"Step {t}: {exc}; taking a gradient step instead")
                C_next, record = gradient_step(C, data, cfg, t, PHASE_FALLBACK, model, fallback_search)
                current = None

            if not np.all(np.isfinite(C_next)):
                raise NonFiniteInputError(f"Iterate became non-finite at step {t}")
            C = C_next
            trace.append(record)
            if cfg.keep_history:
                history.append(C.copy())
            if record.phase == PHASE_NEWTON and record.delta_norm < cfg.tol_delta:
                converged = True
                break
    except SeparationError as exc:
        error = str(exc)
        logger.error(f"Separation failed after {len(trace)} records: {exc}")

    order = None
    if converged:
        order = convergence_order(trace)
        if order is None:
            logger.warning(
                f"Convergence order not estimable from {len(trace.phase_records(PHASE_NEWTON))} Newton steps"
            )

    result = SeparationResult(
        C_final=C,
        Y=data.apply(C),
        trace=trace,
        converged=converged,
        convergence_order=order,
        error=error,
        history=history,
    )
    final = result.final_record
    final_norm = f"{final.delta_norm:.3e}" if final else "n/a"
    logger.info(
        f"Separation finished: converged={converged} iterations={result.newton_iterations} final |Δ|={final_norm}"
    )
    return result


def hessian_at(C: np.ndarray, x: SignalMatrix, case: Union[str, int] = "case1") -> np.ndarray:
    """
    Off-diagonal Hessian block P̃·T·[(I−P)W(I−P) + P]·P̃ᵀ of the cost at C.

    Rows/columns follow the off-diagonal cs(Δ) slots in increasing order; x is
    used as given (no centering).
    """
    model = get_cost_model(case)
    current = evaluate(np.asarray(C, dtype=float), x, model)
    return restricted_hessian(model.assemble_w(current.stats, current.moments))


def restricted_hessian(W: np.ndarray) -> np.ndarray:
    """P̃·T·[(I−P)W(I−P) + P]·P̃ᵀ for an N²×N² matrix W."""
    n = int(round(np.sqrt(W.shape[0])))
    P = build_P(n).matrix
    I_P = np.eye(n * n) - P
    M = I_P @ W @ I_P + P
    P_tilde = build_P_tilde(n).matrix
    return P_tilde @ build_T(n).matrix @ M @ P_tilde.T


def convergence_order(
    trace: Union[IterationTrace, Sequence[float]],
    window: Tuple[float, float] = ORDER_WINDOW,
) -> Optional[float]:
    """
    Least-squares slope of log e_{t+1} against log e_t.

    Only consecutive pairs with both values strictly inside `window` are used.
    For a trace, pairs never straddle a warm-start or fallback record. Fewer
    than ORDER_MIN_VALUES distinct qualifying values means the order is not
    estimable: from e_t < 1e-2 a quadratic sequence with e_{t+1} ≈ e_t² leaves
    the window after three values.

    Returns:
        The fitted slope, or None when not estimable.
    """
    runs = trace.newton_runs() if isinstance(trace, IterationTrace) else [list(trace)]
    low, high = window
    pairs = []
    used = set()
    for r, norms in enumerate(runs):
        for t in range(len(norms) - 1):
            if low < norms[t] < high and low < norms[t + 1] < high:
                pairs.append((norms[t], norms[t + 1]))
                used.update({(r, t), (r, t + 1)})
    if len(used) < ORDER_MIN_VALUES:
        return None
    xs = np.log([a for a, _ in pairs])
    ys = np.log([b for _, b in pairs])
    slope, _ = np.polyfit(xs, ys, 1)
    return float(slope)


def coset_coordinate(C: np.ndarray, target: np.ndarray, max_sweeps: int = 50, tol: float = 1e-12) -> Optional[np.ndarray]:
    """
    Zero-diagonal X with e^X·C = D·target for some positive diagonal D.

    The scaling D is found by a fixed-point sweep on the diagonal of
    logm(D·target·C⁻¹). Returns None when the principal logarithm is not real
    or the sweep does not settle.
    """
    B = np.asarray(target, dtype=float) @ np.linalg.inv(np.asarray(C, dtype=float))
    scale = np.ones(B.shape[0])
    for _ in range(max_sweeps):
        L, _err = logm(scale[:, np.newaxis] * B, disp=False)
        if np.iscomplexobj(L):
            if np.max(np.abs(L.imag)) > 1e-10:
                return None
            L = L.real
        if not np.all(np.isfinite(L)):
            return None
        d = np.diag(L)
        if np.max(np.abs(d)) < tol:
            X = L.copy()
            np.fill_diagonal(X, 0.0)
            return X
        scale = scale * np.exp(-d)
    return None


def coordinate_convergence_order(
    history: Iterable[np.ndarray],
    window: Tuple[float, float] = ORDER_WINDOW,
) -> Optional[float]:
    """Convergence order of ‖X_t‖, X_t the coset coordinate of C_t around the last iterate."""
    history = list(history)
    if len(history) < 2:
        return None
    target = history[-1]
    norms = []
    for C in history[:-1]:
        X = coset_coordinate(C, target)
        # iterates without a real logarithm fall outside any fitting window
        norms.append(float(np.linalg.norm(X)) if X is not None else float("inf"))
    return convergence_order(norms, window)
