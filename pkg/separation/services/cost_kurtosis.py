"""
Case I contrast: the sum of kurtoses f = Σ_i κ_i, and the shared Newton machinery.

For the update Y ← e^Δ·Y with zero-diagonal Δ, the cost is expanded to second
order in Δ. The linear part is read off the matrix Q = K − R3 (K_pq = κ_q R1_pq),
the quadratic part off the N²×N² matrix W, and the Newton (saddle-point) step is
the zero-diagonal Δ solving

    [(I−P)W(I−P) + P] cs(Δ) = 4 (I−P) cs(Q)

Vector arrangement:
    gradient_vec() and W use the "transposed" arrangement: the derivative with
    respect to Δ_kl sits at 1-based slot l + N(k−1), i.e. the gradient vector is
    cs(Gᵀ) for the gradient matrix G_kl = ∂f/∂Δ_kl = −4 Q_lk. In plain cs(Δ)
    coordinates the gradient is T·gradient_vec and the Hessian is T·W.

Contents:
    - CaseIStats / UpdateStep value types
    - cost, case1_stats, assemble_W, gradient_vec, solve_delta, quadratic_model
    - solve_saddle_system: the linear solve shared with Case II
    - CostModel: the contract both cases implement, plus the case registry
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple, Type, Union
import logging

import numpy as np
from django.conf import settings
from scipy.linalg import lapack, lu_factor, lu_solve

from separation.exceptions import ConfigurationError, DimensionError, IllConditionedSystemError, NonFiniteInputError
from separation.services.moments import ContrastMoments, MomentSet
from separation.services.tensor_algebra import build_P, build_T, cs, cs_inv, direct_sum, kron

logger = logging.getLogger(__name__)

DEFAULT_CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class CaseIStats:
    """K, the stack V[i] = 3·U2[i] − κ_i·U0[i] (symmetric), and Q = K − R3."""

    K: np.ndarray
    V: np.ndarray
    Q: np.ndarray


@dataclass(frozen=True)
class UpdateStep:
    """A solved Newton step; delta always has an exactly zero diagonal."""

    delta: np.ndarray
    residual_norm: float
    system_condition: float


def _condition_limit(limit: Optional[float]) -> float:
    if limit is not None:
        return float(limit)
    if settings.configured:
        return float(getattr(settings, "ICA_CONDITION_LIMIT", DEFAULT_CONDITION_LIMIT))
    return DEFAULT_CONDITION_LIMIT


def _check_dims(m: MomentSet, *matrices: np.ndarray) -> int:
    n = m.dim
    for matrix in matrices:
        if matrix.shape[-2:] != (n, n):
            raise DimensionError(f"Statistic of shape {matrix.shape} does not match moment dimension {n}")
    return n


def cost(m: MomentSet) -> float:
    """Σ_i κ_i."""
    return float(np.sum(m.kappa))


def case1_stats(m: MomentSet) -> CaseIStats:
    K = m.R1 * m.kappa[np.newaxis, :]
    V = 3.0 * m.U2 - m.kappa[:, np.newaxis, np.newaxis] * m.U0
    V = 0.5 * (V + V.transpose(0, 2, 1))
    return CaseIStats(K=K, V=V, Q=K - m.R3)


def gradient_vec(s: CaseIStats):
    """−4·cs(Q): slot l+N(k−1) (1-based) holds ∂f/∂Δ_kl = −4 Q_lk."""
    return cs(-4.0 * s.Q)


def assemble_W(s: CaseIStats, m: MomentSet) -> np.ndarray:
    """
    Quadratic-part matrix of the Case I expansion.

    W = −2(I⊗Q + Qᵀ⊗I) + 4(⊕_i V[i])T
        + [24(I⊗K)P(I⊗R1)ᵀ − 16(I⊗R1)P(I⊗R3)ᵀ − 16(I⊗R3)P(I⊗R1)ᵀ]T

    Raises:
        DimensionError: stats and moments disagree on N.
    """
    n = _check_dims(m, s.K, s.Q, s.V, m.R1, m.R3)
    eye = np.eye(n)
    T = build_T(n).matrix
    P = build_P(n).matrix

    I_R1 = kron(eye, m.R1)
    I_R3 = kron(eye, m.R3)
    W = -2.0 * (kron(eye, s.Q) + kron(s.Q.T, eye))
    W += 4.0 * direct_sum(list(s.V), n=n) @ T
    W += (
        24.0 * kron(eye, s.K) @ P @ I_R1.T
        - 16.0 * I_R1 @ P @ I_R3.T
        - 16.0 * I_R3 @ P @ I_R1.T
    ) @ T
    return W


def pinned_slots(frozen: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    (equation rows, unknown columns) of the off-diagonal entries Δ_ql of frozen rows q.

    Unknown Δ_ql sits at cs slot q + N·l; its gradient equation at l + N·q.
    """
    rows, cols = [], []
    for q in np.flatnonzero(frozen):
        for l in range(n):
            if l != q:
                rows.append(l + n * q)
                cols.append(q + n * l)
    return np.array(rows, dtype=int), np.array(cols, dtype=int)


def solve_saddle_system(
    W: np.ndarray,
    Qmat: np.ndarray,
    condition_limit: Optional[float] = None,
    frozen: Optional[np.ndarray] = None,
) -> UpdateStep:
    """
    Solve [(I−P)W(I−P) + P] cs(Δ) = 4(I−P) cs(Q) for the zero-diagonal step Δ.

    LU with partial pivoting plus a LAPACK 1-norm reciprocal-condition estimate.
    The diagonal of Δ is set to exactly zero after the solve (the P rows already
    force it up to rounding).

    Rows flagged in `frozen` are pinned like the diagonal: their off-diagonal
    entries of Δ are fixed at zero and their gradient equations are dropped,
    so the remaining unknowns take the Newton step of the reduced problem.

    Raises:
        IllConditionedSystemError: the condition estimate exceeds the limit.
        NonFiniteInputError: W or Q has non-finite entries.
    """
    Qmat = np.asarray(Qmat, dtype=float)
    n = Qmat.shape[0]
    W = np.asarray(W, dtype=float)
    if W.shape != (n * n, n * n):
        raise DimensionError(f"W must be {n * n}x{n * n} for N={n}, got {W.shape}")
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(Qmat))):
        raise NonFiniteInputError("Newton system contains non-finite entries")

    limit = _condition_limit(condition_limit)
    P = build_P(n).matrix
    I_P = np.eye(n * n) - P
    M = I_P @ W @ I_P + P
    rhs = 4.0 * (I_P @ cs(Qmat).data)
    if frozen is not None and np.any(frozen):
        rows, cols = pinned_slots(np.asarray(frozen, dtype=bool), n)
        M[rows, :] = 0.0
        M[:, cols] = 0.0
        M[rows, cols] = 1.0
        rhs[rows] = 0.0

    lu, piv = lu_factor(M, check_finite=False)
    rcond, info = lapack.dgecon(lu, np.linalg.norm(M, 1), norm="1")
    condition = float("inf") if rcond <= 0.0 or info != 0 else 1.0 / rcond
    if not condition <= limit:
        raise IllConditionedSystemError(condition, limit)

    x = lu_solve((lu, piv), rhs, check_finite=False)
    delta = cs_inv(x)
    np.fill_diagonal(delta, 0.0)
    residual = float(np.linalg.norm(M @ cs(delta).data - rhs))
    return UpdateStep(delta=delta, residual_norm=residual, system_condition=condition)


def solve_delta(s: CaseIStats, m: MomentSet, condition_limit: Optional[float] = None) -> UpdateStep:
    return solve_saddle_system(assemble_W(s, m), s.Q, condition_limit)


def _diag_products(delta: np.ndarray, m: MomentSet):
    return np.diag(delta @ m.R1), np.diag(delta @ m.R3)


def quadratic_model(delta: np.ndarray, m: MomentSet, s: CaseIStats) -> float:
    """
    Second-order expansion of Σκ at e^Δ·Y, evaluated term by term:

        Σ_i κ_i − 4[(Δ + Δ²/2)Q]_ii + 2[Δ V[i] Δᵀ]_ii + 12 κ_i [ΔR1]_ii² − 16 [ΔR1]_ii [ΔR3]_ii
    """
    delta = np.asarray(delta, dtype=float)
    d1, d3 = _diag_products(delta, m)
    linear = np.diag((delta + 0.5 * delta @ delta) @ s.Q)
    curvature = np.einsum("ip,ipq,iq->i", delta, s.V, delta)
    total = m.kappa - 4.0 * linear + 2.0 * curvature + 12.0 * m.kappa * d1**2 - 16.0 * d1 * d3
    return float(np.sum(total))


class CostModel(ABC):
    """
    Contract shared by the kurtosis contrasts.

    Subclasses expose the cost value, their statistics, the stationarity matrix
    whose vanishing off-diagonal marks a fixed point, W, the Newton step and the
    second-order model. `maximize` records whether the fixed point of interest is
    a maximum of the cost.
    """

    name: str = ""
    maximize: bool = True

    @abstractmethod
    def value(self, m: MomentSet) -> float: ...

    @abstractmethod
    def stats(self, m: MomentSet): ...

    @abstractmethod
    def stationarity_matrix(self, stats) -> np.ndarray: ...

    @abstractmethod
    def assemble_w(self, stats, m: MomentSet) -> np.ndarray: ...

    @abstractmethod
    def quadratic_model(self, delta: np.ndarray, m: MomentSet, stats) -> float: ...

    def gradient_vec(self, stats):
        return cs(-4.0 * self.stationarity_matrix(stats))

    def gradient_matrix(self, stats) -> np.ndarray:
        """G with G_kl = ∂f/∂Δ_kl at Δ = 0."""
        return -4.0 * self.stationarity_matrix(stats).T

    @abstractmethod
    def row_contrast(self, excess: np.ndarray) -> Tuple[float, np.ndarray]:
        """
        Warm-start contrast to minimize, −Σ_k φ(κ_k − 3), and its derivative in each κ_k.

        φ grows with the distance from the Gaussian value, so every row is pushed
        away from κ = 3 whichever side of it the cost's fixed point lies on.
        """

    def contrast_stationarity(self, cm: ContrastMoments) -> np.ndarray:
        """stationarity_matrix computed from ContrastMoments alone."""
        return cm.case1_stationarity()

    def frozen_rows(self, m: MomentSet, ratio: float) -> Optional[np.ndarray]:
        """Rows to hold fixed in the Newton solve, or None."""
        return None

    def solve_delta(
        self,
        stats,
        m: MomentSet,
        condition_limit: Optional[float] = None,
        frozen: Optional[np.ndarray] = None,
    ) -> UpdateStep:
        return solve_saddle_system(self.assemble_w(stats, m), self.stationarity_matrix(stats), condition_limit, frozen)


_REGISTRY: Dict[str, Type[CostModel]] = {}


def register_cost_model(case: str) -> Callable[[Type[CostModel]], Type[CostModel]]:
    def decorator(cls: Type[CostModel]) -> Type[CostModel]:
        cls.name = case
        _REGISTRY[case] = cls
        return cls
    return decorator


@register_cost_model("case1")
class KurtosisCost(CostModel):
    """Case I, f = Σ κ_i. Its fixed points mix maxima and minima, so the warm start descends −Σ|κ_k − 3|."""

    maximize = False

    def value(self, m: MomentSet) -> float:
        return cost(m)

    def stats(self, m: MomentSet) -> CaseIStats:
        return case1_stats(m)

    def stationarity_matrix(self, stats: CaseIStats) -> np.ndarray:
        return stats.Q

    def assemble_w(self, stats: CaseIStats, m: MomentSet) -> np.ndarray:
        return assemble_W(stats, m)

    def quadratic_model(self, delta: np.ndarray, m: MomentSet, stats: CaseIStats) -> float:
        return quadratic_model(delta, m, stats)

    def row_contrast(self, excess: np.ndarray) -> Tuple[float, np.ndarray]:
        return -float(np.sum(np.abs(excess))), -np.sign(excess)


def get_cost_model(case: Union[str, int]) -> CostModel:
    """
    Resolve "case1"/"case2" (also 1, 2, "1", "2") to a cost model instance.

    Raises:
        ConfigurationError: unknown case.
    """
    # Case II registers itself on import
    from separation.services import cost_squared_kurtosis  # noqa: F401

    key = str(case).strip().lower()
    if not key.startswith("case"):
        key = f"case{key}"
    try:
        return _REGISTRY[key]()
    except KeyError:
        raise ConfigurationError(f"Unknown cost case '{case}'; expected one of {sorted(_REGISTRY)}") from None
