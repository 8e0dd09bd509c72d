"""
Case II contrast: the sum of squared excess kurtoses f = Σ_i (κ_i − 3)².

Unlike Σκ_i this contrast is flat in the direction of a component whose kurtosis
equals the Gaussian value 3: every column of the bold statistics carries a
(κ_q − 3) factor, so a zero-excess channel does not pull on the update.

Statistics (bold quantities, q = Case I's Q):
    bK[p, q] = 2 R1[p, q] (κ_q − 3) κ_q
    bV[i]    = 2 (κ_i − 3) (3 U2[i] − κ_i U0[i])
    bS       = diag(2 (κ_i − 3))
    bQ       = bq · bS
    bq[p, q] = R1[p, q] κ_q − R3[p, q]

The Newton step reuses solve_saddle_system with W2 and bQ in place of W and Q.
Rows whose kurtosis sits near 3 are frozen out of that solve (see frozen_rows).
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from separation.services.cost_kurtosis import (
    CostModel,
    UpdateStep,
    _check_dims,
    _diag_products,
    case1_stats,
    register_cost_model,
    solve_saddle_system,
)
from separation.services.moments import GAUSSIAN_KURTOSIS, ContrastMoments, MomentSet
from separation.services.tensor_algebra import build_P, build_T, direct_sum, kron


@dataclass(frozen=True)
class CaseIIStats:
    bK: np.ndarray
    bV: np.ndarray
    bS: np.ndarray
    bQ: np.ndarray
    bq: np.ndarray


def cost2(m: MomentSet) -> float:
    """Σ_i (κ_i − 3)²."""
    return float(np.sum((m.kappa - GAUSSIAN_KURTOSIS) ** 2))


def case2_stats(m: MomentSet) -> CaseIIStats:
    excess = m.kappa - GAUSSIAN_KURTOSIS
    base = case1_stats(m)
    bS = np.diag(2.0 * excess)
    return CaseIIStats(
        bK=2.0 * m.R1 * (excess * m.kappa)[np.newaxis, :],
        bV=2.0 * excess[:, np.newaxis, np.newaxis] * base.V,
        bS=bS,
        bQ=base.Q @ bS,
        bq=base.Q,
    )


def assemble_W2(s: CaseIIStats, m: MomentSet) -> np.ndarray:
    """
    W2 = −2(I⊗bQ + bQᵀ⊗I) + 4(⊕_i bV[i])T
         + [24(I⊗bK)P(I⊗R1)ᵀ + 32(I⊗bq)P(I⊗bq)ᵀ
            − 16(I⊗R1·bS)P(I⊗R3)ᵀ − 16(I⊗R3·bS)P(I⊗R1)ᵀ]T

    bS multiplies R1 and R3 on the right.
    """
    n = _check_dims(m, s.bK, s.bQ, s.bq, s.bS, s.bV, m.R1, m.R3)
    eye = np.eye(n)
    T = build_T(n).matrix
    P = build_P(n).matrix

    I_R1 = kron(eye, m.R1)
    I_R3 = kron(eye, m.R3)
    I_q = kron(eye, s.bq)
    W = -2.0 * (kron(eye, s.bQ) + kron(s.bQ.T, eye))
    W += 4.0 * direct_sum(list(s.bV), n=n) @ T
    W += (
        24.0 * kron(eye, s.bK) @ P @ I_R1.T
        + 32.0 * I_q @ P @ I_q.T
        - 16.0 * kron(eye, m.R1 @ s.bS) @ P @ I_R3.T
        - 16.0 * kron(eye, m.R3 @ s.bS) @ P @ I_R1.T
    ) @ T
    return W


def solve_delta2(
    s: CaseIIStats,
    m: MomentSet,
    condition_limit: Optional[float] = None,
    frozen: Optional[np.ndarray] = None,
) -> UpdateStep:
    return solve_saddle_system(assemble_W2(s, m), s.bQ, condition_limit, frozen)


def quadratic_model2(delta: np.ndarray, m: MomentSet, s: CaseIIStats) -> float:
    """
    Second-order expansion of Σ(κ_i − 3)² at e^Δ·Y:

        (κ_i−3)² − 8[(Δ + Δ²/2) q]_ii (κ_i−3) + 4[Δ V[i] Δᵀ]_ii (κ_i−3)
        + 16 [Δq]_ii² + 24 (κ_i−3) κ_i [ΔR1]_ii² − 32 (κ_i−3) [ΔR1]_ii [ΔR3]_ii
    """
    delta = np.asarray(delta, dtype=float)
    excess = m.kappa - GAUSSIAN_KURTOSIS
    d1, d3 = _diag_products(delta, m)
    # bV already carries the 2(κ_i − 3) factor
    curvature = np.einsum("ip,ipq,iq->i", delta, s.bV, delta)
    linear = np.diag((delta + 0.5 * delta @ delta) @ s.bq)
    first = np.diag(delta @ s.bq)
    total = (
        excess**2
        - 8.0 * linear * excess
        + 2.0 * curvature
        + 16.0 * first**2
        + 24.0 * excess * m.kappa * d1**2
        - 32.0 * excess * d1 * d3
    )
    return float(np.sum(total))


@register_cost_model("case2")
class SquaredKurtosisCost(CostModel):
    """Case II, f = Σ(κ_i − 3)², maximal at a separating solution."""

    maximize = True

    def value(self, m: MomentSet) -> float:
        return cost2(m)

    def stats(self, m: MomentSet) -> CaseIIStats:
        return case2_stats(m)

    def stationarity_matrix(self, stats: CaseIIStats) -> np.ndarray:
        return stats.bQ

    def assemble_w(self, stats: CaseIIStats, m: MomentSet) -> np.ndarray:
        return assemble_W2(stats, m)

    def quadratic_model(self, delta: np.ndarray, m: MomentSet, stats: CaseIIStats) -> float:
        return quadratic_model2(delta, m, stats)

    def row_contrast(self, excess: np.ndarray) -> Tuple[float, np.ndarray]:
        return -float(np.sum(excess**2)), -2.0 * excess

    def contrast_stationarity(self, cm: ContrastMoments) -> np.ndarray:
        return cm.case1_stationarity() * (2.0 * cm.excess())[np.newaxis, :]

    def frozen_rows(self, m: MomentSet, ratio: float) -> Optional[np.ndarray]:
        """
        Rows whose |κ − 3| is below `ratio` of the largest one.

        The Hessian block of such a row carries a (κ_k − 3)² factor and turns
        singular as the row approaches a Gaussian source. None when no row
        qualifies, or when every row would (nothing left to solve for).
        """
        size = np.abs(m.excess())
        if ratio <= 0.0 or size.max() <= 0.0:
            return None
        frozen = size < ratio * size.max()
        if not frozen.any() or frozen.all():
            return None
        return frozen
