"""
Sample-moment estimation for the kurtosis cost models.

Every statistic consumed by the Case I and Case II costs is estimated here from a
single pass over the component signals Y = C·X, using plain 1/S sample means:

    m_i          = E(Y_i²)                       (raw second moment)
    R1[p, i]     = E(Y_i Y_p) / m_i
    R3[p, i]     = E(Y_i³ Y_p) / m_i²
    U0[i][p, q]  = E(Y_p Y_q) / m_i
    U2[i][p, q]  = E(Y_i² Y_p Y_q) / m_i²
    κ_i          = E(Y_i⁴) / m_i²

Moment conventions:
    - The rooted values σ2_i = m_i^{1/2} and σ4_i = E(Y_i⁴)^{1/4} are kept for
      reporting; all denominators are formed from powers of m_i directly.
    - Only even orders are used, so no absolute values are taken.
    - R1 diagonal and κ are read from the same accumulators as R1 and R3, so
      R1_ii = 1 and R3_ii = κ_i hold exactly.

Reduction order:
    Samples are processed in contiguous blocks of ICA_MOMENT_BLOCK_SIZE columns and
    the per-block sums are added in block order, so results do not depend on
    thread count or BLAS scheduling of a single huge contraction.
"""
from dataclasses import dataclass
from typing import Optional
import logging

import numpy as np
from django.conf import settings

from separation.exceptions import DegenerateChannelError, DimensionError, NonFiniteInputError

logger = logging.getLogger(__name__)

DEGENERACY_RATIO = 1e-30
GAUSSIAN_KURTOSIS = 3.0


@dataclass(frozen=True)
class SignalMatrix:
    """
    N channels × S samples of real data (row = channel).

    Used both for observed mixtures X and component estimates Y = C·X.
    """

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise DimensionError(f"SignalMatrix expects a 2-D array, got {data.ndim} dimensions")
        if data.shape[0] < 1:
            raise DimensionError("SignalMatrix needs at least one channel")
        if data.shape[1] < 2:
            raise DimensionError(f"SignalMatrix needs at least 2 samples, got {data.shape[1]}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteInputError("Signal data contains NaN or infinite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_samples(cls, rows: np.ndarray) -> "SignalMatrix":
        """Build from a samples × channels table (the CSV layout)."""
        return cls(np.asarray(rows, dtype=float).T.copy())

    def apply(self, c: np.ndarray) -> "SignalMatrix":
        """Return C·X."""
        return SignalMatrix(np.asarray(c, dtype=float) @ self.data)


@dataclass(frozen=True)
class MomentSet:
    """
    Per-iteration statistics of Y.

    Attributes:
        second_moments: raw m_i = E(Y_i²), length N
        sigma2: m_i^{1/2}
        sigma4: E(Y_i⁴)^{1/4}
        R1: N×N, R1[p, i] = E(Y_i Y_p)/m_i
        R3: N×N, R3[p, i] = E(Y_i³ Y_p)/m_i²
        U0: N×N×N stack, U0[i] = E(Y Yᵀ)/m_i (symmetric)
        U2: N×N×N stack, U2[i] = E(Y_i² Y Yᵀ)/m_i² (symmetric)
        kappa: κ_i = E(Y_i⁴)/m_i²
        n_samples: S the statistics were estimated from (0 for analytic oracles)
    """

    second_moments: np.ndarray
    sigma2: np.ndarray
    sigma4: np.ndarray
    R1: np.ndarray
    R3: np.ndarray
    U0: np.ndarray
    U2: np.ndarray
    kappa: np.ndarray
    n_samples: int = 0

    @property
    def dim(self) -> int:
        return self.kappa.shape[0]

    def excess(self) -> np.ndarray:
        return self.kappa - GAUSSIAN_KURTOSIS


def _default_block_size() -> int:
    if settings.configured:
        return int(getattr(settings, "ICA_MOMENT_BLOCK_SIZE", 16384))
    return 16384


def center(x: SignalMatrix) -> SignalMatrix:
    """Subtract each channel's sample mean."""
    return SignalMatrix(x.data - x.data.mean(axis=1, keepdims=True))


def _accumulate(y: np.ndarray, block_size: int, with_u2: bool = True):
    n, s = y.shape
    g2 = np.zeros((n, n))
    m31 = np.zeros((n, n))
    u2 = np.zeros((n, n, n)) if with_u2 else None
    for start in range(0, s, block_size):
        block = y[:, start:start + block_size]
        sq = block * block
        g2 += block @ block.T
        # m31[p, i] = Σ_s Y_p Y_i³
        m31 += block @ (sq * block).T
        if with_u2:
            u2 += np.einsum("is,ps,qs->ipq", sq, block, block, optimize=True)
    return g2 / s, m31 / s, (u2 / s if with_u2 else None)


def _second_moments(g2: np.ndarray) -> np.ndarray:
    m = np.diag(g2).copy()
    scale = m.max()
    for i in range(m.shape[0]):
        if scale <= 0.0 or m[i] < DEGENERACY_RATIO * scale:
            raise DegenerateChannelError(i, float(m[i]))
    return m


def estimate_moments(y: SignalMatrix, block_size: Optional[int] = None) -> MomentSet:
    """
    Estimate the full MomentSet of Y with plain sample means.

    Args:
        y: component signals (not centered here; see center()).
        block_size: samples per reduction block, defaults to ICA_MOMENT_BLOCK_SIZE.

    Returns:
        MomentSet with symmetric U0/U2 stacks, R1_ii = 1 and R3_ii = κ_i.

    Raises:
        DegenerateChannelError: a channel's E(Y_i²) is below 1e-30 of the largest
            channel's (or every channel is identically zero).
    """
    block_size = block_size or _default_block_size()
    data = y.data
    n = data.shape[0]

    g2, m31, u2_raw = _accumulate(data, block_size)

    m = _second_moments(g2)

    m_sq = m * m
    R1 = g2 / m[np.newaxis, :]
    R3 = m31 / m_sq[np.newaxis, :]
    kappa = np.diag(m31) / m_sq

    U0 = np.stack([g2 / m[i] for i in range(n)])
    U0 = 0.5 * (U0 + U0.transpose(0, 2, 1))
    U2 = u2_raw / m_sq[:, np.newaxis, np.newaxis]
    U2 = 0.5 * (U2 + U2.transpose(0, 2, 1))

    fourth = np.diag(m31)
    moments = MomentSet(
        second_moments=m,
        sigma2=np.sqrt(m),
        sigma4=np.abs(fourth) ** 0.25,
        R1=R1,
        R3=R3,
        U0=U0,
        U2=U2,
        kappa=kappa,
        n_samples=y.samples,
    )
    logger.debug(f"Estimated moments: N={n} S={y.samples} kappa={np.array2string(kappa, precision=4)}")
    return moments


@dataclass(frozen=True)
class ContrastMoments:
    """
    The second- and fourth-order statistics a gradient step needs: no U0/U2 stacks.

    Attributes:
        second_moments: m_i = E(Y_i²)
        correlation: E(Y_p Y_q) / √(m_p m_q)
        R1, R3, kappa: as in MomentSet
    """

    second_moments: np.ndarray
    correlation: np.ndarray
    R1: np.ndarray
    R3: np.ndarray
    kappa: np.ndarray

    def excess(self) -> np.ndarray:
        return self.kappa - GAUSSIAN_KURTOSIS

    def case1_stationarity(self) -> np.ndarray:
        """Q = K − R3 with K_pq = R1_pq κ_q."""
        return self.R1 * self.kappa[np.newaxis, :] - self.R3


def estimate_contrast_moments(y: SignalMatrix, block_size: Optional[int] = None) -> ContrastMoments:
    """
    Same accumulators as estimate_moments without the N³ fourth-order stack.

    Raises:
        DegenerateChannelError: as estimate_moments.
    """
    g2, m31, _ = _accumulate(y.data, block_size or _default_block_size(), with_u2=False)
    m = _second_moments(g2)
    m_sq = m * m
    root = np.sqrt(m)
    return ContrastMoments(
        second_moments=m,
        correlation=g2 / np.outer(root, root),
        R1=g2 / m[np.newaxis, :],
        R3=m31 / m_sq[np.newaxis, :],
        kappa=np.diag(m31) / m_sq,
    )


def kurtosis_vector(m: MomentSet, excess: bool = False) -> np.ndarray:
    """κ per channel, or κ − 3 when excess=True."""
    return m.excess() if excess else m.kappa.copy()
