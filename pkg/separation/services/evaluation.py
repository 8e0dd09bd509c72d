"""
Benchmarks and independent oracles for the separation engine.

Provides:
    - generate_mixture: seeded synthetic sources and mixing matrices
    - amari_index / agreement: permutation- and scale-invariant separation scores
    - fd_gradient / fd_hessian: central finite differences of any cost along
      the multiplicative directions C ↦ e^{tE_kl}·C
    - independent_oracle_moments: exact population moments of independent,
      symmetric, unit-variance sources
    - score: ScoreReport for a recovered unmixing matrix

Randomness:
    Every source channel i draws from its own counter-based stream
    Philox(SeedSequence([seed, i])); the mixing matrix uses the stream
    (seed, MIXING_STREAM). Output is bit-identical across platforms for a seed.

Finite-difference coordinates:
    Both oracles work in cs(Δ) coordinates: 0-based slot k + N·l holds the
    derivative along E_kl (the unit matrix with a one at (k, l)).
"""
from typing import Callable, Tuple
import logging

import numpy as np

from separation.exceptions import ConfigurationError, DimensionError, MixtureGenerationError
from separation.schemas import MixtureSpec, ScoreReport
from separation.services.cost_kurtosis import cost, get_cost_model
from separation.services.cost_squared_kurtosis import cost2
from separation.services.moments import MomentSet, SignalMatrix, estimate_moments
from separation.services.newton import matrix_exp
from separation.services.tensor_algebra import VecMat, matrix_index, offdiagonal_slots

logger = logging.getLogger(__name__)

MIXING_STREAM = 10_000
MAX_MIXING_ATTEMPTS = 100
GRADIENT_STEP = 1e-5
HESSIAN_STEP = 1e-4

CostFn = Callable[[np.ndarray, SignalMatrix], float]


def _stream(seed: int, key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, key])))


def sample_source(name: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """
    Zero-mean, unit-variance samples of a named distribution.

    two_point(p) takes √((1−p)/p) with probability p and −√(p/(1−p)) otherwise.
    """
    if name == "uniform":
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size)
    if name == "laplacian":
        # inverse CDF with scale 1/√2
        u = rng.uniform(-0.5, 0.5, size)
        return -np.sign(u) * np.log1p(-2.0 * np.abs(u)) / np.sqrt(2.0)
    if name == "gaussian":
        return rng.standard_normal(size)
    if name == "rademacher":
        return 2.0 * rng.integers(0, 2, size) - 1.0
    if name.startswith("two_point("):
        p = float(name[len("two_point("):-1])
        hit = rng.uniform(0.0, 1.0, size) < p
        return np.where(hit, np.sqrt((1.0 - p) / p), -np.sqrt(p / (1.0 - p)))
    raise ConfigurationError(f"Unknown distribution '{name}'")


def random_condition_matrix(n: int, condition: float, rng: np.random.Generator) -> np.ndarray:
    """
    Gaussian n×n matrix with cond₂ ≤ condition.

    Raises:
        MixtureGenerationError: no draw met the target within 100 attempts.
    """
    for attempt in range(1, MAX_MIXING_ATTEMPTS + 1):
        A = rng.standard_normal((n, n))
        if np.linalg.cond(A) <= condition:
            logger.debug(f"Mixing matrix accepted after {attempt} attempts")
            return A
    raise MixtureGenerationError(
        f"No {n}x{n} mixing matrix with condition <= {condition} in {MAX_MIXING_ATTEMPTS} attempts"
    )


def generate_mixture(spec: MixtureSpec) -> Tuple[SignalMatrix, np.ndarray, SignalMatrix]:
    """
    Draw sources S, a mixing matrix A and the mixture X = A·S.

    Returns:
        (X, A, S)
    """
    sources = np.vstack([
        sample_source(name, spec.samples, _stream(spec.seed, i))
        for i, name in enumerate(spec.distributions)
    ])
    if spec.mixing_matrix is not None:
        A = np.array(spec.mixing_matrix, dtype=float)
    else:
        A = random_condition_matrix(spec.n_sources, spec.condition, _stream(spec.seed, MIXING_STREAM))
    return SignalMatrix(A @ sources), A, SignalMatrix(sources)


def amari_index(C: np.ndarray, A: np.ndarray) -> float:
    """
    Normalized distance of G = C·A from the scaled permutations.

        (1 / 2N(N−1)) [Σ_i (Σ_j |G_ij| / max_j |G_ij| − 1) + Σ_j (Σ_i |G_ij| / max_i |G_ij| − 1)]

    Raises:
        DimensionError: G has an all-zero row or column, or shapes do not chain.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if C.shape[1] != A.shape[0] or C.shape[0] != A.shape[1]:
        raise DimensionError(f"Cannot score C{C.shape} against A{A.shape}")
    return _gain_index(np.abs(C @ A))


def _gain_index(G: np.ndarray) -> float:
    n = G.shape[0]
    row_max = G.max(axis=1)
    col_max = G.max(axis=0)
    if np.any(row_max == 0) or np.any(col_max == 0):
        raise DimensionError("C·A has an all-zero row or column")
    if n == 1:
        return 0.0
    rows = np.sum(G.sum(axis=1) / row_max - 1.0)
    cols = np.sum(G.sum(axis=0) / col_max - 1.0)
    return float((rows + cols) / (2.0 * n * (n - 1)))


def agreement(C1: np.ndarray, C2: np.ndarray) -> float:
    """Amari index between two unmixing matrices (0 when they agree up to scaling and permutation)."""
    return amari_index(C1, np.linalg.inv(C2))


def _check_step(h: float) -> None:
    if not 1e-7 <= h <= 1e-2:
        raise ConfigurationError(f"Finite-difference step must lie in [1e-7, 1e-2], got {h}")


def _unit(n: int, slot: int) -> np.ndarray:
    E = np.zeros((n, n))
    E[matrix_index(slot, n)] = 1.0
    return E


def fd_gradient(costfn: CostFn, C: np.ndarray, x: SignalMatrix, h: float = GRADIENT_STEP) -> VecMat:
    """Central differences (f(e^{hE}C) − f(e^{−hE}C)) / 2h along every E_kl, in cs(Δ) order."""
    _check_step(h)
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    grad = np.zeros(n * n)
    for slot in range(n * n):
        E = _unit(n, slot)
        grad[slot] = (costfn(matrix_exp(h * E) @ C, x) - costfn(matrix_exp(-h * E) @ C, x)) / (2.0 * h)
    return VecMat(n, grad)


def fd_hessian(costfn: CostFn, C: np.ndarray, x: SignalMatrix, h: float = HESSIAN_STEP) -> np.ndarray:
    """
    N²×N² Hessian of Δ ↦ f(e^Δ·C) at Δ = 0 over off-diagonal direction pairs.

    Diagonal-entry rows and columns are left at zero. Mixed entries use the
    four-point stencil, pure entries the three-point one.
    """
    _check_step(h)
    C = np.asarray(C, dtype=float)
    n = C.shape[0]

    def g(delta: np.ndarray) -> float:
        return costfn(matrix_exp(delta) @ C, x)

    H = np.zeros((n * n, n * n))
    slots = offdiagonal_slots(n)
    base = g(np.zeros((n, n)))
    for a_pos, a in enumerate(slots):
        Ea = _unit(n, a)
        H[a, a] = (g(h * Ea) - 2.0 * base + g(-h * Ea)) / (h * h)
        for b in slots[a_pos + 1:]:
            Eb = _unit(n, b)
            value = (
                g(h * Ea + h * Eb) - g(h * Ea - h * Eb) - g(-h * Ea + h * Eb) + g(-h * Ea - h * Eb)
            ) / (4.0 * h * h)
            H[a, b] = H[b, a] = value
    return H


def independent_oracle_moments(kappas) -> MomentSet:
    """
    Population moments of independent, symmetric, unit-variance channels.

    R1 = I, R3 = diag(κ), U0[i] = I, U2[i] = I with κ_i at (i, i).

    Raises:
        ConfigurationError: some κ_i ≤ 0.
    """
    kappa = np.asarray(kappas, dtype=float).ravel()
    if kappa.size == 0 or np.any(kappa <= 0):
        raise ConfigurationError("Oracle kurtoses must be positive")
    n = kappa.size
    eye = np.eye(n)
    U2 = np.stack([eye.copy() for _ in range(n)])
    for i in range(n):
        U2[i, i, i] = kappa[i]
    ones = np.ones(n)
    return MomentSet(
        second_moments=ones,
        sigma2=ones.copy(),
        sigma4=kappa ** 0.25,
        R1=eye.copy(),
        R3=np.diag(kappa),
        U0=np.stack([eye.copy() for _ in range(n)]),
        U2=U2,
        kappa=kappa,
        n_samples=0,
    )


def score(C: np.ndarray, A: np.ndarray, x: SignalMatrix) -> ScoreReport:
    """Amari index of C against the true mixing A, plus kurtoses and both costs of C·x."""
    moments = estimate_moments(x.apply(C))
    return ScoreReport(
        amari_index=amari_index(C, A),
        per_channel_kurtosis=[float(k) for k in moments.kappa],
        cost_case1=cost(moments),
        cost_case2=cost2(moments),
    )


def case_costfn(case: str) -> CostFn:
    """f(C, x) for a cost case, for use with the finite-difference oracles."""
    model = get_cost_model(case)

    def costfn(C: np.ndarray, x: SignalMatrix) -> float:
        return model.value(estimate_moments(x.apply(C)))

    return costfn


def partial_amari_index(C: np.ndarray, A: np.ndarray, sources) -> float:
    """
    Amari index restricted to the given source columns of C·A and the rows that
    recover them. Returns 1.0 when two of those sources land on the same row.
    """
    G = np.abs(np.asarray(C, dtype=float) @ np.asarray(A, dtype=float))
    sources = list(sources)
    rows = [int(np.argmax(G[:, j])) for j in sources]
    if len(set(rows)) != len(rows):
        return 1.0
    return _gain_index(G[np.ix_(rows, sources)])
