"""
Django Ninja schemas for solver configuration, benchmarks and the HTTP API.

These pydantic models are the single source of truth for every tunable of the
engine: management commands, the API and the bench harness all build a
SolverConfig and only ever override individual fields.

Schema Categories:
    - Solver: SolverConfig, WarmStart
    - Benchmarks: MixtureSpec, ScoreReport
    - Run records: TraceSummary, RunManifest
    - API: SeparateRequestSchema, SeparateResponseSchema, SynthResponseSchema,
      SeparationRunSchema, TraceRecordSchema

Notes:
    - Matrices travel as nested lists in row-major order.
    - RunManifest round-trips losslessly through model_dump_json / model_validate_json.
    - Defaults for SolverConfig.from_settings come from the ICA_* Django settings.
"""
import re
from datetime import datetime
from typing import Dict, List, Literal, Optional, Union

from django.conf import settings
from ninja import Schema
from pydantic import Field, field_validator, model_validator

DISTRIBUTIONS = ("uniform", "laplacian", "gaussian", "rademacher", "two_point")

_TWO_POINT = re.compile(r"^two_point[(:]\s*([0-9.eE+-]+)\s*\)?$")


WARM_START_TOL = 1e-4


class WarmStart(Schema):
    """
    Line-searched relative-gradient warm start.

    Fields:
        n_steps: most gradient steps taken before the Newton phase
        rate: ‖Δ‖ of the first trial step; later trials reuse the last decrease
        tol: the phase ends early once the merit gradient norm falls below this
    """

    n_steps: int = Field(ge=1)
    rate: float = Field(gt=0)
    tol: float = Field(default=WARM_START_TOL, gt=0)

    def __str__(self) -> str:
        return f"{self.n_steps}:{self.rate}:{self.tol}"


def parse_warm_start(value: Union[str, dict, WarmStart, None]) -> Optional[WarmStart]:
    """
    Parse "off" / "none" / "" to None and "<steps>:<rate>[:<tol>]" to a WarmStart.

    Raises:
        ValueError: malformed specification.
    """
    if value is None or isinstance(value, WarmStart):
        return value
    if isinstance(value, dict):
        return WarmStart(**value)
    text = str(value).strip().lower()
    if text in ("", "off", "none"):
        return None
    parts = text.split(":")
    try:
        if len(parts) not in (2, 3):
            raise ValueError(text)
        tol = float(parts[2]) if len(parts) == 3 else WARM_START_TOL
        return WarmStart(n_steps=int(parts[0]), rate=float(parts[1]), tol=tol)
    except ValueError:
        raise ValueError(f"Warm start must be 'off' or '<steps>:<rate>[:<tol>]', got '{value}'") from None


class SolverConfig(Schema):
    """
    Resolved configuration of one separation run.

    Fields:
        cost_case: "case1" (Σκ) or "case2" (Σ(κ−3)²)
        tol_delta: stop once ‖Δ_t‖_F < tol_delta
        max_iters: Newton iteration budget (0 returns C0 unchanged, not converged)
        damping: "halving" halves Δ until ‖Δ‖ ≤ max_step_norm; "none" never damps
        max_step_norm: step-norm cap used by damping and by the warm start
        warm_start: optional line-searched gradient phase before Newton iterations
        correlation_weight: weight of the −log det(correlation) term in the warm-start merit
        freeze_ratio: Case II rows with |κ − 3| below this share of the largest are
            held fixed in the Newton solve (0 disables)
        seed: recorded for reproducibility of synthetic runs
        center: subtract channel means from X once at ingestion
        condition_limit: largest accepted condition estimate of the Newton system
        max_fallbacks: consecutive gradient fallbacks tolerated before failing
        keep_history: keep every iterate C_t (needed for coset-coordinate order)
    """

    cost_case: Literal["case1", "case2"] = "case1"
    tol_delta: float = Field(default=1e-8, gt=0)
    max_iters: int = Field(default=200, ge=0)
    damping: Literal["none", "halving"] = "halving"
    max_step_norm: float = Field(default=1.0, gt=0)
    warm_start: Optional[WarmStart] = None
    seed: int = 0
    center: bool = True
    condition_limit: float = Field(default=1e12, gt=1)
    max_fallbacks: int = Field(default=20, ge=0)
    keep_history: bool = False
    correlation_weight: float = Field(default=1.0, ge=0)
    freeze_ratio: float = Field(default=0.05, ge=0, lt=1)

    @field_validator("cost_case", mode="before")
    @classmethod
    def _normalize_case(cls, value):
        text = str(value).strip().lower()
        return text if text.startswith("case") else f"case{text}"

    @field_validator("warm_start", mode="before")
    @classmethod
    def _parse_warm_start(cls, value):
        return parse_warm_start(value)

    @model_validator(mode="after")
    def _check_tolerance(self):
        if not self.tol_delta < self.max_step_norm:
            raise ValueError(
                f"tol_delta ({self.tol_delta}) must be smaller than max_step_norm ({self.max_step_norm})"
            )
        return self

    @classmethod
    def from_settings(cls, **overrides) -> "SolverConfig":
        """Defaults from ICA_* settings, then the non-None overrides."""
        values = {
            "tol_delta": settings.ICA_TOL_DELTA,
            "max_iters": settings.ICA_MAX_ITERS,
            "damping": settings.ICA_DAMPING,
            "max_step_norm": settings.ICA_MAX_STEP_NORM,
            "condition_limit": settings.ICA_CONDITION_LIMIT,
            "max_fallbacks": settings.ICA_MAX_FALLBACKS,
            "warm_start": settings.ICA_WARM_START,
            "correlation_weight": settings.ICA_CORRELATION_WEIGHT,
            "freeze_ratio": settings.ICA_FREEZE_RATIO,
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


class MixtureSpec(Schema):
    """
    Synthetic benchmark mixture.

    Fields:
        n_sources: number of independent sources N
        distributions: one name per source from DISTRIBUTIONS; "two_point(p)"
            carries its probability. A single name is repeated for every source.
        condition: target bound on cond₂(A) for a random Gaussian mixing matrix
        mixing_matrix: explicit A (overrides condition)
        samples: S
        seed: base seed; source i draws from stream (seed, i)
    """

    n_sources: int = Field(ge=1)
    distributions: List[str]
    condition: float = Field(default=20.0, ge=1)
    mixing_matrix: Optional[List[List[float]]] = None
    samples: int = Field(ge=2)
    seed: int = Field(default=0, ge=0)

    @field_validator("distributions", mode="before")
    @classmethod
    def _split_distributions(cls, value):
        if isinstance(value, str):
            value = [item for item in value.split(",") if item.strip()]
        names = []
        for item in value:
            name = str(item).strip().lower()
            if name == "laplace":
                name = "laplacian"
            match = _TWO_POINT.match(name)
            if match:
                p = float(match.group(1))
                if not 0 < p < 1:
                    raise ValueError(f"two_point probability must lie in (0, 1), got {p}")
                name = f"two_point({p})"
            elif name not in DISTRIBUTIONS or name == "two_point":
                raise ValueError(f"Unknown distribution '{item}'; expected one of {', '.join(DISTRIBUTIONS)}")
            names.append(name)
        return names

    @model_validator(mode="after")
    def _check_lengths(self):
        if len(self.distributions) == 1 and self.n_sources > 1:
            self.distributions = self.distributions * self.n_sources
        if len(self.distributions) != self.n_sources:
            raise ValueError(
                f"{len(self.distributions)} distributions given for {self.n_sources} sources"
            )
        if self.mixing_matrix is not None:
            rows = self.mixing_matrix
            if len(rows) != self.n_sources or any(len(row) != self.n_sources for row in rows):
                raise ValueError(f"mixing_matrix must be {self.n_sources}x{self.n_sources}")
        return self


class ScoreReport(Schema):
    amari_index: float = Field(ge=0)
    per_channel_kurtosis: List[float]
    cost_case1: float
    cost_case2: float


class TraceSummary(Schema):
    iterations: int
    warm_start_steps: int = 0
    fallbacks: int = 0
    converged: bool
    final_delta_norm: Optional[float] = None
    final_cost: Optional[float] = None
    convergence_order: Optional[float] = None
    error: Optional[str] = None


class RunManifest(Schema):
    """
    Everything needed to reproduce or audit a `separate` run.

    Every resolved SolverConfig value is recorded, including defaults.
    """

    input_path: str
    config: SolverConfig
    outputs: Dict[str, str]
    tool_version: str
    data_checksum: str
    n_channels: int
    n_samples: int
    wall_time_seconds: float
    created_at: datetime
    trace_summary: TraceSummary


# API Schemas
class TraceRecordSchema(Schema):
    t: int
    phase: str
    delta_norm: float
    cost: float
    system_condition: Optional[float] = None
    damping_halvings: int = 0
    stationarity_norm: float


class SeparateRequestSchema(Schema):
    """
    Body of POST /separate.

    Fields:
        signals: samples × channels table (same layout as the CSV input)
        cost_case, tol_delta, max_iters, damping, max_step_norm, warm_start, center:
            optional overrides of the settings-derived SolverConfig
    """

    signals: List[List[float]]
    cost_case: Optional[str] = None
    tol_delta: Optional[float] = None
    max_iters: Optional[int] = None
    damping: Optional[str] = None
    max_step_norm: Optional[float] = None
    warm_start: Optional[str] = None
    center: Optional[bool] = None


class SeparateResponseSchema(Schema):
    run_id: str
    converged: bool
    iterations: int
    unmixing: List[List[float]]
    final_cost: Optional[float] = None
    convergence_order: Optional[float] = None
    error: Optional[str] = None
    trace: List[TraceRecordSchema] = []


class SynthResponseSchema(Schema):
    mixed: List[List[float]]
    mixing: List[List[float]]
    kurtosis: List[float]


class SeparationRunSchema(Schema):
    id: str
    created_at: datetime
    cost_case: str
    n_channels: int
    n_samples: int
    converged: bool
    iterations: int
    final_delta_norm: Optional[float] = None
    final_cost: Optional[float] = None
    convergence_order: Optional[float] = None
    data_checksum: str
    unmixing: List[List[float]]

    @field_validator("id", mode="before")
    @classmethod
    def _stringify_id(cls, value):
        return str(value)
