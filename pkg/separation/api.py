"""
Django Ninja REST API endpoints for the separation engine.

Mounted under /api/separation/ (see backend/router.py).

API Categories:
    - Separation: POST /separate - run the Newton engine on posted signals
    - Synthetic data: POST /synth - generate a benchmark mixture
    - Run history: GET /runs, GET /runs/{run_id} - recorded SeparationRun rows

Common Patterns:
    - Signals travel as samples × channels nested lists, the CSV layout
    - Solver overrides are applied on top of SolverConfig.from_settings()
    - Error handling: HttpError(status_code, message) for client errors
    - UUID serialization: run ids converted to strings

Error Codes:
    - 400 Bad Request: malformed signals, invalid overrides, engine input errors
    - 404 Not Found: unknown run id

Notes:
    - Runs execute synchronously inside the request; keep payloads small
    - POST /synth is capped at ICA_API_MAX_SAMPLES samples
    - OpenAPI/Swagger docs auto-generated by django-ninja
"""
from typing import List
import logging
import uuid

import numpy as np
from django.conf import settings
from django.shortcuts import get_object_or_404
from ninja import Router
from ninja.errors import HttpError
from pydantic import ValidationError

from separation.exceptions import SeparationError
from separation.models import SeparationRun
from separation.schemas import (
    MixtureSpec,
    SeparateRequestSchema,
    SeparateResponseSchema,
    SeparationRunSchema,
    SolverConfig,
    SynthResponseSchema,
)
from separation.services.csv_io import MIN_CHANNELS, MIN_SAMPLES
from separation.services.evaluation import generate_mixture
from separation.services.moments import SignalMatrix, estimate_moments
from separation.services.runs import SeparationService

logger = logging.getLogger(__name__)

router = Router()


def _signals_from_rows(rows: List[List[float]]) -> SignalMatrix:
    """samples × channels rows to a SignalMatrix, with the CSV input limits."""
    widths = {len(row) for row in rows}
    if len(widths) > 1:
        raise HttpError(400, "All signal rows must have the same number of channels")
    if not rows or widths.pop() < MIN_CHANNELS:
        raise HttpError(400, f"Need at least {MIN_CHANNELS} channels")
    if len(rows) < MIN_SAMPLES:
        raise HttpError(400, f"Need at least {MIN_SAMPLES} samples, got {len(rows)}")
    try:
        return SignalMatrix.from_samples(np.array(rows, dtype=float))
    except SeparationError as e:
        raise HttpError(400, str(e))


@router.post("/separate", response=SeparateResponseSchema, tags=["Separation"])
def separate(request, payload: SeparateRequestSchema):
    """
    Run the Newton separation on posted signals and record the run.

    Endpoint:
        POST /api/separation/separate

    Request Body (SeparateRequestSchema):
        {
            "signals": [[float, ...], ...] (samples × channels, required),
            "cost_case": "case1" | "case2" | "1" | "2" (optional),
            "tol_delta": float (optional),
            "max_iters": int (optional),
            "damping": "none" | "halving" (optional),
            "max_step_norm": float (optional),
            "warm_start": "off" | "<steps>:<rate>[:<tol>]" (optional, ICA_WARM_START by default),
            "center": bool (optional)
        }

    Success Response:
        {
            "run_id": str (UUID),
            "converged": bool,
            "iterations": int,
            "unmixing": [[float]] (N × N, row-major),
            "final_cost": float | null,
            "convergence_order": float | null,
            "error": str | null (set when the run stopped on a step failure),
            "trace": [{"t", "phase", "delta_norm", "cost", "system_condition",
                       "damping_halvings", "stationarity_norm"}, ...]
        }

    Error Codes:
        - 400: ragged rows, fewer than 2 channels or 100 samples, non-finite
          values, invalid overrides, degenerate input
        - 200 with converged=false: the engine ran but did not converge

    Notes:
        - A non-converged run is still recorded
        - run_id is empty if the database write failed
    """
    x = _signals_from_rows(payload.signals)
    overrides = payload.model_dump(exclude={"signals"})
    try:
        cfg = SolverConfig.from_settings(**overrides)
    except (ValidationError, ValueError) as e:
        raise HttpError(400, f"Invalid solver configuration: {e}")

    try:
        result, _, stored = SeparationService.separate(x, cfg, record=True)
    except SeparationError as e:
        logger.warning(f"Separation request rejected: {e}")
        raise HttpError(400, str(e))

    last = result.final_record
    return {
        "run_id": str(stored.id) if stored else "",
        "converged": result.converged,
        "iterations": result.newton_iterations,
        "unmixing": result.C_final.tolist(),
        "final_cost": last.cost if last else None,
        "convergence_order": result.convergence_order,
        "error": result.error,
        "trace": [record.__dict__ for record in result.trace],
    }


@router.post("/synth", response=SynthResponseSchema, tags=["Synthetic data"])
def synth(request, payload: MixtureSpec):
    """
    Generate a seeded benchmark mixture X = A·S.

    Endpoint:
        POST /api/separation/synth

    Request Body (MixtureSpec):
        {
            "n_sources": int (>= 1),
            "distributions": "uniform,laplacian" | ["uniform", "two_point(0.3)"],
            "condition": float (>= 1, default 20),
            "mixing_matrix": [[float]] (optional, overrides condition),
            "samples": int (<= ICA_API_MAX_SAMPLES),
            "seed": int (default 0)
        }

    Response:
        mixed: samples × channels, mixing: A (row-major), kurtosis: κ of each source

    Error Codes:
        - 400: too many samples, or the mixing matrix could not be generated
    """
    if payload.samples > settings.ICA_API_MAX_SAMPLES:
        raise HttpError(400, f"samples must not exceed {settings.ICA_API_MAX_SAMPLES}")
    try:
        X, A, S = generate_mixture(payload)
        kurtosis = estimate_moments(S).kappa
    except SeparationError as e:
        raise HttpError(400, str(e))
    return {
        "mixed": X.data.T.tolist(),
        "mixing": A.tolist(),
        "kurtosis": [float(k) for k in kurtosis],
    }


@router.get("/runs", response=List[SeparationRunSchema], tags=["Run history"])
def list_runs(request):
    """Recorded separation runs, newest first."""
    return SeparationRun.objects.all()


@router.get("/runs/{run_id}", response=SeparationRunSchema, tags=["Run history"])
def get_run(request, run_id: uuid.UUID):
    """One recorded run by UUID; 404 when it does not exist."""
    return get_object_or_404(SeparationRun, id=run_id)
