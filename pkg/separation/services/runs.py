"""
Run bookkeeping: trace summaries, manifests and the SeparationRun history.

The numerical engine returns a SeparationResult and nothing else. This module
turns a result into the records the outside world sees: the TraceSummary and
RunManifest written by `manage.py separate`, and the SeparationRun rows stored
for the API and for `separate --record`.

Error Handling:
    - record_run follows the (success, run, error) convention and never raises
    - database writes are wrapped in transaction.atomic()
"""
from pathlib import Path
from typing import Dict, Optional, Tuple, Union
import logging
import time

import numpy as np
from django.db import transaction
from django.utils import timezone

from separation import __version__
from separation.models import SeparationRun
from separation.schemas import RunManifest, SolverConfig, TraceSummary
from separation.services.csv_io import array_checksum
from separation.services.moments import SignalMatrix
from separation.services.newton import SeparationResult, run

logger = logging.getLogger(__name__)

API_INPUT = "<api>"


def trace_summary(result: SeparationResult) -> TraceSummary:
    last = result.final_record
    return TraceSummary(
        iterations=result.newton_iterations,
        warm_start_steps=result.warm_start_steps,
        fallbacks=result.fallbacks,
        converged=result.converged,
        final_delta_norm=last.delta_norm if last else None,
        final_cost=last.cost if last else None,
        convergence_order=result.convergence_order,
        error=result.error,
    )


def build_manifest(
    result: SeparationResult,
    cfg: SolverConfig,
    signals: SignalMatrix,
    data_checksum: str,
    wall_time_seconds: float,
    input_path: Union[str, Path] = API_INPUT,
    outputs: Optional[Dict[str, str]] = None,
) -> RunManifest:
    return RunManifest(
        input_path=str(input_path),
        config=cfg,
        outputs=outputs or {},
        tool_version=__version__,
        data_checksum=data_checksum,
        n_channels=signals.channels,
        n_samples=signals.samples,
        wall_time_seconds=wall_time_seconds,
        created_at=timezone.now(),
        trace_summary=trace_summary(result),
    )


class SeparationService:
    """
    Runs the engine on behalf of the API and records finished runs.

    Methods:
        record_run: store a SeparationRun for a finished result
        separate: run the engine on in-memory signals, then record the run

    Error Handling:
        - Returns tuple: (success: bool, run: SeparationRun | None, error: str | None)
        - Database failures are logged and returned, never raised
    """

    @staticmethod
    def record_run(
        result: SeparationResult,
        manifest: RunManifest,
    ) -> Tuple[bool, Optional[SeparationRun], Optional[str]]:
        """
        Store one finished run.

        Args:
            result: engine output (converged or not)
            manifest: manifest describing the run; its summary fills the columns

        Returns:
            (True, run, None) on success, (False, None, message) on a database error
        """
        summary = manifest.trace_summary
        try:
            with transaction.atomic():
                record = SeparationRun.objects.create(
                    cost_case=manifest.config.cost_case,
                    n_channels=manifest.n_channels,
                    n_samples=manifest.n_samples,
                    converged=summary.converged,
                    iterations=summary.iterations,
                    final_delta_norm=summary.final_delta_norm,
                    final_cost=summary.final_cost,
                    convergence_order=summary.convergence_order,
                    data_checksum=manifest.data_checksum,
                    manifest=manifest.model_dump(mode="json"),
                    unmixing=np.asarray(result.C_final, dtype=float).tolist(),
                    error=summary.error or "",
                )
            logger.info(f"Recorded separation run {record.id} ({record})")
            return True, record, None
        except Exception as e:
            logger.error(f"Error recording separation run: {e}")
            return False, None, f"Recording failed: {str(e)}"

    @staticmethod
    def separate(
        signals: SignalMatrix,
        cfg: SolverConfig,
        record: bool = True,
    ) -> Tuple[SeparationResult, RunManifest, Optional[SeparationRun]]:
        """
        Run the engine on channels × samples data and optionally record it.

        Raises:
            SeparationError: input rejected before the first iteration (the
                engine reports step failures through the result instead)
        """
        started = time.perf_counter()
        result = run(signals, cfg=cfg)
        manifest = build_manifest(
            result,
            cfg,
            signals,
            data_checksum=array_checksum(signals.data),
            wall_time_seconds=time.perf_counter() - started,
        )
        stored = None
        if record:
            success, stored, error = SeparationService.record_run(result, manifest)
            if not success:
                logger.warning(f"Run finished but was not recorded: {error}")
        return result, manifest, stored
