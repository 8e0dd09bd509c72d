"""
Separate the channels of a CSV file.

    python manage.py separate --input mixed.csv --case 2 --out-dir runs/demo

Writes C.csv (N×N unmixing matrix), sources.csv (Y = C·X, samples × channels),
trace.csv (one row per iteration) and manifest.json into --out-dir.

Exit codes: 0 converged, 1 hard error, 2 iteration budget exhausted.
"""
from pathlib import Path
import logging
import time

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from pydantic import ValidationError

from separation.exceptions import SeparationError
from separation.schemas import SolverConfig
from separation.services.csv_io import (
    file_checksum,
    read_signals_csv,
    write_frame_csv,
    write_manifest,
    write_matrix_csv,
    write_signals_csv,
)
from separation.services.newton import run
from separation.services.runs import SeparationService, build_manifest

logger = logging.getLogger(__name__)

OUTPUT_FILES = {
    "unmixing": "C.csv",
    "sources": "sources.csv",
    "trace": "trace.csv",
    "manifest": "manifest.json",
}


class Command(BaseCommand):
    help = 'Estimate an unmixing matrix for a samples x channels CSV by Newton steps on the scaling coset'

    def add_arguments(self, parser):
        parser.add_argument('--input', required=True, type=Path, help='Samples x channels CSV with a header row')
        parser.add_argument('--case', choices=['1', '2'], default='1', help='Cost: 1 = sum of kurtoses, 2 = sum of squared excess kurtoses (default: 1)')
        parser.add_argument('--tol', type=float, default=None, help='Stop once |Δ| < tol (default: ICA_TOL_DELTA)')
        parser.add_argument('--max-iters', type=int, default=None, help='Newton iteration budget (default: ICA_MAX_ITERS)')
        parser.add_argument('--damping', choices=['none', 'halving'], default=None, help='Step damping (default: ICA_DAMPING)')
        parser.add_argument('--warm-start', default=None, help="Line-searched warm start '<steps>:<rate>[:<tol>]' or 'off' (default: ICA_WARM_START)")
        parser.add_argument('--no-center', action='store_true', help='Do not subtract channel means')
        parser.add_argument('--out-dir', type=Path, default=None, help='Output directory (default: ICA_RUNS_DIR/<input stem>)')
        parser.add_argument('--record', action='store_true', help='Also store the run in the database')

    def handle(self, *args, **options):
        input_path = options['input']
        out_dir = options['out_dir'] or Path(settings.ICA_RUNS_DIR) / input_path.stem

        try:
            cfg = SolverConfig.from_settings(
                cost_case=options['case'],
                tol_delta=options['tol'],
                max_iters=options['max_iters'],
                damping=options['damping'],
                warm_start=options['warm_start'],
                center=not options['no_center'],
            )
        except (ValidationError, ValueError) as e:
            raise CommandError(f'Invalid configuration: {e}', returncode=1)

        try:
            signals, names = read_signals_csv(input_path)
        except SeparationError as e:
            raise CommandError(str(e), returncode=1)

        self.stdout.write(
            f'Separating {signals.channels} channels x {signals.samples} samples '
            f'({cfg.cost_case}, tol {cfg.tol_delta:g}, max {cfg.max_iters} iterations)'
        )
        started = time.perf_counter()
        try:
            result = run(signals, cfg=cfg)
        except SeparationError as e:
            raise CommandError(str(e), returncode=1)
        elapsed = time.perf_counter() - started

        outputs = {key: str(out_dir / name) for key, name in OUTPUT_FILES.items()}
        write_matrix_csv(out_dir / OUTPUT_FILES['unmixing'], result.C_final)
        write_signals_csv(out_dir / OUTPUT_FILES['sources'], result.Y, [f'y{i + 1}' for i in range(len(names))])
        write_frame_csv(out_dir / OUTPUT_FILES['trace'], result.trace.to_frame())
        manifest = build_manifest(
            result,
            cfg,
            signals,
            data_checksum=file_checksum(input_path),
            wall_time_seconds=elapsed,
            input_path=input_path,
            outputs=outputs,
        )
        write_manifest(out_dir / OUTPUT_FILES['manifest'], manifest)

        if options['record']:
            success, record, error = SeparationService.record_run(result, manifest)
            if success:
                self.stdout.write(f'Recorded run {record.id}')
            else:
                self.stdout.write(self.style.WARNING(error))

        summary = manifest.trace_summary
        if result.error:
            raise CommandError(f'Separation failed: {result.error} (outputs in {out_dir})', returncode=1)
        if not result.converged:
            self.stdout.write(self.style.WARNING(
                f'Not converged after {summary.iterations} iterations '
                f'(last |Δ| {summary.final_delta_norm if summary.final_delta_norm is not None else "n/a"})'
            ))
            raise CommandError('Iteration budget exhausted', returncode=2)

        order = f'{summary.convergence_order:.2f}' if summary.convergence_order is not None else 'n/a'
        self.stdout.write(self.style.SUCCESS(
            f'Converged in {summary.iterations} iterations (|Δ| {summary.final_delta_norm:.2e}, order {order}); '
            f'outputs in {out_dir}'
        ))
