"""
Generate a seeded synthetic mixture for the separate and bench commands.

    python manage.py synth --sources 3 --dist uniform,uniform,laplacian --samples 100000 --seed 7

Writes mixed.csv (X = A·S), mixing.csv (A) and sources.csv (S) into --out-dir.
The same seed always produces byte-identical files.
"""
from argparse import ArgumentTypeError
from pathlib import Path
import logging

from django.core.management.base import BaseCommand, CommandError
from pydantic import ValidationError

from separation.exceptions import SeparationError
from separation.schemas import MixtureSpec
from separation.services.csv_io import write_matrix_csv, write_signals_csv
from separation.services.evaluation import generate_mixture

logger = logging.getLogger(__name__)


def source_count(value):
    n = int(value)
    if n < 2:
        raise ArgumentTypeError('at least 2 sources are required')
    return n


class Command(BaseCommand):
    help = 'Generate independent sources, a random mixing matrix and their mixture'

    def add_arguments(self, parser):
        parser.add_argument('--sources', type=source_count, required=True, help='Number of sources N (>= 2)')
        parser.add_argument(
            '--dist',
            default='uniform',
            help='Comma list of uniform, laplacian, gaussian, rademacher, two_point(p); one name applies to all sources'
        )
        parser.add_argument('--samples', type=int, default=100_000, help='Number of samples (default: 100000)')
        parser.add_argument('--cond', type=float, default=20.0, help='Bound on cond(A) (default: 20)')
        parser.add_argument('--seed', type=int, default=0, help='Random seed (default: 0)')
        parser.add_argument('--out-dir', type=Path, default=Path('.'), help='Output directory (default: .)')

    def handle(self, *args, **options):
        out_dir = options['out_dir']
        try:
            spec = MixtureSpec(
                n_sources=options['sources'],
                distributions=options['dist'],
                condition=options['cond'],
                samples=options['samples'],
                seed=options['seed'],
            )
            X, A, S = generate_mixture(spec)
        except (ValidationError, ValueError, SeparationError) as e:
            raise CommandError(str(e), returncode=1)

        write_signals_csv(out_dir / 'mixed.csv', X, [f'x{i + 1}' for i in range(X.channels)])
        write_matrix_csv(out_dir / 'mixing.csv', A)
        write_signals_csv(out_dir / 'sources.csv', S, [f's{i + 1}' for i in range(S.channels)])
        logger.info(f"Synthetic mixture written to {out_dir}")

        self.stdout.write(self.style.SUCCESS(
            f"Wrote {spec.n_sources} sources ({', '.join(spec.distributions)}) x {spec.samples} samples to {out_dir}"
        ))
