"""
Self-validation of the algebra, the derivatives and the Newton step.

    python manage.py check_separation --dims 2,3,5 --verbose
    python manage.py check_separation --dims 2,3,4 --seeds 20

Prints one pass/fail row per suite and dimension (per seed with --verbose) and
exits with code 1 if anything fails.
"""
from argparse import SUPPRESS
from collections import OrderedDict
import logging

from django.core.management.base import BaseCommand, CommandError

from separation.services.checks import DEFAULT_SEEDS, run_checks

logger = logging.getLogger(__name__)


def seed_list(value):
    """A count k (seeds 0..k−1) or an explicit comma list."""
    if ',' in value:
        seeds = [int(item) for item in value.split(',') if item.strip()]
    else:
        seeds = list(range(int(value)))
    if not seeds or any(seed < 0 for seed in seeds):
        raise ValueError(value)
    return seeds


def dimension_list(value):
    dims = [int(item) for item in value.split(',') if item.strip()]
    if not dims or any(n < 1 for n in dims):
        raise ValueError(value)
    return dims


class Command(BaseCommand):
    help = 'Verify vectorization identities, analytic gradients and Hessians, and fixed points'

    def add_arguments(self, parser):
        parser.add_argument('--dims', type=dimension_list, default=[2, 3, 5], help='Comma list of dimensions (default: 2,3,5)')
        parser.add_argument('--seeds', type=seed_list, default=list(DEFAULT_SEEDS), help='Seed count or comma list for the finite-difference suites (default: 0,1,2)')
        parser.add_argument('--verbose', action='store_true', help='One row per seed instead of one per suite')
        parser.add_argument('--inject-w-sign-flip', action='store_true', help=SUPPRESS)

    def handle(self, *args, **options):
        w_hook = (lambda W: -W) if options['inject_w_sign_flip'] else None
        results = run_checks(dims=options['dims'], seeds=options['seeds'], w_hook=w_hook)

        if options['verbose']:
            rows = [(f"{r.name} {r.detail}".strip(), r.dim, r.passed, r.max_error) for r in results]
        else:
            grouped = OrderedDict()
            for r in results:
                passed, worst = grouped.get((r.name, r.dim), (True, 0.0))
                grouped[(r.name, r.dim)] = (passed and r.passed, max(worst, r.max_error))
            rows = [(name, dim, passed, worst) for (name, dim), (passed, worst) in grouped.items()]

        width = max(len(row[0]) for row in rows) if rows else 10
        self.stdout.write(f"{'check':<{width}}  {'N':>3}  {'result':<6}  max_error")
        for name, dim, passed, worst in rows:
            status = self.style.SUCCESS('PASS  ') if passed else self.style.ERROR('FAIL  ')
            self.stdout.write(f"{name:<{width}}  {dim:>3}  {status}  {worst:.3e}")

        failed = [r for r in results if not r.passed]
        if failed:
            raise CommandError(f'{len(failed)} of {len(results)} checks failed', returncode=1)
        self.stdout.write(self.style.SUCCESS(f'All {len(results)} checks passed'))
