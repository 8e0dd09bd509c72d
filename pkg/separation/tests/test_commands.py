"""
Tests for the management commands.

Key Test Coverage:
- synth: output files, determinism, argument validation
- separate: output files, manifest contents, exit codes 0 / 1 / 2, --record
- separate on a random cond-20 mixture and, under Case II, around a Gaussian source
- check_separation: exit code 1 on an injected W sign flip, --seeds
- bench: result CSV
"""
from io import StringIO

import numpy as np
import pandas as pd
import pytest
from django.core.management import call_command
from django.core.management.base import CommandError

from separation.models import SeparationRun
from separation.schemas import MixtureSpec
from separation.services.csv_io import read_manifest, read_matrix_csv, write_signals_csv
from separation.services.evaluation import amari_index, generate_mixture, partial_amari_index
from separation.tests.conftest import NEAR_IDENTITY_MIXING


@pytest.fixture
def mixture_csv(tmp_path):
    """Near-identity mixture of two uniform sources written as a CSV; returns (path, A)."""
    spec = MixtureSpec(
        n_sources=2,
        distributions="uniform",
        mixing_matrix=NEAR_IDENTITY_MIXING,
        samples=20_000,
        seed=8,
    )
    X, A, _ = generate_mixture(spec)
    path = tmp_path / "mixed.csv"
    write_signals_csv(path, X, ["x1", "x2"])
    return path, A


@pytest.mark.integration
class TestSynthCommand:
    """Test `manage.py synth`."""

    def test_writes_three_files(self, tmp_path):
        out = StringIO()

        call_command(
            'synth', '--sources', '3', '--dist', 'uniform,uniform,laplacian',
            '--samples', '2000', '--seed', '7', '--out-dir', str(tmp_path), stdout=out,
        )

        mixed = pd.read_csv(tmp_path / 'mixed.csv').to_numpy().T
        sources = pd.read_csv(tmp_path / 'sources.csv').to_numpy().T
        mixing = read_matrix_csv(tmp_path / 'mixing.csv')
        assert mixed.shape == (3, 2000)
        assert np.allclose(mixed, mixing @ sources)
        assert 'Wrote 3 sources' in out.getvalue()

    def test_same_seed_same_bytes(self, tmp_path):
        for name in ('a', 'b'):
            call_command(
                'synth', '--sources', '2', '--samples', '500', '--seed', '4',
                '--out-dir', str(tmp_path / name), stdout=StringIO(),
            )

        for filename in ('mixed.csv', 'mixing.csv', 'sources.csv'):
            assert (tmp_path / 'a' / filename).read_bytes() == (tmp_path / 'b' / filename).read_bytes()

    def test_single_source_is_usage_error(self, tmp_path):
        with pytest.raises(CommandError, match='at least 2 sources'):
            call_command('synth', '--sources', '1', '--out-dir', str(tmp_path))

    def test_bad_distribution_is_error(self, tmp_path):
        with pytest.raises(CommandError) as excinfo:
            call_command('synth', '--sources', '2', '--dist', 'cauchy', '--out-dir', str(tmp_path))

        assert excinfo.value.returncode == 1


@pytest.mark.integration
class TestSeparateCommand:
    """Test `manage.py separate`."""

    def test_converged_run_writes_outputs(self, tmp_path, mixture_csv):
        path, A = mixture_csv
        out_dir = tmp_path / 'run'
        out = StringIO()

        call_command('separate', '--input', str(path), '--out-dir', str(out_dir), stdout=out)

        C = read_matrix_csv(out_dir / 'C.csv')
        assert C.shape == (2, 2)
        assert amari_index(C, A) < 0.05
        sources = pd.read_csv(out_dir / 'sources.csv')
        assert list(sources.columns) == ['y1', 'y2']
        assert len(sources) == 20_000
        trace = pd.read_csv(out_dir / 'trace.csv')
        phases = trace['phase'].tolist()
        warm = phases.count('warm_start')
        assert warm > 0
        assert phases[:warm] == ['warm_start'] * warm
        assert phases[-1] == 'newton'
        assert 'Converged' in out.getvalue()

        manifest = read_manifest(out_dir / 'manifest.json')
        assert manifest.trace_summary.converged
        assert manifest.config.cost_case == 'case1'
        assert manifest.config.tol_delta == 1e-8
        assert manifest.n_channels == 2 and manifest.n_samples == 20_000
        assert manifest.data_checksum.startswith('sha256:')
        assert set(manifest.outputs) == {'unmixing', 'sources', 'trace', 'manifest'}

    def test_case_two(self, tmp_path, mixture_csv):
        path, A = mixture_csv

        call_command('separate', '--input', str(path), '--case', '2', '--out-dir', str(tmp_path), stdout=StringIO())

        assert read_manifest(tmp_path / 'manifest.json').config.cost_case == 'case2'
        assert amari_index(read_matrix_csv(tmp_path / 'C.csv'), A) < 0.05

    def test_case_two_with_gaussian_source(self, tmp_path, gaussian_mixture):
        X, A, _ = gaussian_mixture
        path = tmp_path / 'gaussian.csv'
        write_signals_csv(path, X, ['x1', 'x2', 'x3'])

        call_command('separate', '--input', str(path), '--case', '2', '--out-dir', str(tmp_path), stdout=StringIO())

        assert read_manifest(tmp_path / 'manifest.json').trace_summary.converged
        assert partial_amari_index(read_matrix_csv(tmp_path / 'C.csv'), A, [0, 1]) < 0.1

    def test_random_mixture_separates(self, tmp_path, random_mixture):
        X, A, _ = random_mixture
        path = tmp_path / 'random.csv'
        write_signals_csv(path, X, ['x1', 'x2', 'x3'])

        call_command('separate', '--input', str(path), '--out-dir', str(tmp_path), stdout=StringIO())

        assert amari_index(read_matrix_csv(tmp_path / 'C.csv'), A) < 0.05

    def test_zero_iterations_exit_two(self, tmp_path, mixture_csv):
        path, _ = mixture_csv

        with pytest.raises(CommandError) as excinfo:
            call_command(
                'separate', '--input', str(path), '--max-iters', '0', '--out-dir', str(tmp_path), stdout=StringIO(),
            )

        assert excinfo.value.returncode == 2
        assert np.array_equal(read_matrix_csv(tmp_path / 'C.csv'), np.eye(2))
        assert not read_manifest(tmp_path / 'manifest.json').trace_summary.converged

    def test_missing_input_exit_one(self, tmp_path):
        with pytest.raises(CommandError) as excinfo:
            call_command('separate', '--input', str(tmp_path / 'absent.csv'), '--out-dir', str(tmp_path))

        assert excinfo.value.returncode == 1

    def test_invalid_warm_start_exit_one(self, tmp_path, mixture_csv):
        path, _ = mixture_csv

        with pytest.raises(CommandError) as excinfo:
            call_command('separate', '--input', str(path), '--warm-start', 'soon', '--out-dir', str(tmp_path))

        assert excinfo.value.returncode == 1

    def test_warm_start_and_no_center_recorded(self, tmp_path, mixture_csv):
        path, _ = mixture_csv

        call_command(
            'separate', '--input', str(path), '--warm-start', '5:0.05', '--no-center',
            '--out-dir', str(tmp_path), stdout=StringIO(),
        )

        manifest = read_manifest(tmp_path / 'manifest.json')
        assert manifest.config.center is False
        assert str(manifest.config.warm_start) == '5:0.05:0.0001'
        assert 1 <= manifest.trace_summary.warm_start_steps <= 5

    @pytest.mark.django_db
    def test_record_stores_run(self, tmp_path, mixture_csv):
        path, _ = mixture_csv

        call_command('separate', '--input', str(path), '--out-dir', str(tmp_path), '--record', stdout=StringIO())

        run = SeparationRun.objects.get()
        assert run.converged
        assert run.n_samples == 20_000
        assert run.manifest['config']['cost_case'] == 'case1'
        assert np.allclose(run.unmixing_matrix, read_matrix_csv(tmp_path / 'C.csv'))


@pytest.mark.integration
class TestCheckCommand:
    """Test `manage.py check_separation`."""

    def test_injected_sign_flip_fails(self):
        out = StringIO()

        with pytest.raises(CommandError) as excinfo:
            call_command('check_separation', '--dims', '2', '--inject-w-sign-flip', stdout=out)

        assert excinfo.value.returncode == 1
        assert 'FAIL' in out.getvalue()

    def test_seed_count_runs_every_seed(self):
        out = StringIO()

        call_command('check_separation', '--dims', '2', '--seeds', '2', '--verbose', stdout=out)

        assert 'seed=0' in out.getvalue()
        assert 'seed=1' in out.getvalue()
        assert 'seed=2' not in out.getvalue()

    def test_malformed_seeds_rejected(self):
        with pytest.raises(CommandError):
            call_command('check_separation', '--seeds', 'many', stdout=StringIO())

    @pytest.mark.slow
    def test_default_dimensions_pass(self):
        out = StringIO()

        call_command('check_separation', '--verbose', stdout=out)

        assert 'checks passed' in out.getvalue()


@pytest.mark.integration
class TestBenchCommand:
    def test_writes_csv(self, tmp_path):
        target = tmp_path / 'bench.csv'
        out = StringIO()

        call_command(
            'bench', '--grid', 'sources=2;samples=3000;cond=5;seeds=2', '--case', 'both',
            '--warm-start', 'off', '--out', str(target), stdout=out,
        )

        frame = pd.read_csv(target)
        assert len(frame) == 4
        assert set(frame['case']) == {'case1', 'case2'}
        assert 'median_amari' in out.getvalue()

    def test_bad_grid_exit_one(self, tmp_path):
        with pytest.raises(CommandError) as excinfo:
            call_command('bench', '--grid', 'colour=red', '--out', str(tmp_path / 'x.csv'))

        assert excinfo.value.returncode == 1
