"""
Tests for the Newton iteration, the run loop and its diagnostics.

Key Test Coverage:
- step: zero step at a fixed point, damping by halving, determinant preserved,
  damping keeps the solved direction, rejected steps, frozen Gaussian rows
- merit_point / BacktrackingLineSearch / warm_start: gradient against finite
  differences, Armijo decrease, stalls, row normalization
- run: convergence on near-identity and random mixtures, max_iters = 0, warm
  start, gradient fallback, failure reporting, left invariance
- convergence_order: quadratic/linear sequences, window handling, runs split by
  non-Newton records, a perturbed solution converging quadratically
- coset_coordinate: recovers the zero-diagonal logarithm, rejects non-real logs
"""
from dataclasses import replace

import numpy as np
import pytest
from scipy.linalg import expm, logm

from separation.exceptions import (
    ConfigurationError,
    DimensionError,
    IllConditionedSystemError,
    StepRejectedError,
)
from separation.schemas import MixtureSpec, SolverConfig
from separation.services import newton
from separation.services.cost_kurtosis import KurtosisCost, get_cost_model
from separation.services.evaluation import amari_index, fd_gradient, generate_mixture, partial_amari_index
from separation.services.moments import center, estimate_moments
from separation.services.newton import (
    PHASE_FALLBACK,
    PHASE_NEWTON,
    PHASE_WARM_START,
    BacktrackingLineSearch,
    IterationRecord,
    IterationTrace,
    MeritPoint,
    convergence_order,
    coordinate_convergence_order,
    coset_coordinate,
    evaluate,
    gradient_step,
    hessian_at,
    merit_point,
    normalize_rows,
    run,
    scaled_stationarity,
    step,
    warm_start,
)
from separation.tests.factories import SolverConfigFactory


class ReversedKurtosisCost(KurtosisCost):
    """Case I model whose solved step points the wrong way."""

    def solve_delta(self, *args, **kwargs):
        solved = super().solve_delta(*args, **kwargs)
        return replace(solved, delta=-solved.delta)


def _record(t, phase, delta_norm):
    return IterationRecord(
        t=t, phase=phase, delta_norm=delta_norm, cost=0.0,
        system_condition=None, damping_halvings=0, stationarity_norm=0.0,
    )


def _squares(C):
    return MeritPoint(C=C, value=float(np.sum(C ** 2)), gradient=2.0 * C, moments=None)


def _converged_unmixing(x, case="case1"):
    result = run(x, cfg=SolverConfigFactory(cost_case=case))
    assert result.converged, result.error
    return result.C_final


def _perturbation(rng, n, size):
    B = rng.standard_normal((n, n))
    np.fill_diagonal(B, 0.0)
    return size * B / np.linalg.norm(B)


@pytest.mark.unit
class TestStep:
    """Test a single Newton step."""

    def test_zero_step_at_independent_data(self, independent_signals):
        cfg = SolverConfigFactory()
        C = np.eye(2)

        C_next, record = step(C, independent_signals, cfg)

        assert record.delta_norm == 0.0
        assert record.phase == PHASE_NEWTON
        assert record.stationarity_norm == 0.0
        assert np.allclose(C_next, C, rtol=0, atol=1e-15)

    def test_step_preserves_determinant(self, uniform_mixture):
        x, _, _ = uniform_mixture
        x = center(x)
        C = np.array([[1.0, 0.1], [-0.2, 0.9]])

        C_next, record = step(C, x, SolverConfigFactory())

        assert record.delta_norm > 0
        assert np.linalg.det(C_next) == pytest.approx(np.linalg.det(C), rel=1e-12)

    def test_halving_caps_the_step(self, uniform_mixture):
        x, _, _ = uniform_mixture
        cfg = SolverConfigFactory(max_step_norm=1e-3, tol_delta=1e-9)

        _, record = step(np.eye(2), center(x), cfg)

        assert record.damping_halvings > 0
        assert record.delta_norm <= 1e-3

    def test_halving_keeps_the_solved_direction(self, uniform_mixture):
        x, _, _ = uniform_mixture
        x = center(x)
        C = np.eye(2)
        model = get_cost_model("case1")
        current = evaluate(C, x, model)
        solved = model.solve_delta(current.stats, current.moments).delta

        C_next, record = step(C, x, SolverConfigFactory(max_step_norm=1e-2, tol_delta=1e-9))
        applied = np.real(logm(C_next @ np.linalg.inv(C)))

        assert record.damping_halvings > 0
        assert np.allclose(applied * 2.0 ** record.damping_halvings, solved, rtol=1e-6, atol=1e-9)

    def test_no_damping_leaves_step_alone(self, mixed_mixture):
        x, _, _ = mixed_mixture
        cfg = SolverConfigFactory(max_step_norm=1e-3, tol_delta=1e-9, damping="none")

        _, record = step(np.eye(3), center(x), cfg)

        assert record.damping_halvings == 0

    def test_step_raising_the_residual_is_rejected(self, uniform_mixture):
        x, _, _ = uniform_mixture

        with pytest.raises(StepRejectedError) as excinfo:
            step(np.eye(2), center(x), SolverConfigFactory(), model=ReversedKurtosisCost())

        assert excinfo.value.halvings == newton.MERIT_HALVINGS
        assert excinfo.value.trial >= excinfo.value.residual

    def test_step_near_solution_shrinks_the_next_step(self, uniform_mixture, rng):
        x, _, _ = uniform_mixture
        x = center(x)
        C_star = _converged_unmixing(x)
        C = expm(_perturbation(rng, 2, 1e-3)) @ C_star
        cfg = SolverConfigFactory()

        C_next, first = step(C, x, cfg)
        _, second = step(C_next, x, cfg, t=2)

        assert first.delta_norm > 1e-5
        assert second.delta_norm < first.delta_norm


@pytest.mark.unit
class TestScaledStationarity:
    def test_invariant_to_row_scaling(self, mixed_mixture):
        x, _, _ = mixed_mixture
        x = center(x)
        model = get_cost_model("case1")
        C = np.eye(3)
        D = np.diag([3.0, 0.2, 1.7])

        base = evaluate(C, x, model)
        scaled = evaluate(D @ C, x, model)

        assert scaled.stationarity == pytest.approx(base.stationarity, rel=1e-10)

    def test_frozen_columns_are_left_out(self):
        S = np.array([[0.0, 1.0], [2.0, 0.0]])

        assert scaled_stationarity(S, np.ones(2)) == pytest.approx(np.sqrt(5.0))
        assert scaled_stationarity(S, np.ones(2), frozen=np.array([True, False])) == pytest.approx(1.0)


@pytest.mark.unit
class TestMerit:
    """Test the warm-start merit, its line search and the warm-start phase."""

    @pytest.mark.parametrize("case", ["case1", "case2"])
    def test_gradient_matches_finite_differences(self, mixed_mixture, case):
        x, _, _ = mixed_mixture
        x = center(x)
        model = get_cost_model(case)
        C = normalize_rows(np.eye(3), x)

        point = merit_point(C, x, model, weight=1.0)
        numeric = fd_gradient(lambda B, data: merit_point(B, data, model, 1.0).value, C, x).data
        analytic = point.gradient.flatten(order="F")

        assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-7)

    def test_collinear_rows_have_infinite_merit(self, uniform_mixture):
        x, _, _ = uniform_mixture
        C = np.array([[1.0, 0.5], [2.0, 1.0]])

        assert merit_point(C, center(x), get_cost_model("case1"), 1.0).value == np.inf

    def test_line_search_takes_armijo_step(self):
        search = BacktrackingLineSearch(initial_step_size=1.0)
        point = _squares(np.ones((2, 2)))

        size, new_point = search.search(_squares, lambda C, d: C + d, point, -point.gradient, -16.0)

        assert size == pytest.approx(1.0)
        assert new_point.value == pytest.approx(1.0)

    def test_line_search_reuses_last_decrease(self):
        search = BacktrackingLineSearch(initial_step_size=1.0)
        point = _squares(np.ones((2, 2)))
        _, point = search.search(_squares, lambda C, d: C + d, point, -point.gradient, -16.0)

        size, new_point = search.search(_squares, lambda C, d: C + d, point, -point.gradient, -4.0)

        assert size == pytest.approx(1.5)
        assert new_point.value == pytest.approx(0.25)

    def test_line_search_without_decrease_stays_put(self):
        search = BacktrackingLineSearch(initial_step_size=1.0, max_iterations=5)
        flat = lambda C: MeritPoint(C=C, value=1.0, gradient=np.ones_like(C), moments=None)  # noqa: E731
        point = flat(np.zeros((2, 2)))

        size, new_point = search.search(flat, lambda C, d: C + d, point, -point.gradient, -4.0)

        assert size == 0.0
        assert new_point is point

    def test_line_search_respects_step_cap(self):
        search = BacktrackingLineSearch(initial_step_size=10.0, max_step_norm=0.5)
        point = _squares(np.ones((2, 2)))

        size, _ = search.search(_squares, lambda C, d: C + d, point, -point.gradient, -16.0)

        assert size <= 0.5

    def test_gradient_step_normalizes_rows(self, mixed_mixture):
        x, _, _ = mixed_mixture
        x = center(x)

        C_next, record = gradient_step(np.eye(3), x, SolverConfigFactory())

        assert record.phase == PHASE_FALLBACK
        assert record.delta_norm > 0
        assert np.allclose(np.mean(x.apply(C_next).data ** 2, axis=1), 1.0, rtol=1e-12)

    def test_warm_start_lowers_merit_and_residual(self, mixed_mixture):
        x, _, _ = mixed_mixture
        x = center(x)
        model = get_cost_model("case1")
        cfg = SolverConfigFactory(warm_start="50:0.5")
        trace = IterationTrace()

        C = warm_start(np.eye(3), x, cfg, model, trace, [])

        start = merit_point(normalize_rows(np.eye(3), x), x, model, 1.0)
        end = merit_point(C, x, model, 1.0)
        assert 1 <= len(trace) <= 50
        assert all(r.phase == PHASE_WARM_START for r in trace)
        assert end.value < start.value
        assert evaluate(C, x, model).stationarity < evaluate(np.eye(3), x, model).stationarity


@pytest.mark.unit
class TestRun:
    """Test the full run loop."""

    def test_independent_data_converges_immediately(self, independent_signals_3):
        result = run(independent_signals_3, cfg=SolverConfigFactory())

        assert result.converged
        assert result.newton_iterations == 1
        assert result.error is None
        assert np.allclose(result.C_final, np.eye(3), rtol=0, atol=1e-15)

    def test_zero_iterations_returns_start(self, uniform_mixture):
        x, _, _ = uniform_mixture
        C0 = np.array([[2.0, 0.5], [0.1, 1.0]])

        result = run(x, C0=C0, cfg=SolverConfigFactory(max_iters=0, warm_start="10:0.5"))

        assert not result.converged
        assert result.error is None
        assert len(result.trace) == 0
        assert np.array_equal(result.C_final, C0)

    def test_wrong_c0_shape_rejected(self, uniform_mixture):
        x, _, _ = uniform_mixture

        with pytest.raises(DimensionError):
            run(x, C0=np.eye(3), cfg=SolverConfigFactory())

    def test_determinant_constant_along_newton_steps(self, uniform_mixture):
        x, _, _ = uniform_mixture

        result = run(x, cfg=SolverConfigFactory(keep_history=True))

        newton_steps = [i for i, r in enumerate(result.trace) if r.phase == PHASE_NEWTON]
        assert newton_steps
        for i in newton_steps:
            before, after = result.history[i], result.history[i + 1]
            assert np.linalg.det(after) == pytest.approx(np.linalg.det(before), rel=1e-10)

    def test_sources_returned_are_c_times_centered_x(self, uniform_mixture):
        x, _, _ = uniform_mixture

        result = run(x, cfg=SolverConfigFactory(max_iters=3))

        assert np.allclose(result.Y.data, result.C_final @ center(x).data)

    def test_warm_start_precedes_newton(self, uniform_mixture):
        x, _, _ = uniform_mixture
        cfg = SolverConfigFactory(warm_start="5:0.1:1e-12", max_iters=1)

        result = run(x, cfg=cfg)

        phases = [r.phase for r in result.trace]
        steps = result.warm_start_steps
        assert 1 <= steps <= 5
        assert phases[:steps] == [PHASE_WARM_START] * steps
        assert len(phases) == steps + 1
        assert phases[-1] in (PHASE_NEWTON, PHASE_FALLBACK)
        assert result.newton_iterations == 1

    def test_fallback_then_failure(self, uniform_mixture, monkeypatch):
        """Every Newton system ill-conditioned: max_fallbacks gradient steps, then a failed result."""
        x, _, _ = uniform_mixture

        def ill_conditioned(*args, **kwargs):
            raise IllConditionedSystemError(1e20, 1e12)

        monkeypatch.setattr(newton, "_newton_step", ill_conditioned)

        result = run(x, cfg=SolverConfigFactory(max_fallbacks=2))

        assert not result.converged
        assert "ill-conditioned" in result.error
        assert result.fallbacks == 2
        assert [r.phase for r in result.trace] == [PHASE_FALLBACK, PHASE_FALLBACK]

    def test_rejected_steps_fall_back(self, uniform_mixture, monkeypatch):
        x, _, _ = uniform_mixture
        monkeypatch.setattr(newton, "get_cost_model", lambda case: ReversedKurtosisCost())

        result = run(x, cfg=SolverConfigFactory(max_fallbacks=3))

        assert not result.converged
        assert "rejected" in result.error
        assert result.fallbacks == 3

    def test_singular_c0_rejected(self, uniform_mixture):
        x, _, _ = uniform_mixture

        with pytest.raises(ConfigurationError):
            run(x, C0=np.array([[1.0, 2.0], [0.5, 1.0]]), cfg=SolverConfigFactory())

    @pytest.mark.parametrize("warm", [None, "20:0.5"])
    def test_left_invariance(self, uniform_mixture, warm):
        """Running on M⁻¹X from C0·M retraces the run on X from C0."""
        x, _, _ = uniform_mixture
        M = np.array([[1.5, 0.4], [-0.3, 0.8]])
        cfg = SolverConfigFactory(warm_start=warm)

        base = run(x, C0=np.eye(2), cfg=cfg)
        moved = run(x.apply(np.linalg.inv(M)), C0=M, cfg=cfg)

        assert [r.phase for r in moved.trace] == [r.phase for r in base.trace]
        assert np.allclose([r.cost for r in moved.trace], [r.cost for r in base.trace], rtol=1e-8)
        assert np.allclose(moved.C_final @ np.linalg.inv(M), base.C_final, rtol=1e-6, atol=1e-8)

    @pytest.mark.integration
    @pytest.mark.parametrize("case", ["case1", "case2"])
    def test_near_identity_mixture_separates(self, uniform_mixture, case):
        x, A, _ = uniform_mixture

        result = run(x, cfg=SolverConfigFactory(cost_case=case))

        assert result.converged, result.error
        assert result.trace.records[-1].delta_norm < 1e-8
        assert amari_index(result.C_final, A) < 0.05

    @pytest.mark.integration
    @pytest.mark.parametrize("case", ["case1", "case2"])
    def test_random_mixture_separates_with_default_config(self, random_mixture, case):
        x, A, _ = random_mixture

        result = run(x, cfg=SolverConfig.from_settings(cost_case=case))

        assert result.converged, result.error
        assert result.warm_start_steps > 0
        assert result.newton_iterations <= 50
        assert amari_index(result.C_final, A) < 0.05

    @pytest.mark.integration
    def test_case2_separates_around_a_gaussian_source(self, gaussian_mixture):
        x, A, _ = gaussian_mixture

        result = run(x, cfg=SolverConfig.from_settings(cost_case="case2"))

        assert result.converged, result.error
        assert partial_amari_index(result.C_final, A, [0, 1]) < 0.1

    @pytest.mark.integration
    def test_converged_point_is_stationary(self, uniform_mixture):
        x, _, _ = uniform_mixture

        result = run(x, cfg=SolverConfigFactory())
        Q = get_cost_model("case1").stats(estimate_moments(result.Y)).Q

        assert np.max(np.abs(Q)) < 1e-6


@pytest.mark.unit
class TestConvergenceOrder:
    """Test convergence_order fitting."""

    def test_quadratic_sequence(self):
        norms = [1e-3]
        for _ in range(5):
            norms.append(100.0 * norms[-1] ** 2)

        assert convergence_order(norms) == pytest.approx(2.0, abs=1e-9)

    def test_linear_sequence(self):
        norms = [1e-3 * 2.0 ** -t for t in range(10)]

        assert convergence_order(norms) == pytest.approx(1.0, abs=1e-9)

    def test_custom_window(self):
        norms = [10.0 ** -(2 ** t) for t in range(6)]

        assert convergence_order(norms) is None
        assert convergence_order(norms, window=(1e-17, 1.0)) == pytest.approx(2.0, abs=1e-9)

    def test_three_values_are_enough(self):
        assert convergence_order([1e-3, 1e-6, 1e-12]) == pytest.approx(2.0, abs=1e-9)

    def test_too_few_points(self):
        assert convergence_order([1e-3, 1e-6]) is None

    def test_pairs_do_not_straddle_fallbacks(self):
        trace = IterationTrace()
        for t, (phase, norm) in enumerate(
            [(PHASE_NEWTON, 1e-3), (PHASE_FALLBACK, 1e-3), (PHASE_NEWTON, 1e-4), (PHASE_NEWTON, 1e-8)], start=1
        ):
            trace.append(_record(t, phase, norm))

        assert trace.newton_runs() == [[1e-3], [1e-4, 1e-8]]
        assert convergence_order(trace) is None
        assert convergence_order(trace.delta_norms()) is not None

    def test_fit_spans_separate_newton_runs(self):
        trace = IterationTrace()
        phases = [
            (PHASE_WARM_START, 0.5),
            (PHASE_NEWTON, 1e-3),
            (PHASE_NEWTON, 1e-6),
            (PHASE_FALLBACK, 1e-2),
            (PHASE_NEWTON, 1e-4),
            (PHASE_NEWTON, 1e-8),
        ]
        for t, (phase, norm) in enumerate(phases, start=1):
            trace.append(_record(t, phase, norm))

        assert convergence_order(trace) == pytest.approx(2.0, abs=1e-9)

    @pytest.mark.integration
    def test_perturbed_solution_converges_quadratically(self, uniform_mixture, rng):
        x, _, _ = uniform_mixture
        C_star = _converged_unmixing(center(x))
        C0 = expm(_perturbation(rng, 2, 2e-3)) @ C_star

        result = run(x, C0=C0, cfg=SolverConfigFactory(damping="none"))

        assert result.converged, result.error
        assert result.fallbacks == 0
        assert result.convergence_order is not None
        assert 1.7 <= result.convergence_order <= 2.3


@pytest.mark.unit
class TestTraceFrame:
    def test_to_frame_columns(self, uniform_mixture):
        x, _, _ = uniform_mixture
        result = run(x, cfg=SolverConfigFactory(max_iters=2))

        frame = result.trace.to_frame()

        assert list(frame.columns) == [
            "t", "phase", "delta_norm", "cost", "system_condition", "damping_halvings", "stationarity_norm",
        ]
        assert frame["t"].tolist() == [1, 2]

    def test_empty_trace_frame(self):
        assert IterationTrace().to_frame().empty


@pytest.mark.unit
class TestCosetCoordinate:
    """Test the zero-diagonal logarithmic coordinate."""

    def test_recovers_zero_diagonal_logarithm(self, rng):
        target = rng.standard_normal((3, 3)) + 3.0 * np.eye(3)
        X0 = 0.1 * rng.standard_normal((3, 3))
        np.fill_diagonal(X0, 0.0)

        X = coset_coordinate(expm(X0) @ target, target)

        assert np.allclose(X, -X0, atol=1e-10)

    def test_scaled_start_lands_in_the_coset(self, rng):
        target = rng.standard_normal((3, 3)) + 3.0 * np.eye(3)
        C = np.diag([2.0, 0.5, 1.5]) @ target + 0.05 * rng.standard_normal((3, 3))

        X = coset_coordinate(C, target)

        assert X is not None
        assert np.array_equal(np.diag(X), np.zeros(3))
        D = expm(X) @ C @ np.linalg.inv(target)
        assert np.allclose(D, np.diag(np.diag(D)), atol=1e-8)
        assert np.all(np.diag(D) > 0)

    def test_non_real_logarithm_returns_none(self):
        target = np.eye(2)
        C = np.diag([-1.0, 1.0])

        assert coset_coordinate(C, target) is None

    def test_coordinate_order_needs_history(self):
        assert coordinate_convergence_order([np.eye(2)]) is None


@pytest.mark.unit
class TestHessianAt:
    def test_shape_and_finiteness(self, mixed_mixture):
        x, _, _ = mixed_mixture

        H = hessian_at(np.eye(3), center(x), "case2")

        assert H.shape == (6, 6)
        assert np.all(np.isfinite(H))


@pytest.mark.slow
@pytest.mark.integration
class TestWarmStartGrid:
    @pytest.mark.parametrize("seed", range(10))
    def test_warm_start_shrinks_stationarity(self, seed):
        spec = MixtureSpec(n_sources=3, distributions="uniform", condition=20.0, samples=100_000, seed=seed)
        x, _, _ = generate_mixture(spec)

        result = run(x, cfg=SolverConfig.from_settings())

        warm = result.trace.phase_records(PHASE_WARM_START)
        after = next(r for r in result.trace if r.phase != PHASE_WARM_START)
        assert warm
        assert after.stationarity_norm <= 0.1 * warm[0].stationarity_norm
