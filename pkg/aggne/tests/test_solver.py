"""Unit test script for the functions in solver.py."""

from __future__ import annotations

import unittest

import numpy as np
from testfixtures import LogCapture

from aggne.game import (
    CallbackAggregativeGame,
    GameConstants,
    GameDims,
    estimate_constants,
    ev_game,
    paper_ev_game,
    pseudo_gradient,
    social_gradient,
    zero_game,
)
from aggne.graph import MixingMatrix, Topology, build_metropolis, random_connected_topology
from aggne.oracle import solve_optimal_ne_qp
from aggne.solver import StepSchedule, gamma0_safe_bound, init_state, iterate, run, step
from aggne.utils import logger, set_log_level
from aggne.utils.errors import (
    DegenerateSpectralGap,
    DimensionMismatch,
    NonFiniteValue,
    ValidationError,
)
from aggne.utils.generate import get_random_decisions, get_random_quadratic_game

set_log_level(logger, "DEBUG")


def single_agent_mixing() -> MixingMatrix:
    return MixingMatrix.from_weights([[1.0]])


class StepScheduleTestCase(unittest.TestCase):
    """Test class for the step-size schedule."""

    def test_paper_preset(self):
        schedule = StepSchedule.paper()
        self.assertEqual(schedule.violated_rules(), [])
        schedule.check()
        self.assertAlmostEqual(float(schedule.gamma(3)), 0.05)
        self.assertAlmostEqual(float(schedule.eta(0)), 0.1)

    def test_b_above_a(self):
        schedule = StepSchedule(gamma0=0.1, a=0.4, eta0=0.1, b=0.5)
        with self.assertRaises(ValidationError) as ctx:
            schedule.check()
        self.assertIn("allow_unsafe_gamma0", str(ctx.exception))

    def test_sum_not_below_one(self):
        schedule = StepSchedule(gamma0=0.1, a=0.6, eta0=0.1, b=0.5)
        self.assertEqual(len(schedule.violated_rules()), 1)

    def test_override_warns(self):
        schedule = StepSchedule(gamma0=0.1, a=0.4, eta0=0.1, b=0.5)
        with LogCapture("aggne") as log:
            schedule.check(allow_unsafe=True)
            log.check((
                "aggne",
                "WARNING",
                "Step-size schedule breaks the decay rules: b=0.5 must be smaller than a=0.4. "
                "Proceeding because allow_unsafe_gamma0 is set.",
            ))

    def test_not_positive(self):
        with self.assertRaises(ValidationError):
            StepSchedule(gamma0=0.0, a=0.5, eta0=0.1, b=0.4)

    def test_not_finite(self):
        with self.assertRaises(ValidationError):
            StepSchedule(gamma0=0.1, a=np.nan, eta0=0.1, b=0.4)

    def test_monotone_decay(self):
        schedule = StepSchedule.paper()
        ks = np.arange(1000)
        gamma, eta = schedule.gamma(ks), schedule.eta(ks)
        self.assertTrue(np.all(np.diff(gamma) < 0))
        self.assertTrue(np.all(np.diff(eta) < 0))
        self.assertTrue(np.all(np.diff(gamma / eta) < 0))

    def test_gamma_cap(self):
        schedule = StepSchedule.paper()
        k = 10
        expected = abs(1 - schedule.eta(k - 1) / schedule.eta(k))
        self.assertAlmostEqual(float(schedule.gamma_cap(k)), float(expected))
        expected = abs(1 - schedule.eta(3) / schedule.eta(k))
        self.assertAlmostEqual(float(schedule.gamma_cap(k, 3)), float(expected))

    def test_gamma_cap_below_inverse_round(self):
        for schedule in (StepSchedule.paper(), StepSchedule(gamma0=0.05, a=0.6, eta0=1.0, b=0.3)):
            ks = np.arange(1, 10_001)
            caps = schedule.gamma_cap(ks)
            self.assertTrue(np.all(caps <= 1.0 / ks + 1e-15))
            self.assertTrue(np.all(caps <= schedule.b / ks + 1e-15))

    def test_contraction_sum_diverges(self):
        schedule = StepSchedule.paper()
        mu_g = estimate_constants(paper_ev_game()).mu_g
        ks = np.arange(1_000_000)
        partial = np.cumsum(0.5 * schedule.gamma(ks) * schedule.eta(ks) * mu_g)
        scale = 0.5 * schedule.gamma0 * schedule.eta0 * mu_g
        expected = scale * np.cumsum((ks + 1.0) ** -(schedule.a + schedule.b))
        np.testing.assert_allclose(partial, expected, rtol=1e-10)
        self.assertTrue(np.all(np.diff(partial) > 0))
        power = 1 - schedule.a - schedule.b
        for k in (100, 10_000, 999_999):
            lower = scale * ((k + 2) ** power - 1) / power
            self.assertGreaterEqual(partial[k], lower)
        self.assertGreater(partial[-1], 2 * partial[999])

    def test_with_gamma0(self):
        schedule = StepSchedule.paper().with_gamma0(0.01)
        self.assertEqual(schedule.gamma0, 0.01)
        self.assertEqual(schedule.b, 0.4)


class SafeBoundTestCase(unittest.TestCase):
    """Test class for gamma0_safe_bound."""

    def test_fixture(self):
        constants = GameConstants(l_f=1.0, l_1=1.0, l_2=1.0, mu_g=1.0)
        bound = gamma0_safe_bound(constants, eta0=0.1, rho=0.5, norm_w_minus_i=1.0)
        lip = 1.1
        c1 = 0.01 * lip + 0.8 * lip**2
        c2 = 0.005 + 0.5 * lip**2 + 0.2 * lip + 0.1 * lip
        c3 = 0.125 * 0.25
        self.assertAlmostEqual(bound.c1, c1)
        self.assertAlmostEqual(bound.c2, c2)
        self.assertAlmostEqual(bound.c3, c3)
        root = (-c2 + np.sqrt(c2**2 + 4 * c1 * c3 * 0.1)) / (2 * c1)
        expected = (1 / lip, 0.5 / (0.1 + 2 * lip), 0.5 / (0.1 + 0.4), root)
        np.testing.assert_allclose(bound.per_bound, expected, rtol=1e-10)
        self.assertAlmostEqual(bound.gamma0_max, min(expected))

    def test_decoupled_limit(self):
        constants = GameConstants(l_f=2.0, l_1=1.5, l_2=0.0, mu_g=1.0)
        bound = gamma0_safe_bound(constants, eta0=0.1, rho=0.3, norm_w_minus_i=1.2)
        self.assertEqual(bound.c1, 0.0)
        self.assertAlmostEqual(bound.per_bound[3], bound.c3 * 0.1 / bound.c2)

    def test_positive(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            l_1 = rng.uniform(0.5, 3.0)
            constants = GameConstants(
                l_f=rng.uniform(0.0, 3.0),
                l_1=l_1,
                l_2=rng.uniform(0.0, 1.0),
                mu_g=rng.uniform(0.1, 1.0) * l_1,
            )
            eta0 = rng.uniform(0.01, 1.0)
            bound = gamma0_safe_bound(constants, eta0, rng.uniform(0.0, 0.99), rng.uniform(0, 2))
            self.assertTrue(all(candidate > 0 for candidate in bound.per_bound))
            self.assertLessEqual(bound.gamma0_max, 1 / constants.regularized_lipschitz(eta0))

    def test_degenerate_gap(self):
        constants = GameConstants(l_f=1.0, l_1=1.0, l_2=1.0, mu_g=1.0)
        with self.assertRaises(DegenerateSpectralGap):
            gamma0_safe_bound(constants, eta0=0.1, rho=1.0, norm_w_minus_i=1.0)

    def test_check(self):
        constants = GameConstants(l_f=1.0, l_1=1.0, l_2=1.0, mu_g=1.0)
        bound = gamma0_safe_bound(constants, eta0=0.1, rho=0.5, norm_w_minus_i=1.0)
        bound.check(0.5 * bound.gamma0_max)
        with self.assertRaises(ValidationError):
            bound.check(2 * bound.gamma0_max)
        with LogCapture("aggne") as log:
            bound.check(1.0, allow_unsafe=True)
            log.check((
                "aggne",
                "WARNING",
                f"gamma0=1.0 exceeds the safe bound gamma0_max={bound.gamma0_max:.6g}. "
                "Proceeding because allow_unsafe_gamma0 is set.",
            ))


class InitStateTestCase(unittest.TestCase):
    """Test class for init_state."""

    def test_zero_start(self):
        state = init_state(paper_ev_game(), np.zeros((5, 3)))
        self.assertEqual(state.k, 0)
        np.testing.assert_array_equal(state.v, np.zeros((5, 3)))
        np.testing.assert_array_equal(state.y, np.zeros((5, 3)))

    def test_constant_grad2_g(self):
        const = np.array([1.0, -2.0])

        def zero(i, x_i, y):  # noqa: ARG001
            return np.zeros(2)

        def constant(i, x_i, y):  # noqa: ARG001
            return const

        game = CallbackAggregativeGame(GameDims(3, 2), zero, zero, zero, constant)
        state = init_state(game, np.ones((3, 2)))
        np.testing.assert_array_equal(state.y, np.tile(const, (3, 1)))

    def test_random_start(self):
        game = paper_ev_game()
        x0 = get_random_decisions(5, 3, seed=7)
        state = init_state(game, x0)
        expected = np.stack([game.c2[i].T @ x0[i] for i in range(5)])
        np.testing.assert_allclose(state.y, expected, atol=1e-15)
        np.testing.assert_array_equal(state.v, x0)
        self.assertEqual(state.averaging_error(), (0.0, 0.0))

    def test_stacked_start(self):
        state = init_state(paper_ev_game(), np.zeros(15))
        self.assertEqual(state.x.shape, (5, 3))

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionMismatch):
            init_state(paper_ev_game(), np.zeros((3, 5)))


class StepTestCase(unittest.TestCase):
    """Test class for a single round of the distributed iteration."""

    def test_zero_game_fixed_point(self):
        game = zero_game(4, 2)
        w = build_metropolis(Topology.path(4))
        x0 = np.tile([0.3, -1.2], (4, 1))
        state = init_state(game, x0)
        for _ in range(5):
            state = step(state, game, w, StepSchedule.paper())
        np.testing.assert_array_equal(state.x, x0)
        np.testing.assert_allclose(state.v, x0, rtol=0, atol=1e-14)
        np.testing.assert_array_equal(state.y, np.zeros((4, 2)))
        self.assertEqual(state.k, 5)

    def test_zero_game_mixes_trackers(self):
        game = zero_game(4, 2)
        w = build_metropolis(Topology.path(4))
        x0 = get_random_decisions(4, 2)
        state = step(init_state(game, x0), game, w, StepSchedule.paper())
        np.testing.assert_array_equal(state.x, x0)
        np.testing.assert_allclose(state.v, w.w @ x0, atol=1e-14)
        np.testing.assert_allclose(state.v.mean(axis=0), x0.mean(axis=0), atol=1e-14)

    def test_scalar_hand_computation(self):
        game = ev_game(n=1, m=1, d=[1.0], c1=[[0.0]], b1=[0.0], u=[[1.0]], c2=[[[0.0]]], b2=[0])
        schedule = StepSchedule(gamma0=0.2, a=0.5, eta0=0.1, b=0.4)
        state = step(init_state(game, [[2.0]]), game, single_agent_mixing(), schedule)
        # x+ = x - gamma ((x - 1) + eta x)
        self.assertAlmostEqual(state.x[0, 0], 2.0 - 0.2 * (1.0 + 0.1 * 2.0))
        self.assertAlmostEqual(state.v[0, 0], state.x[0, 0])

    def test_paper_first_step(self):
        game = paper_ev_game()
        w = build_metropolis(random_connected_topology(5, 0.5, 42))
        state = step(init_state(game, np.zeros((5, 3))), game, w, StepSchedule.paper())
        expected = np.stack([-0.1 * (game.b1 - game.d[i] + 0.1 * game.b2) for i in range(5)])
        np.testing.assert_allclose(state.x, expected, atol=1e-14)

    def test_input_not_modified(self):
        game = paper_ev_game()
        w = build_metropolis(Topology.complete(5))
        state = init_state(game, get_random_decisions(5, 3))
        x_before = state.x.copy()
        new_state = step(state, game, w, StepSchedule.paper())
        np.testing.assert_array_equal(state.x, x_before)
        self.assertEqual(state.k, 0)
        self.assertEqual(new_state.k, 1)

    def test_wrong_mixing_size(self):
        game = paper_ev_game()
        w = build_metropolis(Topology.complete(4))
        with self.assertRaises(DimensionMismatch):
            step(init_state(game, np.zeros((5, 3))), game, w, StepSchedule.paper())

    def test_non_finite(self):
        game = paper_ev_game()
        w = build_metropolis(Topology.complete(5))
        state = init_state(game, np.full((5, 3), np.inf))
        with self.assertRaises(NonFiniteValue) as ctx:
            step(state, game, w, StepSchedule.paper())
        self.assertEqual(ctx.exception.k, 1)


class TrackingTestCase(unittest.TestCase):
    """Test class for the exact averaging of the tracking recursions."""

    def test_exact_averaging(self):
        rng = np.random.default_rng(42)
        for seed in range(20):
            n, m = int(rng.integers(2, 11)), int(rng.integers(1, 5))
            game = get_random_quadratic_game(n=n, m=m, seed=seed)
            w = build_metropolis(random_connected_topology(n, 0.4, seed))
            states = iterate(game, w, StepSchedule.paper(), get_random_decisions(n, m, seed), 1000)
            for state in states:
                v_err, y_err = state.averaging_error()
                scale = max(1.0, float(np.abs(state.x).max()), float(np.abs(state.g2).max()))
                self.assertLessEqual(v_err, 1e-10 * scale)
                self.assertLessEqual(y_err, 1e-10 * scale)

    def test_centralised_reduction(self):
        game = get_random_quadratic_game(n=1, m=3, seed=5)
        w = single_agent_mixing()
        schedule = StepSchedule.paper()
        state = init_state(game, get_random_decisions(1, 3, seed=5))
        for _ in range(10_000):
            k, x = state.k, state.x.reshape(-1)
            direct = x - schedule.gamma(k) * (
                pseudo_gradient(game, x) + schedule.eta(k) * social_gradient(game, x)
            )
            state = step(state, game, w, schedule)
            np.testing.assert_allclose(state.x.reshape(-1), direct, rtol=0, atol=1e-12)
            np.testing.assert_allclose(state.v, state.x, rtol=0, atol=1e-12)

    def test_iterate_bounds(self):
        game = paper_ev_game()
        w = build_metropolis(Topology.complete(5))
        ks = [state.k for state in iterate(game, w, StepSchedule.paper(), np.zeros((5, 3)), 4)]
        self.assertEqual(ks, [0, 1, 2, 3, 4])


class RunTestCase(unittest.TestCase):
    """Test class for run."""

    def setUp(self):
        self.game = paper_ev_game()
        self.w = build_metropolis(random_connected_topology(5, 0.5, 42))
        self.x0 = np.zeros((5, 3))

    def test_zero_game(self):
        game = zero_game(3, 2)
        w = build_metropolis(Topology.path(3))
        x0 = np.tile([0.5, 2.0], (3, 1))
        trace = run(game, w, StepSchedule.paper(), x0, 50, record_every=10)
        frame = trace.to_frame()
        self.assertEqual(len(frame), 6)
        metrics = frame[["ne_residual", "consensus_v", "consensus_y"]].to_numpy()
        np.testing.assert_allclose(metrics, np.tile(metrics[0], (len(frame), 1)), atol=1e-12)

    def test_recording(self):
        trace = run(self.game, self.w, StepSchedule.paper(), self.x0, 250, record_every=100)
        np.testing.assert_array_equal(trace.column("k"), [0, 100, 200, 250])
        self.assertTrue(trace.is_finite)

    def test_diagnostics_mode(self):
        trace = run(
            self.game,
            self.w,
            StepSchedule.paper(),
            self.x0,
            300,
            record_every=100,
            diagnostics_mode=True,
            window_end=20,
        )
        np.testing.assert_array_equal(trace.column("k"), [*range(21), 100, 200, 300])

    def test_zero_iterations(self):
        trace = run(self.game, self.w, StepSchedule.paper(), self.x0, 0)
        self.assertEqual(len(trace), 1)
        self.assertEqual(trace.rows[0]["k"], 0)

    def test_invalid_arguments(self):
        with self.assertRaises(ValidationError):
            run(self.game, self.w, StepSchedule.paper(), self.x0, 10, record_every=0)
        with self.assertRaises(ValidationError):
            run(self.game, self.w, StepSchedule.paper(), self.x0, -1)

    def test_deterministic(self):
        first = run(self.game, self.w, StepSchedule.paper(), self.x0, 300, record_every=50)
        second = run(self.game, self.w, StepSchedule.paper(), self.x0, 300, record_every=50)
        self.assertEqual(first.rows, second.rows)

    def test_decisions(self):
        trace = run(
            self.game,
            self.w,
            StepSchedule.paper(),
            self.x0,
            20,
            record_every=10,
            record_decisions=True,
        )
        self.assertEqual(len(trace.decisions), 3)
        np.testing.assert_array_equal(trace.decisions[0], self.x0)

    def test_convergence_paper_instance(self):
        x_star = solve_optimal_ne_qp(self.game).x_star
        trace = run(
            self.game, self.w, StepSchedule.paper(), self.x0, 5000, record_every=500, x_star=x_star
        )
        gap, residual = trace.column("gap_to_xstar"), trace.column("ne_residual")
        self.assertLess(gap[-1], gap[0])
        self.assertLess(residual[-1], 0.25 * residual[0])

    def test_safe_step_stays_finite(self):
        constants = estimate_constants(self.game)
        bound = gamma0_safe_bound(constants, 0.1, self.w.rho, self.w.norm_w_minus_i)
        schedule = StepSchedule.paper().with_gamma0(0.9 * bound.gamma0_max)
        trace = run(self.game, self.w, schedule, self.x0, 2000, record_every=1000)
        self.assertTrue(trace.is_finite)

    def test_divergence(self):
        schedule = StepSchedule.paper().with_gamma0(1e3)
        with self.assertRaises(NonFiniteValue) as ctx:
            run(self.game, self.w, schedule, self.x0, 10_000, record_every=1)
        trace = ctx.exception.trace
        self.assertIsNotNone(trace)
        self.assertEqual(trace.diverged_at, ctx.exception.k)
        self.assertEqual(len(trace), ctx.exception.k)
