from __future__ import annotations

import numpy as np
import pytest

import prox_utils
from errors import ConfigurationError, DivergenceError
from linop import SelfAdjointOperator, materialize
from solver import (LARGE_TAU, IterateState, MajorizedADMM, SolverConfig, auto_tune, dense_kkt_solution,
                    multiplier_step, reference_solution, resolve_config, run, solve_u_step, solve_v_step,
                    subproblem_residual)


@pytest.mark.parametrize('changes', [
    {'sigma': 0.0},
    {'tau': 1.7},
    {'tau': 0.0},
    {'u_backend': 'cg'},
    {'s_op': 'huge'},
    {'max_iters': -1},
    {'kkt_tol': 0.0},
    {'record_every': 0},
])
def test_config_validation(changes) -> None:
    with pytest.raises(ConfigurationError):
        SolverConfig(**changes)


def test_tiny_first_two_iterates(tiny_states) -> None:
    first, second = tiny_states[1], tiny_states[2]
    assert (first.u[0], first.v[0], first.x[0]) == pytest.approx((0.5, 0.25, -0.25))
    assert (second.u[0], second.v[0], second.x[0]) == pytest.approx((0.5, 0.375, -0.375))


def test_module_level_steps_match_the_solver(tiny, tiny_cfg) -> None:
    state = IterateState.initial(tiny)
    u_next = solve_u_step(tiny, tiny_cfg, state)
    v_next = solve_v_step(tiny, tiny_cfg, state, u_next)
    x_next = multiplier_step(tiny_cfg, u_next, v_next, state.x, tiny)
    assert (u_next[0], v_next[0], x_next[0]) == pytest.approx((0.5, 0.25, -0.25))


def test_auto_tune_on_the_tiny_instance(tiny, tiny_cfg) -> None:
    tuned = auto_tune(tiny, tiny_cfg)
    # sigma AA* + Q11 + D1 = 2 already is a multiple of the identity
    assert tuned['alpha_u'] == pytest.approx(2.0)
    assert tuned['alpha_v'] == pytest.approx(2.0)
    np.testing.assert_allclose(materialize(tuned['S']), [[0.0]], atol=1e-12)


def test_default_tau_uses_the_large_step_when_it_verifies(tiny) -> None:
    cfg = resolve_config(tiny, SolverConfig(tau=None))
    assert cfg.tau == LARGE_TAU
    assert cfg.is_resolved


def test_default_config_leaves_tau_to_the_convergence_checks(tiny) -> None:
    assert SolverConfig().tau is None
    assert resolve_config(tiny, SolverConfig()).tau == LARGE_TAU
    assert MajorizedADMM(tiny, SolverConfig()).cfg.tau == LARGE_TAU


def test_default_tau_falls_back_to_one_when_the_large_step_fails(recovery) -> None:
    # S = -0.5 I breaks the large-step conditions on this instance
    cfg = SolverConfig(s_op=SelfAdjointOperator.identity(recovery.u_dim, -0.5), t_op='zero')
    assert resolve_config(recovery, cfg).tau == 1.0


def test_tiny_run_converges_to_the_analytic_solution(tiny, tiny_cfg) -> None:
    solution, history = run(tiny, tiny_cfg)
    assert solution.converged
    # the residual halves every iteration
    assert solution.iterations == 33
    assert solution.state.u[0] == pytest.approx(0.5, abs=1e-9)
    assert solution.state.v[0] == pytest.approx(0.5, abs=1e-9)
    assert solution.state.x[0] == pytest.approx(-0.5, abs=1e-9)
    assert len(history) == 33
    assert history.rows[0]['kkt_bound_sq'] == pytest.approx(0.125)


def test_zero_iterations_echo_the_initial_point(tiny) -> None:
    solution, history = run(tiny, SolverConfig(max_iters=0))
    assert solution.iterations == 0
    assert solution.status == 'max_iters'
    assert len(history) == 0
    assert solution.state.u.tolist() == [0.0]


def test_warm_start_from_the_solution_stops_after_one_step(tiny, tiny_cfg) -> None:
    init = IterateState.build(tiny, 0, [0.5], [0.5], [-0.5])
    solution, _ = run(tiny, tiny_cfg, init=init)
    assert solution.converged
    assert solution.iterations == 1
    assert solution.kkt_bound_sq == pytest.approx(0.0, abs=1e-24)


def test_divergence_guard(tiny, tiny_cfg, monkeypatch) -> None:
    monkeypatch.setenv('MADMM_DIVERGENCE_NORM', '0.1')
    with pytest.raises(DivergenceError) as info:
        run(tiny, tiny_cfg)
    assert info.value.iteration == 1
    assert info.value.history is not None


def test_gate_rejects_a_negative_proximal_term(recovery) -> None:
    cfg = SolverConfig(s_op=SelfAdjointOperator.identity(2, -0.5, name='S'), tau=1.0)
    with pytest.raises(ConfigurationError) as info:
        MajorizedADMM(recovery, cfg).run()
    assert info.value.details['verdict'] == 'fail'
    # overriding the gate still runs
    solution, _ = MajorizedADMM(recovery, cfg.with_updates(override_conditions=True, max_iters=3)).run()
    assert solution.iterations == 3


def test_prox_identity_backend_needs_a_scaled_identity(qc) -> None:
    with pytest.raises(ConfigurationError):
        MajorizedADMM(qc, SolverConfig(s_op='zero', t_op='zero'))


def test_linear_solve_backend_needs_quadratic_terms(recovery) -> None:
    with pytest.raises(ConfigurationError):
        MajorizedADMM(recovery, SolverConfig(u_backend='linear_solve', s_op='zero'))


def test_separable_recovery_steps_match_the_closed_form(recovery) -> None:
    sigma, tau, a_scale = 0.8, 1.2, 2.0
    cfg = SolverConfig(sigma=sigma, tau=tau)
    solver = MajorizedADMM(recovery, cfg)
    a = recovery.a.matrix
    weight = recovery.p.params['weight']
    desc = recovery.q.set_descriptor
    c = recovery.c
    state = IterateState.initial(recovery)
    for _ in range(5):
        nxt, _ = solver.step(state)
        # A = a * O^T with orthonormal O, B = -I
        u = prox_utils.soft_threshold(a @ (state.v + c - state.x / sigma) / a_scale ** 2,
                                      weight / (sigma * a_scale ** 2))
        v = prox_utils.set_project(desc, a.T @ u - c + state.x / sigma)
        x = state.x + tau * sigma * (a.T @ u - v - c)
        np.testing.assert_allclose(nxt.u, u, atol=1e-12)
        np.testing.assert_allclose(nxt.v, v, atol=1e-12)
        np.testing.assert_allclose(nxt.x, x, atol=1e-12)
        state = nxt


def test_subproblem_residuals_vanish_at_the_step(penalty) -> None:
    cfg = SolverConfig(tau=1.0)
    solver = MajorizedADMM(penalty, cfg)
    state = IterateState.initial(penalty)
    for _ in range(3):
        state = solver.step(state)[0]
    u_next = solver.solve_u_step(state)
    v_next = solver.solve_v_step(state, u_next)
    residuals = subproblem_residual(penalty, cfg, state, u_next, v_next)
    assert residuals['u'] < 1e-10
    assert residuals['v'] < 1e-10
    assert subproblem_residual(penalty, cfg, state, u_next)['v'] is None


def test_linear_solve_backend_matches_the_dense_kkt_solution(qc) -> None:
    cfg = SolverConfig(u_backend='linear_solve', v_backend='linear_solve', max_iters=20000, kkt_tol=1e-11)
    solution, _ = run(qc, cfg)
    assert solution.converged
    u, v, x = dense_kkt_solution(qc)
    np.testing.assert_allclose(solution.state.u, u, atol=1e-7)
    np.testing.assert_allclose(solution.state.v, v, atol=1e-7)
    np.testing.assert_allclose(solution.state.x, x, atol=1e-6)


def test_reference_solution_prefers_known_solutions(tiny, tiny_cfg, recovery) -> None:
    u, v, x = reference_solution(tiny, tiny_cfg)
    assert (u[0], v[0], x[0]) == (0.5, 0.5, -0.5)
    with pytest.raises(ConfigurationError):
        dense_kkt_solution(recovery)
