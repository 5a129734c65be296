from __future__ import annotations

import math

import numpy as np
import pytest

import diagnostics
from diagnostics import (RunHistory, complexity_constants, domain_probes, epsilon_approx_probe,
                         ergodic_objective_gap, ergodic_state, kkt_witness, lyapunov, o1k_proxy,
                         proposition1_certificate, rate_envelope, vi_gap)
from errors import ConstantsUndefinedError, InfeasibleProbeError, UsageError
from instances import make_analytic_tiny
from linop import SelfAdjointOperator
from solver import IterateState, MajorizedADMM, SolverConfig, run

TINY_SOLUTION = make_analytic_tiny()[1]


def test_kkt_witness_at_the_first_iterate(tiny, tiny_cfg, tiny_states) -> None:
    witness = kkt_witness(tiny, tiny_cfg, tiny_states[0], tiny_states[1])
    np.testing.assert_allclose(witness.dual_element, [0.25, 0.0], atol=1e-15)
    np.testing.assert_allclose(witness.primal_residual, [-0.25])
    assert witness.bound_sq == pytest.approx(0.125)


def test_kkt_witness_needs_consecutive_iterates(tiny, tiny_cfg, tiny_states) -> None:
    with pytest.raises(UsageError):
        kkt_witness(tiny, tiny_cfg, tiny_states[0], tiny_states[2])


def test_lyapunov_values_on_the_tiny_instance(tiny, tiny_cfg, tiny_states) -> None:
    ops = diagnostics.DiagnosticOperators(tiny, tiny_cfg)
    assert diagnostics.phi_value(tiny, ops, tiny_states[0], TINY_SOLUTION) == pytest.approx(1.0)
    first = lyapunov(tiny, tiny_cfg, tiny_states[1], tiny_states[0], TINY_SOLUTION)
    second = lyapunov(tiny, tiny_cfg, tiny_states[2], tiny_states[1], TINY_SOLUTION)
    assert first.phi_k == pytest.approx(7 / 32)
    assert first.theta_k == pytest.approx(5 / 64)
    assert first.psi_k == pytest.approx(9 / 32)
    assert first.lambda_k == pytest.approx(0.1875)
    assert second.phi_k == pytest.approx(7 / 128)
    assert second.psi_k == pytest.approx(9 / 128)
    assert first.xi_k == 0.0


def test_lyapunov_without_reference_keeps_only_step_terms(tiny, tiny_cfg, tiny_states) -> None:
    record = lyapunov(tiny, tiny_cfg, tiny_states[1], tiny_states[0])
    assert record.phi_k is None
    assert record.to_dict()['theta_k'] == pytest.approx(5 / 64)


def test_vi_gap_is_nonpositive_at_the_solution(tiny) -> None:
    rng = np.random.default_rng(4)
    for _ in range(50):
        u, v, x = rng.standard_normal(3)
        s = u + v
        gap = vi_gap(tiny, TINY_SOLUTION, ([u], [v], [x]))
        assert gap == pytest.approx(s - u * u - v * v - 0.5)
        assert gap <= 1e-12


def test_vi_gap_is_infinite_off_the_domain(recovery) -> None:
    outside = (np.zeros(2), np.full(3, 5.0), np.zeros(3))
    assert math.isinf(vi_gap(recovery, (np.zeros(2), np.zeros(3), np.zeros(3)), outside))


def test_certificate_values_at_the_solution(tiny, tiny_cfg, tiny_states) -> None:
    small = proposition1_certificate(tiny, tiny_cfg, tiny_states[0], tiny_states[1], [TINY_SOLUTION])
    assert small['branch_i']['applicable']
    assert small['branch_i']['max_excess'] == pytest.approx(-0.390625 + 0.1640625)
    assert not small['branch_ii']['applicable']
    large = proposition1_certificate(tiny, tiny_cfg, tiny_states[1], tiny_states[2], [TINY_SOLUTION],
                                     earlier=tiny_states[0])
    assert large['branch_ii']['max_excess'] == pytest.approx(-27 / 256 + 9 / 512)
    assert large['passed']


def test_certificate_holds_at_random_probes(recovery) -> None:
    cfg = SolverConfig(sigma=1.0, tau=1.0)
    solver = MajorizedADMM(recovery, cfg)
    _, history = solver.run(stride=1)
    ks = sorted(history.states)[:12]
    rng = np.random.default_rng(0)
    for prev_k, curr_k in zip(ks[1:], ks[2:]):
        report = proposition1_certificate(recovery, cfg, history.states[prev_k], history.states[curr_k],
                                          domain_probes(recovery, 25, rng), earlier=history.states[prev_k - 1],
                                          ops=history.ops)
        assert report['skipped'] == 0
        assert report['passed'], report


def test_certificate_raises_when_every_probe_is_infeasible(recovery) -> None:
    cfg = SolverConfig(tau=1.0)
    solver = MajorizedADMM(recovery, cfg)
    s0 = IterateState.initial(recovery)
    s1 = solver.step(s0)[0]
    bad = [(np.zeros(2), np.full(3, 9.0), np.zeros(3))] * 3
    with pytest.raises(InfeasibleProbeError):
        proposition1_certificate(recovery, cfg, s0, s1, bad)


def test_epsilon_probe_reports_a_lower_bound(tiny) -> None:
    report = epsilon_approx_probe(TINY_SOLUTION, tiny, n_probes=200, seed=1, epsilon=1e-9, radius=0.5)
    assert report['feasible'] == 200
    assert report['max_gap'] <= 1e-12
    assert report['approximate']


def test_epsilon_probe_domain_awareness(recovery) -> None:
    candidate = (np.zeros(2), np.zeros(3), np.zeros(3))
    report = epsilon_approx_probe(candidate, recovery, n_probes=30, seed=2, radius=20.0, domain_aware=True)
    assert report['skipped'] == 0
    assert 'epsilon' not in report


def test_history_rows_and_trackers(tiny, tiny_cfg) -> None:
    _, history = run(tiny, tiny_cfg, reference=TINY_SOLUTION)
    frame = history.to_frame()
    assert list(frame['k'][:3]) == [1, 2, 3]
    assert math.isnan(frame['min_bound_sq'][0])
    assert frame['phi_k'][0] == pytest.approx(7 / 32)
    assert history.max_phi_increase <= diagnostics.MONOTONE_TOL
    assert history.max_psi_xi_increase <= diagnostics.MONOTONE_TOL
    assert history.first.k == 1
    # erg_k counts from the second iterate
    assert frame['erg_k'].iloc[-1] == len(history) - 1


def test_ergodic_state_needs_two_iterations(tiny, tiny_cfg, tiny_states) -> None:
    history = RunHistory(tiny, tiny_cfg)
    history.start(tiny_states[0])
    with pytest.raises(UsageError):
        ergodic_state(history)


def test_ergodic_average_of_the_tiny_run(tiny, tiny_cfg) -> None:
    _, history = run(tiny, tiny_cfg.with_updates(max_iters=3))
    u_hat, v_hat, x_hat = history.ergodic
    # iterates 2 and 3: v = 0.375, 0.4375; x_tilde equals x on this instance
    assert u_hat[0] == pytest.approx(0.5)
    assert v_hat[0] == pytest.approx(0.40625)
    assert x_hat[0] == pytest.approx(-0.40625)


def test_complexity_constants_on_the_tiny_instance(tiny, tiny_cfg) -> None:
    _, history = run(tiny, tiny_cfg, reference=TINY_SOLUTION)
    constants = complexity_constants(tiny, tiny_cfg, history, TINY_SOLUTION)
    assert constants.case == 'i'
    assert constants.theorem3_case == 'a'
    assert constants.c1 == pytest.approx(5.0)
    assert constants.kappa == pytest.approx(4.0)
    assert constants.kappa_b == pytest.approx(4.0)
    assert constants.c == pytest.approx(142.0)
    assert constants.bound_numerator == pytest.approx(142 * 7 / 32)
    assert constants.c3 == pytest.approx(0.5625)
    assert constants.d1 == pytest.approx(0.75)
    assert constants.lambda1 == pytest.approx(0.1875)
    assert constants.to_dict()['theorem3_case'] == 'a'


def test_complexity_constants_undefined_without_definiteness(recovery) -> None:
    cfg = SolverConfig(tau=1.0, s_op=SelfAdjointOperator.identity(2, -0.5, name='S'), override_conditions=True,
                       max_iters=3)
    _, history = MajorizedADMM(recovery, cfg).run(reference=(np.zeros(2), np.zeros(3), np.zeros(3)))
    with pytest.raises(ConstantsUndefinedError):
        complexity_constants(recovery, cfg, history, (np.zeros(2), np.zeros(3), np.zeros(3)))


def test_rate_envelope_and_objective_gap_hold_on_the_tiny_run(tiny, tiny_cfg) -> None:
    _, history = run(tiny, tiny_cfg, reference=TINY_SOLUTION)
    constants = complexity_constants(tiny, tiny_cfg, history, TINY_SOLUTION)
    table = rate_envelope(history, constants)
    assert list(table['k'][:2]) == [1, 2]
    assert table['bound_ok'].all()
    assert table['ergodic_ok'].all()
    gaps = ergodic_objective_gap(tiny, history, TINY_SOLUTION, constants)
    assert gaps['lower_ok'].all()
    assert gaps['upper_ok'].all()


def test_o1k_proxy_shrinks_on_a_linearly_convergent_run(tiny, tiny_cfg) -> None:
    _, history = run(tiny, tiny_cfg)
    proxy = o1k_proxy(history, early=2, late=30)
    assert proxy['late_k'] == 30
    assert proxy['passed']
    assert 'proxy' in proxy['label']
