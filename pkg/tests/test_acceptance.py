from __future__ import annotations

import functools
import json

import numpy as np
import pytest
from click.testing import CliRunner

import conditions
import instance_io
import prox_utils
from app import EXIT_OK, cli
from diagnostics import (complexity_constants, domain_probes, epsilon_approx_probe, ergodic_objective_gap,
                         o1k_proxy, proposition1_certificate, rate_envelope)
from instances import InstanceSpec, make_instance
from linop import LinearMap, SelfAdjointOperator
from models import CoupledProblem, ProxTerm, SmoothCoupling, majorized_phi, validate_envelope
from solver import (IterateState, MajorizedADMM, SolverConfig, dense_kkt_solution, reference_solution, resolve_config,
                    run)

pytestmark = pytest.mark.slow

MONOTONE_SLACK = 1e-8

QC_CORPUS = [('quadratic_coupled', (4, 3, 2), seed) for seed in range(5)] + \
            [('quadratic_coupled', (6, 5, 3), seed) for seed in range(5, 10)]
PENALTY_CORPUS = [('projection_penalty', (3, 2, 2), seed) for seed in range(5)]
RECOVERY_CORPUS = [('separable_recovery', (2, 3, 3), seed) for seed in range(5)]


@functools.lru_cache(maxsize=None)
def _instance(family, dims, seed):
    extra = {'rho': 0.5} if family == 'projection_penalty' else {}
    return make_instance(InstanceSpec(family, dims=dims, seed=seed, conditioning=5.0, **extra))


@functools.lru_cache(maxsize=None)
def _reference(family, dims, seed):
    prob = _instance(family, dims, seed)
    return reference_solution(prob, SolverConfig(tau=1.0))


def test_quadratic_coupled_default_instance_reaches_the_kkt_point() -> None:
    prob = make_instance(InstanceSpec('quadratic_coupled', seed=0))
    solution, history = run(prob, SolverConfig(tau=None, max_iters=20000, kkt_tol=1e-9))
    assert history.cfg.tau == pytest.approx(1.61)
    assert solution.converged
    u, v, x = dense_kkt_solution(prob)
    np.testing.assert_allclose(solution.state.u, u, atol=1e-5)
    np.testing.assert_allclose(solution.state.v, v, atol=1e-5)
    np.testing.assert_allclose(solution.state.x, x, atol=1e-5)


@pytest.mark.parametrize('seed', range(20))
def test_smooth_qp_matches_the_dense_kkt_solve(seed) -> None:
    prob = make_instance(InstanceSpec('quadratic_coupled', dims=(10, 10, 5), seed=seed))
    cfg = SolverConfig(tau=None, u_backend='linear_solve', v_backend='linear_solve', max_iters=20000,
                       kkt_tol=1e-11)
    solution, _ = run(prob, cfg)
    assert solution.converged
    expected = np.concatenate(dense_kkt_solution(prob))
    got = np.concatenate([solution.state.u, solution.state.v, solution.state.x])
    assert np.linalg.norm(got - expected) <= 1e-6 * max(1.0, np.linalg.norm(expected))


def _plain_admm(a, c, weight, box, sigma, tau, a_scale, n_iters):
    """Two-block ADMM for min w|u|_1 + I_box(v) s.t. a^T u - v = c"""
    u, v, x = np.zeros(a.shape[0]), np.zeros(a.shape[1]), np.zeros(a.shape[1])
    transcript = []
    for _ in range(n_iters):
        u = prox_utils.soft_threshold(a @ (v + c - x / sigma) / a_scale ** 2, weight / (sigma * a_scale ** 2))
        v = prox_utils.set_project(box, a.T @ u - c + x / sigma)
        x = x + tau * sigma * (a.T @ u - v - c)
        transcript.append((u, v, x))
    return transcript


@pytest.mark.parametrize('seed', range(10))
def test_separable_recovery_follows_a_plain_admm_transcript(seed) -> None:
    a_scale = 1.5
    prob = make_instance(InstanceSpec('separable_recovery', dims=(2, 3, 3), seed=seed, a_scale=a_scale))
    sigma, tau = 1.0, 1.0
    solver = MajorizedADMM(prob, SolverConfig(sigma=sigma, tau=tau))
    transcript = _plain_admm(prob.a.matrix, prob.c, prob.p.params['weight'], prob.q.set_descriptor,
                             sigma, tau, a_scale, 100)
    state = IterateState.initial(prob)
    for u, v, x in transcript:
        state, _ = solver.step(state)
        np.testing.assert_allclose(state.u, u, rtol=0, atol=1e-10)
        np.testing.assert_allclose(state.v, v, rtol=0, atol=1e-10)
        np.testing.assert_allclose(state.x, x, rtol=0, atol=1e-10)


@pytest.mark.parametrize('tau', [0.5, 1.0])
@pytest.mark.parametrize('key', QC_CORPUS + PENALTY_CORPUS)
def test_phi_is_monotone_for_small_steps(key, tau) -> None:
    prob = _instance(*key)
    _, history = run(prob, SolverConfig(tau=tau, max_iters=300), reference=_reference(*key))
    assert history.max_phi_increase <= MONOTONE_SLACK


@pytest.mark.parametrize('tau', [1.3, 1.61])
@pytest.mark.parametrize('key', QC_CORPUS)
def test_psi_plus_xi_is_monotone_for_large_steps(key, tau) -> None:
    prob = _instance(*key)
    cfg = SolverConfig(tau=tau, max_iters=300)
    assert conditions.check_theorem1_case_ii(prob, cfg)['verdict'] == 'pass'
    _, history = run(prob, cfg, reference=_reference(*key))
    assert history.max_psi_xi_increase <= MONOTONE_SLACK


@pytest.mark.parametrize('key', QC_CORPUS[:5] + PENALTY_CORPUS)
def test_descent_certificates_hold_at_random_domain_points(key) -> None:
    prob = _instance(*key)
    cfg = SolverConfig(tau=1.0, max_iters=50, kkt_tol=1e-14)
    solver = MajorizedADMM(prob, cfg)
    _, history = solver.run(stride=1)
    states = history.states
    ks = sorted(states)
    assert len(ks) > 2
    for prev_k, curr_k in zip(ks, ks[1:]):
        rng = np.random.default_rng([key[2], curr_k])
        report = proposition1_certificate(prob, solver.cfg, states[prev_k], states[curr_k],
                                          domain_probes(prob, 100, rng), earlier=states.get(prev_k - 1),
                                          ops=history.ops)
        assert report['branch_i']['violations'] == 0
        assert report['branch_ii']['violations'] == 0


@pytest.mark.parametrize('tau', [1.0, 1.61])
@pytest.mark.parametrize('key', QC_CORPUS[5:])
def test_rate_envelopes_hold_along_the_run(key, tau) -> None:
    prob = _instance(*key)
    reference = _reference(*key)
    cfg = SolverConfig(tau=tau, max_iters=5000, kkt_tol=1e-12)
    solver = MajorizedADMM(prob, cfg)
    _, history = solver.run(reference=reference, stride=1)
    constants = complexity_constants(prob, solver.cfg, history, reference)

    table = rate_envelope(history, constants)
    assert len(table) > 10
    assert table['bound_ok'].all()
    # erg_feas <= sqrt(C3) / k up to 1e-9
    assert table['ergodic_ok'].all()
    assert o1k_proxy(history)['passed']

    gaps = ergodic_objective_gap(prob, history, reference, constants)
    assert gaps['lower_ok'].all()
    assert gaps['upper_ok'].all()


def test_projection_penalty_run_is_an_approximate_solution() -> None:
    prob = make_instance(InstanceSpec('projection_penalty', seed=2))
    solution, _ = run(prob, SolverConfig(tau=1.0, max_iters=20000, kkt_tol=1e-8))
    assert solution.converged
    state = solution.state
    report = epsilon_approx_probe((state.u, state.v, solution.x_tilde), prob, n_probes=200, seed=0,
                                  epsilon=1e-6, radius=1.0, domain_aware=True)
    assert report['approximate']


@pytest.mark.parametrize('key', [('analytic_tiny', (1, 1, 1), 0)] + QC_CORPUS[:3] + PENALTY_CORPUS[:3]
                         + RECOVERY_CORPUS[:3])
def test_every_family_passes_the_envelope_sandwich(key) -> None:
    phi = _instance(*key).phi
    report = validate_envelope(phi, sampler_seed=key[2], n_samples=1000)
    assert report['sandwich_fail'] == 0
    if phi.kind in ('quadratic', 'zero'):
        assert report['passed']
        rng = np.random.default_rng(key[2])
        for _ in range(20):
            w, anchor = rng.standard_normal(phi.dim), rng.standard_normal(phi.dim)
            assert majorized_phi(phi, w, anchor) == pytest.approx(phi.value(w), rel=1e-10, abs=1e-10)


def _entry(report, name):
    return next(e for e in report['entries'] if e['name'] == name)


@pytest.mark.parametrize('tau', [0.5, 1.0])
@pytest.mark.parametrize('proximal', ['auto', 'zero'])
@pytest.mark.parametrize('key', QC_CORPUS[:5] + PENALTY_CORPUS + RECOVERY_CORPUS)
def test_sufficient_condition_implies_the_base_conditions(key, proximal, tau) -> None:
    prob = _instance(*key)
    report = conditions.check_theorem1_case_i(prob, SolverConfig(tau=tau, s_op=proximal, t_op=proximal))
    if _entry(report, 'remark1_sufficient')['passed']:
        assert _entry(report, 'base_u')['passed']
        assert _entry(report, 'base_v')['passed']


@pytest.mark.parametrize('tau', [0.5, 1.0, 1.61])
@pytest.mark.parametrize('key', QC_CORPUS[:5] + PENALTY_CORPUS + RECOVERY_CORPUS)
def test_adding_a_psd_term_keeps_a_passing_clause(key, tau) -> None:
    prob = _instance(*key)
    cfg = resolve_config(prob, SolverConfig(tau=tau))
    bigger = cfg.with_updates(s_op=cfg.s_op + SelfAdjointOperator.identity(prob.u_dim),
                              t_op=cfg.t_op + SelfAdjointOperator.identity(prob.v_dim))
    for clause in ('theorem1_i', 'theorem1_ii', 'theorem2'):
        if conditions.CHECKS[clause](prob, cfg)['verdict'] == 'pass':
            assert conditions.CHECKS[clause](prob, bigger)['verdict'] == 'pass'


def test_missing_curvature_and_a_zero_operator_are_rejected() -> None:
    # Qtilde has no v curvature and B = 0, so nothing controls v
    phi = SmoothCoupling.quadratic(np.diag([1.0, 0.0]), 1)
    prob = CoupledProblem(ProxTerm.zero(1), ProxTerm.zero(1), phi, LinearMap.from_matrix([[1.0]]),
                          LinearMap.from_matrix([[0.0]]), [1.0])
    cfg = SolverConfig(tau=1.0, s_op='zero', t_op='zero')
    for report in (conditions.check_theorem1_case_i(prob, cfg), conditions.check_theorem1_case_ii(prob, cfg)):
        assert report['verdict'] == 'fail'
        base_v = _entry(report, 'base_v')
        assert not base_v['passed']
        assert base_v['lambda_min'] <= 1e-12
        assert len(base_v['kernel_direction']) == 1


@pytest.mark.parametrize('backend', ['prox_identity', 'linear_solve'])
@pytest.mark.parametrize('key', QC_CORPUS[:5])
def test_the_kkt_point_is_a_fixed_point(key, backend) -> None:
    prob = _instance(*key)
    u, v, x = dense_kkt_solution(prob)
    solver = MajorizedADMM(prob, SolverConfig(tau=1.0, u_backend=backend, v_backend=backend))
    nxt, x_tilde = solver.step(IterateState.build(prob, 0, u, v, x))
    np.testing.assert_allclose(nxt.u, u, atol=1e-9)
    np.testing.assert_allclose(nxt.v, v, atol=1e-9)
    np.testing.assert_allclose(nxt.x, x, atol=1e-9)
    np.testing.assert_allclose(x_tilde, x, atol=1e-9)


def test_quadratic_coupled_objective_gap_stays_in_its_envelope() -> None:
    prob = make_instance(InstanceSpec('quadratic_coupled', dims=(6, 5, 3), seed=9))
    reference = dense_kkt_solution(prob)
    cfg = SolverConfig(tau=1.0, max_iters=3000, kkt_tol=1e-12)
    _, history = run(prob, cfg, reference=reference)
    constants = complexity_constants(prob, cfg, history, reference)
    gaps = ergodic_objective_gap(prob, history, reference, constants)
    assert gaps['lower_ok'].all()
    assert gaps['upper_ok'].all()
    assert history.max_phi_increase <= 1e-8


@pytest.fixture
def generated(tmp_path):
    runner = CliRunner()
    spec = tmp_path / 'spec.json'
    spec.write_text(json.dumps({'family': 'quadratic_coupled', 'dims': {'u': 4, 'v': 3, 'x': 2}, 'seed': 11}))
    instance = tmp_path / 'instance.json'
    assert runner.invoke(cli, ['generate', str(spec), '--out', str(instance)]).exit_code == EXIT_OK
    config = tmp_path / 'config.json'
    config.write_text(json.dumps({'sigma': 1.0, 'tau': 1.0, 'max_iters': 5000}))
    return runner, str(instance), str(config)


def test_rate_study_and_certify_are_byte_identical_across_runs(generated, tmp_path) -> None:
    runner, instance, config = generated
    outputs = []
    for attempt in ('first', 'second'):
        rate = tmp_path / f'rate-{attempt}.csv'
        cert = tmp_path / f'cert-{attempt}.json'
        assert runner.invoke(cli, ['rate-study', instance, config, '--kmax', '200',
                                   '--out', str(rate)]).exit_code == EXIT_OK
        assert runner.invoke(cli, ['certify', instance, config, '--probes', '30', '--iters', '10', '--seed', '4',
                                   '--out', str(cert)]).exit_code == EXIT_OK
        outputs.append((rate.read_bytes(), cert.read_bytes()))
    assert outputs[0] == outputs[1]


def test_cli_pipeline_on_a_generated_instance(tmp_path) -> None:
    runner = CliRunner()
    spec = tmp_path / 'spec.json'
    spec.write_text(json.dumps({'family': 'quadratic_coupled', 'dims': {'u': 5, 'v': 4, 'x': 3}, 'seed': 21}))
    config = tmp_path / 'config.json'
    config.write_text(json.dumps({'sigma': 1.0, 'tau': 1.0, 'max_iters': 20000}))
    instance = tmp_path / 'instance.json'
    assert runner.invoke(cli, ['generate', str(spec), '--out', str(instance)]).exit_code == EXIT_OK

    run_dir = tmp_path / 'run'
    result = runner.invoke(cli, ['solve', str(instance), str(config), '--out', str(run_dir)])
    assert result.exit_code == EXIT_OK, result.output
    summary = json.loads((run_dir / 'summary.json').read_text())
    assert summary['reference_error'] < 1e-6
    assert summary['monotonicity']['phi_monotone']

    rate = tmp_path / 'rate.csv'
    result = runner.invoke(cli, ['rate-study', str(instance), str(config), '--kmax', '400', '--out', str(rate)])
    assert result.exit_code == EXIT_OK, result.output
    table, metadata = instance_io.read_rate_csv(rate)
    assert (table['min_bound_sq_times_k'] <= metadata['C_bound'] * (1 + 1e-7) + 1e-7).all()

    cert = tmp_path / 'cert.json'
    result = runner.invoke(cli, ['certify', str(instance), str(config), '--probes', '40', '--iters', '15',
                                 '--out', str(cert)])
    assert result.exit_code == EXIT_OK, result.output
    assert json.loads(cert.read_text())['passed']
