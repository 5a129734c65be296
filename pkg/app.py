"""
madmm command-line interface
Instance generation, condition checks, solves, rate studies and descent
certificates; machine-readable output goes to files or stdout
"""

import functools
import logging
import math
import time
from pathlib import Path
from typing import Dict, Optional

import click
import numpy as np
from dotenv import load_dotenv

import conditions
import diagnostics
import instance_io
import settings
from errors import (ConfigurationError, ConstantsUndefinedError, DenseCapError, DimensionError, DivergenceError,
                    InfeasibleProbeError, InstanceSpecError, MadmmError, SchemaError, UsageError)
from instances import make_instance
from solver import MajorizedADMM, dense_kkt_solution, reference_solution, resolve_config

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger('madmm')

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_DIVERGED = 2
EXIT_IO = 3
EXIT_UNVERIFIED = 4

VERDICT_EXIT = {'pass': EXIT_OK, 'fail': EXIT_FAIL, 'inapplicable': EXIT_FAIL, 'unverified': EXIT_UNVERIFIED}


def _status(kind: str, message: str):
    icon = {'ok': '✅', 'warn': '⚠️', 'fail': '❌'}[kind]
    click.echo(f'{icon} {message}', err=True)


def _finite(value):
    """JSON-safe float: NaN and infinities become null"""
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def _emit(doc: Dict, out: Optional[str]):
    if out:
        instance_io.write_json(out, doc)
    else:
        click.echo(instance_io.canonical_json(doc), nl=False)


def _handled(command):
    """Map madmm errors onto the exit-code contract"""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            code = command(*args, **kwargs)
        except DivergenceError as exc:
            _status('fail', f'diverged at iteration {exc.iteration}')
            code = EXIT_DIVERGED
        except DenseCapError as exc:
            _status('warn', f'unverified: {exc.message}')
            code = EXIT_UNVERIFIED
        except (SchemaError, InstanceSpecError, DimensionError, ConfigurationError, UsageError) as exc:
            _status('fail', f'{type(exc).__name__}: {exc.message}')
            code = EXIT_IO
        except (ConstantsUndefinedError, InfeasibleProbeError) as exc:
            _status('fail', f'{type(exc).__name__}: {exc.message}')
            code = EXIT_FAIL
        except OSError as exc:
            _status('fail', f'I/O error: {exc}')
            code = EXIT_IO
        ctx.exit(code or EXIT_OK)

    return wrapper


def _load(instance_file: str, config_file: str):
    prob = instance_io.load_instance(instance_file)
    cfg, _ = instance_io.load_config(config_file, prob)
    return prob, cfg


def _reference(prob, reference_file: Optional[str]):
    if reference_file:
        return instance_io.reference_from_dict(instance_io.read_json(reference_file), prob)
    return prob.solution


def _gate(prob, cfg, force: bool) -> str:
    reports = {'theorem1_ii': conditions.check_theorem1_case_ii(prob, cfg)}
    if cfg.tau <= 1.0:
        reports['theorem1_i'] = conditions.check_theorem1_case_i(prob, cfg)
    verdict = conditions.gate_verdict(reports, cfg.tau)
    if verdict == 'pass':
        return verdict
    if force:
        _status('warn', f'convergence conditions {verdict}; continuing because --force was given')
        return verdict
    _status('fail' if verdict == 'fail' else 'warn',
            f'convergence conditions {verdict} at tau={cfg.tau:g}, sigma={cfg.sigma:g}; pass --force to run anyway')
    return verdict


@click.group()
@click.option('--log-level', default=None, help='Logging level (default from MADMM_LOG_LEVEL)')
def cli(log_level):
    """Majorized ADMM for linearly constrained programs with coupled objectives."""
    try:
        level = log_level.upper() if log_level else settings.get_log_level()
    except MadmmError as exc:
        _status('fail', exc.message)
        raise click.exceptions.Exit(EXIT_IO)
    if level not in settings.LOG_LEVELS:
        _status('fail', f'unknown log level {log_level!r}')
        raise click.exceptions.Exit(EXIT_IO)
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')


@cli.command()
@click.argument('spec_file', type=click.Path(dir_okay=False))
@click.option('--out', type=click.Path(dir_okay=False), default=None, help='Instance file (default: stdout)')
@_handled
def generate(spec_file, out):
    """Generate an instance from a JSON generator spec."""
    spec = instance_io.spec_from_dict(instance_io.read_json(spec_file))
    prob = make_instance(spec)
    if prob.solution is None:
        try:
            prob.solution = dense_kkt_solution(prob)
        except ConfigurationError:
            pass
    _emit(instance_io.problem_to_dict(prob), out)
    _status('ok', f'{spec.family} instance dims={spec.dims} seed={spec.seed}')
    return EXIT_OK


@cli.command()
@click.argument('instance_file', type=click.Path(dir_okay=False))
@click.argument('config_file', type=click.Path(dir_okay=False))
@click.option('--clause', type=click.Choice(('auto', 'all') + conditions.CLAUSES), default='auto')
@click.option('--out', type=click.Path(dir_okay=False), default=None, help='Report file (default: stdout)')
@_handled
def check(instance_file, config_file, clause, out):
    """Verify the convergence conditions for an instance and configuration."""
    prob, cfg = _load(instance_file, config_file)
    cfg = resolve_config(prob, cfg)
    if clause == 'all':
        reports = conditions.check_all(prob, cfg)
        verdict = conditions.gate_verdict(reports, cfg.tau)
    elif clause == 'auto':
        reports = {'theorem1_ii': conditions.check_theorem1_case_ii(prob, cfg)}
        if cfg.tau <= 1.0:
            reports['theorem1_i'] = conditions.check_theorem1_case_i(prob, cfg)
        verdict = conditions.gate_verdict(reports, cfg.tau)
    else:
        reports = {clause: conditions.CHECKS[clause](prob, cfg)}
        verdict = reports[clause]['verdict']
    _emit({'clause': clause, 'verdict': verdict, 'reports': reports}, out)
    _status({'pass': 'ok', 'unverified': 'warn'}.get(verdict, 'fail'), f'{clause}: {verdict}')
    return VERDICT_EXIT[verdict]


def _apply_overrides(cfg, **overrides):
    changes = {key: value for key, value in overrides.items() if value is not None}
    return cfg.with_updates(**changes) if changes else cfg


@cli.command()
@click.argument('instance_file', type=click.Path(dir_okay=False))
@click.argument('config_file', type=click.Path(dir_okay=False))
@click.option('--tau', type=float, default=None)
@click.option('--sigma', type=float, default=None)
@click.option('--max-iters', type=int, default=None)
@click.option('--tol', type=float, default=None, help='KKT residual bound tolerance')
@click.option('--reference', 'reference_file', type=click.Path(dir_okay=False), default=None)
@click.option('--out', type=click.Path(file_okay=False), default='madmm-run', show_default=True)
@click.option('--force', is_flag=True, help='Run even when the convergence conditions do not verify')
@click.option('--timing', is_flag=True, help='Add wall time to the summary')
@_handled
def solve(instance_file, config_file, tau, sigma, max_iters, tol, reference_file, out, force, timing):
    """Run the solver; writes history.csv and summary.json."""
    prob, cfg = _load(instance_file, config_file)
    cfg = _apply_overrides(cfg, tau=tau, sigma=sigma, max_iters=max_iters, kkt_tol=tol)
    reference = _reference(prob, reference_file)
    digest = instance_io.instance_hash(instance_io.read_json(instance_file), instance_io.config_to_dict(cfg))
    cfg = resolve_config(prob, cfg)
    verdict = _gate(prob, cfg, force)
    if verdict != 'pass' and not force:
        return VERDICT_EXIT[verdict]

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {'instance_hash': digest, 'config': instance_io.config_to_dict(cfg), 'conditions': verdict}
    solver = MajorizedADMM(prob, cfg.with_updates(override_conditions=True))
    started = time.perf_counter()
    try:
        solution, history = solver.run(reference=reference)
    except DivergenceError as exc:
        if exc.history is not None:
            instance_io.write_history_csv(out_dir / 'history.csv', exc.history)
        summary.update({'status': 'diverged', 'iteration': exc.iteration, 'message': exc.message})
        instance_io.write_json(out_dir / 'summary.json', summary)
        _status('fail', f'diverged at iteration {exc.iteration}')
        return EXIT_DIVERGED

    state = solution.state
    summary.update({
        'status': solution.status,
        'iterations': solution.iterations,
        'rows': len(history),
        'kkt_bound_sq': _finite(solution.kkt_bound_sq),
        'solution': {'u': state.u.tolist(), 'v': state.v.tolist(), 'x': state.x.tolist()},
    })
    if solution.ergodic is not None:
        summary['ergodic'] = {name: part.tolist() for name, part in zip(('u', 'v', 'x'), solution.ergodic)}
    if reference is not None:
        gap = np.concatenate([state.u - reference[0], state.v - reference[1], state.x - reference[2]])
        summary['reference_error'] = float(np.linalg.norm(gap))
        summary['monotonicity'] = {
            'phi_max_increase': _finite(history.max_phi_increase),
            'phi_monotone': (history.max_phi_increase <= diagnostics.MONOTONE_TOL) if cfg.tau <= 1.0 else None,
            'psi_xi_max_increase': _finite(history.max_psi_xi_increase),
            'psi_xi_monotone': history.max_psi_xi_increase <= diagnostics.MONOTONE_TOL,
        }
    if timing:
        summary['wall_time_s'] = time.perf_counter() - started
    instance_io.write_history_csv(out_dir / 'history.csv', history)
    instance_io.write_json(out_dir / 'summary.json', summary)
    _status('ok' if solution.converged else 'warn',
            f'{solution.status} after {solution.iterations} iterations (bound_sq={solution.kkt_bound_sq:.3e})')
    return EXIT_OK


@cli.command('rate-study')
@click.argument('instance_file', type=click.Path(dir_okay=False))
@click.argument('config_file', type=click.Path(dir_okay=False))
@click.option('--kmax', type=int, default=2000, show_default=True)
@click.option('--reference', 'reference_file', type=click.Path(dir_okay=False), default=None)
@click.option('--out', type=click.Path(dir_okay=False), default='rate.csv', show_default=True)
@click.option('--force', is_flag=True)
@_handled
def rate_study(instance_file, config_file, kmax, reference_file, out, force):
    """Scaled rate sequences against the complexity bounds."""
    if kmax < 1:
        raise UsageError('--kmax must be at least 1')
    prob, cfg = _load(instance_file, config_file)
    cfg = resolve_config(prob, cfg.with_updates(max_iters=kmax + 1))
    verdict = _gate(prob, cfg, force)
    if verdict != 'pass' and not force:
        return VERDICT_EXIT[verdict]
    reference = _reference(prob, reference_file)
    if reference is None:
        _status('warn', 'no reference given; computing one with a high-accuracy run')
        reference = reference_solution(prob, cfg.with_updates(override_conditions=True))

    solver = MajorizedADMM(prob, cfg.with_updates(override_conditions=True))
    _, history = solver.run(reference=reference, stride=1)
    constants = diagnostics.complexity_constants(prob, cfg, history, reference)
    table = diagnostics.rate_envelope(history, constants)
    columns = ['k', 'min_bound_sq_times_k', 'feas_times_k', 'ergodic_feas_times_k']
    instance_io.write_rate_csv(out, table[columns], {'C': constants.c, 'C_bound': constants.bound_numerator,
                                                     'D1': constants.d1})
    passed = bool(table['bound_ok'].all() and table['ergodic_ok'].all())
    if len(table):
        proxy = diagnostics.o1k_proxy(history)
        _status('ok' if proxy['passed'] else 'warn',
                f"{proxy['label']}: ratio {proxy['ratio']:.3e} (k={proxy['early_k']} to k={proxy['late_k']})")
    _status('ok' if passed else 'fail', f'rate envelope case ({constants.case}) over {len(table)} rows: '
                                        f'{"within bounds" if passed else "bound violated"}')
    return EXIT_OK if passed else EXIT_FAIL


@cli.command()
@click.argument('instance_file', type=click.Path(dir_okay=False))
@click.argument('config_file', type=click.Path(dir_okay=False))
@click.option('--probes', type=int, default=100, show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--iters', type=int, default=50, show_default=True)
@click.option('--out', type=click.Path(dir_okay=False), default=None, help='Certificate file (default: stdout)')
@click.option('--force', is_flag=True)
@_handled
def certify(instance_file, config_file, probes, seed, iters, out, force):
    """Check the one-step descent inequalities at random domain probes."""
    prob, cfg = _load(instance_file, config_file)
    cfg = resolve_config(prob, cfg.with_updates(max_iters=iters))
    verdict = _gate(prob, cfg, force)
    if verdict != 'pass' and not force:
        return VERDICT_EXIT[verdict]
    _, history = MajorizedADMM(prob, cfg.with_updates(override_conditions=True)).run(stride=1)

    states = history.states
    ks = sorted(states)
    totals = {name: {'evaluated': 0, 'violations': 0, 'max_excess': None} for name in ('branch_i', 'branch_ii')}
    skipped = 0
    try:
        for prev_k, curr_k in zip(ks, ks[1:]):
            rng = np.random.default_rng([seed, curr_k])
            report = diagnostics.proposition1_certificate(
                prob, cfg, states[prev_k], states[curr_k], diagnostics.domain_probes(prob, probes, rng),
                earlier=states.get(prev_k - 1), ops=history.ops)
            skipped += report['skipped']
            for name, total in totals.items():
                branch = report[name]
                if not branch['applicable'] or not branch['evaluated']:
                    continue
                total['evaluated'] += branch['evaluated']
                total['violations'] += branch['violations']
                worst = branch['max_excess']
                total['max_excess'] = worst if total['max_excess'] is None else max(total['max_excess'], worst)
    except InfeasibleProbeError as exc:
        _status('fail', f'{exc.message}; the domain sampler of p or q does not reach the domain')
        return EXIT_FAIL

    passed = all(total['violations'] == 0 for total in totals.values())
    doc = {
        'iterations': len(ks) - 1,
        'probes_per_iteration': probes,
        'seed': seed,
        'tau': cfg.tau,
        'skipped': skipped,
        'branch_i': totals['branch_i'],
        'branch_ii': totals['branch_ii'],
        'passed': passed,
    }
    _emit(doc, out)
    _status('ok' if passed else 'fail', f'descent certificates over {len(ks) - 1} iterations: '
                                        f'{"pass" if passed else "violations found"}')
    return EXIT_OK if passed else EXIT_FAIL


if __name__ == '__main__':
    cli()
