"""
Convergence-condition checker
Dense eigenvalue checks of the positive (semi)definiteness hypotheses,
one report per theorem clause
"""

import logging
from typing import Dict, List, Optional

import numpy as np
import scipy.linalg

import settings
from errors import DenseCapError
from linop import definiteness, materialize
from models import CoupledProblem

logger = logging.getLogger(__name__)

CLAUSES = ('theorem1_i', 'theorem1_ii', 'theorem2', 'remark2', 'theorem3_side')


class DenseEnvelope:
    """Dense copies of every operator the conditions combine"""

    def __init__(self, prob: CoupledProblem, cfg):
        phi = prob.phi
        sigma = cfg.sigma
        self.tau = float(cfg.tau)
        self.sigma = float(sigma)
        self.eta = phi.eta
        self.q = materialize(phi.q_operator)
        self.q11 = materialize(phi.q_lower.q11)
        self.q22 = materialize(phi.q_lower.q22)
        self.q12 = materialize(phi.q_lower.q12)
        self.h = materialize(phi.h_operator)
        self.d1 = materialize(phi.d1)
        self.d2 = materialize(phi.d2)
        self.s = materialize(cfg.s_op)
        self.t = materialize(cfg.t_op)
        self.saa = materialize(prob.a.gram(sigma))
        self.sbb = materialize(prob.b.gram(sigma))

    @staticmethod
    def block_diag(first: np.ndarray, second: np.ndarray) -> np.ndarray:
        return scipy.linalg.block_diag(first, second)


def _entry(name: str, clause: str, operator: str, matrix: np.ndarray, required: str) -> Dict:
    """One eigenvalue check; required is 'strict' or 'psd'"""
    sym = 0.5 * (matrix + matrix.T)
    values, vectors = scipy.linalg.eigh(sym)
    lam_min, lam_max = float(values[0]), float(values[-1])
    verdict = definiteness(lam_min, lam_max, settings.get_pd_tol())
    passed = verdict == 'strict-PD' if required == 'strict' else verdict != 'fail'
    entry = {
        'name': name,
        'clause': clause,
        'operator': operator,
        'required': required,
        'lambda_min': lam_min,
        'lambda_max': lam_max,
        'verdict': verdict,
        'passed': passed,
    }
    if not passed:
        entry['kernel_direction'] = vectors[:, 0].tolist()
    return entry


def _info(name: str, clause: str, note: str) -> Dict:
    return {'name': name, 'clause': clause, 'verdict': 'info', 'passed': None, 'note': note}


def _report(clause: str, cfg, entries: List[Dict], notes: Optional[List[str]] = None,
            verdict: Optional[str] = None) -> Dict:
    if verdict is None:
        checked = [e for e in entries if e['passed'] is not None]
        verdict = 'pass' if all(e['passed'] for e in checked) else 'fail'
    return {'clause': clause, 'tau': float(cfg.tau), 'sigma': float(cfg.sigma), 'verdict': verdict,
            'entries': entries, 'notes': notes or []}


def _guarded(clause: str, prob: CoupledProblem, cfg, build) -> Dict:
    """Resolve S/T, assemble densely and run build; above the cap the clause is unverified"""
    from solver import resolve_config
    try:
        cfg = resolve_config(prob, cfg)
        dense = DenseEnvelope(prob, cfg)
    except DenseCapError as exc:
        logger.warning('%s: %s', clause, exc.message)
        return {'clause': clause, 'tau': cfg.tau, 'sigma': float(cfg.sigma), 'verdict': 'unverified',
                'entries': [], 'notes': [exc.message]}
    return build(dense, cfg)


def check_theorem1_case_i(prob: CoupledProblem, cfg) -> Dict:
    clause = 'theorem1_i'

    def build(d: DenseEnvelope, cfg) -> Dict:
        if not 0.0 < d.tau <= 1.0:
            return _report(clause, cfg, [], [f'tau = {d.tau:g} is outside (0, 1]'], verdict='inapplicable')
        entries = [
            _entry('base_u', clause, 'Q11 + sigma AA* + S', d.q11 + d.saa + d.s, 'strict'),
            _entry('base_v', clause, 'Q22 + sigma BB* + T', d.q22 + d.sbb + d.t, 'strict'),
            _entry('remark1_sufficient', clause, 'Q + Diag(S + (1-tau) sigma AA*, T + (1-tau) sigma BB*)',
                   d.q + d.block_diag(d.s + (1 - d.tau) * d.saa, d.t + (1 - d.tau) * d.sbb), 'strict'),
            _info('implication', clause, 'not directly checkable; certified through the sufficient condition'),
        ]
        return _report(clause, cfg, entries)

    return _guarded(clause, prob, cfg, build)


def check_theorem1_case_ii(prob: CoupledProblem, cfg) -> Dict:
    clause = 'theorem1_ii'

    def build(d: DenseEnvelope, cfg) -> Dict:
        eta = d.eta
        entries = [
            _entry('base_u', clause, 'Q11 + sigma AA* + S', d.q11 + d.saa + d.s, 'strict'),
            _entry('base_v', clause, 'Q22 + sigma BB* + T', d.q22 + d.sbb + d.t, 'strict'),
            _entry('M', clause, '1/4 Q + Diag(S - eta D1, T - eta D2)',
                   0.25 * d.q + d.block_diag(d.s - eta * d.d1, d.t - eta * d.d2), 'psd'),
            _entry('block_u', clause, '1/4 Q11 + S + sigma AA* - eta D1',
                   0.25 * d.q11 + d.s + d.saa - eta * d.d1, 'strict'),
            _entry('block_v', clause, '1/4 Q22 + T + sigma BB* - eta D2',
                   0.25 * d.q22 + d.t + d.sbb - eta * d.d2, 'strict'),
            _entry('remark1_joint', clause, '1/4 Q + Diag(S + sigma AA* - eta D1, T + sigma BB* - eta D2)',
                   0.25 * d.q + d.block_diag(d.s + d.saa - eta * d.d1, d.t + d.sbb - eta * d.d2), 'strict'),
            _info('implication', clause, 'not directly checkable; certified through the sufficient condition'),
        ]
        return _report(clause, cfg, entries)

    return _guarded(clause, prob, cfg, build)


def check_theorem2(prob: CoupledProblem, cfg) -> Dict:
    """O1 branch (tau <= 1) or O2 with its side condition; either branch suffices"""
    clause = 'theorem2'

    def build(d: DenseEnvelope, cfg) -> Dict:
        eta, tau = d.eta, d.tau
        entries = []
        branches = []
        if tau <= 1.0:
            o1 = _entry('O1', clause, '1/4 Q + Diag(S + (1-tau) sigma AA*, T + (1-tau) sigma BB*)',
                        0.25 * d.q + d.block_diag(d.s + (1 - tau) * d.saa, d.t + (1 - tau) * d.sbb), 'strict')
            entries.append(o1)
            branches.append(o1['passed'])
        side = _entry('O2_side', clause, '1/4 Q + Diag(S - eta D1, T - eta D2)',
                      0.25 * d.q + d.block_diag(d.s - eta * d.d1, d.t - eta * d.d2), 'psd')
        o2 = _entry('O2', clause, '1/4 Q + Diag(S + sigma AA* - eta D1, T + sigma BB* - eta D2)',
                    0.25 * d.q + d.block_diag(d.s + d.saa - eta * d.d1, d.t + d.sbb - eta * d.d2), 'strict')
        entries.extend([side, o2])
        branches.append(side['passed'] and o2['passed'])
        return _report(clause, cfg, entries, verdict='pass' if any(branches) else 'fail')

    return _guarded(clause, prob, cfg, build)


def check_remark2_quadratic(prob: CoupledProblem, cfg) -> Dict:
    clause = 'remark2'
    if prob.phi.kind != 'quadratic':
        return {'clause': clause, 'tau': cfg.tau, 'sigma': float(cfg.sigma), 'verdict': 'inapplicable',
                'entries': [], 'notes': [f'coupling kind {prob.phi.kind!r} is not quadratic']}

    def build(d: DenseEnvelope, cfg) -> Dict:
        phi = prob.phi
        qt = phi.params['qtilde']
        n_u = prob.u_dim
        sigma_f = materialize(phi.sigma_f)
        sigma_g = materialize(phi.sigma_g)
        entries = [
            _entry('block_u', clause, 'Qtilde11 + Sigma_f + S + sigma AA*',
                   qt[:n_u, :n_u] + sigma_f + d.s + d.saa, 'strict'),
            _entry('block_v', clause, 'Qtilde22 + Sigma_g + T + sigma BB*',
                   qt[n_u:, n_u:] + sigma_g + d.t + d.sbb, 'strict'),
            _entry('joint', clause, 'Qtilde + Diag(Sigma_f + S + sigma AA*, Sigma_g + T + sigma BB*)',
                   qt + d.block_diag(sigma_f + d.s + d.saa, sigma_g + d.t + d.sbb), 'strict'),
        ]
        return _report(clause, cfg, entries, ['eta = 0 applies to quadratic couplings'])

    return _guarded(clause, prob, cfg, build)


def check_theorem3_side(prob: CoupledProblem, cfg) -> Dict:
    """S - eta D1 and T - eta D2 positive semidefinite"""
    clause = 'theorem3_side'

    def build(d: DenseEnvelope, cfg) -> Dict:
        entries = [
            _entry('side_u', clause, 'S - eta D1', d.s - d.eta * d.d1, 'psd'),
            _entry('side_v', clause, 'T - eta D2', d.t - d.eta * d.d2, 'psd'),
        ]
        return _report(clause, cfg, entries)

    return _guarded(clause, prob, cfg, build)


CHECKS = {
    'theorem1_i': check_theorem1_case_i,
    'theorem1_ii': check_theorem1_case_ii,
    'theorem2': check_theorem2,
    'remark2': check_remark2_quadratic,
    'theorem3_side': check_theorem3_side,
}


def check_all(prob: CoupledProblem, cfg) -> Dict[str, Dict]:
    return {clause: CHECKS[clause](prob, cfg) for clause in CLAUSES}


def gate_verdict(reports: Dict[str, Dict], tau: float) -> str:
    """Verdict of the run gate: large-step clause, or small-step clause when tau <= 1"""
    verdicts = [reports['theorem1_ii']['verdict']]
    if tau <= 1.0 and 'theorem1_i' in reports:
        verdicts.append(reports['theorem1_i']['verdict'])
    if 'pass' in verdicts:
        return 'pass'
    return 'unverified' if 'unverified' in verdicts else 'fail'
