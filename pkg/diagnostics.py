"""
Convergence diagnostics for madmm
KKT residual bounds, Lyapunov sequences, descent certificates, ergodic
averages, approximate-solution probes and complexity constants
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

import conditions
import settings
from errors import ConstantsUndefinedError, InfeasibleProbeError, UsageError
from linop import (SelfAdjointOperator, definiteness, eigenvalue_range, generalized_max_eigenvalue,
                   operator_norm, psd_sqrt, seminorm_sq)
from models import CoupledProblem, objective

if TYPE_CHECKING:
    from solver import IterateState, SolverConfig

logger = logging.getLogger(__name__)

CERTIFICATE_RTOL = 1e-7
MONOTONE_TOL = 1e-8
ERGODIC_FEAS_TOL = 1e-9
RATE_RTOL = 1e-7

Triple = Tuple[np.ndarray, np.ndarray, np.ndarray]


def _resolved(prob: CoupledProblem, cfg: 'SolverConfig') -> 'SolverConfig':
    if cfg.is_resolved:
        return cfg
    from solver import resolve_config
    return resolve_config(prob, cfg)


def _as_triple(point) -> Triple:
    u, v, x = point
    return (np.asarray(u, dtype=float).reshape(-1), np.asarray(v, dtype=float).reshape(-1),
            np.asarray(x, dtype=float).reshape(-1))


class DiagnosticOperators:
    """Operator combinations shared by every diagnostic at one configuration"""

    def __init__(self, prob: CoupledProblem, cfg: 'SolverConfig'):
        cfg = _resolved(prob, cfg)
        phi = prob.phi
        self.prob = prob
        self.cfg = cfg
        self.tau = float(cfg.tau)
        self.sigma = float(cfg.sigma)
        self.eta = phi.eta
        self.s = cfg.s_op
        self.t = cfg.t_op
        self.q = phi.q_operator
        self.h = phi.h_operator
        self.q11 = phi.q_lower.q11
        self.q22 = phi.q_lower.q22
        self.q12 = phi.q_lower.q12
        self.d1 = phi.d1
        self.d2 = phi.d2
        self.sbb = prob.b.gram(self.sigma)
        self.d1_s = self.d1 + self.s
        self.d2_t = self.d2 + self.t
        self.phi_v = self.q22 + self.d2 + self.t
        self.lambda_v = self.d2 + self.t + self.q22 + self.sbb

    @property
    def extra_feas_coef(self) -> float:
        """max(1 - tau, 1 - 1/tau)"""
        return max(1.0 - self.tau, 1.0 - 1.0 / self.tau)


@dataclass
class KKTWitness:
    k: int
    dual_element: np.ndarray
    primal_residual: np.ndarray
    bound_sq: float


@dataclass
class LyapunovRecord:
    k: int
    theta_k: float
    xi_k: float
    gamma_k: float
    phi_k: Optional[float] = None
    psi_k: Optional[float] = None
    lambda_k: Optional[float] = None
    lambda_bar_k: Optional[float] = None

    def to_dict(self) -> Dict:
        return asdict(self)


def kkt_witness(prob: CoupledProblem, cfg: 'SolverConfig', prev: 'IterateState', curr: 'IterateState',
                ops: Optional[DiagnosticOperators] = None) -> KKTWitness:
    """Constructed element of the KKT map at curr and its squared-norm bound"""
    if curr.k != prev.k + 1:
        raise UsageError(f'kkt_witness needs consecutive iterates, got k={prev.k} and k={curr.k}')
    ops = ops or DiagnosticOperators(prob, cfg)
    tau, sigma = ops.tau, ops.sigma
    du, dv = curr.u - prev.u, curr.v - prev.v
    r = curr.residual
    row_u = (-(1.0 - tau) * sigma * prob.a.apply(r)
             - sigma * prob.a.apply(prob.b.apply_adjoint(prev.v - curr.v))
             - ops.s.apply(du) + ops.q12.apply(dv))
    row_v = -(1.0 - tau) * sigma * prob.b.apply(r) - ops.t.apply(dv)
    dw = np.concatenate([du, dv])
    dual = (np.concatenate([row_u, row_v]) - ops.q.apply(dw) - ops.h.apply(dw)
            + curr.grad - prev.grad)
    return KKTWitness(curr.k, dual, r.copy(), float(dual @ dual + r @ r))


# Lyapunov quantities ---------------------------------------------------------

def _step_terms(ops: DiagnosticOperators, prev: 'IterateState', curr: 'IterateState') -> Tuple[float, float, float]:
    du, dv = curr.u - prev.u, curr.v - prev.v
    dw = np.concatenate([du, dv])
    eta_u = ops.eta * seminorm_sq(ops.d1, du)
    eta_v = ops.eta * seminorm_sq(ops.d2, dv)
    theta = seminorm_sq(ops.s, du) + seminorm_sq(ops.t, dv) + 0.25 * seminorm_sq(ops.q, dw)
    xi = seminorm_sq(ops.d2_t, dv) + eta_u
    rho = min(ops.tau, 1.0 + ops.tau - ops.tau ** 2)
    gamma = theta + rho * seminorm_sq(ops.sbb, dv) - eta_u - eta_v
    return theta, xi, gamma


def phi_value(prob: CoupledProblem, ops: DiagnosticOperators, state: 'IterateState', point) -> float:
    """Phi_k at (u, v, x); the constraint term pairs u with the iterate v^k"""
    u, v, x = _as_triple(point)
    dx = state.x - x
    w_gap = state.w - np.concatenate([u, v])
    mixed = prob.residual(u, state.v)
    return (float(dx @ dx) / (ops.tau * ops.sigma)
            + seminorm_sq(ops.d1_s, state.u - u)
            + seminorm_sq(ops.phi_v, state.v - v)
            + 0.5 * seminorm_sq(ops.q, w_gap)
            + ops.sigma * float(mixed @ mixed))


def psi_value(prob: CoupledProblem, ops: DiagnosticOperators, state: 'IterateState', point) -> float:
    u, v, _ = _as_triple(point)
    w_gap = state.w - np.concatenate([u, v])
    r = state.residual
    return (phi_value(prob, ops, state, point) + seminorm_sq(ops.q, w_gap)
            + ops.extra_feas_coef * ops.sigma * float(r @ r))


def lambda_value(ops: DiagnosticOperators, state: 'IterateState', point) -> float:
    """Lambda_k, which carries ||x^k||^2 rather than a distance to the multiplier"""
    u, v, _ = _as_triple(point)
    return (seminorm_sq(ops.d1_s, state.u - u) + seminorm_sq(ops.lambda_v, state.v - v)
            + float(state.x @ state.x) / (ops.tau * ops.sigma))


def lambda_bar_value(ops: DiagnosticOperators, state: 'IterateState', point, xi: float) -> float:
    u, v, _ = _as_triple(point)
    w_gap = state.w - np.concatenate([u, v])
    r = state.residual
    return (lambda_value(ops, state, point) + xi + seminorm_sq(ops.q, w_gap)
            + ops.extra_feas_coef * ops.sigma * float(r @ r))


def lyapunov(prob: CoupledProblem, cfg: 'SolverConfig', curr: 'IterateState', prev: 'IterateState',
             reference=None, ops: Optional[DiagnosticOperators] = None) -> LyapunovRecord:
    """Theta, Xi, Gamma for the step prev -> curr, and the reference-based values at curr"""
    ops = ops or DiagnosticOperators(prob, cfg)
    theta, xi, gamma = _step_terms(ops, prev, curr)
    record = LyapunovRecord(curr.k, theta, xi, gamma)
    if reference is not None:
        record.phi_k = phi_value(prob, ops, curr, reference)
        record.psi_k = psi_value(prob, ops, curr, reference)
        record.lambda_k = lambda_value(ops, curr, reference)
        record.lambda_bar_k = lambda_bar_value(ops, curr, reference, xi)
    return record


# Variational-inequality gap and certificates -----------------------------------

def vi_gap(prob: CoupledProblem, candidate, probe) -> float:
    """Left-hand side of the approximate-VI inequality at one probe; +inf off the domain"""
    cu, cv, cx = _as_triple(candidate)
    u, v, x = _as_triple(probe)
    values = (prob.p.value(cu), prob.q.value(cv), prob.p.value(u), prob.q.value(v))
    if any(math.isinf(val) for val in values):
        return math.inf
    w = np.concatenate([u, v])
    grad = prob.phi.gradient(w)
    return (values[0] + values[1] - values[2] - values[3]
            + float((np.concatenate([cu, cv]) - w) @ grad)
            + float((cu - u) @ prob.a.apply(x))
            + float((cv - v) @ prob.b.apply(x))
            - float((cx - x) @ prob.residual(u, v)))


def domain_probes(prob: CoupledProblem, n_probes: int, rng: np.random.Generator,
                  scale: float = 1.0) -> List[Triple]:
    """Probes with finite p and q, sampled by the terms' own domain samplers"""
    return [(prob.p.sample_domain(rng, scale), prob.q.sample_domain(rng, scale),
             scale * rng.standard_normal(prob.x_dim)) for _ in range(int(n_probes))]


def _branch(name: str) -> Dict:
    return {'branch': name, 'applicable': False, 'evaluated': 0, 'violations': 0,
            'max_excess': -math.inf, 'passed': True}


def _account(branch: Dict, lhs: float, rhs: float):
    branch['evaluated'] += 1
    excess = lhs - rhs
    branch['max_excess'] = max(branch['max_excess'], excess)
    if excess > CERTIFICATE_RTOL * (1.0 + abs(rhs)):
        branch['violations'] += 1
        branch['passed'] = False


def proposition1_certificate(prob: CoupledProblem, cfg: 'SolverConfig', prev: 'IterateState',
                             curr: 'IterateState', probes: Iterable, earlier: Optional['IterateState'] = None,
                             ops: Optional[DiagnosticOperators] = None) -> Dict:
    """Evaluate both one-step descent inequalities at every probe.

    The small-step inequality applies when tau <= 1; the large-step one
    needs the iterate before prev (``earlier``).
    """
    if curr.k != prev.k + 1 or (earlier is not None and prev.k != earlier.k + 1):
        raise UsageError('proposition1_certificate needs consecutive iterates')
    ops = ops or DiagnosticOperators(prob, cfg)
    tau, sigma = ops.tau, ops.sigma
    x_tilde = prev.x + sigma * curr.residual
    candidate = (curr.u, curr.v, x_tilde)
    theta1, xi1, gamma1 = _step_terms(ops, prev, curr)
    r1 = curr.residual
    r1_sq = float(r1 @ r1)
    mixed = prob.residual(curr.u, prev.v)

    small = _branch('small_step')
    small['applicable'] = tau <= 1.0
    large = _branch('large_step')
    large['applicable'] = earlier is not None
    rhs_small = -0.5 * (theta1 + sigma * float(mixed @ mixed) + (1.0 - tau) * sigma * r1_sq)
    if large['applicable']:
        xi0 = _step_terms(ops, earlier, prev)[1]
        rhs_large = -0.5 * (gamma1 + min(1.0, 1.0 + 1.0 / tau - tau) * sigma * r1_sq)

    n_probes = skipped = 0
    for probe in probes:
        n_probes += 1
        gap = vi_gap(prob, candidate, probe)
        if math.isinf(gap):
            skipped += 1
            continue
        if small['applicable']:
            lhs = gap + 0.5 * (phi_value(prob, ops, curr, probe) - phi_value(prob, ops, prev, probe))
            _account(small, lhs, rhs_small)
        if large['applicable']:
            lhs = gap + 0.5 * (psi_value(prob, ops, curr, probe) + xi1
                               - psi_value(prob, ops, prev, probe) - xi0)
            _account(large, lhs, rhs_large)

    if n_probes and skipped == n_probes:
        raise InfeasibleProbeError(f'all {n_probes} probes fell outside dom(p) x dom(q); '
                                   f'sample with the domain samplers', probes=n_probes)
    return {
        'k': curr.k,
        'tau': tau,
        'probes': n_probes,
        'skipped': skipped,
        'branch_i': small,
        'branch_ii': large,
        'passed': small['passed'] and large['passed'],
    }


def epsilon_approx_probe(candidate, prob: CoupledProblem, n_probes: int, seed: int,
                         epsilon: Optional[float] = None, radius: float = 1.0,
                         domain_aware: bool = False) -> Dict:
    """Largest VI gap over probes sampled uniformly from the ball around the candidate.

    A lower bound on the supremum over the ball. With ``domain_aware`` the u
    and v parts are projected onto dom(p) and dom(q), which keeps them in
    the ball when the candidate lies in the domain.
    """
    cu, cv, cx = _as_triple(candidate)
    center = np.concatenate([cu, cv, cx])
    rng = np.random.default_rng(seed)
    n_u, n_v = prob.u_dim, prob.v_dim
    max_gap = -math.inf
    feasible = 0
    for _ in range(int(n_probes)):
        direction = rng.standard_normal(center.shape[0])
        direction /= max(float(np.linalg.norm(direction)), 1e-300)
        point = center + radius * rng.uniform() ** (1.0 / center.shape[0]) * direction
        u, v, x = point[:n_u], point[n_u:n_u + n_v], point[n_u + n_v:]
        if domain_aware:
            u, v = prob.p.project_domain(u), prob.q.project_domain(v)
        gap = vi_gap(prob, (cu, cv, cx), (u, v, x))
        if math.isinf(gap):
            continue
        feasible += 1
        max_gap = max(max_gap, gap)
    if feasible == 0:
        raise InfeasibleProbeError(f'none of {n_probes} probes lies in dom(p) x dom(q); '
                                   f'retry with domain_aware=True', probes=int(n_probes))
    report = {'max_gap': max_gap, 'probes': int(n_probes), 'feasible': feasible,
              'skipped': int(n_probes) - feasible, 'radius': radius,
              'note': 'lower bound on the supremum over the ball'}
    if epsilon is not None:
        report['epsilon'] = epsilon
        report['approximate'] = max_gap <= epsilon
    return report


# History -------------------------------------------------------------------------

class RunHistory:
    """Per-iteration diagnostics with exact running minima and ergodic sums.

    Rows are kept every ``stride`` iterations plus the first and last; the
    trackers and ergodic sums see every iterate.
    """

    def __init__(self, prob: CoupledProblem, cfg: 'SolverConfig', reference=None, stride: Optional[int] = None):
        self.prob = prob
        self.ops = DiagnosticOperators(prob, cfg)
        self.cfg = self.ops.cfg
        self.reference = None if reference is None else _as_triple(reference)
        if stride is None:
            stride = 1 if prob.total_dim <= settings.get_history_full_dim() else self.cfg.record_every
        self.stride = int(stride)
        self.rows: List[Dict] = []
        self.states: Dict[int, 'IterateState'] = {}
        self.x_tildes: Dict[int, np.ndarray] = {}
        self.initial: Optional['IterateState'] = None
        self.first: Optional['IterateState'] = None
        self.first_xi: Optional[float] = None
        self.last: Optional['IterateState'] = None
        self.min_bound_sq = math.inf
        self.max_phi_increase = -math.inf
        self.max_psi_xi_increase = -math.inf
        self.ergodic_count = 0
        self._sums: Optional[List[np.ndarray]] = None
        self._prev_phi: Optional[float] = None
        self._prev_psi_xi: Optional[float] = None
        self._pending: Optional[Dict] = None
        self._last_x_tilde: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.rows)

    def start(self, state: 'IterateState'):
        self.initial = state
        self.last = state
        self.states[state.k] = state
        if self.reference is not None:
            self._prev_phi = phi_value(self.prob, self.ops, state, self.reference)

    def record(self, prev: 'IterateState', curr: 'IterateState', x_tilde: np.ndarray, witness: KKTWitness) -> Dict:
        prob = self.prob
        n = curr.k - self.initial.k
        lyap = lyapunov(prob, self.cfg, curr, prev, self.reference, ops=self.ops)
        if n == 1:
            self.first = curr
            self.first_xi = lyap.xi_k
        else:
            self.min_bound_sq = min(self.min_bound_sq, witness.bound_sq)
            if self._sums is None:
                self._sums = [np.zeros_like(curr.u), np.zeros_like(curr.v), np.zeros_like(x_tilde)]
            self._sums[0] += curr.u
            self._sums[1] += curr.v
            self._sums[2] += x_tilde
            self.ergodic_count += 1

        if lyap.phi_k is not None:
            self.max_phi_increase = max(self.max_phi_increase, lyap.phi_k - self._prev_phi)
            self._prev_phi = lyap.phi_k
            psi_xi = lyap.psi_k + lyap.xi_k
            if self._prev_psi_xi is not None:
                self.max_psi_xi_increase = max(self.max_psi_xi_increase, psi_xi - self._prev_psi_xi)
            self._prev_psi_xi = psi_xi

        row = {
            'k': curr.k,
            'feas': float(np.linalg.norm(curr.residual)),
            'kkt_bound_sq': witness.bound_sq,
            'min_bound_sq': self.min_bound_sq if self.ergodic_count else math.nan,
            'theta_k': lyap.theta_k,
            'xi_k': lyap.xi_k,
            'gamma_k': lyap.gamma_k,
            'phi_k': lyap.phi_k,
            'psi_k': lyap.psi_k,
            'lambda_k': lyap.lambda_k,
            'lambda_bar_k': lyap.lambda_bar_k,
            'objective': objective(prob, curr.u, curr.v),
            'erg_k': self.ergodic_count,
            'erg_feas': math.nan,
            'erg_objective': math.nan,
        }
        if self.ergodic_count:
            u_hat, v_hat, _ = self.ergodic
            row['erg_feas'] = float(np.linalg.norm(prob.residual(u_hat, v_hat)))
            row['erg_objective'] = objective(prob, u_hat, v_hat)

        self.last = curr
        self._pending = row
        if n == 1 or n % self.stride == 0:
            self._keep(row, curr, x_tilde)
        self._last_x_tilde = x_tilde
        return row

    def _keep(self, row: Dict, state: 'IterateState', x_tilde: np.ndarray):
        self.rows.append(row)
        self.states[state.k] = state
        self.x_tildes[state.k] = x_tilde
        self._pending = None

    def finish(self):
        """Keep the final row even when it falls between strides"""
        if self._pending is not None:
            self._keep(self._pending, self.last, self._last_x_tilde)

    @property
    def ergodic(self) -> Triple:
        return ergodic_state(self)

    @property
    def has_reference(self) -> bool:
        return self.reference is not None

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if row[name] is None else row[name] for row in self.rows], dtype=float)

    def to_frame(self, columns: Optional[Sequence[str]] = None):
        import pandas as pd
        frame = pd.DataFrame(self.rows)
        if columns is not None:
            frame = frame.reindex(columns=list(columns))
        return frame


def ergodic_state(history: RunHistory) -> Triple:
    """Means of u^{i+1}, v^{i+1} and x_tilde^{i+1} over i = 1..k"""
    if history.ergodic_count == 0:
        raise UsageError('ergodic averages need at least two iterations')
    k = history.ergodic_count
    return tuple(total / k for total in history._sums)


# Complexity constants --------------------------------------------------------------

@dataclass
class ComplexityConstants:
    case: str
    tau: float
    sigma: float
    c1: float
    c2: float
    kappa: float
    kappa_b: Optional[float]
    c: float
    phi1: float
    psi_xi1: float
    bound_numerator: float
    c3: float
    d1: float
    c4: float
    c5: float
    d2: Optional[float]
    d3_lower: float
    d3_upper: Optional[float]
    d3: Optional[float]
    lambda1: float
    lambda_bar1: float
    theta_ref: float

    @property
    def theorem3_case(self) -> str:
        return 'a' if self.case == 'i' else 'b'

    def to_dict(self) -> Dict:
        payload = asdict(self)
        payload['theorem3_case'] = self.theorem3_case
        return payload


def complexity_constants(prob: CoupledProblem, cfg: 'SolverConfig', history: RunHistory, reference) -> ComplexityConstants:
    """Constants of the non-ergodic and ergodic iteration-complexity bounds"""
    if history.first is None:
        raise UsageError('complexity constants need at least one recorded iteration')
    reference = _as_triple(reference)
    ops = DiagnosticOperators(prob, cfg)
    dense = conditions.DenseEnvelope(prob, ops.cfg)
    tau, sigma, eta = ops.tau, ops.sigma, ops.eta
    tol = settings.get_pd_tol()

    norm_a_sq = operator_norm(prob.a) ** 2
    norm_b_sq = operator_norm(prob.b) ** 2
    c1 = 5.0 * max(sigma * norm_a_sq, _spectral(dense.q12), _spectral(dense.h),
                   _spectral(dense.s), _spectral(dense.t))
    c2 = 5.0 * (1.0 - tau) ** 2 * sigma ** 2 * (norm_a_sq + norm_b_sq) + 1.0

    zeros_u = np.zeros_like(dense.s)
    o_hat = dense.h + dense.block_diag(dense.s, dense.t + dense.sbb + psd_sqrt(dense.q12.T @ dense.q12))
    o1 = 0.25 * dense.q + dense.block_diag(dense.s + (1 - tau) * dense.saa, dense.t + (1 - tau) * dense.sbb)
    o2 = 0.25 * dense.q + dense.block_diag(dense.s + dense.saa - eta * dense.d1, dense.t + dense.sbb - eta * dense.d2)
    side = 0.25 * dense.q + dense.block_diag(dense.s - eta * dense.d1, dense.t - eta * dense.d2)

    phi1 = phi_value(prob, ops, history.first, reference)
    psi_xi1 = psi_value(prob, ops, history.first, reference) + history.first_xi
    lambda1 = lambda_value(ops, history.first, reference)
    lambda_bar1 = lambda_bar_value(ops, history.first, reference, history.first_xi)

    kappa_b = None
    if tau <= 1.0 and _verdict(o1, tol) == 'strict-PD':
        case = 'i'
        kappa = generalized_max_eigenvalue(o_hat, o1)
        if tau < 1.0:
            c = c1 * (9 - 4 * tau) * kappa + c2 / ((1 - tau) * sigma)
        else:
            kappa_b = generalized_max_eigenvalue(dense.block_diag(zeros_u, dense.sbb / sigma), o1)
            c = c1 * (9 - 4 * tau) * kappa + c2 * (2.0 / sigma + (18 - 8 * tau) * kappa_b)
        numerator = c * phi1
    elif _verdict(side, tol) != 'fail' and _verdict(o2, tol) == 'strict-PD':
        case = 'ii'
        kappa = generalized_max_eigenvalue(o_hat, o2)
        rho = min(tau, 1 + tau - tau ** 2)
        c = c1 * kappa * (1 + (6 * tau + 3) / rho) + c2 * tau / (sigma * rho)
        numerator = c * psi_xi1
    else:
        raise ConstantsUndefinedError('neither O1 (tau <= 1) nor O2 with its side condition is positive definite',
                                      tau=tau)

    x_bar = reference[2]
    dx1 = history.first.x - x_bar
    start = phi1 if case == 'i' else psi_xi1
    c3 = 2.0 * start / (tau * sigma) + 2.0 * float(dx1 @ dx1) / (tau * sigma) ** 2
    c4_op = 0.5 * dense.q + dense.block_diag(dense.d1 + dense.s + 2 * dense.saa, dense.q22 + dense.d2 + dense.t)
    c4 = max(1.0 / (tau * sigma), _spectral(c4_op))
    c5 = (12 + 24 * (1.0 / tau - 1) ** 2) * phi1 + 3 * c4 + 3 * c3
    d2 = c5 / 2.0 if case == 'i' else None

    d3_lower = (float(x_bar @ x_bar) + c3) / 2.0
    if case == 'i':
        d3_upper = lambda1 / 2.0
    elif _verdict(dense.s - eta * dense.d1, tol) != 'fail' and _verdict(dense.t - eta * dense.d2, tol) != 'fail':
        d3_upper = lambda_bar1 / 2.0
    else:
        d3_upper = None
    d3 = None if d3_upper is None else max(d3_lower, d3_upper)

    return ComplexityConstants(
        case=case, tau=tau, sigma=sigma, c1=c1, c2=c2, kappa=kappa, kappa_b=kappa_b, c=c,
        phi1=phi1, psi_xi1=psi_xi1, bound_numerator=numerator, c3=c3, d1=math.sqrt(c3),
        c4=c4, c5=c5, d2=d2, d3_lower=d3_lower, d3_upper=d3_upper, d3=d3,
        lambda1=lambda1, lambda_bar1=lambda_bar1, theta_ref=objective(prob, reference[0], reference[1]),
    )


def _spectral(matrix: np.ndarray) -> float:
    if not np.any(matrix):
        return 0.0
    return float(np.linalg.norm(matrix, 2))


def _verdict(matrix: np.ndarray, tol: float) -> str:
    op = SelfAdjointOperator.from_matrix(0.5 * (matrix + matrix.T))
    return definiteness(*eigenvalue_range(op), tol=tol)


def rate_envelope(history: RunHistory, constants: ComplexityConstants):
    """Scaled rate sequences against the bounds; rate row k is iterate k + 1"""
    import pandas as pd
    records = []
    base = history.initial.k
    for row in history.rows:
        k = row['k'] - base - 1
        if k < 1:
            continue
        min_scaled = row['min_bound_sq'] * k
        erg_scaled = row['erg_feas'] * k
        records.append({
            'k': k,
            'min_bound_sq_times_k': min_scaled,
            'feas_times_k': row['feas'] * k,
            'ergodic_feas_times_k': erg_scaled,
            'bound': constants.bound_numerator,
            'd1': constants.d1,
            'bound_ok': bool(min_scaled <= constants.bound_numerator * (1 + RATE_RTOL) + RATE_RTOL),
            'ergodic_ok': bool(erg_scaled <= constants.d1 + ERGODIC_FEAS_TOL * k),
        })
    return pd.DataFrame(records, columns=['k', 'min_bound_sq_times_k', 'feas_times_k', 'ergodic_feas_times_k',
                                          'bound', 'd1', 'bound_ok', 'ergodic_ok'])


def ergodic_objective_gap(prob: CoupledProblem, history: RunHistory, reference,
                          constants: Optional[ComplexityConstants] = None):
    """theta(u_hat^k, v_hat^k) - theta(u_bar, v_bar) with its lower and upper envelopes"""
    import pandas as pd
    reference = _as_triple(reference)
    if constants is None:
        constants = complexity_constants(prob, history.cfg, history, reference)
    theta_ref = objective(prob, reference[0], reference[1])
    tol = 1e-8 * (1.0 + abs(theta_ref))
    if constants.case == 'i':
        upper_num = constants.lambda1
    else:
        upper_num = None if constants.d3_upper is None else 2.0 * constants.d3_upper
    lower_num = float(reference[2] @ reference[2]) + constants.c3
    records = []
    for row in history.rows:
        k = row['erg_k']
        if not k:
            continue
        gap = row['erg_objective'] - theta_ref
        lower = -lower_num / (2 * k)
        upper = math.nan if upper_num is None else upper_num / (2 * k)
        records.append({
            'k': k,
            'gap': gap,
            'lower': lower,
            'upper': upper,
            'lower_ok': bool(gap >= lower - tol),
            'upper_ok': None if upper_num is None else bool(gap <= upper + tol),
        })
    return pd.DataFrame(records, columns=['k', 'gap', 'lower', 'upper', 'lower_ok', 'upper_ok'])


def o1k_proxy(history: RunHistory, early: int = 10, late: int = 2000) -> Dict:
    """k * min bound_sq at an early and a late k; a finite-k proxy for the o(1/k) limit"""
    base = history.initial.k
    scaled = {}
    for row in history.rows:
        k = row['k'] - base - 1
        if k >= 1:
            scaled[k] = row['min_bound_sq'] * k
    if not scaled:
        raise UsageError('o(1/k) proxy needs at least two iterations')
    early_k = max((k for k in scaled if k <= early), default=min(scaled))
    late_k = max(k for k in scaled if k <= late) if any(k <= late for k in scaled) else max(scaled)
    early_val, late_val = scaled[early_k], scaled[late_k]
    ratio = 0.0 if late_val == 0.0 else (math.inf if early_val == 0.0 else late_val / early_val)
    return {
        'label': 'finite-k proxy for the o(1/k) limit',
        'early_k': early_k,
        'late_k': late_k,
        'early_value': early_val,
        'late_value': late_val,
        'ratio': ratio,
        'passed': ratio < 0.1,
    }
