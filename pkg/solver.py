"""
Majorized ADMM solver
Steps 1-3 of the iteration with the prox-identity and linear-solve
subproblem backends, auto-tuned proximal terms and reference runs
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np
import scipy.linalg

import conditions
import diagnostics
import settings
from errors import ConfigurationError, DimensionError, DivergenceError
from linop import SelfAdjointOperator, as_vector, eigenvalue_range, materialize
from models import CoupledProblem, ProxTerm

logger = logging.getLogger(__name__)

TAU_MAX = (1.0 + math.sqrt(5.0)) / 2.0
LARGE_TAU = 1.61
BACKENDS = ('prox_identity', 'linear_solve')
PROXIMAL_KINDS = ('auto', 'zero')
SCALED_IDENTITY_TOL = 1e-9

Proximal = Union[None, str, SelfAdjointOperator]


@dataclass(frozen=True)
class SolverConfig:
    """Run configuration.

    s_op / t_op accept an operator, 'auto', 'zero' or None. None means
    'auto' for the prox_identity backend and 'zero' for linear_solve.
    tau=None picks the default step length from the convergence checks.
    """
    sigma: float = 1.0
    tau: Optional[float] = None
    s_op: Proximal = None
    t_op: Proximal = None
    u_backend: str = 'prox_identity'
    v_backend: str = 'prox_identity'
    max_iters: int = 500
    kkt_tol: float = 1e-10
    record_every: int = 1
    seed: int = 0
    override_conditions: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigurationError(f'sigma must be positive, got {self.sigma}', field='sigma')
        if self.tau is not None and not 0.0 < self.tau < TAU_MAX:
            raise ConfigurationError(f'tau must lie in (0, {TAU_MAX:.6f}), got {self.tau}', field='tau')
        for name in ('u_backend', 'v_backend'):
            if getattr(self, name) not in BACKENDS:
                raise ConfigurationError(f'{name} must be one of {BACKENDS}, got {getattr(self, name)!r}',
                                         field=name)
        for name in ('s_op', 't_op'):
            value = getattr(self, name)
            if isinstance(value, str) and value not in PROXIMAL_KINDS:
                raise ConfigurationError(f'{name} must be an operator, "auto" or "zero", got {value!r}',
                                         field=name)
        if int(self.max_iters) < 0:
            raise ConfigurationError(f'max_iters must be >= 0, got {self.max_iters}', field='max_iters')
        if not self.kkt_tol > 0:
            raise ConfigurationError(f'kkt_tol must be positive, got {self.kkt_tol}', field='kkt_tol')
        if int(self.record_every) < 1:
            raise ConfigurationError(f'record_every must be >= 1, got {self.record_every}', field='record_every')

    def with_updates(self, **changes) -> 'SolverConfig':
        return dataclasses.replace(self, **changes)

    @property
    def is_resolved(self) -> bool:
        return (isinstance(self.s_op, SelfAdjointOperator) and isinstance(self.t_op, SelfAdjointOperator)
                and self.tau is not None)


@dataclass(frozen=True, eq=False)
class IterateState:
    """(u^k, v^k, x^k) with the residual and gradient at (u^k, v^k)"""
    k: int
    u: np.ndarray
    v: np.ndarray
    x: np.ndarray
    residual: np.ndarray
    grad: np.ndarray

    @classmethod
    def build(cls, prob: CoupledProblem, k: int, u, v, x) -> 'IterateState':
        u = as_vector(u, prob.u_dim, 'u')
        v = as_vector(v, prob.v_dim, 'v')
        x = as_vector(x, prob.x_dim, 'x')
        return cls(int(k), u, v, x, prob.residual(u, v), prob.phi.gradient(np.concatenate([u, v])))

    @classmethod
    def initial(cls, prob: CoupledProblem) -> 'IterateState':
        return cls.build(prob, 0, np.zeros(prob.u_dim), np.zeros(prob.v_dim), np.zeros(prob.x_dim))

    @property
    def w(self) -> np.ndarray:
        return np.concatenate([self.u, self.v])

    def norm(self) -> float:
        return float(np.linalg.norm(np.concatenate([self.u, self.v, self.x])))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.x)))

    def to_dict(self) -> Dict:
        return {'k': self.k, 'u': self.u.tolist(), 'v': self.v.tolist(), 'x': self.x.tolist()}


@dataclass
class Solution:
    status: str
    iterations: int
    state: IterateState
    kkt_bound_sq: float
    x_tilde: Optional[np.ndarray] = None
    ergodic: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None

    @property
    def converged(self) -> bool:
        return self.status == 'converged'

    def to_dict(self) -> Dict:
        payload = {
            'status': self.status,
            'iterations': self.iterations,
            'kkt_bound_sq': self.kkt_bound_sq,
            'solution': self.state.to_dict(),
            'x_tilde': None if self.x_tilde is None else self.x_tilde.tolist(),
        }
        if self.ergodic is not None:
            payload['ergodic'] = {name: arr.tolist() for name, arr in zip(('u', 'v', 'x'), self.ergodic)}
        return payload


# Proximal terms ------------------------------------------------------------

def _base_curvatures(prob: CoupledProblem, sigma: float) -> Tuple[SelfAdjointOperator, SelfAdjointOperator]:
    """sigma AA* + Q11 + D1 and sigma BB* + Q22 + D2"""
    phi = prob.phi
    base_u = prob.a.gram(sigma) + phi.q_lower.q11 + phi.d1
    base_v = prob.b.gram(sigma) + phi.q_lower.q22 + phi.d2
    return base_u, base_v


def _auto_proximal(base: SelfAdjointOperator, name: str) -> Tuple[SelfAdjointOperator, float]:
    matrix = materialize(base)
    _, alpha = eigenvalue_range(base)
    if alpha <= 0:
        logger.warning('%s: largest eigenvalue of the subproblem operator is %.3e, using alpha = 1', name, alpha)
        alpha = 1.0
    s = alpha * np.eye(base.dim) - 0.5 * (matrix + matrix.T)
    logger.info('%s auto-tuned with alpha = %.6g', name, alpha)
    return SelfAdjointOperator.from_matrix(s, psd=True, name=name), float(alpha)


def auto_tune(prob: CoupledProblem, cfg: SolverConfig) -> Dict:
    """S = alpha_u I - (sigma AA* + Q11 + D1) and T likewise, alpha = lambda_max"""
    base_u, base_v = _base_curvatures(prob, cfg.sigma)
    s_op, alpha_u = _auto_proximal(base_u, 'S')
    t_op, alpha_v = _auto_proximal(base_v, 'T')
    return {'S': s_op, 'T': t_op, 'alpha_u': alpha_u, 'alpha_v': alpha_v}


def _resolve_proximal(value: Proximal, backend: str, base: SelfAdjointOperator, dim: int,
                      name: str) -> SelfAdjointOperator:
    if isinstance(value, SelfAdjointOperator):
        if value.dim != dim:
            raise DimensionError(f'{name} must act on a space of dimension {dim}, got {value.dim}')
        return value
    kind = value or ('auto' if backend == 'prox_identity' else 'zero')
    if kind == 'zero':
        return SelfAdjointOperator.zeros(dim, name=name)
    return _auto_proximal(base, name)[0]


def resolve_config(prob: CoupledProblem, cfg: SolverConfig) -> SolverConfig:
    """Config with concrete S, T operators and a concrete tau"""
    if cfg.is_resolved:
        if cfg.s_op.dim != prob.u_dim or cfg.t_op.dim != prob.v_dim:
            raise DimensionError(f'S/T dims ({cfg.s_op.dim}, {cfg.t_op.dim}) do not match '
                                 f'({prob.u_dim}, {prob.v_dim})')
        return cfg
    base_u, base_v = _base_curvatures(prob, cfg.sigma)
    s_op = _resolve_proximal(cfg.s_op, cfg.u_backend, base_u, prob.u_dim, 'S')
    t_op = _resolve_proximal(cfg.t_op, cfg.v_backend, base_v, prob.v_dim, 'T')
    resolved = cfg.with_updates(s_op=s_op, t_op=t_op, tau=1.0 if cfg.tau is None else cfg.tau)
    if cfg.tau is None:
        resolved = resolved.with_updates(tau=default_tau(prob, resolved))
    return resolved


def default_tau(prob: CoupledProblem, cfg: SolverConfig) -> float:
    """1.61 when the large-step convergence conditions verify, else 1"""
    trial = cfg.with_updates(tau=LARGE_TAU)
    if not trial.is_resolved:
        trial = resolve_config(prob, trial)
    report = conditions.check_theorem1_case_ii(prob, trial)
    tau = LARGE_TAU if report['verdict'] == 'pass' else 1.0
    logger.info('default step length tau = %g (large-step conditions: %s)', tau, report['verdict'])
    return tau


# Subproblem backends -------------------------------------------------------

class _BlockStep:
    """Exact minimizer of term(t) + <g, t - center> + 1/2 ||t - center||^2_M"""

    def __init__(self, name: str, term: ProxTerm, curvature: SelfAdjointOperator, backend: str):
        self.name = name
        self.term = term
        self.backend = backend
        matrix = materialize(curvature)
        matrix = 0.5 * (matrix + matrix.T)
        if backend == 'prox_identity':
            alpha = float(np.mean(np.diag(matrix)))
            defect = float(np.max(np.abs(matrix - alpha * np.eye(matrix.shape[0]))))
            if alpha <= 0 or defect > SCALED_IDENTITY_TOL * max(1.0, alpha):
                raise ConfigurationError(
                    f'{name}-subproblem operator is not a positive multiple of the identity '
                    f'(mean diagonal {alpha:.3e}, defect {defect:.3e}); use S/T auto or the linear_solve backend',
                    block=name)
            self.alpha = alpha
            logger.info('%s-step: prox_identity backend with alpha = %.6g', name, alpha)
        else:
            p_matrix, self._b = term.quadratic_parts()
            self._m = matrix
            try:
                self._factor = scipy.linalg.cho_factor(p_matrix + matrix)
            except np.linalg.LinAlgError:
                raise ConfigurationError(f'{name}-subproblem system is not positive definite; '
                                         f'add a proximal term or use another backend', block=name)
            logger.info('%s-step: linear_solve backend, factorized once', name)

    def solve(self, center: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self.backend == 'prox_identity':
            return self.term.prox(center - g / self.alpha, self.alpha)
        return scipy.linalg.cho_solve(self._factor, self._m @ center - g - self._b)


# Iteration -----------------------------------------------------------------

class MajorizedADMM:
    """One configured solver: backends are built once and reused"""

    def __init__(self, prob: CoupledProblem, cfg: SolverConfig):
        self.prob = prob
        self.cfg = resolve_config(prob, cfg)
        phi = prob.phi
        sigma = self.cfg.sigma
        m_u = prob.a.gram(sigma) + phi.q_lower.q11 + phi.d1 + self.cfg.s_op
        m_v = prob.b.gram(sigma) + phi.q_lower.q22 + phi.d2 + self.cfg.t_op
        self._u_block = _BlockStep('u', prob.p, m_u, self.cfg.u_backend)
        self._v_block = _BlockStep('v', prob.q, m_v, self.cfg.v_backend)

    def solve_u_step(self, state: IterateState) -> np.ndarray:
        prob, sigma = self.prob, self.cfg.sigma
        g_u = (state.grad[:prob.u_dim] + prob.a.apply(state.x)
               + sigma * prob.a.apply(state.residual))
        return self._u_block.solve(state.u, g_u)

    def solve_v_step(self, state: IterateState, u_next) -> np.ndarray:
        prob, sigma = self.prob, self.cfg.sigma
        u_next = as_vector(u_next, prob.u_dim, 'u_next')
        # the gradient stays anchored at w^k
        partial = prob.residual(u_next, state.v)
        g_v = (state.grad[prob.u_dim:] + prob.b.apply(state.x) + sigma * prob.b.apply(partial)
               + prob.phi.q_lower.q12.apply_adjoint(u_next - state.u))
        return self._v_block.solve(state.v, g_v)

    def multiplier_step(self, u_next, v_next, x) -> np.ndarray:
        return as_vector(x, self.prob.x_dim, 'x') + self.cfg.tau * self.cfg.sigma * self.prob.residual(u_next, v_next)

    def step(self, state: IterateState) -> Tuple[IterateState, np.ndarray]:
        """Next iterate and x_tilde = x^k + sigma r^{k+1}"""
        u_next = self.solve_u_step(state)
        v_next = self.solve_v_step(state, u_next)
        nxt = IterateState.build(self.prob, state.k + 1, u_next, v_next,
                                 self.multiplier_step(u_next, v_next, state.x))
        return nxt, state.x + self.cfg.sigma * nxt.residual

    def check_gate(self):
        """Raise unless the convergence conditions verify or are overridden"""
        if self.cfg.override_conditions:
            logger.info('convergence conditions not enforced (override set)')
            return
        reports = {'theorem1_ii': conditions.check_theorem1_case_ii(self.prob, self.cfg)}
        if self.cfg.tau <= 1.0:
            reports['theorem1_i'] = conditions.check_theorem1_case_i(self.prob, self.cfg)
        verdict = conditions.gate_verdict(reports, self.cfg.tau)
        if verdict == 'pass':
            return
        verdicts = {clause: report['verdict'] for clause, report in reports.items()}
        raise ConfigurationError(f'convergence conditions {verdict} for this configuration: {verdicts}',
                                 verdict=verdict, verdicts=verdicts)

    def run(self, init: Optional[IterateState] = None, reference=None,
            stride: Optional[int] = None) -> Tuple[Solution, 'diagnostics.RunHistory']:
        prob, cfg = self.prob, self.cfg
        self.check_gate()
        state = init if init is not None else IterateState.initial(prob)
        history = diagnostics.RunHistory(prob, cfg, reference=reference, stride=stride)
        history.start(state)
        limit = settings.get_divergence_norm()
        logger.info('run start: sigma=%g tau=%g max_iters=%d tol=%g', cfg.sigma, cfg.tau, cfg.max_iters, cfg.kkt_tol)

        status = 'max_iters'
        bound_sq = math.nan
        x_tilde = None
        for _ in range(int(cfg.max_iters)):
            nxt, x_tilde = self.step(state)
            if not nxt.is_finite() or nxt.norm() > limit:
                history.finish()
                raise DivergenceError(f'iterate norm exceeded {limit:g} or became non-finite at iteration {nxt.k}',
                                      iteration=nxt.k, history=history)
            witness = diagnostics.kkt_witness(prob, cfg, state, nxt, ops=history.ops)
            history.record(state, nxt, x_tilde, witness)
            state = nxt
            bound_sq = witness.bound_sq
            if nxt.k % cfg.record_every == 0:
                logger.debug('k=%d feas=%.3e bound_sq=%.3e', nxt.k, float(np.linalg.norm(nxt.residual)), bound_sq)
            if math.sqrt(bound_sq) <= cfg.kkt_tol:
                status = 'converged'
                break
        history.finish()

        iterations = state.k - (init.k if init is not None else 0)
        logger.info('run stop: %s after %d iterations, bound_sq=%.3e', status, iterations, bound_sq)
        ergodic = history.ergodic if history.ergodic_count else None
        return Solution(status, iterations, state, bound_sq, x_tilde, ergodic), history


# Module-level operations -----------------------------------------------------

def solve_u_step(prob: CoupledProblem, cfg: SolverConfig, state: IterateState) -> np.ndarray:
    return MajorizedADMM(prob, cfg).solve_u_step(state)


def solve_v_step(prob: CoupledProblem, cfg: SolverConfig, state: IterateState, u_next) -> np.ndarray:
    return MajorizedADMM(prob, cfg).solve_v_step(state, u_next)


def multiplier_step(cfg: SolverConfig, u_next, v_next, x, prob: CoupledProblem) -> np.ndarray:
    tau = cfg.tau if cfg.tau is not None else resolve_config(prob, cfg).tau
    return as_vector(x, prob.x_dim, 'x') + tau * cfg.sigma * prob.residual(u_next, v_next)


def run(prob: CoupledProblem, cfg: SolverConfig, init: Optional[IterateState] = None,
        reference=None) -> Tuple[Solution, 'diagnostics.RunHistory']:
    return MajorizedADMM(prob, cfg).run(init=init, reference=reference)


def subproblem_residual(prob: CoupledProblem, cfg: SolverConfig, state: IterateState, u_next,
                        v_next=None) -> Dict[str, Optional[float]]:
    """Natural residuals ||t - prox(t - grad, 1)|| of both block subproblems"""
    cfg = resolve_config(prob, cfg)
    phi, sigma = prob.phi, cfg.sigma
    u_next = as_vector(u_next, prob.u_dim, 'u_next')
    du = u_next - state.u
    grad_u = (state.grad[:prob.u_dim] + prob.a.apply(state.x)
              + sigma * prob.a.apply(prob.residual(u_next, state.v))
              + phi.q_lower.q11.apply(du) + phi.d1.apply(du) + cfg.s_op.apply(du))
    result = {'u': float(np.linalg.norm(u_next - prob.p.prox(u_next - grad_u, 1.0))), 'v': None}
    if v_next is not None:
        v_next = as_vector(v_next, prob.v_dim, 'v_next')
        dv = v_next - state.v
        grad_v = (state.grad[prob.u_dim:] + prob.b.apply(state.x)
                  + sigma * prob.b.apply(prob.residual(u_next, v_next))
                  + phi.q_lower.q22.apply(dv) + phi.d2.apply(dv) + cfg.t_op.apply(dv)
                  + phi.q_lower.q12.apply_adjoint(du))
        result['v'] = float(np.linalg.norm(v_next - prob.q.prox(v_next - grad_v, 1.0)))
    return result


def dense_kkt_solution(prob: CoupledProblem) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Direct solve of [[Qtilde + P, K], [K^T, 0]] [w; x] = [-l - b; c] for smooth QPs"""
    phi = prob.phi
    if phi.kind != 'quadratic' or phi.params['logistic']['f'] or phi.params['logistic']['g']:
        raise ConfigurationError('dense KKT solve needs a purely quadratic coupling')
    if not (prob.p.is_smooth and prob.q.is_smooth):
        raise ConfigurationError('dense KKT solve needs zero or quadratic p and q')
    p_u, b_u = prob.p.quadratic_parts()
    p_v, b_v = prob.q.quadratic_parts()
    hess = phi.params['qtilde'] + scipy.linalg.block_diag(p_u, p_v)
    lin = phi.params['linear'] + np.concatenate([b_u, b_v])
    k = np.vstack([materialize(prob.a), materialize(prob.b)])
    n, m = hess.shape[0], prob.x_dim
    lhs = np.block([[hess, k], [k.T, np.zeros((m, m))]])
    rhs = np.concatenate([-lin, prob.c])
    try:
        sol = scipy.linalg.solve(lhs, rhs, assume_a='sym')
    except np.linalg.LinAlgError:
        raise ConfigurationError('KKT matrix is singular')
    return sol[:prob.u_dim], sol[prob.u_dim:n], sol[n:]


def reference_solution(prob: CoupledProblem, cfg: SolverConfig,
                       max_iters: int = 100000) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """High-accuracy (u, v, x): analytic or dense when available, else a long run"""
    if prob.solution is not None:
        return tuple(np.asarray(part, dtype=float) for part in prob.solution)
    try:
        return dense_kkt_solution(prob)
    except ConfigurationError:
        pass
    long_cfg = cfg.with_updates(kkt_tol=1e-12, max_iters=max(int(max_iters), int(cfg.max_iters)))
    solver = MajorizedADMM(prob, long_cfg)
    solution, _ = solver.run(stride=long_cfg.max_iters + 1)
    if not solution.converged:
        logger.warning('reference run stopped at %d iterations with bound_sq %.3e',
                       solution.iterations, solution.kkt_bound_sq)
    state = solution.state
    return state.u.copy(), state.v.copy(), state.x.copy()
