"""
Problem model for madmm
Nonsmooth prox terms p and q, the smooth coupling phi with its curvature
envelope (Q, H = Diag(D1, D2), eta), and the constraint A*u + B*v = c
"""

import logging
import math
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.special import expit

import prox_utils
from errors import ConfigurationError, DimensionError
from linop import (BlockCurvature, LinearMap, SelfAdjointOperator, as_vector,
                   materialize, seminorm_sq)

logger = logging.getLogger(__name__)

PROX_KINDS = ('zero', 'l1', 'quadratic', 'box', 'nonneg', 'ball')
INDICATOR_KINDS = ('box', 'nonneg', 'ball')
COUPLING_KINDS = ('zero', 'quadratic', 'projection_penalty', 'custom')


class ProxTerm:
    """Closed proper convex term with an exact prox.

    Kinds: zero, l1 (weight * ||t||_1), quadratic (1/2 t'Pt + b't) and the
    indicators box / nonneg / ball. Indicator values are 0 or +inf.
    """

    def __init__(self, kind: str, dim: int, params: Optional[Dict] = None):
        if kind not in PROX_KINDS:
            raise ConfigurationError(f'unknown prox term kind {kind!r}', kind=kind)
        if int(dim) < 1:
            raise DimensionError(f'prox term dimension must be positive, got {dim}')
        self.kind = kind
        self.dim = int(dim)
        self.params = self._check_params(dict(params or {}))

    def _check_params(self, params: Dict) -> Dict:
        if self.kind == 'l1':
            weight = float(params.get('weight', 1.0))
            if weight < 0:
                raise ConfigurationError(f'l1 weight must be >= 0, got {weight}')
            return {'weight': weight}
        if self.kind == 'quadratic':
            p = np.atleast_2d(np.asarray(params.get('P', np.zeros((self.dim, self.dim))), dtype=float))
            b = np.asarray(params.get('b', np.zeros(self.dim)), dtype=float).reshape(-1)
            if p.shape != (self.dim, self.dim) or b.shape != (self.dim,):
                raise DimensionError(f'quadratic term needs P {self.dim}x{self.dim} and b of length {self.dim}')
            if np.max(np.abs(p - p.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(p), initial=0.0)):
                raise ConfigurationError('quadratic term needs a symmetric P')
            return {'P': p, 'b': b}
        if self.kind in INDICATOR_KINDS:
            return prox_utils.normalize_set(dict(params, kind=self.kind), self.dim)
        return {}

    # Constructors -----------------------------------------------------------

    @classmethod
    def zero(cls, dim: int) -> 'ProxTerm':
        return cls('zero', dim)

    @classmethod
    def l1(cls, dim: int, weight: float = 1.0) -> 'ProxTerm':
        return cls('l1', dim, {'weight': weight})

    @classmethod
    def quadratic(cls, p, b=None) -> 'ProxTerm':
        p = np.atleast_2d(np.asarray(p, dtype=float))
        return cls('quadratic', p.shape[0], {'P': p, 'b': np.zeros(p.shape[0]) if b is None else b})

    @classmethod
    def box(cls, dim: int, lo=-1.0, hi=1.0) -> 'ProxTerm':
        return cls('box', dim, {'lo': lo, 'hi': hi})

    @classmethod
    def nonneg(cls, dim: int) -> 'ProxTerm':
        return cls('nonneg', dim)

    @classmethod
    def ball(cls, dim: int, center=0.0, radius: float = 1.0) -> 'ProxTerm':
        return cls('ball', dim, {'center': center, 'radius': radius})

    @classmethod
    def indicator(cls, descriptor: Dict, dim: int) -> 'ProxTerm':
        params = {k: v for k, v in descriptor.items() if k != 'kind'}
        return cls(descriptor.get('kind', ''), dim, params)

    # Oracles ----------------------------------------------------------------

    @property
    def is_indicator(self) -> bool:
        return self.kind in INDICATOR_KINDS

    @property
    def is_smooth(self) -> bool:
        return self.kind in ('zero', 'quadratic')

    @property
    def set_descriptor(self) -> Optional[Dict]:
        return self.params if self.is_indicator else None

    def value(self, t) -> float:
        t = as_vector(t, self.dim, f'{self.kind} term')
        if self.kind == 'zero':
            return 0.0
        if self.kind == 'l1':
            return self.params['weight'] * float(np.sum(np.abs(t)))
        if self.kind == 'quadratic':
            return 0.5 * float(t @ self.params['P'] @ t) + float(self.params['b'] @ t)
        return 0.0 if prox_utils.set_contains(self.params, t) else math.inf

    def in_domain(self, t) -> bool:
        return math.isfinite(self.value(t))

    def prox(self, z, alpha: float) -> np.ndarray:
        """argmin_t value(t) + alpha/2 ||t - z||^2"""
        if alpha <= 0:
            raise ConfigurationError(f'prox weight must be positive, got {alpha}')
        z = as_vector(z, self.dim, f'{self.kind} prox')
        if self.kind == 'zero':
            return z.copy()
        if self.kind == 'l1':
            return prox_utils.soft_threshold(z, self.params['weight'] / alpha)
        if self.kind == 'quadratic':
            lhs = self.params['P'] + alpha * np.eye(self.dim)
            return scipy.linalg.solve(lhs, alpha * z - self.params['b'], assume_a='pos')
        return prox_utils.set_project(self.params, z)

    def gradient(self, t) -> np.ndarray:
        if not self.is_smooth:
            raise ConfigurationError(f'{self.kind} term has no gradient')
        t = as_vector(t, self.dim, f'{self.kind} gradient')
        if self.kind == 'zero':
            return np.zeros(self.dim)
        return self.params['P'] @ t + self.params['b']

    def quadratic_parts(self) -> Tuple[np.ndarray, np.ndarray]:
        """(P, b) of a zero or quadratic term"""
        if self.kind == 'zero':
            return np.zeros((self.dim, self.dim)), np.zeros(self.dim)
        if self.kind == 'quadratic':
            return self.params['P'], self.params['b']
        raise ConfigurationError(f'{self.kind} term is not quadratic')

    def sample_domain(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        """A point with finite value"""
        if self.is_indicator:
            return prox_utils.set_sample(self.params, self.dim, rng, scale)
        return scale * rng.standard_normal(self.dim)

    def project_domain(self, t) -> np.ndarray:
        t = as_vector(t, self.dim, f'{self.kind} domain projection')
        if self.is_indicator:
            return prox_utils.set_project(self.params, t)
        return t.copy()

    def to_dict(self) -> Dict:
        params = {}
        for key, val in self.params.items():
            if key == 'kind':
                continue
            params[key] = val.tolist() if isinstance(val, np.ndarray) else val
        return {'kind': self.kind, 'params': params}

    @classmethod
    def from_dict(cls, doc: Dict, dim: int) -> 'ProxTerm':
        return cls(doc['kind'], dim, doc.get('params') or {})

    def __repr__(self) -> str:
        return f'ProxTerm({self.kind}, dim={self.dim})'


class SmoothCoupling:
    """Smooth convex coupling phi(u, v) with curvature envelope.

    Q (q_lower) and Q + H bound every generalized Hessian from below and
    above, H = Diag(d1, d2), and eta bounds the off-diagonal deviation.
    """

    def __init__(self, u_dim: int, v_dim: int, value: Callable, gradient: Callable,
                 q_lower: BlockCurvature, d1: SelfAdjointOperator, d2: SelfAdjointOperator,
                 eta: float = 1.0, kind: str = 'custom', params: Optional[Dict] = None,
                 sigma_f: Optional[SelfAdjointOperator] = None, sigma_g: Optional[SelfAdjointOperator] = None):
        if q_lower.u_dim != u_dim or q_lower.v_dim != v_dim or d1.dim != u_dim or d2.dim != v_dim:
            raise DimensionError(f'coupling envelope does not match dims ({u_dim}, {v_dim})')
        if not 0.0 <= eta <= 1.0:
            raise ConfigurationError(f'eta must lie in [0, 1], got {eta}')
        if kind not in COUPLING_KINDS:
            raise ConfigurationError(f'unknown coupling kind {kind!r}')
        self.u_dim = int(u_dim)
        self.v_dim = int(v_dim)
        self._value = value
        self._gradient = gradient
        self.q_lower = q_lower
        self.d1 = d1
        self.d2 = d2
        self.eta = float(eta)
        self.kind = kind
        self.params = params or {}
        self.sigma_f = sigma_f if sigma_f is not None else SelfAdjointOperator.zeros(u_dim, name='Sigma_f')
        self.sigma_g = sigma_g if sigma_g is not None else SelfAdjointOperator.zeros(v_dim, name='Sigma_g')
        self._q = None
        self._h = None

    @property
    def dim(self) -> int:
        return self.u_dim + self.v_dim

    def value(self, w) -> float:
        return float(self._value(as_vector(w, self.dim, 'phi')))

    def gradient(self, w) -> np.ndarray:
        return np.asarray(self._gradient(as_vector(w, self.dim, 'grad phi')), dtype=float)

    @property
    def q_operator(self) -> SelfAdjointOperator:
        if self._q is None:
            self._q = self.q_lower.assemble()
        return self._q

    @property
    def h_operator(self) -> SelfAdjointOperator:
        if self._h is None:
            self._h = SelfAdjointOperator.block_diag(self.d1, self.d2)
        return self._h

    # Constructors -----------------------------------------------------------

    @classmethod
    def zero(cls, u_dim: int, v_dim: int) -> 'SmoothCoupling':
        n = u_dim + v_dim
        return cls(u_dim, v_dim, lambda w: 0.0, lambda w: np.zeros(n), BlockCurvature.zeros(u_dim, v_dim),
                   SelfAdjointOperator.zeros(u_dim, name='D1'), SelfAdjointOperator.zeros(v_dim, name='D2'),
                   eta=0.0, kind='zero')

    @classmethod
    def quadratic(cls, qtilde, u_dim: int, linear=None, logistic_f: float = 0.0,
                  logistic_g: float = 0.0) -> 'SmoothCoupling':
        """1/2 <w, Qtilde w> + <l, w> plus optional separable logistic parts.

        The logistic parts f(u) = wf * sum log(1 + e^u_i) have Hessians
        between 0 and wf/4 I, so Q = Qtilde and H = Diag(wf/4 I, wg/4 I).
        """
        qt = np.atleast_2d(np.asarray(qtilde, dtype=float))
        n = qt.shape[0]
        v_dim = n - u_dim
        lin = np.zeros(n) if linear is None else as_vector(linear, n, 'linear term')
        wf, wg = float(logistic_f), float(logistic_g)
        if wf < 0 or wg < 0:
            raise ConfigurationError('logistic weights must be nonnegative')

        def value(w):
            total = 0.5 * float(w @ qt @ w) + float(lin @ w)
            if wf:
                total += wf * float(np.sum(np.logaddexp(0.0, w[:u_dim])))
            if wg:
                total += wg * float(np.sum(np.logaddexp(0.0, w[u_dim:])))
            return total

        def gradient(w):
            grad = qt @ w + lin
            if wf:
                grad[:u_dim] += wf * expit(w[:u_dim])
            if wg:
                grad[u_dim:] += wg * expit(w[u_dim:])
            return grad

        params = {'qtilde': qt, 'linear': lin, 'logistic': {'f': wf, 'g': wg}}
        return cls(u_dim, v_dim, value, gradient, BlockCurvature.from_matrix(qt, u_dim),
                   SelfAdjointOperator.identity(u_dim, wf / 4.0, name='D1'),
                   SelfAdjointOperator.identity(v_dim, wg / 4.0, name='D2'),
                   eta=0.0, kind='quadratic', params=params)

    @classmethod
    def projection_penalty(cls, qtilde, u_dim: int, rho: float, k1: Dict, linear=None,
                           eta: float = 1.0) -> 'SmoothCoupling':
        """1/2 <w, Qtilde w> + <l, w> + rho/2 dist^2(w, K1) with Q = Qtilde, H = rho I"""
        if rho <= 0:
            raise ConfigurationError(f'penalty rho must be positive, got {rho}')
        qt = np.atleast_2d(np.asarray(qtilde, dtype=float))
        n = qt.shape[0]
        v_dim = n - u_dim
        k1 = prox_utils.normalize_set(k1, n)
        lin = np.zeros(n) if linear is None else as_vector(linear, n, 'linear term')

        def value(w):
            return 0.5 * float(w @ qt @ w) + float(lin @ w) + 0.5 * rho * prox_utils.dist_sq(k1, w)

        def gradient(w):
            # one projection per call
            return qt @ w + lin + rho * (w - prox_utils.set_project(k1, w))

        params = {'qtilde': qt, 'linear': lin, 'rho': float(rho), 'k1': k1}
        return cls(u_dim, v_dim, value, gradient, BlockCurvature.from_matrix(qt, u_dim),
                   SelfAdjointOperator.identity(u_dim, rho, name='D1'),
                   SelfAdjointOperator.identity(v_dim, rho, name='D2'),
                   eta=eta, kind='projection_penalty', params=params)

    def __repr__(self) -> str:
        return f'SmoothCoupling({self.kind}, u_dim={self.u_dim}, v_dim={self.v_dim}, eta={self.eta:g})'


class CoupledProblem:
    """min p(u) + q(v) + phi(u, v)  s.t.  A*u + B*v = c"""

    def __init__(self, p: ProxTerm, q: ProxTerm, phi: SmoothCoupling, a: LinearMap, b: LinearMap, c,
                 family: str = 'custom', solution: Optional[Tuple] = None, meta: Optional[Dict] = None):
        self.c = np.asarray(c, dtype=float).reshape(-1)
        x_dim = self.c.shape[0]
        problems: List[str] = []
        if a.in_dim != x_dim or b.in_dim != x_dim:
            problems.append(f'A and B must act on X (dim {x_dim}), got {a.in_dim} and {b.in_dim}')
        if a.out_dim != p.dim or a.out_dim != phi.u_dim:
            problems.append(f'U dims disagree: A->{a.out_dim}, p {p.dim}, phi {phi.u_dim}')
        if b.out_dim != q.dim or b.out_dim != phi.v_dim:
            problems.append(f'V dims disagree: B->{b.out_dim}, q {q.dim}, phi {phi.v_dim}')
        if problems:
            raise DimensionError('; '.join(problems))
        self.p = p
        self.q = q
        self.phi = phi
        self.a = a
        self.b = b
        self.family = family
        self.solution = solution
        self.meta = meta or {}

    @property
    def u_dim(self) -> int:
        return self.p.dim

    @property
    def v_dim(self) -> int:
        return self.q.dim

    @property
    def x_dim(self) -> int:
        return self.c.shape[0]

    @property
    def total_dim(self) -> int:
        return self.u_dim + self.v_dim + self.x_dim

    def residual(self, u, v) -> np.ndarray:
        """A*u + B*v - c"""
        return self.a.apply_adjoint(u) + self.b.apply_adjoint(v) - self.c

    def join(self, u, v) -> np.ndarray:
        return np.concatenate([as_vector(u, self.u_dim, 'u'), as_vector(v, self.v_dim, 'v')])

    def split(self, w) -> Tuple[np.ndarray, np.ndarray]:
        w = as_vector(w, self.u_dim + self.v_dim, 'w')
        return w[:self.u_dim], w[self.u_dim:]


def objective(prob: CoupledProblem, u, v) -> float:
    """theta(u, v) = p(u) + q(v) + phi(u, v); +inf outside dom p x dom q"""
    pu = prob.p.value(u)
    qv = prob.q.value(v)
    if math.isinf(pu) or math.isinf(qv):
        return math.inf
    return pu + qv + prob.phi.value(prob.join(u, v))


def majorized_phi(phi: SmoothCoupling, w, anchor) -> float:
    """phi(anchor) + <grad phi(anchor), w - anchor> + 1/2 ||w - anchor||^2_{Q+H}"""
    w = as_vector(w, phi.dim, 'w')
    anchor = as_vector(anchor, phi.dim, 'anchor')
    d = w - anchor
    return (phi.value(anchor) + float(phi.gradient(anchor) @ d)
            + 0.5 * (seminorm_sq(phi.q_operator, d) + seminorm_sq(phi.h_operator, d)))


def augmented_lagrangian(prob: CoupledProblem, sigma: float, u, v, x) -> float:
    r = prob.residual(u, v)
    x = as_vector(x, prob.x_dim, 'x')
    return objective(prob, u, v) + float(x @ r) + 0.5 * sigma * float(r @ r)


def majorized_augmented_lagrangian(prob: CoupledProblem, sigma: float, u, v, x, anchor) -> float:
    """Augmented Lagrangian with phi replaced by its majorization at anchor"""
    pu, qv = prob.p.value(u), prob.q.value(v)
    if math.isinf(pu) or math.isinf(qv):
        return math.inf
    r = prob.residual(u, v)
    x = as_vector(x, prob.x_dim, 'x')
    return (pu + qv + majorized_phi(prob.phi, prob.join(u, v), anchor)
            + float(x @ r) + 0.5 * sigma * float(r @ r))


def validate_envelope(phi: SmoothCoupling, sampler_seed: int = 0, n_samples: int = 100,
                      scale: float = 2.0) -> Dict:
    """Sampled check of the majorization sandwich, the gradient and eta.

    Failures are report entries, never exceptions.
    """
    if n_samples < 1:
        raise ConfigurationError(f'n_samples must be >= 1, got {n_samples}')
    rng = np.random.default_rng(sampler_seed)
    q_op, h_op = phi.q_operator, phi.h_operator
    passes = lower_fail = upper_fail = 0
    worst = 0.0
    for _ in range(n_samples):
        w = scale * rng.standard_normal(phi.dim)
        w_prev = scale * rng.standard_normal(phi.dim)
        d = w - w_prev
        f_w, f_prev = phi.value(w), phi.value(w_prev)
        linear = f_prev + float(phi.gradient(w_prev) @ d)
        tol = 1e-8 * (1.0 + abs(f_w))
        below = linear + 0.5 * seminorm_sq(q_op, d) - f_w
        above = f_w - (linear + 0.5 * (seminorm_sq(q_op, d) + seminorm_sq(h_op, d)))
        worst = max(worst, below, above, 0.0)
        ok = True
        if below > tol:
            lower_fail += 1
            ok = False
        if above > tol:
            upper_fail += 1
            ok = False
        passes += ok

    report = {
        'samples': n_samples,
        'sandwich_pass': passes,
        'sandwich_fail': n_samples - passes,
        'lower_fail': lower_fail,
        'upper_fail': upper_fail,
        'worst_violation': worst,
        'gradient': _gradient_check(phi, rng, min(n_samples, 100), scale),
        'cross_term': _cross_term_check(phi, rng, min(n_samples, 100), scale),
    }
    # sampled cross-term violations are warnings only
    passed = report['sandwich_fail'] == 0
    if report['cross_term']['mode'] == 'dense':
        passed = passed and report['cross_term']['violations'] == 0
    report['passed'] = passed
    return report


def _gradient_check(phi: SmoothCoupling, rng: np.random.Generator, n_points: int, scale: float) -> Dict:
    worst = 0.0
    for _ in range(n_points):
        w = scale * rng.standard_normal(phi.dim)
        grad = phi.gradient(w)
        fd = np.empty(phi.dim)
        for i in range(phi.dim):
            h = 1e-6 * (1.0 + abs(w[i]))
            e = np.zeros(phi.dim)
            e[i] = h
            fd[i] = (phi.value(w + e) - phi.value(w - e)) / (2 * h)
        worst = max(worst, float(np.linalg.norm(fd - grad)) / (1.0 + float(np.linalg.norm(grad))))
    return {'points': n_points, 'worst_rel_error': worst, 'passed': worst <= 1e-5}


def _cross_term_check(phi: SmoothCoupling, rng: np.random.Generator, n_points: int, scale: float) -> Dict:
    """|<u, (W12 - Q12) v>| <= eta/2 (||u||^2_D1 + ||v||^2_D2)"""
    u_dim = phi.u_dim
    q12 = materialize(phi.q_lower.q12)
    if phi.kind in ('quadratic', 'zero'):
        # W12 is the off-diagonal block of Qtilde; separable parts add nothing off the diagonal
        w12 = phi.params['qtilde'][:u_dim, u_dim:] if phi.kind == 'quadratic' else np.zeros_like(q12)
        e = w12 - q12
        d1, d2 = materialize(phi.d1), materialize(phi.d2)
        test = np.block([[phi.eta * d1, -e], [-e.T, phi.eta * d2]])
        lam_min = float(scipy.linalg.eigvalsh(0.5 * (test + test.T))[0])
        tol = 1e-9 * max(1.0, float(np.max(np.abs(test), initial=0.0)))
        violations = 0 if lam_min >= -tol else 1
        return {'mode': 'dense', 'lambda_min': lam_min, 'violations': violations, 'warnings': []}

    warnings: List[str] = []
    worst_ratio = 0.0
    for idx in range(n_points):
        w = scale * rng.standard_normal(phi.dim)
        u = rng.standard_normal(u_dim)
        v = rng.standard_normal(phi.v_dim)
        h = 1e-6
        shift = np.concatenate([np.zeros(u_dim), h * v])
        secant_v = (phi.gradient(w + shift)[:u_dim] - phi.gradient(w - shift)[:u_dim]) / (2 * h)
        lhs = abs(float(u @ (secant_v - q12 @ v)))
        rhs = 0.5 * phi.eta * (seminorm_sq(phi.d1, u) + seminorm_sq(phi.d2, v))
        if rhs > 0:
            worst_ratio = max(worst_ratio, lhs / rhs)
        if lhs > rhs + 1e-6 * (1.0 + rhs):
            warnings.append(f'sample {idx}: |cross term| {lhs:.3e} exceeds bound {rhs:.3e}')
    for message in warnings:
        logger.warning('cross-term check: %s', message)
    return {'mode': 'sampled', 'worst_ratio': worst_ratio, 'violations': len(warnings), 'warnings': warnings}
