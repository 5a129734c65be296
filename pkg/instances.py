"""
Instance generators for madmm
Seeded, reproducible problem families: analytic golden instance, coupled
QPs, projection-penalty problems and separable recovery problems
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

import prox_utils
from errors import ConfigurationError, InstanceSpecError
from linop import LinearMap
from models import CoupledProblem, ProxTerm, SmoothCoupling

logger = logging.getLogger(__name__)

FAMILIES = ('analytic_tiny', 'quadratic_coupled', 'projection_penalty', 'separable_recovery')
TERM_KINDS = ('zero', 'l1', 'box', 'nonneg')
DEFAULT_DIMS = {
    'analytic_tiny': (1, 1, 1),
    'quadratic_coupled': (10, 10, 5),
    'projection_penalty': (4, 4, 3),
    'separable_recovery': (2, 3, 3),
}


@dataclass
class InstanceSpec:
    """Generator input; identical specs give identical instances"""
    family: str
    dims: Optional[Tuple[int, int, int]] = None
    seed: int = 0
    conditioning: float = 10.0
    sparsity: float = 0.0
    sets: Dict[str, Dict] = field(default_factory=dict)
    rho: float = 1.0
    p_kind: Optional[str] = None
    q_kind: Optional[str] = None
    l1_weight: float = 0.1
    linear_scale: float = 1.0
    separable_smooth: Optional[Dict[str, float]] = None
    eta: float = 1.0
    a_scale: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InstanceSpecError(f'family must be one of {FAMILIES}, got {self.family!r}', field='family')
        if self.dims is None:
            self.dims = DEFAULT_DIMS[self.family]
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise InstanceSpecError(f'dims must be three positive integers, got {self.dims!r}', field='dims')
        self.dims = tuple(int(d) for d in self.dims)
        if not self.conditioning >= 1:
            raise InstanceSpecError(f'conditioning must be >= 1, got {self.conditioning}', field='conditioning')
        if not 0.0 <= self.sparsity < 1.0:
            raise InstanceSpecError(f'sparsity must lie in [0, 1), got {self.sparsity}', field='sparsity')
        if not self.rho > 0:
            raise InstanceSpecError(f'rho must be positive, got {self.rho}', field='rho')
        if not 0.0 <= self.eta <= 1.0:
            raise InstanceSpecError(f'eta must lie in [0, 1], got {self.eta}', field='eta')
        if self.l1_weight < 0 or self.a_scale <= 0:
            raise InstanceSpecError('l1_weight must be >= 0 and a_scale > 0', field='l1_weight')
        for name in ('p_kind', 'q_kind'):
            kind = getattr(self, name)
            if kind is not None and kind not in TERM_KINDS:
                raise InstanceSpecError(f'{name} must be one of {TERM_KINDS}, got {kind!r}', field=name)
        for key in self.sets:
            if key not in ('K1', 'K2', 'K3'):
                raise InstanceSpecError(f'unknown set {key!r}; expected K1, K2 or K3', field=f'sets/{key}')

    @classmethod
    def from_dict(cls, doc: Dict) -> 'InstanceSpec':
        doc = dict(doc)
        dims = doc.pop('dims', None)
        if isinstance(dims, dict):
            dims = (dims.get('u'), dims.get('v'), dims.get('x'))
            if any(d is None for d in dims):
                raise InstanceSpecError('dims needs u, v and x', field='dims')
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise InstanceSpecError(f'unknown spec fields: {sorted(unknown)}', field=sorted(unknown)[0])
        return cls(dims=dims, **doc)

    def to_dict(self) -> Dict:
        doc = asdict(self)
        u, v, x = self.dims
        doc['dims'] = {'u': u, 'v': v, 'x': x}
        return {key: val for key, val in doc.items() if val is not None}


# Random building blocks --------------------------------------------------------

def random_orthogonal(rng: np.random.Generator, n: int, k: Optional[int] = None) -> np.ndarray:
    """n x k matrix with orthonormal columns, signs fixed by the R diagonal"""
    k = n if k is None else k
    q, r = np.linalg.qr(rng.standard_normal((n, k)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def conditioned_psd(rng: np.random.Generator, n: int, conditioning: float) -> np.ndarray:
    """O diag(logspace(0, -log10(cond))) O^T with an exact condition number"""
    spectrum = np.logspace(0.0, -math.log10(conditioning), n)
    o = random_orthogonal(rng, n)
    m = (o * spectrum) @ o.T
    return 0.5 * (m + m.T)


def _constraint_matrix(rng: np.random.Generator, rows: int, cols: int, sparsity: float) -> np.ndarray:
    m = rng.standard_normal((rows, cols)) / math.sqrt(cols)
    if sparsity > 0:
        m = m * (rng.uniform(size=(rows, cols)) >= sparsity)
    return m


def _term(kind: str, dim: int, spec: InstanceSpec, set_key: str) -> ProxTerm:
    if kind == 'zero':
        return ProxTerm.zero(dim)
    if kind == 'l1':
        return ProxTerm.l1(dim, spec.l1_weight)
    descriptor = spec.sets.get(set_key) or {'kind': kind}
    if descriptor.get('kind') not in ('box', 'nonneg'):
        raise InstanceSpecError(f'{set_key} must be a box or nonneg descriptor', field=f'sets/{set_key}')
    try:
        return ProxTerm.indicator(descriptor, dim)
    except ConfigurationError as exc:
        raise InstanceSpecError(exc.message, field=f'sets/{set_key}')


def _feasible_point(term: ProxTerm, rng: np.random.Generator) -> np.ndarray:
    if term.is_indicator:
        return prox_utils.set_interior_point(term.set_descriptor, term.dim, rng)
    return rng.standard_normal(term.dim)


def _assemble(spec: InstanceSpec, p: ProxTerm, q: ProxTerm, phi: SmoothCoupling, a: np.ndarray, b: np.ndarray,
              rng: np.random.Generator, solution=None) -> CoupledProblem:
    """Right-hand side c = A*u0 + B*v0 for interior (u0, v0)"""
    u0 = _feasible_point(p, rng)
    v0 = _feasible_point(q, rng)
    c = a.T @ u0 + b.T @ v0
    return CoupledProblem(p, q, phi, LinearMap.from_matrix(a, name='A'), LinearMap.from_matrix(b, name='B'), c,
                          family=spec.family, solution=solution, meta={'spec': spec.to_dict()})


# Families -------------------------------------------------------------------------

def make_analytic_tiny(spec: Optional[InstanceSpec] = None) -> Tuple[CoupledProblem, Tuple[np.ndarray, ...]]:
    """min 1/2 (u^2 + v^2) s.t. u + v = 1, solved by (0.5, 0.5, -0.5)"""
    spec = spec or InstanceSpec('analytic_tiny')
    solution = (np.array([0.5]), np.array([0.5]), np.array([-0.5]))
    phi = SmoothCoupling.quadratic(np.eye(2), 1)
    prob = CoupledProblem(ProxTerm.zero(1), ProxTerm.zero(1), phi, LinearMap.from_matrix([[1.0]], name='A'),
                          LinearMap.from_matrix([[1.0]], name='B'), [1.0], family='analytic_tiny',
                          solution=solution, meta={'spec': spec.to_dict()})
    return prob, solution


def make_quadratic_coupled(spec: InstanceSpec) -> CoupledProblem:
    n_u, n_v, n_x = spec.dims
    rng = np.random.default_rng(spec.seed)
    qtilde = conditioned_psd(rng, n_u + n_v, spec.conditioning)
    linear = spec.linear_scale * rng.standard_normal(n_u + n_v)
    a = _constraint_matrix(rng, n_u, n_x, spec.sparsity)
    b = _constraint_matrix(rng, n_v, n_x, spec.sparsity)
    smooth = spec.separable_smooth or {}
    phi = SmoothCoupling.quadratic(qtilde, n_u, linear=linear, logistic_f=smooth.get('f', 0.0),
                                   logistic_g=smooth.get('g', 0.0))
    p = _term(spec.p_kind or 'zero', n_u, spec, 'K2')
    q = _term(spec.q_kind or 'zero', n_v, spec, 'K3')
    return _assemble(spec, p, q, phi, a, b, rng)


def make_projection_penalty(spec: InstanceSpec) -> CoupledProblem:
    n_u, n_v, n_x = spec.dims
    rng = np.random.default_rng(spec.seed)
    k1 = spec.sets.get('K1') or {'kind': 'box', 'lo': -1.0, 'hi': 1.0}
    if k1.get('kind') not in ('box', 'ball'):
        raise InstanceSpecError('K1 must be a box or ball descriptor', field='sets/K1')
    qtilde = conditioned_psd(rng, n_u + n_v, spec.conditioning)
    linear = spec.linear_scale * rng.standard_normal(n_u + n_v)
    a = _constraint_matrix(rng, n_u, n_x, spec.sparsity)
    b = _constraint_matrix(rng, n_v, n_x, spec.sparsity)
    try:
        phi = SmoothCoupling.projection_penalty(qtilde, n_u, spec.rho, k1, linear=linear, eta=spec.eta)
    except ConfigurationError as exc:
        raise InstanceSpecError(exc.message, field='sets/K1')
    p = _term(spec.p_kind or 'box', n_u, spec, 'K2')
    q = _term(spec.q_kind or 'box', n_v, spec, 'K3')
    if not (p.is_indicator and q.is_indicator):
        raise InstanceSpecError('projection_penalty needs indicator terms for p and q', field='p_kind')
    return _assemble(spec, p, q, phi, a, b, rng)


def make_separable_recovery(spec: InstanceSpec) -> CoupledProblem:
    """phi = 0, A = a_scale * (orthonormal rows), B = -I"""
    n_u, n_v, n_x = spec.dims
    if n_v != n_x or n_u > n_x:
        raise InstanceSpecError(f'separable_recovery needs v = x and u <= x, got dims {spec.dims}', field='dims')
    rng = np.random.default_rng(spec.seed)
    a = spec.a_scale * random_orthogonal(rng, n_x, n_u).T
    b = -np.eye(n_v)
    p = _term(spec.p_kind or 'l1', n_u, spec, 'K2')
    q = _term(spec.q_kind or 'box', n_v, spec, 'K3')
    return _assemble(spec, p, q, SmoothCoupling.zero(n_u, n_v), a, b, rng)


def make_instance(spec: InstanceSpec) -> CoupledProblem:
    logger.info('generating %s instance dims=%s seed=%d', spec.family, spec.dims, spec.seed)
    if spec.family == 'analytic_tiny':
        return make_analytic_tiny(spec)[0]
    if spec.family == 'quadratic_coupled':
        return make_quadratic_coupled(spec)
    if spec.family == 'projection_penalty':
        return make_projection_penalty(spec)
    return make_separable_recovery(spec)
