"""
Linear operator algebra for madmm
Matrix-free maps with optional dense backing, seminorms, block operators
and dense spectral checks for desk-scale instances
"""

import logging
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, aslinearoperator

import settings
from errors import ConfigurationError, DenseCapError, DimensionError

logger = logging.getLogger(__name__)

Vector = np.ndarray
Action = Callable[[Vector], Vector]


def as_vector(x, dim: int, what: str = 'vector') -> Vector:
    arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.shape[0] != dim:
        raise DimensionError(f'{what} expects dimension {dim}, got {arr.shape[0]}',
                             expected=dim, got=int(arr.shape[0]))
    return arr


class LinearMap:
    """A map X -> Y whose apply_adjoint realizes Y -> X.

    The constraint operators keep the convention A: X -> U, so a problem's
    constraint row A*u is ``a.apply_adjoint(u)``.
    """

    def __init__(self, in_dim: int, out_dim: int, apply: Action, apply_adjoint: Action,
                 matrix: Optional[np.ndarray] = None, name: str = 'map'):
        if int(in_dim) < 1 or int(out_dim) < 1:
            raise DimensionError(f'{name}: dimensions must be positive, got ({out_dim}, {in_dim})')
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self._apply = apply
        self._apply_adjoint = apply_adjoint
        self.matrix = None if matrix is None else np.asarray(matrix, dtype=float)
        self.name = name

    @classmethod
    def from_matrix(cls, matrix, name: str = 'map') -> 'LinearMap':
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        op = aslinearoperator(m)
        return cls(m.shape[1], m.shape[0], op.matvec, op.rmatvec, matrix=m, name=name)

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int, name: str = 'zero') -> 'LinearMap':
        return cls.from_matrix(np.zeros((out_dim, in_dim)), name=name)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.out_dim, self.in_dim

    def apply(self, x) -> Vector:
        x = as_vector(x, self.in_dim, f'{self.name}.apply')
        return np.asarray(self._apply(x), dtype=float).reshape(self.out_dim)

    def apply_adjoint(self, y) -> Vector:
        y = as_vector(y, self.out_dim, f'{self.name}.apply_adjoint')
        return np.asarray(self._apply_adjoint(y), dtype=float).reshape(self.in_dim)

    @property
    def adjoint(self) -> 'LinearMap':
        matrix = None if self.matrix is None else self.matrix.T
        return LinearMap(self.out_dim, self.in_dim, self._apply_adjoint, self._apply,
                         matrix=matrix, name=f'{self.name}*')

    def as_operator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.apply, rmatvec=self.apply_adjoint, dtype=float)

    def gram(self, scale: float = 1.0) -> 'SelfAdjointOperator':
        """scale * M M* as a self-adjoint operator on the output space"""
        scale = float(scale)
        matrix = None if self.matrix is None else scale * (self.matrix @ self.matrix.T)
        return SelfAdjointOperator(self.out_dim, lambda y: scale * self._apply(self._apply_adjoint(y)),
                                   matrix=matrix, psd=scale >= 0, name=f'{scale:g}*{self.name}{self.name}*')

    def __repr__(self) -> str:
        backing = 'dense' if self.matrix is not None else 'matrix-free'
        return f'LinearMap({self.name}, {self.out_dim}x{self.in_dim}, {backing})'


class SelfAdjointOperator:
    """Self-adjoint operator on R^dim, optionally flagged positive semidefinite"""

    def __init__(self, dim: int, apply: Action, matrix: Optional[np.ndarray] = None,
                 psd: bool = False, name: str = 'op'):
        if int(dim) < 1:
            raise DimensionError(f'{name}: dimension must be positive, got {dim}')
        self.dim = int(dim)
        self._apply = apply
        self.matrix = None if matrix is None else np.asarray(matrix, dtype=float)
        self.psd = bool(psd)
        self.name = name

    @classmethod
    def from_matrix(cls, matrix, psd: bool = False, name: str = 'op') -> 'SelfAdjointOperator':
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        if m.shape[0] != m.shape[1]:
            raise DimensionError(f'{name}: matrix must be square, got {m.shape}')
        scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
        if np.max(np.abs(m - m.T), initial=0.0) > 1e-10 * scale:
            raise ConfigurationError(f'{name}: matrix is not symmetric')
        op = aslinearoperator(m)
        return cls(m.shape[0], op.matvec, matrix=m, psd=psd, name=name)

    @classmethod
    def identity(cls, dim: int, scale: float = 1.0, name: Optional[str] = None) -> 'SelfAdjointOperator':
        scale = float(scale)
        return cls(dim, lambda x: scale * x, matrix=scale * np.eye(dim), psd=scale >= 0,
                   name=name or ('I' if scale == 1.0 else f'{scale:g}I'))

    @classmethod
    def zeros(cls, dim: int, name: str = '0') -> 'SelfAdjointOperator':
        return cls.identity(dim, 0.0, name=name)

    @classmethod
    def diagonal(cls, values, name: str = 'diag') -> 'SelfAdjointOperator':
        d = np.asarray(values, dtype=float).reshape(-1)
        return cls(d.shape[0], lambda x: d * x, matrix=np.diag(d), psd=bool(np.all(d >= 0)), name=name)

    def apply(self, x) -> Vector:
        x = as_vector(x, self.dim, f'{self.name}.apply')
        return np.asarray(self._apply(x), dtype=float).reshape(self.dim)

    def as_operator(self) -> LinearOperator:
        return LinearOperator((self.dim, self.dim), matvec=self.apply, rmatvec=self.apply, dtype=float)

    def _check_same_dim(self, other: 'SelfAdjointOperator'):
        if other.dim != self.dim:
            raise DimensionError(f'cannot combine {self.name} (dim {self.dim}) with {other.name} (dim {other.dim})')

    def __add__(self, other: 'SelfAdjointOperator') -> 'SelfAdjointOperator':
        self._check_same_dim(other)
        matrix = None
        if self.matrix is not None and other.matrix is not None:
            matrix = self.matrix + other.matrix
        a, b = self._apply, other._apply
        return SelfAdjointOperator(self.dim, lambda x: a(x) + b(x), matrix=matrix,
                                   psd=self.psd and other.psd, name=f'({self.name}+{other.name})')

    def __sub__(self, other: 'SelfAdjointOperator') -> 'SelfAdjointOperator':
        return self + (-1.0) * other

    def __mul__(self, scale: float) -> 'SelfAdjointOperator':
        scale = float(scale)
        matrix = None if self.matrix is None else scale * self.matrix
        a = self._apply
        return SelfAdjointOperator(self.dim, lambda x: scale * a(x), matrix=matrix,
                                   psd=self.psd and scale >= 0, name=f'{scale:g}*{self.name}')

    __rmul__ = __mul__

    def __neg__(self) -> 'SelfAdjointOperator':
        return (-1.0) * self

    @staticmethod
    def block_diag(first: 'SelfAdjointOperator', second: 'SelfAdjointOperator') -> 'SelfAdjointOperator':
        n1 = first.dim
        matrix = None
        if first.matrix is not None and second.matrix is not None:
            matrix = scipy.linalg.block_diag(first.matrix, second.matrix)

        def apply(w):
            return np.concatenate([first.apply(w[:n1]), second.apply(w[n1:])])

        return SelfAdjointOperator(n1 + second.dim, apply, matrix=matrix, psd=first.psd and second.psd,
                                   name=f'Diag({first.name},{second.name})')

    def __repr__(self) -> str:
        backing = 'dense' if self.matrix is not None else 'matrix-free'
        return f'SelfAdjointOperator({self.name}, dim={self.dim}, {backing}, psd={self.psd})'


class BlockCurvature:
    """2x2 block operator [[q11, q12], [q12*, q22]] on U x V"""

    def __init__(self, q11: SelfAdjointOperator, q22: SelfAdjointOperator, q12: LinearMap):
        if q12.out_dim != q11.dim or q12.in_dim != q22.dim:
            raise DimensionError(f'q12 must map V (dim {q22.dim}) to U (dim {q11.dim}), '
                                 f'got {q12.out_dim}x{q12.in_dim}')
        self.q11 = q11
        self.q22 = q22
        self.q12 = q12

    @classmethod
    def from_matrix(cls, matrix, u_dim: int, psd: bool = True) -> 'BlockCurvature':
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or not 0 < u_dim < m.shape[0]:
            raise DimensionError(f'block curvature needs a square matrix larger than u_dim={u_dim}')
        return cls(SelfAdjointOperator.from_matrix(m[:u_dim, :u_dim], psd=psd, name='Q11'),
                   SelfAdjointOperator.from_matrix(m[u_dim:, u_dim:], psd=psd, name='Q22'),
                   LinearMap.from_matrix(m[:u_dim, u_dim:], name='Q12'))

    @classmethod
    def zeros(cls, u_dim: int, v_dim: int) -> 'BlockCurvature':
        return cls(SelfAdjointOperator.zeros(u_dim, name='Q11'), SelfAdjointOperator.zeros(v_dim, name='Q22'),
                   LinearMap.zeros(v_dim, u_dim, name='Q12'))

    @property
    def u_dim(self) -> int:
        return self.q11.dim

    @property
    def v_dim(self) -> int:
        return self.q22.dim

    def assemble(self) -> SelfAdjointOperator:
        n1 = self.u_dim
        matrix = None
        if self.q11.matrix is not None and self.q22.matrix is not None and self.q12.matrix is not None:
            matrix = np.block([[self.q11.matrix, self.q12.matrix], [self.q12.matrix.T, self.q22.matrix]])

        def apply(w):
            u, v = w[:n1], w[n1:]
            return np.concatenate([self.q11.apply(u) + self.q12.apply(v),
                                   self.q12.apply_adjoint(u) + self.q22.apply(v)])

        return SelfAdjointOperator(n1 + self.v_dim, apply, matrix=matrix,
                                   psd=self.q11.psd and self.q22.psd, name='Q')


Operator = Union[SelfAdjointOperator, LinearMap]


def seminorm_sq(g: SelfAdjointOperator, x) -> float:
    """||x||_G^2 = <x, Gx>, with tiny negative round-off clamped to zero"""
    x = as_vector(x, g.dim, f'seminorm of {g.name}')
    value = float(x @ g.apply(x))
    if -1e-12 * float(x @ x) <= value < 0.0:
        return 0.0
    return value


def _dims(op: Operator) -> Tuple[int, int]:
    if isinstance(op, SelfAdjointOperator):
        return op.dim, op.dim
    return op.out_dim, op.in_dim


def materialize(op: Operator, cap: Optional[int] = None) -> np.ndarray:
    """Dense matrix of op, built column by column from the canonical basis"""
    cap = settings.get_dense_cap() if cap is None else int(cap)
    rows, cols = _dims(op)
    size = max(rows, cols)
    if size > cap:
        raise DenseCapError(f'{op.name}: dimension {size} exceeds the dense cap {cap}', cap=cap, dim=size)
    if op.matrix is not None:
        return np.array(op.matrix, dtype=float)
    return np.asarray(op.as_operator().matmat(np.eye(cols)), dtype=float).reshape(rows, cols)


def _symmetrized(op: SelfAdjointOperator) -> np.ndarray:
    m = materialize(op)
    return 0.5 * (m + m.T)


def eigenvalue_range(op: SelfAdjointOperator) -> Tuple[float, float]:
    values = scipy.linalg.eigvalsh(_symmetrized(op))
    return float(values[0]), float(values[-1])


def min_eigenvalue(op: SelfAdjointOperator) -> float:
    return eigenvalue_range(op)[0]


def min_eigenpair(op: SelfAdjointOperator) -> Tuple[float, Vector]:
    values, vectors = scipy.linalg.eigh(_symmetrized(op))
    return float(values[0]), vectors[:, 0]


def operator_norm(m: Operator) -> float:
    """Spectral norm (largest singular value)"""
    matrix = materialize(m)
    if not np.any(matrix):
        return 0.0
    return float(scipy.linalg.svdvals(matrix)[0])


def generalized_max_eigenvalue(g: np.ndarray, o: np.ndarray) -> float:
    """||O^{-1/2} G O^{-1/2}|| for symmetric G and positive definite O"""
    g = 0.5 * (g + g.T)
    o = 0.5 * (o + o.T)
    values = scipy.linalg.eigh(g, o, eigvals_only=True)
    return float(max(abs(values[0]), abs(values[-1])))


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = scipy.linalg.eigh(0.5 * (matrix + matrix.T))
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def definiteness(lam_min: float, lam_max: float, tol: Optional[float] = None) -> str:
    """'strict-PD', 'PSD' or 'fail' using a margin relative to max(1, lambda_max)"""
    tol = settings.get_pd_tol() if tol is None else tol
    margin = tol * max(1.0, abs(lam_max))
    if lam_min > margin:
        return 'strict-PD'
    if lam_min >= -margin:
        return 'PSD'
    return 'fail'


def adjoint_defect(m: LinearMap, seed: int = 0, n_probes: int = 20) -> float:
    """Worst relative mismatch of <Mx, y> against <x, M*y> over random probes"""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        x = rng.standard_normal(m.in_dim)
        y = rng.standard_normal(m.out_dim)
        lhs = float(m.apply(x) @ y)
        rhs = float(x @ m.apply_adjoint(y))
        scale = max(1.0, np.linalg.norm(m.apply(x)) * np.linalg.norm(y))
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


def symmetry_defect(g: SelfAdjointOperator, seed: int = 0, n_probes: int = 20) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        x = rng.standard_normal(g.dim)
        y = rng.standard_normal(g.dim)
        gx = g.apply(x)
        scale = max(1.0, np.linalg.norm(gx) * np.linalg.norm(y))
        worst = max(worst, abs(float(gx @ y) - float(x @ g.apply(y))) / scale)
    return worst
