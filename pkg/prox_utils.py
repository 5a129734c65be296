"""
Proximal operator toolbox
Closed-form shrinkage and projections, plus the set descriptors
(box / ball / nonneg) shared by indicator terms and the penalty coupling
"""

from typing import Dict, Optional

import numpy as np

from errors import ConfigurationError, DimensionError

SET_KINDS = ('box', 'ball', 'nonneg')
MEMBERSHIP_TOL = 1e-9


def soft_threshold(z, lam: float) -> np.ndarray:
    """argmin_t lam*||t||_1 + 1/2 ||t - z||^2"""
    if lam < 0:
        raise ConfigurationError(f'soft_threshold needs lam >= 0, got {lam}')
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


def project_box(z, lo, hi) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), z.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), z.shape)
    if np.any(lo > hi):
        raise ConfigurationError('project_box needs lo <= hi componentwise')
    return np.clip(z, lo, hi)


def project_nonneg(z) -> np.ndarray:
    return np.maximum(np.asarray(z, dtype=float), 0.0)


def project_ball(z, center, radius: float) -> np.ndarray:
    if radius <= 0:
        raise ConfigurationError(f'project_ball needs radius > 0, got {radius}')
    z = np.asarray(z, dtype=float)
    center = np.broadcast_to(np.asarray(center, dtype=float), z.shape)
    offset = z - center
    dist = float(np.linalg.norm(offset))
    if dist <= radius:
        return z.copy()
    return center + offset * (radius / dist)


# Set descriptors -----------------------------------------------------------

def normalize_set(descriptor: Dict, dim: int) -> Dict:
    """Validated descriptor with vector parameters expanded to dim"""
    if not isinstance(descriptor, dict) or descriptor.get('kind') not in SET_KINDS:
        raise ConfigurationError(f'unsupported set descriptor {descriptor!r}', kind=str(descriptor))
    kind = descriptor['kind']
    if kind == 'nonneg':
        return {'kind': 'nonneg'}
    if kind == 'box':
        lo = _expand(descriptor.get('lo', -1.0), dim, 'lo')
        hi = _expand(descriptor.get('hi', 1.0), dim, 'hi')
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ConfigurationError('box descriptor needs finite bounds; use nonneg for half-lines')
        if np.any(lo > hi):
            raise ConfigurationError('box descriptor needs lo <= hi componentwise')
        return {'kind': 'box', 'lo': lo.tolist(), 'hi': hi.tolist()}
    radius = float(descriptor.get('radius', 1.0))
    if radius <= 0:
        raise ConfigurationError(f'ball descriptor needs radius > 0, got {radius}')
    center = _expand(descriptor.get('center', 0.0), dim, 'center')
    return {'kind': 'ball', 'center': center.tolist(), 'radius': radius}


def _expand(value, dim: int, field: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(dim, float(arr))
    arr = arr.reshape(-1)
    if arr.shape[0] != dim:
        raise DimensionError(f'set parameter {field} has length {arr.shape[0]}, expected {dim}')
    return arr


def set_project(descriptor: Dict, z) -> np.ndarray:
    kind = descriptor['kind']
    if kind == 'box':
        return project_box(z, descriptor['lo'], descriptor['hi'])
    if kind == 'nonneg':
        return project_nonneg(z)
    return project_ball(z, descriptor['center'], descriptor['radius'])


def set_contains(descriptor: Dict, z, tol: float = MEMBERSHIP_TOL) -> bool:
    z = np.asarray(z, dtype=float)
    kind = descriptor['kind']
    if kind == 'box':
        return bool(np.all(z >= np.asarray(descriptor['lo']) - tol) and np.all(z <= np.asarray(descriptor['hi']) + tol))
    if kind == 'nonneg':
        return bool(np.all(z >= -tol))
    radius = descriptor['radius']
    return float(np.linalg.norm(z - np.asarray(descriptor['center']))) <= radius * (1.0 + tol) + tol


def set_sample(descriptor: Dict, dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """A point of the set; the nonneg orthant uses |N(0, scale^2)| entries"""
    kind = descriptor['kind']
    if kind == 'box':
        return rng.uniform(np.asarray(descriptor['lo'], dtype=float), np.asarray(descriptor['hi'], dtype=float))
    if kind == 'nonneg':
        return np.abs(rng.standard_normal(dim)) * scale
    direction = rng.standard_normal(dim)
    direction /= max(np.linalg.norm(direction), 1e-300)
    radius = descriptor['radius'] * rng.uniform() ** (1.0 / dim)
    return np.asarray(descriptor['center'], dtype=float) + radius * direction


def set_interior_point(descriptor: Dict, dim: int, rng: np.random.Generator) -> np.ndarray:
    """A point strictly inside the set, used to build feasible right-hand sides"""
    kind = descriptor['kind']
    if kind == 'box':
        lo = np.asarray(descriptor['lo'], dtype=float)
        hi = np.asarray(descriptor['hi'], dtype=float)
        mid = 0.5 * (lo + hi)
        return mid + 0.5 * (hi - lo) * rng.uniform(-0.5, 0.5, dim)
    if kind == 'nonneg':
        return 0.5 + rng.uniform(0.0, 1.0, dim)
    direction = rng.standard_normal(dim)
    direction /= max(np.linalg.norm(direction), 1e-300)
    return np.asarray(descriptor['center'], dtype=float) + 0.5 * descriptor['radius'] * rng.uniform() * direction


def dist_sq(descriptor: Optional[Dict], z) -> float:
    if descriptor is None:
        return 0.0
    z = np.asarray(z, dtype=float)
    return float(np.sum((z - set_project(descriptor, z)) ** 2))
