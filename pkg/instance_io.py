"""
File formats for madmm
JSON instances, configs and generator specs validated with jsonschema;
versioned CSV histories written through pandas
"""

import hashlib
import json
import logging
from functools import lru_cache
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from jsonschema import validators
from jsonschema.exceptions import best_match

from errors import ConfigurationError, DimensionError, InstanceSpecError, SchemaError
from linop import LinearMap, SelfAdjointOperator, materialize
from models import CoupledProblem, ProxTerm, SmoothCoupling
from solver import SolverConfig

logger = logging.getLogger(__name__)

SCHEMA_DIR = Path(__file__).resolve().parent / 'schemas'
HISTORY_VERSION = '# madmm-history v1'
RATE_VERSION = '# madmm-rate v1'
HISTORY_COLUMNS = ('k', 'feas', 'kkt_bound_sq', 'theta_k', 'xi_k', 'phi_k', 'psi_k', 'objective', 'erg_feas')
REFERENCE_COLUMNS = ('phi_k', 'psi_k')


@lru_cache(maxsize=None)
def load_schema(name: str) -> Dict:
    with open(SCHEMA_DIR / f'{name}.schema.json', encoding='utf-8') as handle:
        return json.load(handle)


def validate(doc, schema_name: str):
    """Raise SchemaError carrying the JSON pointer of the most relevant violation"""
    schema = load_schema(schema_name)
    validator = validators.validator_for(schema)(schema)
    error = best_match(validator.iter_errors(doc))
    if error is not None:
        pointer = '/' + '/'.join(str(part) for part in error.absolute_path)
        raise SchemaError(f'{schema_name} document invalid at {pointer}: {error.message}', pointer=pointer)


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + '\n'


def read_json(path) -> Dict:
    try:
        with open(path, encoding='utf-8') as handle:
            return json.load(handle)
    except json.JSONDecodeError as exc:
        raise SchemaError(f'{path}: not valid JSON ({exc.msg} at line {exc.lineno})', pointer='')


def write_json(path, doc):
    Path(path).write_text(canonical_json(doc), encoding='utf-8')


def instance_hash(instance_doc: Dict, config_doc: Dict) -> str:
    payload = json.dumps({'instance': instance_doc, 'config': config_doc}, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


# Instances --------------------------------------------------------------------

def problem_to_dict(prob: CoupledProblem) -> Dict:
    phi = prob.phi
    doc = {
        'family': prob.family,
        'dims': {'u': prob.u_dim, 'v': prob.v_dim, 'x': prob.x_dim},
        'matrices': {'A': materialize(prob.a).tolist(), 'B': materialize(prob.b).tolist()},
        'vectors': {'c': prob.c.tolist()},
        'coupling': {'kind': phi.kind},
        'envelope': {
            'Q_blocks': {
                'Q11': materialize(phi.q_lower.q11).tolist(),
                'Q12': materialize(phi.q_lower.q12).tolist(),
                'Q22': materialize(phi.q_lower.q22).tolist(),
            },
            'D1': materialize(phi.d1).tolist(),
            'D2': materialize(phi.d2).tolist(),
            'eta': phi.eta,
        },
        'nonsmooth': {'p': prob.p.to_dict(), 'q': prob.q.to_dict()},
    }
    if phi.kind in ('quadratic', 'projection_penalty'):
        doc['matrices']['Qtilde'] = phi.params['qtilde'].tolist()
        doc['vectors']['linear'] = phi.params['linear'].tolist()
    if phi.kind == 'quadratic':
        doc['coupling']['logistic'] = dict(phi.params['logistic'])
    sets = {}
    if phi.kind == 'projection_penalty':
        doc['coupling']['rho'] = phi.params['rho']
        sets['K1'] = phi.params['k1']
    if prob.p.is_indicator:
        sets['K2'] = prob.p.set_descriptor
    if prob.q.is_indicator:
        sets['K3'] = prob.q.set_descriptor
    if sets:
        doc['sets'] = sets
    if prob.solution is not None:
        doc['solution'] = {name: np.asarray(part, dtype=float).tolist()
                           for name, part in zip(('u', 'v', 'x'), prob.solution)}
    if 'spec' in prob.meta:
        doc['spec'] = prob.meta['spec']
    return doc


def problem_from_dict(doc: Dict) -> CoupledProblem:
    validate(doc, 'instance')
    dims = doc['dims']
    n_u, n_v, n_x = dims['u'], dims['v'], dims['x']
    _check_shape(doc['matrices']['A'], (n_u, n_x), '/matrices/A')
    _check_shape(doc['matrices']['B'], (n_v, n_x), '/matrices/B')
    if len(doc['vectors']['c']) != n_x:
        raise SchemaError(f'c must have length {n_x}', pointer='/vectors/c')
    try:
        phi = _coupling_from_dict(doc, n_u, n_v)
    except (ConfigurationError, DimensionError) as exc:
        raise SchemaError(exc.message, pointer='/coupling')
    terms = []
    for name, dim in (('p', n_u), ('q', n_v)):
        try:
            terms.append(ProxTerm.from_dict(doc['nonsmooth'][name], dim))
        except (ConfigurationError, DimensionError) as exc:
            raise SchemaError(exc.message, pointer=f'/nonsmooth/{name}')
    p, q = terms
    solution = None
    if 'solution' in doc:
        solution = tuple(np.asarray(doc['solution'][name], dtype=float) for name in ('u', 'v', 'x'))
    meta = {'spec': doc['spec']} if 'spec' in doc else {}
    return CoupledProblem(p, q, phi, LinearMap.from_matrix(doc['matrices']['A'], name='A'),
                          LinearMap.from_matrix(doc['matrices']['B'], name='B'), doc['vectors']['c'],
                          family=doc['family'], solution=solution, meta=meta)


def _check_shape(matrix, shape: Tuple[int, int], pointer: str):
    rows = len(matrix)
    if rows != shape[0] or any(len(row) != shape[1] for row in matrix):
        raise SchemaError(f'expected a {shape[0]}x{shape[1]} matrix', pointer=pointer)


def _coupling_from_dict(doc: Dict, n_u: int, n_v: int) -> SmoothCoupling:
    coupling = doc['coupling']
    kind = coupling['kind']
    eta = doc['envelope']['eta']
    if kind == 'zero':
        phi = SmoothCoupling.zero(n_u, n_v)
        phi.eta = eta
        return phi
    if 'Qtilde' not in doc['matrices']:
        raise SchemaError(f'{kind} coupling needs matrices/Qtilde', pointer='/matrices/Qtilde')
    qtilde = np.asarray(doc['matrices']['Qtilde'], dtype=float)
    if qtilde.shape != (n_u + n_v, n_u + n_v):
        raise SchemaError(f'Qtilde must be {n_u + n_v}x{n_u + n_v}', pointer='/matrices/Qtilde')
    linear = doc['vectors'].get('linear')
    if kind == 'quadratic':
        logistic = coupling.get('logistic', {})
        phi = SmoothCoupling.quadratic(qtilde, n_u, linear=linear, logistic_f=logistic.get('f', 0.0),
                                       logistic_g=logistic.get('g', 0.0))
        phi.eta = eta
        return phi
    k1 = doc.get('sets', {}).get('K1')
    if k1 is None or 'rho' not in coupling:
        raise SchemaError('projection_penalty coupling needs coupling/rho and sets/K1', pointer='/sets/K1')
    return SmoothCoupling.projection_penalty(qtilde, n_u, coupling['rho'], k1, linear=linear, eta=eta)


def load_instance(path) -> CoupledProblem:
    return problem_from_dict(read_json(path))


def spec_from_dict(doc: Dict):
    from instances import InstanceSpec
    validate(doc, 'spec')
    try:
        return InstanceSpec.from_dict(doc)
    except InstanceSpecError as exc:
        raise SchemaError(exc.message, pointer='/' + exc.field)


# Configs ----------------------------------------------------------------------

def _proximal_from_dict(doc: Optional[Dict], name: str, dim: int):
    if doc is None:
        return None
    if doc['kind'] != 'explicit':
        return doc['kind']
    matrix = np.asarray(doc['matrix'], dtype=float)
    if matrix.shape != (dim, dim):
        raise SchemaError(f'{name} must be {dim}x{dim}', pointer=f'/{name}/matrix')
    try:
        return SelfAdjointOperator.from_matrix(matrix, psd=True, name=name)
    except ConfigurationError as exc:
        raise SchemaError(exc.message, pointer=f'/{name}/matrix')


def config_from_dict(doc: Dict, prob: CoupledProblem) -> SolverConfig:
    validate(doc, 'config')
    backend = doc.get('backend', {})
    fields = {
        's_op': _proximal_from_dict(doc.get('S'), 'S', prob.u_dim),
        't_op': _proximal_from_dict(doc.get('T'), 'T', prob.v_dim),
        'u_backend': backend.get('u', 'prox_identity'),
        'v_backend': backend.get('v', 'prox_identity'),
    }
    for key in ('sigma', 'tau', 'max_iters', 'kkt_tol', 'record_every', 'seed', 'override_conditions'):
        if key in doc:
            fields[key] = doc[key]
    try:
        return SolverConfig(**fields)
    except ConfigurationError as exc:
        raise SchemaError(exc.message, pointer='/' + str(exc.details.get('field', '')))


def config_to_dict(cfg: SolverConfig) -> Dict:
    def proximal(value):
        if isinstance(value, SelfAdjointOperator):
            return {'kind': 'explicit', 'matrix': materialize(value).tolist()}
        return None if value is None else {'kind': value}

    doc = {
        'sigma': cfg.sigma,
        'tau': cfg.tau,
        'backend': {'u': cfg.u_backend, 'v': cfg.v_backend},
        'max_iters': int(cfg.max_iters),
        'kkt_tol': cfg.kkt_tol,
        'record_every': int(cfg.record_every),
        'seed': int(cfg.seed),
        'override_conditions': bool(cfg.override_conditions),
    }
    for key, value in (('S', cfg.s_op), ('T', cfg.t_op)):
        if value is not None:
            doc[key] = proximal(value)
    return doc


def load_config(path, prob: CoupledProblem) -> Tuple[SolverConfig, Dict]:
    doc = read_json(path)
    return config_from_dict(doc, prob), doc


def reference_from_dict(doc: Dict, prob: CoupledProblem) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """A {u, v, x} document or an instance document carrying a solution"""
    source = doc.get('solution', doc)
    try:
        parts = tuple(np.asarray(source[name], dtype=float).reshape(-1) for name in ('u', 'v', 'x'))
    except (KeyError, TypeError):
        raise SchemaError('reference needs u, v and x (or an instance with a solution)', pointer='/solution')
    for part, dim, name in zip(parts, (prob.u_dim, prob.v_dim, prob.x_dim), ('u', 'v', 'x')):
        if part.shape[0] != dim:
            raise SchemaError(f'reference {name} must have length {dim}', pointer=f'/{name}')
    return parts


# CSV --------------------------------------------------------------------------

def history_frame(history) -> pd.DataFrame:
    columns = [c for c in HISTORY_COLUMNS if history.has_reference or c not in REFERENCE_COLUMNS]
    return history.to_frame(columns)


def write_history_csv(path, history):
    frame = history_frame(history)
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        handle.write(HISTORY_VERSION + '\n')
        frame.to_csv(handle, index=False, float_format='%.17g')


def write_rate_csv(path, frame: pd.DataFrame, metadata: Dict[str, float]):
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        handle.write(RATE_VERSION + '\n')
        for key in sorted(metadata):
            handle.write(f'# {key}={metadata[key]!r}\n')
        frame.to_csv(handle, index=False, float_format='%.17g')


def _read_versioned(path, version: str) -> Tuple[pd.DataFrame, Dict[str, float]]:
    with open(path, encoding='utf-8') as handle:
        lines = handle.read().splitlines()
    if not lines or lines[0].strip() != version:
        found = lines[0].strip() if lines else ''
        raise SchemaError(f'{path}: expected version line {version!r}, found {found!r}', pointer='')
    metadata = {}
    for line in lines[1:]:
        if not line.startswith('#'):
            break
        key, _, value = line[1:].strip().partition('=')
        if value:
            metadata[key] = float(value)
    return pd.read_csv(path, comment='#'), metadata


def read_history_csv(path) -> pd.DataFrame:
    return _read_versioned(path, HISTORY_VERSION)[0]


def read_rate_csv(path) -> Tuple[pd.DataFrame, Dict[str, float]]:
    return _read_versioned(path, RATE_VERSION)
