from __future__ import annotations

import json

import pytest

from instances import InstanceSpec, make_analytic_tiny, make_instance
from solver import IterateState, MajorizedADMM, SolverConfig


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for key in ('MADMM_DENSE_CAP', 'MADMM_PD_TOL', 'MADMM_HISTORY_FULL_DIM', 'MADMM_DIVERGENCE_NORM',
                'MADMM_LOG_LEVEL'):
        monkeypatch.delenv(key, raising=False)


@pytest.fixture
def tiny():
    prob, _ = make_analytic_tiny()
    return prob


@pytest.fixture
def tiny_cfg():
    return SolverConfig(sigma=1.0, tau=1.0)


@pytest.fixture
def tiny_states(tiny, tiny_cfg):
    """Iterates 0, 1, 2 of the analytic instance"""
    solver = MajorizedADMM(tiny, tiny_cfg)
    states = [IterateState.initial(tiny)]
    for _ in range(2):
        states.append(solver.step(states[-1])[0])
    return states


@pytest.fixture
def qc():
    return make_instance(InstanceSpec('quadratic_coupled', dims=(4, 3, 2), seed=7, conditioning=5.0))


@pytest.fixture
def recovery():
    return make_instance(InstanceSpec('separable_recovery', dims=(2, 3, 3), seed=3, a_scale=2.0))


@pytest.fixture
def penalty():
    return make_instance(InstanceSpec('projection_penalty', dims=(3, 2, 2), seed=5, rho=0.5))


@pytest.fixture
def write_json(tmp_path):
    def write(name, doc):
        path = tmp_path / name
        path.write_text(json.dumps(doc), encoding='utf-8')
        return str(path)

    return write
