"""
Runtime settings for madmm
Values come from environment variables; app.py loads a .env file first
"""

import os

from errors import ConfigurationError

DEFAULT_DENSE_CAP = 2000
DEFAULT_PD_TOL = 1e-9
DEFAULT_HISTORY_FULL_DIM = 200
DEFAULT_DIVERGENCE_NORM = 1e12
DEFAULT_LOG_LEVEL = 'WARNING'

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')


def _positive_number(key: str, default, cast):
    raw = os.getenv(key)
    if raw is None or raw.strip() == '':
        return default
    try:
        value = cast(raw)
    except ValueError:
        raise ConfigurationError(f'{key} must be a number, got {raw!r}', key=key)
    if value <= 0:
        raise ConfigurationError(f'{key} must be positive, got {raw!r}', key=key)
    return value


def get_dense_cap() -> int:
    """Largest operator dimension that may be materialized densely"""
    return _positive_number('MADMM_DENSE_CAP', DEFAULT_DENSE_CAP, int)


def get_pd_tol() -> float:
    """Relative eigenvalue margin used for definiteness verdicts"""
    return _positive_number('MADMM_PD_TOL', DEFAULT_PD_TOL, float)


def get_history_full_dim() -> int:
    """Total dimension up to which every iterate is recorded"""
    return _positive_number('MADMM_HISTORY_FULL_DIM', DEFAULT_HISTORY_FULL_DIM, int)


def get_divergence_norm() -> float:
    return _positive_number('MADMM_DIVERGENCE_NORM', DEFAULT_DIVERGENCE_NORM, float)


def get_log_level() -> str:
    level = os.getenv('MADMM_LOG_LEVEL', DEFAULT_LOG_LEVEL).strip().upper()
    if level not in LOG_LEVELS:
        raise ConfigurationError(f'MADMM_LOG_LEVEL must be one of {", ".join(LOG_LEVELS)}, got {level!r}',
                                 key='MADMM_LOG_LEVEL')
    return level
