"""
Structured errors for madmm
Every error carries a details dict that the CLI writes into its reports
"""

from typing import Any, Dict, Optional


class MadmmError(Exception):
    """Base class for all madmm failures"""

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = details

    def to_dict(self) -> Dict[str, Any]:
        payload = {'error': type(self).__name__, 'message': self.message}
        payload.update({k: v for k, v in self.details.items() if _is_plain(v)})
        return payload


def _is_plain(value: Any) -> bool:
    return isinstance(value, (str, int, float, bool, type(None), list, tuple, dict))


class DimensionError(MadmmError, ValueError):
    pass


class DenseCapError(MadmmError):
    """Operator too large for dense materialization"""


class ConfigurationError(MadmmError, ValueError):
    pass


class UsageError(MadmmError):
    pass


class DivergenceError(MadmmError):
    """Divergence guard tripped; keeps the partial history for the report"""

    def __init__(self, message: str, iteration: int, history: Optional[Any] = None, **details: Any):
        super().__init__(message, iteration=iteration, **details)
        self.iteration = iteration
        self.history = history


class ConstantsUndefinedError(MadmmError):
    pass


class InfeasibleProbeError(MadmmError):
    pass


class SchemaError(MadmmError):
    """JSON document failed validation; pointer names the offending field"""

    def __init__(self, message: str, pointer: str = '', **details: Any):
        super().__init__(message, pointer=pointer, **details)
        self.pointer = pointer


class InstanceSpecError(MadmmError, ValueError):
    def __init__(self, message: str, field: str = '', **details: Any):
        super().__init__(message, field=field, **details)
        self.field = field
