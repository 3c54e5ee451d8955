from typing import Any, Dict, Optional


class RiskNetError(Exception):
    """Base class for all simulation and assimilation errors"""

    status_code = 422

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}


class ConfigError(RiskNetError):
    status_code = 400


class FormatVersionError(ConfigError):
    pass


class NetworkGenerationError(RiskNetError):
    status_code = 400


class UnknownNodeError(RiskNetError):
    status_code = 404


class HospitalTransferError(RiskNetError):
    """Double admission or discharge of a node that holds no bed"""


class ScheduleGapError(RiskNetError):
    pass


class IntegrationError(RiskNetError):
    """Step-size underflow in the master-equation integrator"""


class AssimilationError(RiskNetError):
    """Non-finite values encountered during an ensemble update"""


class PolicyConflictError(RiskNetError):
    status_code = 400
