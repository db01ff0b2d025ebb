"""Exception hierarchy shared by every stage of the pipeline.

Each error carries a stable ``code`` so the CLI can print a machine-readable
failure line without knowing which module raised it.
"""

from __future__ import annotations


class DcotError(Exception):
    code = "DCOT_ERROR"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.details = details

    def as_dict(self) -> dict:
        out = {"code": self.code, "message": str(self)}
        out.update({k: v for k, v in self.details.items() if v is not None})
        return out


class ParserFinalizedError(DcotError):
    code = "PARSER_FINALIZED"


class PolicyError(DcotError):
    code = "POLICY_INVALID"


class EndpointError(DcotError):
    code = "ENDPOINT_ERROR"

    def __init__(self, message: str = "", transient: bool = True, **details):
        super().__init__(message, **details)
        self.transient = transient


class CounterUnavailableError(DcotError):
    code = "COUNTER_UNAVAILABLE"


class EmptyAxisError(DcotError):
    code = "EMPTY_AXIS"


class NTooLargeError(DcotError):
    code = "N_TOO_LARGE"


class NoExemplarsError(DcotError):
    code = "NO_EXEMPLARS"


class TeacherParseError(DcotError):
    code = "PARSE_ERROR"


class DimensionMismatchError(DcotError):
    code = "DIM_MISMATCH"


class MissingEmbeddingError(DcotError):
    code = "MISSING_EMBEDDING"


class DomainError(DcotError, ValueError):
    code = "DOMAIN"


class EmptySequenceError(DcotError, ValueError):
    code = "EMPTY_SEQUENCE"


class NonFiniteError(DcotError, ValueError):
    code = "NONFINITE"


class EmptyRunError(DcotError):
    code = "EMPTY_RUN"


class MixedConditionsError(DcotError):
    code = "MIXED_CONDITIONS"


class ConfigError(DcotError):
    code = "CONFIG_INVALID"
