"""
Errors raised by the toolkit. Each error has a stable `code`, which the CLI writes into
error.json so that callers can react without parsing messages.
"""

from typing import Optional


class KzcltError(Exception):
    code = "error"

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.field = field
        self.line = line

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message, "field": self.field, "line": self.line}


# Brownian motion.
class NonFinite(KzcltError):
    code = "non-finite"


class NotHit(KzcltError):
    code = "not-hit"


class TooShort(KzcltError):
    code = "too-short"


# Cocycles.
class NotConnected(KzcltError):
    code = "not-connected"


class MalformedPermutation(KzcltError):
    code = "malformed-permutation"


class TrivialComplement(KzcltError):
    code = "trivial-complement"


class ReductionDiverged(KzcltError):
    code = "reduction-diverged"


# Estimates.
class MalformedReport(KzcltError):
    code = "malformed-report"


# Multilinear algebra.
class Degenerate(KzcltError):
    code = "degenerate"


class GapTooSmall(KzcltError):
    code = "gap-too-small"


# Spectral solver.
class InadmissibleParams(KzcltError):
    code = "inadmissible-params"


class Singular(KzcltError):
    code = "singular"


# Configuration.
class ParseError(KzcltError):
    code = "parse-error"


class UnknownKey(KzcltError):
    code = "unknown-key"


class RangeError(KzcltError):
    code = "range-error"
