"""
Error Types for Rolechain
Every rejection the node can produce, grouped by the layer that raises it
"""

from typing import Optional


class RolechainError(Exception):
    """Base class for all rolechain failures"""

    @property
    def code(self) -> str:
        return type(self).__name__


# Wire format

class WireFormatError(RolechainError):
    pass


class TruncatedInput(WireFormatError):
    pass


class CountOverflow(WireFormatError):
    pass


class UnsupportedVersion(WireFormatError):
    pass


class MalformedTransaction(WireFormatError):
    pass


class MalformedPayload(WireFormatError):
    """An nValue that does not fit the role or policy bit layout"""


# Ledger, policy and block validation

class ValidationError(RolechainError):
    pass


class MissingURole(ValidationError):
    pass


class MissingCRole(ValidationError):
    pass


class MissingLRole(ValidationError):
    pass


class MissingMRole(ValidationError):
    pass


class AccountLocked(ValidationError):
    pass


class IssuerLocked(ValidationError):
    pass


class UnknownUtxo(ValidationError):
    pass


class DoubleSpend(ValidationError):
    pass


class Overspend(ValidationError):
    pass


class ScopeViolation(ValidationError):
    pass


class MintCapExceeded(ValidationError):
    pass


class ReplayedRole(ValidationError):
    pass


class AuthorityExceeded(ValidationError):
    pass


class BadSignature(ValidationError):
    pass


class SignerMismatch(ValidationError):
    pass


class CycleCreated(ValidationError):
    pass


class PermanentViolation(ValidationError):
    pass


class AuthorityTooDeep(ValidationError):
    pass


class IntervalBelowMinimum(ValidationError):
    pass


class UnknownParam(ValidationError):
    pass


class InvalidParamValue(ValidationError):
    pass


class DuplicateParam(ValidationError):
    pass


class BadPoW(ValidationError):
    pass


class BadMerkle(ValidationError):
    pass


class BadCoinbase(ValidationError):
    pass


class BadPrevHash(ValidationError):
    pass


class CoinbaseOverpay(ValidationError):
    pass


class BootstrapIncomplete(ValidationError):
    pass


class WindowViolation(ValidationError):
    def __init__(self, window_index: int, found: int, required: int):
        super().__init__(
            f"window {window_index} holds {found} management transactions, {required} required"
        )
        self.window_index = window_index
        self.found = found
        self.required = required


# Hierarchy

class HierarchyError(RolechainError):
    pass


class UnknownNode(HierarchyError):
    pass


class NoManagerAncestor(HierarchyError):
    pass


# Chain bookkeeping and simulation

class OrphanParent(RolechainError):
    pass


class ScriptError(RolechainError):
    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class AssertionFailed(RolechainError):
    def __init__(self, tick: str, predicate: str, detail: str = ""):
        super().__init__(f"tick {tick}: {predicate} failed{': ' + detail if detail else ''}")
        self.tick = tick
        self.predicate = predicate
        self.detail = detail
