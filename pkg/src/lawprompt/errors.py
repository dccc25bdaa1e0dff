"""Exception types raised across the harness."""

from __future__ import annotations


class LawPromptError(Exception):
    """Base class for all harness errors."""


# corpus


class LexiconError(LawPromptError):
    pass


class MalformedLine(LawPromptError):
    def __init__(self, line_number: int, reason: str):
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"line {line_number}: {reason}")


class InsufficientStratum(LawPromptError):
    def __init__(self, charge: str, have: int, need: int):
        self.charge = charge
        self.have = have
        self.need = need
        super().__init__(f"charge {charge!r}: have {have} eligible records, need {need}")


# prompts


class EmptyFact(LawPromptError):
    pass


class TemplateError(LawPromptError):
    pass


class MissingPlaceholder(TemplateError):
    def __init__(self, strategy: str):
        self.strategy = strategy
        super().__init__(f"template for {strategy} has no {{fact}} placeholder")


class UnknownStrategyKey(TemplateError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"unknown strategy {key!r}")


# backend


class BackendError(LawPromptError):
    pass


class BackendUnavailable(BackendError):
    pass


class AuthMissing(BackendError):
    pass


class FixtureMiss(BackendError):
    def __init__(self, digest: str):
        self.digest = digest
        super().__init__(f"no fixture for request digest {digest}")


class CacheCorrupt(UserWarning):
    """Warning category emitted when a cache entry cannot be read back."""


# parse


class EmptyOutput(LawPromptError):
    pass


# score


class EmptyVerdicts(LawPromptError):
    pass


class AlignmentError(LawPromptError):
    pass


class UnknownFormat(LawPromptError):
    pass


class ReportSchemaError(LawPromptError):
    pass
