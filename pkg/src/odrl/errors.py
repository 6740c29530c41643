"""Exception types raised across the pipeline.

The CLI maps these onto process exit codes, so every error carries an
``exit_code`` attribute.
"""

from __future__ import annotations


class OdrlError(Exception):
    exit_code = 1


class ConfigError(OdrlError):
    exit_code = 2


class InvalidSpec(ConfigError):
    pass


class HashMismatch(OdrlError):
    exit_code = 3

    def __init__(self, expected: str, found: str, what: str = "vocabulary"):
        super().__init__(f"{what} hash mismatch: expected {expected}, found {found}")
        self.expected = expected
        self.found = found


class CorruptFile(OdrlError):
    exit_code = 3


class NonFiniteLoss(OdrlError):
    exit_code = 4


class SteppedTerminal(OdrlError):
    pass


class TooFewSamples(OdrlError):
    pass


class LengthMismatch(ValueError, OdrlError):
    pass


class ShapeMismatch(ValueError, OdrlError):
    pass


class IndexOutOfRange(IndexError, OdrlError):
    pass


class MissingLabel(OdrlError):
    pass


class EmptyMixture(ConfigError):
    pass


class EmptySet(ValueError, OdrlError):
    pass


class TooShort(ValueError, OdrlError):
    pass


class OutOfRange(ValueError, OdrlError):
    pass
