"""Shared exception types."""


class FormatError(Exception):
    """A serialized file violates its binary or CSV contract.

    The message names the byte offset (or field) at which the violation
    was detected, so corrupt files can be diagnosed without a hex editor.
    """


class DecodeError(Exception):
    """An input image could not be decoded; carries the offending path."""


class NumericalError(Exception):
    """A numerical guarantee was violated beyond tolerance (CLI exit 4)."""
