"""Shared exception types with CLI exit-code semantics."""


class SemsynthError(Exception):
    """Base class; maps to CLI exit code 1."""


class ConfigError(SemsynthError):
    """Malformed or incomplete experiment configuration (CLI exit code 2)."""


class PreconditionError(SemsynthError):
    """A documented operation precondition was violated (CLI exit code 3)."""


class ParseError(SemsynthError):
    """Malformed input file; message carries file path and line number."""
