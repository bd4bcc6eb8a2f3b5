"""Exception hierarchy.

Every error carries a short machine-readable ``code``. The CLI maps the three
top-level families to exit codes (config=2, data=3, runtime=4).
"""


class FirescanError(Exception):
    code = "error"


class ConfigError(FirescanError, ValueError):
    """Invalid configuration, arguments, or preconditions."""

    code = "config"


class DataError(FirescanError):
    """Bad or missing input data."""

    code = "data"


class FormatError(DataError):
    code = "format"


class BadMagicError(FormatError):
    code = "bad_magic"


class VersionError(FormatError):
    code = "version"


class LengthMismatchError(FormatError):
    code = "length_mismatch"


class NonFiniteError(FormatError):
    code = "non_finite"


class MetadataError(FormatError):
    code = "metadata"


class MaskValueError(FormatError):
    code = "mask_value"


class TruncatedError(FormatError):
    code = "truncated"


class ShapeError(ConfigError):
    code = "shape"


class RuleSyntaxError(ConfigError):
    """Rule text failed to parse; ``offset`` is the 0-based character position."""

    code = "rule_syntax"

    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
