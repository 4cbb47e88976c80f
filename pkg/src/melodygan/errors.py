"""Exception taxonomy shared across the package.

Three failure families matter operationally and map to distinct CLI exit
codes: configuration problems (shapes, hyperparameters, misuse of an API),
data validation problems (malformed corpus files, unknown tokens), and
numeric failures (non-finite values mid-computation).
"""

from __future__ import annotations


class MelodyGanError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(MelodyGanError):
    """A config value, shape, or call pattern is inconsistent."""


class NumericError(MelodyGanError):
    """A computation produced non-finite values (NaN or inf)."""


class DataValidationError(MelodyGanError):
    """One or more records or files failed validation.

    Collects every problem found instead of stopping at the first, so a bad
    corpus file is diagnosed in a single pass.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


class UnknownTokenError(DataValidationError):
    """A syllable token has no entry in the embedding table."""

    def __init__(self, token: str):
        self.token = token
        super().__init__([f"no embedding for syllable token {token!r}"])
