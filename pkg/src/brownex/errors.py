"""
Error kinds raised by brownex.

Every error also subclasses the built-in exception a caller would naturally
catch (ValueError, KeyError, ...), so `except ValueError` keeps working for code
that does not know about this module.
"""


class BrownexError(Exception):
    """Base class for all brownex errors."""


class MissingColumn(BrownexError, KeyError):
    """A configured tape column is absent from the CSV header."""

    def __init__(self, column: str, header: list[str] | None = None):
        self.column = column
        self.header = list(header or [])
        super().__init__(f"Missing column {column!r} in tape header {self.header}")

    def __str__(self) -> str:
        # KeyError quotes its message; keep it readable.
        return self.args[0]


class UnparsableRow(BrownexError, ValueError):
    """A tape row could not be converted into a valid TradeRecord."""

    def __init__(self, line: int, reason: str, lines: list[int] | None = None):
        self.line = line
        self.reason = reason
        self.lines = list(lines or [line])
        super().__init__(f"line {line}: {reason}")


class EmptyTape(BrownexError, ValueError):
    """The tape holds a header but no trades."""


class TraderNotFound(BrownexError, KeyError):
    """The requested broker never appears as buyer or seller."""

    def __init__(self, trader: str):
        self.trader = trader
        super().__init__(f"Trader {trader!r} not found in tape")

    def __str__(self) -> str:
        return self.args[0]


class TooFewObservations(BrownexError, ValueError):
    """Not enough observations or increments for the requested statistic."""


class BinLargerThanSession(BrownexError, ValueError):
    """The resampling bin is longer than the session."""


class RiccatiBlowup(BrownexError, ArithmeticError):
    """The backward Riccati integration escaped to infinity before reaching t."""


class ZeroVolume(BrownexError, ValueError):
    """Average bin volume (or the bin length) is zero."""


class EmptyInput(BrownexError, ValueError):
    """No data supplied to an estimator."""
