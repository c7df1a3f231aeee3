"""Engine-wide error type with stable machine-readable codes."""

from __future__ import annotations

from typing import Any


class CheckError(Exception):
    """Error carrying a stable ``E_*`` code plus structured context.

    The code survives into CLI JSON output and is what tests assert on;
    ``ctx`` holds whatever detail the raise site recorded (line numbers,
    function names, positions).
    """

    def __init__(self, code: str, message: str, **ctx: Any):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.ctx = ctx


def is_data_error(err: CheckError) -> bool:
    """True for errors caused by bad input data rather than internal bugs."""
    return not err.code.startswith("E_INTERNAL")
