"""
Base error class
"""

__author__ = 'fg-transport developers'
__license__ = 'LGPL-3.0-or-later'
# SPDX-License-Identifier: LGPL-3.0-or-later


class Error(RuntimeError):
    """
    Raised when a library operation cannot complete.

    Each module derives its own Error with a nested Code enumeration.
    """

    message: str  # Message description
    func: str  # Name of failed operation

    def __init__(self, message: str, error_code: str, func: str) -> None:
        self.message = message
        self.func = func
        super().__init__(f'{self.func} failed: {self.message} ({error_code})')
