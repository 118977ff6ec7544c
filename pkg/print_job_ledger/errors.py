#!/usr/bin/env python3
"""
Exception hierarchy for the print job ledger.

Every error is a ValueError so callers that only care about "refused input"
can keep catching ValueError.
"""

from typing import Optional


class PrintLedgerError(ValueError):
    """Base class for all print job ledger errors"""


class IdentityError(PrintLedgerError):
    """Malformed key, address, digest or key file"""


class TransactionRejected(PrintLedgerError):
    """The ledger refused a transaction at submission"""

    def __init__(self, reason: str, message: str):
        super().__init__(f"{reason}: {message}")
        self.reason = reason


class MiningError(PrintLedgerError):
    """Proof-of-work search exhausted its nonce budget"""


class ContractRejection(PrintLedgerError):
    """The print job registry refused a contract call"""

    def __init__(self, reason: str, message: str = ""):
        super().__init__(f"{reason}: {message}" if message else reason)
        self.reason = reason


class StoreError(PrintLedgerError):
    """Blob store I/O failure"""


class ChainLogError(PrintLedgerError):
    """A chain log line could not be parsed"""

    def __init__(self, message: str, line_number: int, height: Optional[int] = None):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number
        self.height = height


class SimulationError(PrintLedgerError):
    """The simulation hit its virtual-time ceiling"""


class ConfigError(PrintLedgerError):
    """Invalid or unknown configuration values"""


class InvalidBlock(PrintLedgerError):
    """A block failed validation on import"""

    def __init__(self, reason: str, message: str):
        super().__init__(f"{reason}: {message}")
        self.reason = reason
