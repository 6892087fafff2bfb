"""Exception types shared across the package."""

from __future__ import annotations


class ByzwireError(Exception):
    """Base class for all package-specific errors."""


class ConfigInvalid(ByzwireError):
    """A scenario config failed validation; carries field-level diagnostics."""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class AssumptionCViolated(ByzwireError):
    """The good nodes do not share one bidirectional component."""


class DegenerateExchange(ByzwireError):
    """A timing exchange with coincident send stamps cannot yield a skew."""


class IncompleteTrace(ByzwireError):
    """A timing packet never completed its cycle (non-forwarding node)."""

    def __init__(self, node: int, message: str = ""):
        self.node = node
        super().__init__(message or f"node {node} never forwarded the timing packet")


class Disconnected(ByzwireError):
    """No surviving path to the reference node after pruning."""


class NoFeasibleParams(ByzwireError):
    """Parameter selection exhausted its search ceiling."""


class TooLarge(ByzwireError):
    """Instance exceeds the configured enumeration budget."""
