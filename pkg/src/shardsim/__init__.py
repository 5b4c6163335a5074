"""Sharded ledger simulator and verifiers."""

__version__ = "0.1.0"
