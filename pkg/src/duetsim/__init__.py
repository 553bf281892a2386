"""Cycle-approximate simulator of a manycore + eFPGA architecture with Duet adapters."""

__version__ = "0.1.0"
