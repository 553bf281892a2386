"""Behavioral soft-accelerator models and their numeric kernels."""

from .base import DESCRIPTORS, Accelerator, AcceleratorDescriptor, descriptor

__all__ = ["DESCRIPTORS", "Accelerator", "AcceleratorDescriptor", "descriptor"]
