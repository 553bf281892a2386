"""Processor agents, synchronization primitives, probes and benchmarks."""
