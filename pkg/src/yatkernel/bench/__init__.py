"""Experiment harness: optimiser, benchmarks and the command-line runner."""
