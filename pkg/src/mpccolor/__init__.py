"""Deterministic (Delta+1) list coloring inside a simulated low-space MPC runtime."""
