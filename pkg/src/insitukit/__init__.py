"""Desk-scale in-situ coupling framework around a spectral-element proxy.

Modules: spectral (GLL basis + DLT), compress (error-bounded truncation +
archive codec), proxysim (deterministic proxy solver), engine (coupling
modes, resource split, staged channel), tasks (compression / image / UQ),
uq (streaming autocorrelation statistics), render (slice rasterization),
bench (experiment driver), cli (command line).
"""

__version__ = "0.1.0"
