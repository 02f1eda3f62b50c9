"""Finite-difference solver and diagnostics for cavitation free boundaries
in (lambda, Lambda)-elliptic media."""
from __future__ import annotations

__version__ = "0.1.0"
