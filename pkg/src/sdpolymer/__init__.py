"""Numerics for semidirected random polymers in a nonnegative i.i.d. potential."""

__version__ = "0.1.0"
