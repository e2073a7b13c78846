"""Exact tabular toolkit for constrained update projection (CUP) safe RL."""
