"""Compact GRU-MLP classifiers for short accelerometer windows.

Training with optional knowledge distillation, Q7 dynamic fixed-point
quantization, a bit-exact integer inference path, and evaluation tooling.
"""

__version__ = "0.1.0"
