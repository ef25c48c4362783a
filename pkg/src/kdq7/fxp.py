"""Q7 fixed-point primitives.

A Q7 value is a signed 8-bit integer interpreted as ``q / 2**7``. Weight
matrices are quantized per-tensor with a zero center-point: the scale is
chosen so the full float range maps onto [-128, 127], and the stored bytes
are the rounded ratios. The saturating matrix-vector kernel works entirely
in integer arithmetic; callers convert its Q7 output back to float units by
multiplying with the precomputed rescale factor of the (input scale, weight
scale) pair.

Rounding conventions (the embedded-DSP ones):
  * quantization rounds half away from zero;
  * the MVM output adds 2**6 and arithmetic-shifts right by 7.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import opcount
from .errors import InvalidInput

Q7_MIN = -128
Q7_MAX = 127
Q7_UNIT = 128  # 2**7, the implicit denominator of a Q7 value

# Row length bound that keeps the MVM accumulator inside a signed 32-bit
# range: cols * 128 * 128 <= 2**31.
MAX_COLS = 1 << 17


def round_half_away(v: np.ndarray) -> np.ndarray:
    """Round to nearest integer with ties away from zero."""
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def _as_q7_bytes(v: np.ndarray) -> np.ndarray:
    return np.clip(v, Q7_MIN, Q7_MAX).astype(np.int8)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Q7Matrix:
    """Per-tensor-quantized int8 matrix; entry value = data[i,j] / 2**7."""

    data: np.ndarray  # int8, row-major
    scale: float      # > 0, float32-representable

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.dtype != np.int8:
            raise InvalidInput("Q7Matrix requires a 2-D int8 array")
        if self.data.shape[1] > MAX_COLS:
            raise InvalidInput(f"Q7Matrix cols {self.data.shape[1]} exceeds {MAX_COLS}")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise InvalidInput("Q7Matrix scale must be positive and finite")
        object.__setattr__(self, "data", _frozen(self.data))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def dequantize(self) -> np.ndarray:
        """Float approximation of the source matrix: scale * q."""
        return (self.data.astype(np.float32) * np.float32(self.scale)).astype(np.float32)


@dataclass(frozen=True)
class Q7Vector:
    """Int8 vector in Q7 format; entry value = data[i] / 2**7."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 1 or self.data.dtype != np.int8:
            raise InvalidInput("Q7Vector requires a 1-D int8 array")
        object.__setattr__(self, "data", _frozen(self.data))

    @property
    def len(self) -> int:
        return self.data.shape[0]


def quantize_matrix(w) -> Q7Matrix:
    """Quantize a float matrix to Q7 with a per-tensor scale.

    The scale is (2 / (2**8 - 1)) * max|w|, so the extreme entries land on
    the edge of the int8 range; entries are rounded half away from zero and
    saturated. An all-zero matrix gets scale 1 (any scale carries no
    information there).
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.size == 0:
        raise InvalidInput("weight matrix must be 2-D and non-empty")
    if not np.all(np.isfinite(w)):
        raise InvalidInput("weight matrix has non-finite entries")
    m = float(np.max(np.abs(w)))
    if m == 0.0:
        return Q7Matrix(data=np.zeros(w.shape, dtype=np.int8), scale=1.0)
    # Ratio via (w/m) * 127.5 rather than w / scale: the max-magnitude
    # entries then land on exactly +-127.5 (w/m is exactly +-1 there), so the
    # away-from-zero tie rule maps them to -128 / 127 regardless of how the
    # scale itself rounds. No other input can produce an exact tie.
    q = _as_q7_bytes(round_half_away((w / m) * 127.5))
    # Scales are kept float32-representable so binary round trips are exact.
    scale = float(np.float32(2.0 * m / 255.0))
    if scale == 0.0:
        scale = float(np.finfo(np.float32).tiny)
    return Q7Matrix(data=q, scale=scale)


def to_q7(x, input_scale: float) -> Q7Vector:
    """Scale a float vector by ``2**7 / input_scale`` and saturate to int8."""
    if not (np.isfinite(input_scale) and input_scale > 0):
        raise InvalidInput("input_scale must be positive and finite")
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInput("input vector has non-finite entries")
    opcount.add_float_mults(x.size)
    return Q7Vector(data=_as_q7_bytes(round_half_away(Q7_UNIT * x / input_scale)))


def q7_matvec(a: Q7Matrix, x: Q7Vector) -> Q7Vector:
    """Saturating Q7 matrix-vector multiply.

    Accumulates int32-wide raw products per row, then applies the Q7
    renormalization (acc + 2**6) >> 7 and saturates. The result represents
    sum_j (a_ij / 2**7) (x_j / 2**7) in Q7.
    """
    if a.cols != x.len:
        raise InvalidInput(f"dimension mismatch: matrix cols {a.cols} != vector len {x.len}")
    with opcount.kernel():
        opcount.add_int_mults(a.rows * a.cols)
        acc = a.data.astype(np.int64) @ x.data.astype(np.int64)
        y = _as_q7_bytes((acc + 64) >> 7)
    return Q7Vector(data=y)


def q7_matmul_rows(a: Q7Matrix, xq: np.ndarray) -> np.ndarray:
    """Batched form of :func:`q7_matvec`: each row of ``xq`` is one input.

    ``xq`` is (batch, cols) int8; the result is (batch, rows) int8 and equals
    stacking q7_matvec over the rows. Used by the vectorized evaluation path.
    """
    if xq.ndim != 2 or xq.dtype != np.int8:
        raise InvalidInput("batched input must be a 2-D int8 array")
    if a.cols != xq.shape[1]:
        raise InvalidInput(f"dimension mismatch: matrix cols {a.cols} != input cols {xq.shape[1]}")
    with opcount.kernel():
        opcount.add_int_mults(xq.shape[0] * a.rows * a.cols)
        acc = xq.astype(np.int64) @ a.data.astype(np.int64).T
        return _as_q7_bytes((acc + 64) >> 7)


def rescale_to_float(y: Q7Vector, rescale: float) -> np.ndarray:
    """Convert a Q7 MVM result back to float units: (y / 2**7) * rescale."""
    if not (np.isfinite(rescale) and rescale > 0):
        raise InvalidInput("rescale must be positive and finite")
    opcount.add_float_mults(y.len)
    return y.data.astype(np.float32) * np.float32(rescale / Q7_UNIT)


def rescale_rows_to_float(yq: np.ndarray, rescale: float) -> np.ndarray:
    """Batched :func:`rescale_to_float` over (batch, rows) int8 results."""
    opcount.add_float_mults(yq.size)
    return yq.astype(np.float32) * np.float32(rescale / Q7_UNIT)
