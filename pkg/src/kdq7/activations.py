"""Gate nonlinearities: exact forms for training, rational forms for deployment.

The approximate tanh is the degree-7/6 rational function

    (x^7 + 378 x^5 + 17325 x^3 + 135135 x)
    --------------------------------------
    (28 x^6 + 3150 x^4 + 62370 x^2 + 135135)

which stays within ~2e-4 of tanh on [-4.972, 4.972]; outside that interval
the output is clamped to +-1. The approximate sigmoid is the shifted half of
the approximate tanh. Both identities below hold bit-exactly, not just to
rounding noise, because the code is arranged for them:

  * tanh_approx(-x) == -tanh_approx(x): odd numerator, even denominator,
    evaluated via Horner on x**2, so negating x negates the quotient exactly.
  * sigmoid_approx(x) + sigmoid_approx(-x) == 1: the negative branch is
    computed as 1 - f(|x|) with f(|x|) in [0.5, 1], where IEEE subtraction
    is exact (Sterbenz), rather than by evaluating the polynomial again.

All functions accept scalars or ndarrays and preserve float dtype; Python
scalars come back as Python floats.
"""

from __future__ import annotations

import numpy as np

# Interval on which the rational form tracks tanh; beyond it the quotient
# drifts away from +-1, so the output is clamped.
TANH_VALID_BOUND = 4.972


def _match_input(out: np.ndarray, scalar_in: bool):
    return out.item() if scalar_in else out


def _as_float_array(x) -> np.ndarray:
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


def tanh_exact(x):
    scalar_in = np.ndim(x) == 0
    return _match_input(np.tanh(_as_float_array(x)), scalar_in)


def sigmoid_exact(x):
    """Numerically stable logistic with an exact complement identity."""
    scalar_in = np.ndim(x) == 0
    arr = _as_float_array(x)
    one = arr.dtype.type(1)
    pos = one / (one + np.exp(-np.abs(arr)))  # in [0.5, 1]
    out = np.where(np.signbit(arr), one - pos, pos)
    return _match_input(out, scalar_in)


def _tanh_approx_arr(arr: np.ndarray) -> np.ndarray:
    dt = arr.dtype
    bound = dt.type(TANH_VALID_BOUND)
    # Evaluate on the clipped argument so huge inputs cannot overflow x**7;
    # clipping is sign-symmetric, so oddness survives.
    xc = np.clip(arr, -bound, bound)
    u = xc * xc
    num = xc * (((u + dt.type(378)) * u + dt.type(17325)) * u + dt.type(135135))
    den = ((dt.type(28) * u + dt.type(3150)) * u + dt.type(62370)) * u + dt.type(135135)
    return np.where(np.abs(arr) > bound, np.copysign(dt.type(1), arr), num / den)


def tanh_approx(x):
    """Rational tanh; clamps to +-1 outside [-4.972, 4.972]. Exactly odd."""
    scalar_in = np.ndim(x) == 0
    return _match_input(_tanh_approx_arr(_as_float_array(x)), scalar_in)


def sigmoid_approx(x):
    """Shifted half of tanh_approx; hits exactly 0 / 1 outside +-4.972.

    The complement identity s(x) + s(-x) == 1 holds bit-exactly: the value
    is always derived from the non-negative half of the input.
    """
    scalar_in = np.ndim(x) == 0
    arr = _as_float_array(x)
    one = arr.dtype.type(1)
    pos = (_tanh_approx_arr(np.abs(arr)) + one) / arr.dtype.type(2)  # in [0.5, 1]
    out = np.where(np.signbit(arr), one - pos, pos)
    return _match_input(out, scalar_in)
