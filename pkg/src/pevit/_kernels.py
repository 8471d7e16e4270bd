"""Float32 erf and GELU-gradient ufuncs.

float64 callers use scipy's erf directly. The float32 erf is a rational
minimax fit on [-4, 4] (|error| < 5e-7, a few float32 ulp), roughly 30x
faster than scipy's float32 path, which dominates training time otherwise.
"""

import math

import numpy as np
from scipy.special import erf as _erf64

try:
    from numba import vectorize
except ImportError:  # pragma: no cover
    vectorize = None

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

if vectorize is not None:

    @vectorize(["float32(float32)"], cache=True, fastmath=True)
    def _erf32(x):
        x = min(max(x, np.float32(-4.0)), np.float32(4.0))
        x2 = x * x
        p = x2 * np.float32(-2.72614225801306e-10) + np.float32(2.77068142495902e-08)
        p = x2 * p + np.float32(-2.10102402082508e-06)
        p = x2 * p + np.float32(-5.69250639462346e-05)
        p = x2 * p + np.float32(-7.34990630326855e-04)
        p = x2 * p + np.float32(-2.95459980854025e-03)
        p = x2 * p + np.float32(-1.60960333262415e-02)
        q = x2 * np.float32(-1.45660718464996e-05) + np.float32(-2.13374055278905e-04)
        q = x2 * q + np.float32(-1.68282697438203e-03)
        q = x2 * q + np.float32(-7.37332916720468e-03)
        q = x2 * q + np.float32(-1.42647390514189e-02)
        return x * p / q

    @vectorize(["float32(float32)"], cache=True, fastmath=True)
    def _normal_cdf32(x):
        return np.float32(0.5) + np.float32(0.5) * _erf32(x * np.float32(0.7071067811865476))

    @vectorize(["float32(float32, float32, float32, float32)"], cache=True, fastmath=True)
    def _gelu_grad32(g, x, cdf, gauss):
        return g * (cdf + x * np.float32(_INV_SQRT_2PI) * gauss)

else:  # pragma: no cover
    _erf32 = None
    _normal_cdf32 = None
    _gelu_grad32 = None


def erf(x):
    if x.dtype == np.float32 and _erf32 is not None:
        return _erf32(x)
    return _erf64(x)


def normal_cdf(x):
    """Standard normal CDF, ``0.5 * (1 + erf(x / sqrt(2)))``."""
    if x.dtype == np.float32 and _normal_cdf32 is not None:
        return _normal_cdf32(x)
    return 0.5 * (1.0 + _erf64(x * (1.0 / math.sqrt(2.0))))


def gelu_grad(g, x, cdf):
    if x.dtype == np.float32 and _gelu_grad32 is not None:
        # numba leaves exp scalar here; numpy's is SIMD
        gauss = np.square(x)
        gauss *= np.float32(-0.5)
        np.exp(gauss, out=gauss)
        return _gelu_grad32(g.astype(np.float32, copy=False), x, cdf, gauss)
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return g * (cdf + x * pdf)
