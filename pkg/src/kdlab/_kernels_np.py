"""Pure-NumPy kernels: the fallback backend.

Every function here has a signature-identical twin in the compiled
``kdlab._kernels`` extension. All kernels take C-contiguous float64
arrays shaped (rows, cols) and reduce over the last axis where a
reduction applies; callers flatten leading dimensions.
"""

import numpy as np
from scipy.special import ndtr

BACKEND_NAME = "numpy"

_INV_SQRT_2PI = 0.3989422804014327  # 1/sqrt(2*pi)


def gelu_fwd(x):
    """x * Phi(x) with the exact Gaussian CDF."""
    return x * ndtr(x)


def gelu_bwd(x, gout):
    """d/dx [x * Phi(x)] = Phi(x) + x * phi(x)."""
    return gout * (ndtr(x) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI)


def softmax_fwd(x, tau):
    """Row softmax of x / tau with max-subtraction."""
    z = (x - x.max(axis=1, keepdims=True)) / tau
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(y, gout, tau):
    """VJP through row softmax: y*(g - <g,y>)/tau."""
    dot = (gout * y).sum(axis=1, keepdims=True)
    return y * (gout - dot) / tau


def log_softmax_fwd(x, tau):
    """Row log-softmax of x / tau, numerically stable."""
    z = (x - x.max(axis=1, keepdims=True)) / tau
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def log_softmax_bwd(logp, gout, tau):
    """VJP through row log-softmax: (g - softmax * sum(g))/tau."""
    return (gout - np.exp(logp) * gout.sum(axis=1, keepdims=True)) / tau


def layernorm_fwd(x, gain, bias, eps):
    """Row standardization then affine. Returns (y, mu, rstd)."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    y = xc * rstd * gain + bias
    return y, mu[:, 0], rstd[:, 0]


def layernorm_bwd(x, gain, mu, rstd, gout):
    """VJP through layernorm. Returns (gx, ggain, gbias)."""
    xhat = (x - mu[:, None]) * rstd[:, None]
    gbias = gout.sum(axis=0)
    ggain = (gout * xhat).sum(axis=0)
    gxhat = gout * gain
    m1 = gxhat.mean(axis=1, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
    gx = rstd[:, None] * (gxhat - m1 - xhat * m2)
    return gx, ggain, gbias
