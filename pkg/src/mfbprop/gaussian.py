"""Standard normal CDF and density helpers."""
import numpy as np
from scipy.special import erf, erfc

_SQRT2 = np.sqrt(2.0)
_LOG_2PI = np.log(2.0 * np.pi)


def norm_cdf(z):
    # erfc keeps the lower tail accurate and underflows to exactly 0, never below
    return 0.5 * erfc(-np.asarray(z, dtype=float) / _SQRT2)


def mean_sign(z):
    """2 * Phi(z) - 1, via erf for accuracy near z = 0."""
    return erf(np.asarray(z, dtype=float) / _SQRT2)


def norm_logpdf_at_zero(mu, var):
    """log N(0 | mu, var)."""
    return -0.5 * (mu * mu / var + _LOG_2PI + np.log(var))


def norm_pdf_at_zero(mu, var):
    return np.exp(norm_logpdf_at_zero(mu, var))
