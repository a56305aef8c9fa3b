"""Scalar special functions and samplers for the likelihood computations.

The modified Bessel function of the second kind is evaluated by direct
numerical quadrature of its integral representation on a log-spaced grid
with adaptive truncation. The exponentially scaled form
``log(x^nu * K_nu(x))`` is the primitive everyone else builds on: it stays
finite as x -> 0, which is exactly the regime the boundary estimators probe.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

EULER_GAMMA = 0.5772156649015328606

# Relative magnitude below which the integrand is treated as zero when
# truncating the quadrature window.
_TRUNC_REL = 1e-20
_DEFAULT_STEP = 0.02


@dataclass(frozen=True)
class QuadratureGrid:
    """Positive nodes and weights for integrals over (0, inf)."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: str  # "log-spaced-trapezoid" or "gauss-laguerre-like"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape != weights.shape:
            raise ValueError("nodes and weights must have equal length")
        if nodes.size and (np.any(nodes <= 0) or np.any(np.diff(nodes) <= 0)):
            raise ValueError("nodes must be strictly increasing and positive")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)


def log_trapezoid_grid(s_lo: float, s_hi: float, step: float) -> QuadratureGrid:
    """Uniform grid in s = log t; weights carry the Jacobian t ds."""
    n = max(2, int(np.ceil((s_hi - s_lo) / step)) + 1)
    s = np.linspace(s_lo, s_hi, n)
    t = np.exp(s)
    w = t * (s[1] - s[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return QuadratureGrid(nodes=t, weights=w, kind="log-spaced-trapezoid")


def gauss_laguerre_grid(n: int) -> QuadratureGrid:
    """Gauss-Laguerre rule for integrals of f(t) e^{-t} on (0, inf)."""
    nodes, weights = np.polynomial.laguerre.laggauss(n)
    return QuadratureGrid(nodes=nodes, weights=weights, kind="gauss-laguerre-like")


def _bessel_window(nu: float, z: float, step: float):
    """Bracket of s = log t outside which the integrand is negligible."""
    # Integrand in s: exp(nu*s - (e^s + z^2 e^{-s})/2); locate the mode
    # then extend both ways until the log-integrand drops by log(_TRUNC_REL).
    def logf(s):
        return nu * s - 0.5 * (math.exp(s) + z * z * math.exp(-s))

    s_mode = math.log(nu + math.sqrt(nu * nu + z * z)) if (nu > 0 or z > 0) else 0.0
    peak = logf(s_mode)
    drop = -math.log(_TRUNC_REL)

    lo = s_mode
    while logf(lo) > peak - drop:
        lo -= 2.0
        if lo < -2000.0:  # z extremely small and nu tiny; bail out of the loop
            break
    hi = s_mode
    while logf(hi) > peak - drop:
        hi += 2.0
    return lo, hi


def log_scaled_bessel_k(nu: float, z: float, step: float = _DEFAULT_STEP) -> float:
    """log( z^nu * K_nu(z) ), finite for all z >= 0 when nu > 0.

    Computed as log( (1/2) * integral t^{nu-1} exp(-(t + z^2/t)/2) dt ) on a
    log-spaced trapezoid grid. For z = 0 the integral is Gamma(nu) 2^nu / ...
    evaluated in closed form.
    """
    if not np.isfinite(nu) or not np.isfinite(z):
        raise DomainError("nu and z must be finite")
    if z < 0:
        raise DomainError("z must be >= 0")
    if z == 0.0:
        if nu <= 0:
            raise DomainError("scaled form requires nu > 0 at z = 0")
        return math.log(0.5) + nu * math.log(2.0) + math.lgamma(nu)

    lo, hi = _bessel_window(nu, z, step)
    n = max(8, int(math.ceil((hi - lo) / step)) + 1)
    s = np.linspace(lo, hi, n)
    h = s[1] - s[0]
    logf = nu * s - 0.5 * (np.exp(s) + (z * z) * np.exp(-s))
    m = logf.max()
    acc = np.exp(logf - m)
    acc[0] *= 0.5
    acc[-1] *= 0.5
    return math.log(0.5) + m + math.log(h * float(acc.sum()))


def bessel_k(nu: float, x: float, step: float = _DEFAULT_STEP) -> float:
    """Modified Bessel function of the second kind, K_nu(x) for x > 0."""
    if not np.isfinite(x) or x <= 0:
        raise DomainError("bessel_k requires x > 0")
    nu = abs(float(nu))  # K_{-nu} = K_nu
    log_k = log_scaled_bessel_k(nu, x, step=step) - nu * math.log(x)
    if log_k > 700.0:
        raise OverflowError(
            f"bessel_k(nu={nu}, x={x}) overflows: log K = {log_k:.2f} > 700"
        )
    if log_k < -745.0:
        raise OverflowError(
            f"bessel_k(nu={nu}, x={x}) underflows: log K = {log_k:.2f} < -745"
        )
    return math.exp(log_k)


# Asymptotic tails of psi and psi' (Bernoulli-number coefficients); the
# recurrence lifts small arguments to x >= _ASYM_MIN first.
_ASYM_MIN = 12.0


def digamma(x: float) -> float:
    if not np.isfinite(x) or x <= 0:
        raise DomainError("digamma requires x > 0")
    acc = 0.0
    while x < _ASYM_MIN:
        acc -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    tail = (
        math.log(x)
        - 0.5 * inv
        - inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 / 240.0)))
    )
    return acc + tail


def trigamma(x: float) -> float:
    if not np.isfinite(x) or x <= 0:
        raise DomainError("trigamma requires x > 0")
    acc = 0.0
    while x < _ASYM_MIN:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    tail = inv * (
        1.0
        + 0.5 * inv
        + inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)))
    )
    return acc + tail


def sample_gamma(shape: float, rate: float, rng: np.random.Generator, size=None):
    """Gamma(shape, rate) draws; deterministic given the generator state."""
    if shape <= 0 or rate <= 0:
        raise DomainError("sample_gamma requires shape > 0 and rate > 0")
    return rng.gamma(shape, 1.0 / rate, size=size)
