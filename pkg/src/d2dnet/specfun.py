"""Special functions and quadrature used by the analytical model.

The incomplete gamma function is evaluated with the usual split: a power
series below ``x = a + 1`` and a Lentz continued fraction for the upper
function above it. Quadrature is delegated to QUADPACK (``scipy.integrate.quad``)
behind a small contract that turns its status codes into exceptions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from scipy import integrate

from .errors import ConvergenceError, ModelDomainError

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000

# Above this argument e^{-x} underflows relative to Gamma(a) for any a < 200.
SATURATION_ARGUMENT = 700.0


@dataclass(frozen=True)
class QuadratureSpec:
    relative_tolerance: float = 1e-8
    absolute_tolerance: float = 1e-12
    max_subdivisions: int = 200

    def __post_init__(self):
        if not (self.relative_tolerance > 0 and self.absolute_tolerance > 0):
            raise ModelDomainError("quadrature tolerances must be positive")
        if self.max_subdivisions < 10:
            raise ModelDomainError("max_subdivisions must be at least 10")


DEFAULT_QUADRATURE = QuadratureSpec()


def gamma_function(a: float) -> float:
    if not a > 0:
        raise ModelDomainError(f"gamma_function requires a > 0, got {a!r}")
    return math.gamma(a)


def _series(a: float, x: float) -> float:
    # gamma(a, x) = x^a e^{-x} sum_n x^n / (a (a+1) ... (a+n))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise ConvergenceError(f"incomplete gamma series did not converge (a={a}, x={x})")
    return total * math.exp(a * math.log(x) - x)


def _continued_fraction(a: float, x: float) -> float:
    # Upper incomplete gamma Gamma(a, x), modified Lentz.
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ConvergenceError(f"incomplete gamma continued fraction did not converge (a={a}, x={x})")
    return math.exp(a * math.log(x) - x) * h


def lower_incomplete_gamma(a: float, x: float) -> float:
    """Lower incomplete gamma function, gamma(a, x) = int_0^x t^{a-1} e^{-t} dt.

    ``x = inf`` returns Gamma(a). Arguments beyond ``SATURATION_ARGUMENT``
    saturate to Gamma(a) directly.
    """
    if not a > 0:
        raise ModelDomainError(f"lower_incomplete_gamma requires a > 0, got {a!r}")
    if not x >= 0:
        raise ModelDomainError(f"lower_incomplete_gamma requires x >= 0, got {x!r}")
    if x == 0.0:
        return 0.0
    full = math.gamma(a)
    if x > SATURATION_ARGUMENT and x > 2.0 * a:
        return full
    if x < a + 1.0:
        return _series(a, x)
    return full - _continued_fraction(a, x)


def upper_incomplete_gamma(a: float, x: float) -> float:
    """Gamma(a) - gamma(a, x), evaluated without cancellation when x is large."""
    if not a > 0:
        raise ModelDomainError(f"upper_incomplete_gamma requires a > 0, got {a!r}")
    if not x >= 0:
        raise ModelDomainError(f"upper_incomplete_gamma requires x >= 0, got {x!r}")
    if x == 0.0:
        return math.gamma(a)
    if x < a + 1.0:
        return math.gamma(a) - _series(a, x)
    return _continued_fraction(a, x)


def _quad(integrand, lower, upper, spec: QuadratureSpec) -> float:
    value, abserr, info, *rest = integrate.quad(
        integrand,
        lower,
        upper,
        epsabs=spec.absolute_tolerance,
        epsrel=spec.relative_tolerance,
        limit=spec.max_subdivisions,
        full_output=1,
    )
    # quad appends a status message only when its return code is nonzero
    if rest:
        target = max(spec.absolute_tolerance, spec.relative_tolerance * abs(value))
        if not (math.isfinite(value) and abserr <= 10.0 * target):
            raise ConvergenceError(
                f"quadrature on [{lower}, {upper}] failed: {rest[0]} "
                f"(value={value:.6g}, error estimate={abserr:.3g})"
            )
    if not math.isfinite(value):
        raise ConvergenceError(f"quadrature on [{lower}, {upper}] produced {value}")
    return value


def integrate_finite(
    integrand: Callable[[float], float],
    lower: float,
    upper: float,
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
    singular_endpoints: int = 0,
) -> float:
    """Integrate over [lower, upper].

    ``singular_endpoints`` of 1 marks an integrable singularity at ``lower``;
    the interval is then cut geometrically toward that endpoint so each piece
    sees a bounded dynamic range of the x^{c-1} factor.
    """
    if not lower <= upper:
        raise ModelDomainError(f"integrate_finite requires lower <= upper, got [{lower}, {upper}]")
    if lower == upper:
        return 0.0
    if not singular_endpoints:
        return _quad(integrand, lower, upper, spec)
    width = upper - lower
    cuts = [lower + width * 2.0 ** (-k) for k in range(12, -1, -1)]
    total = _quad(integrand, lower, cuts[0], spec)
    for a, b in zip(cuts[:-1], cuts[1:]):
        total += _quad(integrand, a, b, spec)
    return total


def integrate_semi_infinite(
    integrand: Callable[[float], float],
    lower: float,
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """Integrate over [lower, inf) after mapping u = 1 / (1 + x - lower)."""
    if not lower >= 0:
        raise ModelDomainError(f"integrate_semi_infinite requires lower >= 0, got {lower!r}")

    def mapped(u):
        if u <= 0.0:
            return 0.0
        x = lower + 1.0 / u - 1.0
        return integrand(x) / (u * u)

    return _quad(mapped, 0.0, 1.0, spec)
