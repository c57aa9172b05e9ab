"""Interference Laplace transforms, SINR outage and ergodic rates.

Interferers of each mode are approximated by independent PPPs carrying
i.i.d. power marks. Cellular interferers have intensity ``lambda`` (one per
cell on the channel), D2D interferers ``p * D * P_d / |S|``. Around a BS
the protection induced by channel inversion is kept as a lower limit on
interferer distance: a cellular UE cannot deliver more than ``rho_o`` and a
D2D UE no more than ``T_d * rho_o``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .errors import ModelDomainError
from .model import NetworkParams, derive, mode_selection_probability
from .power import moment_power_cellular_generic, moment_power_d2d
from .specfun import (
    DEFAULT_QUADRATURE,
    QuadratureSpec,
    gamma_function,
    integrate_finite,
    integrate_semi_infinite,
)


class InterferenceSource(enum.Enum):
    D2D_ON_D2D = "d2d_on_d2d"
    CELLULAR_ON_D2D = "cellular_on_d2d"
    D2D_ON_BS = "d2d_on_bs"
    CELLULAR_ON_BS = "cellular_on_bs"


class Mode(enum.Enum):
    CELLULAR = "cellular"
    D2D = "d2d"


def interfering_d2d_intensity(params: NetworkParams) -> float:
    p = params
    if p.potential_d2d_intensity == 0 or (not p.bias_is_infinite and p.bias == 0):
        return 0.0
    return mode_selection_probability(p).d2d_link_intensity


def _protected_tail(lower: float, eta: float, method: str, quadrature: QuadratureSpec) -> float:
    """int_lower^inf x / (x^eta + 1) dx."""
    if method == "auto":
        method = "closed_form" if eta == 4.0 else "quadrature"
    if method == "closed_form":
        if eta != 4.0:
            raise ModelDomainError("the arctan closed form needs a path-loss exponent of 4")
        return 0.5 * (0.5 * math.pi - math.atan(lower * lower))
    if method == "quadrature":
        return integrate_semi_infinite(lambda x: x / (x**eta + 1.0), lower, quadrature)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class InterferenceLT:
    """Laplace transform E[exp(-s I)] of one interference component.

    Moments are evaluated once at construction; calling the object with
    ``s`` (per watt) is then cheap. ``method`` applies to the BS-side
    transforms: ``"auto"`` uses the arctan form when ``eta_c = 4``.
    """

    source: InterferenceSource
    params: NetworkParams
    method: str = "auto"
    quadrature: QuadratureSpec = DEFAULT_QUADRATURE
    _scale: float = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_scale", self._compute_scale())

    def _compute_scale(self) -> float:
        p = self.params
        src = self.source
        if src in (InterferenceSource.D2D_ON_D2D, InterferenceSource.CELLULAR_ON_D2D):
            delta = 2.0 / p.pathloss_d2d
            if delta >= 1.0:
                raise ModelDomainError("pathloss_d2d must exceed 2")
            shape = gamma_function(1.0 + delta) * gamma_function(1.0 - delta)
            if src is InterferenceSource.D2D_ON_D2D:
                intensity = interfering_d2d_intensity(p) / p.num_channels
                if intensity == 0.0:
                    return 0.0
                return math.pi * intensity * moment_power_d2d(delta, p) * shape
            return math.pi * p.bs_intensity * moment_power_cellular_generic(delta, p) * shape
        delta = 2.0 / p.pathloss_cellular
        if src is InterferenceSource.D2D_ON_BS:
            intensity = interfering_d2d_intensity(p) / p.num_channels
            if intensity == 0.0:
                return 0.0
            return 2.0 * math.pi * intensity * moment_power_d2d(delta, p)
        return 2.0 * math.pi * p.bs_intensity * moment_power_cellular_generic(delta, p)

    def __call__(self, s: float) -> float:
        if not s >= 0:
            raise ModelDomainError(f"Laplace argument must be >= 0, got {s!r}")
        if s == 0.0 or self._scale == 0.0:
            return 1.0
        return math.exp(-self.exponent(s))

    def exponent(self, s: float) -> float:
        """-log of the transform at ``s``."""
        if s == 0.0 or self._scale == 0.0:
            return 0.0
        p = self.params
        src = self.source
        if src in (InterferenceSource.D2D_ON_D2D, InterferenceSource.CELLULAR_ON_D2D):
            return self._scale * s ** (2.0 / p.pathloss_d2d)
        eta = p.pathloss_cellular
        if src is InterferenceSource.CELLULAR_ON_BS:
            # a single cellular interferer delivers less than rho_o
            ceiling = p.cutoff_threshold
        elif p.bias_is_infinite:
            ceiling = math.inf
        else:
            ceiling = p.bias * p.cutoff_threshold
        lower = 0.0 if math.isinf(ceiling) else (s * ceiling) ** (-1.0 / eta)
        tail = _protected_tail(lower, eta, self.method, self.quadrature)
        return self._scale * s ** (2.0 / eta) * tail


def lt_d2d_on_d2d(s: float, params: NetworkParams) -> float:
    return InterferenceLT(InterferenceSource.D2D_ON_D2D, params)(s)


def lt_cellular_on_d2d(s: float, params: NetworkParams) -> float:
    return InterferenceLT(InterferenceSource.CELLULAR_ON_D2D, params)(s)


def lt_cellular_on_bs(s: float, params: NetworkParams, method: str = "auto") -> float:
    return InterferenceLT(InterferenceSource.CELLULAR_ON_BS, params, method)(s)


def lt_d2d_on_bs(s: float, params: NetworkParams, method: str = "auto") -> float:
    return InterferenceLT(InterferenceSource.D2D_ON_BS, params, method)(s)


def interference_pair(mode: Mode, params: NetworkParams, method: str = "auto",
                      quadrature: QuadratureSpec = DEFAULT_QUADRATURE) -> tuple[InterferenceLT, InterferenceLT]:
    """(cellular, D2D) interference transforms seen by a receiver of ``mode``."""
    if mode is Mode.D2D:
        return (
            InterferenceLT(InterferenceSource.CELLULAR_ON_D2D, params, method, quadrature),
            InterferenceLT(InterferenceSource.D2D_ON_D2D, params, method, quadrature),
        )
    return (
        InterferenceLT(InterferenceSource.CELLULAR_ON_BS, params, method, quadrature),
        InterferenceLT(InterferenceSource.D2D_ON_BS, params, method, quadrature),
    )


@dataclass(frozen=True)
class OutageResult:
    mode: Mode
    outage_probability: float
    noise_term: float
    lt_cellular: float
    lt_d2d: float


def _outage(mode: Mode, params: NetworkParams, theta: float | None, method: str,
            quadrature: QuadratureSpec) -> OutageResult:
    p = params
    theta = p.sinr_threshold if theta is None else theta
    if not theta >= 0:
        raise ModelDomainError(f"SINR threshold must be >= 0, got {theta!r}")
    lt_c, lt_d = interference_pair(mode, p, method, quadrature)
    s = theta / p.cutoff_threshold
    noise = math.exp(-s * p.noise_power)
    c, d = lt_c(s), lt_d(s)
    # 1 - e^{-x} without cancellation near zero
    total = s * p.noise_power + lt_c.exponent(s) + lt_d.exponent(s)
    return OutageResult(mode, -math.expm1(-total), noise, c, d)


def outage_d2d(params: NetworkParams, theta: float | None = None,
               quadrature: QuadratureSpec = DEFAULT_QUADRATURE) -> OutageResult:
    """SINR outage probability of a generic D2D link."""
    return _outage(Mode.D2D, params, theta, "auto", quadrature)


def outage_cellular(params: NetworkParams, theta: float | None = None, method: str = "auto",
                    quadrature: QuadratureSpec = DEFAULT_QUADRATURE) -> OutageResult:
    """SINR outage probability of a generic cellular uplink.

    ``method="quadrature"`` forces the general protected-tail integral;
    ``"closed_form"`` requires ``eta_c = 4``.
    """
    return _outage(Mode.CELLULAR, params, theta, method, quadrature)


def outage(mode: Mode, params: NetworkParams, theta: float | None = None) -> OutageResult:
    return outage_d2d(params, theta) if mode is Mode.D2D else outage_cellular(params, theta)


# ---------------------------------------------------------------------------
# rates


def _success_integrand(mode: Mode, params: NetworkParams, method: str, quadrature: QuadratureSpec):
    lt_c, lt_d = interference_pair(mode, params, method, quadrature)
    noise_scale = params.noise_power / params.cutoff_threshold
    ro = params.cutoff_threshold

    def success(threshold: float) -> float:
        # P{SINR > threshold}
        if threshold <= 0.0:
            return 1.0
        s = threshold / ro
        return math.exp(-(threshold * noise_scale + lt_c.exponent(s) + lt_d.exponent(s)))

    return success


def link_capacity(mode: Mode, params: NetworkParams, path: str = "log_domain", method: str = "auto",
                  quadrature: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Ergodic rate E[ln(1 + SINR)] in nats/s/Hz.

    ``path="log_domain"`` integrates P{SINR > e^t - 1} over t, truncated where
    the integrand drops below the absolute tolerance; ``path="threshold"``
    substitutes u = e^t - 1 and integrates P{SINR > u} / (1 + u) over u.
    """
    p = params
    if mode is Mode.D2D and not _has_d2d_population(p):
        raise ModelDomainError("no UE operates in D2D mode for these parameters")
    success = _success_integrand(mode, p, method, quadrature)
    if path == "threshold":
        return integrate_semi_infinite(lambda u: success(u) / (1.0 + u), 0.0, quadrature)
    if path != "log_domain":
        raise ValueError(f"unknown path {path!r}")

    def integrand(t: float) -> float:
        return success(math.expm1(t))

    upper = 1.0
    while integrand(upper) > quadrature.absolute_tolerance * 1e-3:
        upper *= 2.0
        if upper > 1e4:
            break
    return integrate_finite(integrand, 0.0, upper, quadrature)


def _has_d2d_population(p: NetworkParams) -> bool:
    return p.potential_d2d_intensity > 0 and (p.bias_is_infinite or p.bias > 0)


@dataclass(frozen=True)
class RateResult:
    link_capacity_cellular: float
    link_capacity_d2d: float | None
    potential_d2d_rate: float
    total_capacity: float
    prob_d2d: float


def potential_d2d_rate(params: NetworkParams, rates: tuple[float, float | None] | None = None) -> float:
    """Average rate of a generic potential D2D UE in nats/s/Hz.

    D2D-mode UEs get the D2D link capacity; the rest share the cellular
    channel of their cell with the other cellular candidates and need two
    hops, hence the factor one half.
    """
    p = params
    d = derive(p)
    prob = mode_selection_probability(p).prob_d2d
    r_c, r_d = rates if rates is not None else _rates(p)
    pot = d.d2d_retention * p.potential_d2d_intensity
    share_denominator = (1.0 - prob) * pot + (p.ue_intensity - pot) * (1.0 - d.truncation_outage)
    if not share_denominator > 0:
        raise ModelDomainError("no cellular candidates; the cellular share is undefined")
    value = 0.5 * (1.0 - prob) * p.bs_intensity / share_denominator * r_c
    if prob > 0:
        value += prob * r_d
    return value


def total_network_capacity(params: NetworkParams, rates: tuple[float, float | None] | None = None) -> float:
    """Sum capacity per unit area, nats/s/Hz/m^2."""
    p = params
    r_c, r_d = rates if rates is not None else _rates(p)
    value = p.bs_intensity * r_c
    intensity = interfering_d2d_intensity(p)
    if intensity > 0:
        value += intensity * r_d
    return value


def _rates(p: NetworkParams) -> tuple[float, float | None]:
    r_c = link_capacity(Mode.CELLULAR, p)
    r_d = link_capacity(Mode.D2D, p) if _has_d2d_population(p) else None
    return r_c, r_d


def rate_summary(params: NetworkParams) -> RateResult:
    rates = _rates(params)
    return RateResult(
        link_capacity_cellular=rates[0],
        link_capacity_d2d=rates[1],
        potential_d2d_rate=potential_d2d_rate(params, rates),
        total_capacity=total_network_capacity(params, rates),
        prob_d2d=mode_selection_probability(params).prob_d2d,
    )
