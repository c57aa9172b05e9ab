"""Transmit-power distributions under truncated channel inversion.

Four populations are covered:

* D2D-mode UEs (``D2D_MODE``), power ``rho_o * r_d^eta_d`` given the
  biased selection rule holds;
* covered non-potential UEs (``CASE2_CELLULAR``), power ``rho_o * r_c^eta_c``
  given ``r_c`` is within the inversion range;
* covered potential UEs that stay cellular (``CASE4_CELLULAR``);
* the generic cellular UE (``GENERIC_CELLULAR``), a two-component mixture of
  the previous two for which only moments are exposed.

All pdfs carry an integrable ``x^(2/eta - 1)`` factor at the origin.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import ModelDomainError
from .model import NetworkParams, coverage_exponent, derive, mode_selection_probability
from .specfun import DEFAULT_QUADRATURE, QuadratureSpec, integrate_finite, lower_incomplete_gamma


class PowerKind(enum.Enum):
    D2D_MODE = "d2d"
    CASE2_CELLULAR = "case2"
    CASE4_CELLULAR = "case4"
    GENERIC_CELLULAR = "cellular"


def _covered_fraction(p: NetworkParams) -> float:
    return -math.expm1(-coverage_exponent(p))


def _d2d_selection_exponent(p: NetworkParams) -> float:
    # pi lambda (P_u / (T_d rho_o))^(2/eta_c)
    return math.pi * p.bs_intensity * (p.max_tx_power / (p.bias * p.cutoff_threshold)) ** (2.0 / p.pathloss_cellular)


def _check_alpha(alpha: float) -> None:
    if not alpha >= 0:
        raise ModelDomainError(f"moment order must be > 0, got {alpha!r}")


def _require_d2d(p: NetworkParams) -> None:
    if not p.bias_is_infinite and p.bias == 0:
        raise ModelDomainError("bias = 0 disables D2D mode; the D2D power law is undefined")


# ---------------------------------------------------------------------------
# D2D mode


def pdf_power_d2d(x: float, params: NetworkParams) -> float:
    p = params
    _require_d2d(p)
    if not x > 0:
        raise ModelDomainError(f"power must be > 0, got {x!r}")
    if x > p.max_tx_power:
        return 0.0
    ed, ec = p.pathloss_d2d, p.pathloss_cellular
    if p.bias_is_infinite:
        # selection always holds; uniform-disk power law truncated at P_u
        return 2.0 * x ** (2.0 / ed - 1.0) / (ed * p.max_tx_power ** (2.0 / ed))
    tr = p.bias * p.cutoff_threshold
    pl = math.pi * p.bs_intensity
    norm = lower_incomplete_gamma(ec / ed, _d2d_selection_exponent(p))
    return (
        2.0 * x ** (2.0 / ed - 1.0) * pl ** (ec / ed) * math.exp(-pl * (x / tr) ** (2.0 / ec))
        / (ec * tr ** (2.0 / ed) * norm)
    )


def moment_power_d2d(alpha: float, params: NetworkParams) -> float:
    p = params
    _check_alpha(alpha)
    _require_d2d(p)
    if alpha == 0:
        return 1.0
    ed, ec = p.pathloss_d2d, p.pathloss_cellular
    if p.bias_is_infinite:
        return p.max_tx_power**alpha * 2.0 / (alpha * ed + 2.0)
    tr = p.bias * p.cutoff_threshold
    pl = math.pi * p.bs_intensity
    z = _d2d_selection_exponent(p)
    shape = ec / ed
    ratio = lower_incomplete_gamma(alpha * ec / 2.0 + shape, z) / lower_incomplete_gamma(shape, z)
    return tr**alpha * ratio / pl ** (alpha * ec / 2.0)


# ---------------------------------------------------------------------------
# covered non-potential UEs


def pdf_power_case2(x: float, params: NetworkParams) -> float:
    p = params
    if not x > 0:
        raise ModelDomainError(f"power must be > 0, got {x!r}")
    if x > p.max_tx_power:
        return 0.0
    return _unconditioned_cellular_pdf(x, p) / _covered_fraction(p)


def _unconditioned_cellular_pdf(x: float, p: NetworkParams) -> float:
    ec = p.pathloss_cellular
    pl = math.pi * p.bs_intensity
    ro = p.cutoff_threshold
    return 2.0 * pl * x ** (2.0 / ec - 1.0) * math.exp(-pl * (x / ro) ** (2.0 / ec)) / (ec * ro ** (2.0 / ec))


def moment_power_case2(alpha: float, params: NetworkParams) -> float:
    p = params
    _check_alpha(alpha)
    if alpha == 0:
        return 1.0
    ec = p.pathloss_cellular
    pl = math.pi * p.bs_intensity
    g = lower_incomplete_gamma(alpha * ec / 2.0 + 1.0, coverage_exponent(p))
    return p.cutoff_threshold**alpha * g / (pl ** (alpha * ec / 2.0) * _covered_fraction(p))


# ---------------------------------------------------------------------------
# covered potential UEs that stay cellular


@dataclass(frozen=True)
class Case4SplitProbability:
    prob_cellular_given_case4: float


def case4_support_upper(params: NetworkParams) -> float:
    p = params
    if p.bias_is_infinite:
        return 0.0
    return p.max_tx_power / max(p.bias, 1.0)


def case4_split_probability(params: NetworkParams) -> Case4SplitProbability:
    """Probability that a covered potential UE operates in cellular mode."""
    p = params
    if p.bias_is_infinite:
        return Case4SplitProbability(0.0)
    if p.bias == 0:
        return Case4SplitProbability(1.0)
    ed, ec = p.pathloss_d2d, p.pathloss_cellular
    t = p.bias
    covered = _covered_fraction(p)
    tb = min(1.0, t ** (2.0 / ed))
    pl = math.pi * p.bs_intensity
    upper = pl * (p.max_tx_power / (max(t, 1.0) * p.cutoff_threshold)) ** (2.0 / ec)
    last = (
        ec * (t * p.cutoff_threshold) ** (2.0 / ed) * lower_incomplete_gamma(ec / ed, upper)
        / (ed * p.max_tx_power ** (2.0 / ed) * pl ** (ec / ed) * covered)
    )
    prob = 1.0 - tb + tb / covered - last
    return Case4SplitProbability(min(max(prob, 0.0), 1.0))


def pdf_power_case4_cellular(x: float, params: NetworkParams) -> float:
    p = params
    if not x > 0:
        raise ModelDomainError(f"power must be > 0, got {x!r}")
    split = case4_split_probability(p).prob_cellular_given_case4
    if split == 0.0:
        raise ModelDomainError("no covered potential UE operates in cellular mode at this bias")
    if x > case4_support_upper(p):
        return 0.0
    ed = p.pathloss_d2d
    pu = p.max_tx_power ** (2.0 / ed)
    keep = (pu - (p.bias * x) ** (2.0 / ed)) / pu
    return _unconditioned_cellular_pdf(x, p) * keep / (split * _covered_fraction(p))


def moment_power_case4_cellular(
    alpha: float,
    params: NetworkParams,
    method: str = "quadrature",
    quadrature: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """E[P^alpha] for a covered potential UE in cellular mode.

    ``method="quadrature"`` integrates the pdf and is the reference path.
    ``method="closed_form"`` evaluates the term-by-term integral of the pdf:
    both terms reduce to lower incomplete gammas, the second carrying
    ``rho_o^(alpha + 2/eta_d)``.
    """
    p = params
    _check_alpha(alpha)
    if alpha == 0:
        return 1.0
    if p.bias_is_infinite:
        # support shrinks to the origin as the bias grows
        return 0.0
    if method == "quadrature":
        upper = case4_support_upper(p)
        return integrate_finite(
            lambda x: x**alpha * pdf_power_case4_cellular(x, p), 0.0, upper, quadrature, singular_endpoints=1
        )
    if method == "closed_form":
        return _case4_moment_closed_form(alpha, p)
    raise ValueError(f"unknown method {method!r}")


def _case4_moment_closed_form(alpha: float, p: NetworkParams) -> float:
    ec, ed, t = p.pathloss_cellular, p.pathloss_d2d, p.bias
    ro = p.cutoff_threshold
    pl = math.pi * p.bs_intensity
    covered = _covered_fraction(p)
    split = case4_split_probability(p).prob_cellular_given_case4
    upper = pl * (p.max_tx_power / (max(t, 1.0) * ro)) ** (2.0 / ec)
    first = ro**alpha * lower_incomplete_gamma(alpha * ec / 2.0 + 1.0, upper) / pl ** (alpha * ec / 2.0)
    second = 0.0
    if t > 0:
        second = (
            (t / p.max_tx_power) ** (2.0 / ed)
            * ro ** (alpha + 2.0 / ed)
            * lower_incomplete_gamma(ec / ed + alpha * ec / 2.0 + 1.0, upper)
            / pl ** (ec / ed + alpha * ec / 2.0)
        )
    return (first - second) / (covered * split)


# ---------------------------------------------------------------------------
# generic cellular UE


def case4_cellular_weight(params: NetworkParams) -> float:
    """Mixture weight ``p * P_d * D / U`` on the case-4 component."""
    p = params
    if p.potential_d2d_intensity == 0:
        return 0.0
    d = derive(p)
    prob = mode_selection_probability(p).prob_d2d
    return d.d2d_retention * prob * p.potential_d2d_intensity / p.ue_intensity


def moment_power_cellular_generic(
    alpha: float,
    params: NetworkParams,
    method: str = "closed_form",
    quadrature: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """E[P_c^alpha] as the case-2 / case-4 mixture.

    ``method`` selects how each component is computed: ``"closed_form"`` uses
    the incomplete-gamma expressions, ``"quadrature"`` integrates each pdf.
    """
    p = params
    _check_alpha(alpha)
    if alpha == 0:
        return 1.0
    w = case4_cellular_weight(p)
    if method == "closed_form":
        m2 = moment_power_case2(alpha, p)
    elif method == "quadrature":
        m2 = moment_by_quadrature(PowerKind.CASE2_CELLULAR, alpha, p, quadrature)
    else:
        raise ValueError(f"unknown method {method!r}")
    if w == 0.0:
        return m2
    m4 = moment_power_case4_cellular(alpha, p, method=method, quadrature=quadrature)
    return (1.0 - w) * m2 + w * m4


# ---------------------------------------------------------------------------
# uniform access


@dataclass(frozen=True)
class PowerDistribution:
    """pdf and moment evaluator for one transmit-power population."""

    kind: PowerKind
    params: NetworkParams

    @property
    def support_upper(self) -> float:
        if self.kind is PowerKind.CASE4_CELLULAR:
            return case4_support_upper(self.params)
        return self.params.max_tx_power

    def pdf(self, x: float) -> float:
        if self.kind is PowerKind.D2D_MODE:
            return pdf_power_d2d(x, self.params)
        if self.kind is PowerKind.CASE2_CELLULAR:
            return pdf_power_case2(x, self.params)
        if self.kind is PowerKind.CASE4_CELLULAR:
            return pdf_power_case4_cellular(x, self.params)
        raise ModelDomainError("the generic cellular power is a mixture; only moments are exposed")

    def moment(self, alpha: float) -> float:
        if self.kind is PowerKind.D2D_MODE:
            return moment_power_d2d(alpha, self.params)
        if self.kind is PowerKind.CASE2_CELLULAR:
            return moment_power_case2(alpha, self.params)
        if self.kind is PowerKind.CASE4_CELLULAR:
            return moment_power_case4_cellular(alpha, self.params)
        return moment_power_cellular_generic(alpha, self.params)

    def cdf(self, x: float, quadrature: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
        x = min(x, self.support_upper)
        if x <= 0:
            return 0.0
        return integrate_finite(self.pdf, 0.0, x, quadrature, singular_endpoints=1)


def moment_by_quadrature(
    kind: PowerKind, alpha: float, params: NetworkParams, quadrature: QuadratureSpec = DEFAULT_QUADRATURE
) -> float:
    dist = PowerDistribution(kind, params)
    return integrate_finite(
        lambda x: x**alpha * dist.pdf(x), 0.0, dist.support_upper, quadrature, singular_endpoints=1
    )


def forced_d2d_terms(params: NetworkParams) -> tuple[float, float]:
    """Probability and power-weighted mass of uncovered potential UEs that fail the rule.

    An uncovered UE cannot go cellular, so it transmits D2D regardless of
    the bias. Returns ``(P{uncovered, rule fails}, E[X_d; uncovered, rule fails])``.
    Both vanish when ``bias >= 1`` since then ``X_d <= P_u <= bias * X_c``,
    and at ``bias = 0``, which switches D2D off altogether.
    """
    p = params
    if p.bias_is_infinite or p.bias >= 1.0 or p.bias == 0:
        return 0.0, 0.0
    ed, ec = p.pathloss_d2d, p.pathloss_cellular
    pu, ro, t = p.max_tx_power, p.cutoff_threshold, p.bias
    pl = math.pi * p.bs_intensity
    tail = math.exp(-coverage_exponent(p))

    def density(x):
        # X_d law on [0, P_u] times P{P_u < X_c < x / bias}
        gap = tail - math.exp(-pl * (x / (t * ro)) ** (2.0 / ec))
        return 2.0 * x ** (2.0 / ed - 1.0) / (ed * pu ** (2.0 / ed)) * gap

    lo = t * pu
    prob = integrate_finite(density, lo, pu)
    mass = integrate_finite(lambda x: x * density(x), lo, pu)
    return prob, mass


def mean_power_potential_d2d(params: NetworkParams) -> float:
    """Expected transmit power of a non-truncated potential D2D UE.

    Rule-satisfying UEs spend ``E[P_d]``, covered UEs that stay cellular spend
    ``E[P4]``, and uncovered UEs failing the rule fall back to D2D.
    """
    p = params
    prob = mode_selection_probability(p).prob_d2d
    covered = _covered_fraction(p)
    split = case4_split_probability(p).prob_cellular_given_case4
    total = forced_d2d_terms(p)[1]
    if prob > 0:
        total += prob * moment_power_d2d(1.0, p)
    if split > 0:
        total += covered * split * moment_power_case4_cellular(1.0, p)
    return total
