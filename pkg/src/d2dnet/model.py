"""Network parameters, unit handling, derived geometry and mode selection.

Everything inside the package is strict SI: watts, meters and points per
square meter. dBm and points/km^2 are accepted only at the parsing boundary.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Mapping, Union

from .errors import ModelDomainError, ParameterFileError
from .specfun import lower_incomplete_gamma


class BiasLimit(enum.Enum):
    """Distinguished bias value that forces every eligible UE into D2D mode."""

    INFINITE = "inf"

    def __repr__(self):
        return "BiasLimit.INFINITE"


INFINITE_BIAS = BiasLimit.INFINITE
Bias = Union[float, BiasLimit]


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    if watts <= 0:
        return -math.inf
    return 10.0 * math.log10(watts) + 30.0


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    if x <= 0:
        return -math.inf
    return 10.0 * math.log10(x)


PER_KM2 = 1e-6


@dataclass(frozen=True)
class NetworkParams:
    """Primitive model inputs, SI units.

    ``bias`` is a nonnegative float or ``INFINITE_BIAS``.
    """

    bs_intensity: float = 5 * PER_KM2
    ue_intensity: float = 50 * PER_KM2
    potential_d2d_intensity: float = 25 * PER_KM2
    max_tx_power: float = 1.0
    receiver_sensitivity: float = dbm_to_watts(-90.0)
    cutoff_threshold: float = dbm_to_watts(-70.0)
    pathloss_cellular: float = 4.0
    pathloss_d2d: float = 4.0
    bias: Bias = 1.0
    sinr_threshold: float = 1.0
    noise_power: float = dbm_to_watts(-90.0)
    num_channels: int = 1

    def __post_init__(self):
        validate(self)

    @property
    def bias_is_infinite(self) -> bool:
        return self.bias is INFINITE_BIAS

    def with_(self, **changes) -> "NetworkParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.bias_is_infinite:
            d["bias"] = "inf"
        return d

    @classmethod
    def from_dict(cls, values: Mapping) -> "NetworkParams":
        """Inverse of ``to_dict``: SI values, ``"inf"`` allowed for the bias."""
        d = dict(values)
        if d.get("bias") == "inf":
            d["bias"] = INFINITE_BIAS
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ParameterFileError(f"unknown parameter key(s) {sorted(unknown)}", key=sorted(unknown)[0])
        return cls(**d)


def validate(params: NetworkParams) -> None:
    p = params
    checks = [
        (p.bs_intensity > 0, "bs_intensity must be > 0"),
        # zero potential-D2D intensity is allowed as the "no D2D population" limit
        (0 <= p.potential_d2d_intensity <= p.ue_intensity, "need 0 <= potential_d2d_intensity <= ue_intensity"),
        (p.ue_intensity > 0, "ue_intensity must be > 0"),
        (
            0 < p.receiver_sensitivity <= p.cutoff_threshold <= p.max_tx_power,
            "need 0 < receiver_sensitivity <= cutoff_threshold <= max_tx_power",
        ),
        (p.pathloss_cellular > 2, "pathloss_cellular must be > 2"),
        (p.pathloss_d2d > 2, "pathloss_d2d must be > 2"),
        (p.sinr_threshold > 0, "sinr_threshold must be > 0"),
        (p.noise_power >= 0, "noise_power must be >= 0"),
        (int(p.num_channels) == p.num_channels and p.num_channels >= 1, "num_channels must be an integer >= 1"),
    ]
    if not p.bias_is_infinite:
        checks.append((isinstance(p.bias, (int, float)) and p.bias >= 0 and math.isfinite(p.bias),
                       "bias must be a finite value >= 0 or INFINITE_BIAS"))
    for ok, message in checks:
        if not ok:
            raise ModelDomainError(message)


@dataclass(frozen=True)
class DerivedQuantities:
    """Geometry implied by a parameter set.

    ``case_intensities`` holds the UE classes in order: uncovered non-potential,
    covered non-potential, uncovered potential, covered potential. "Potential"
    means a D2D receiver reachable after power truncation.
    """

    max_d2d_range: float
    d2d_range: float
    cellular_range: float
    d2d_retention: float
    truncation_outage: float
    case_intensities: tuple[float, float, float, float]


def derive(params: NetworkParams) -> DerivedQuantities:
    p = params
    r_max = (p.max_tx_power / p.receiver_sensitivity) ** (1.0 / p.pathloss_d2d)
    r = (p.max_tx_power / p.cutoff_threshold) ** (1.0 / p.pathloss_d2d)
    retention = (p.receiver_sensitivity / p.cutoff_threshold) ** (2.0 / p.pathloss_d2d)
    truncation = cellular_truncation_probability(p)
    potential = retention * p.potential_d2d_intensity
    rest = p.ue_intensity - potential
    cases = (
        rest * truncation,
        rest * (1.0 - truncation),
        potential * truncation,
        potential * (1.0 - truncation),
    )
    return DerivedQuantities(
        max_d2d_range=r_max,
        d2d_range=r,
        cellular_range=(p.max_tx_power / p.cutoff_threshold) ** (1.0 / p.pathloss_cellular),
        d2d_retention=retention,
        truncation_outage=truncation,
        case_intensities=cases,
    )


def coverage_exponent(params: NetworkParams) -> float:
    """pi * lambda * (P_u / rho_o)^(2 / eta_c), the mean BS count in the inversion disk."""
    p = params
    return math.pi * p.bs_intensity * (p.max_tx_power / p.cutoff_threshold) ** (2.0 / p.pathloss_cellular)


def cellular_truncation_probability(params: NetworkParams) -> float:
    return math.exp(-coverage_exponent(params))


@dataclass(frozen=True)
class ModeSelectionResult:
    prob_d2d: float
    d2d_link_intensity: float


def mode_selection_probability(params: NetworkParams, method: str = "auto") -> ModeSelectionResult:
    """Probability that a non-truncated potential D2D UE picks D2D mode.

    The UE selects D2D when ``bias * r_d^-eta_d >= r_c^-eta_c`` with ``r_d``
    uniform in the truncated D2D disk and ``r_c`` the nearest-BS distance.
    ``method`` is ``"auto"`` (closed form when exponents match), ``"general"``
    or ``"equal_exponent"``.
    """
    p = params
    d = derive(p)
    if p.bias_is_infinite:
        prob = 1.0
    elif p.bias == 0:
        prob = 0.0
    else:
        equal = p.pathloss_cellular == p.pathloss_d2d
        if method == "auto":
            method = "equal_exponent" if equal else "general"
        if method == "equal_exponent":
            if not equal:
                raise ModelDomainError("equal_exponent form needs pathloss_cellular == pathloss_d2d")
            prob = _mode_prob_equal(p, d.d2d_range)
        elif method == "general":
            prob = _mode_prob_general(p, d.d2d_range)
        else:
            raise ValueError(f"unknown method {method!r}")
        prob = min(max(prob, 0.0), 1.0)
    return ModeSelectionResult(prob_d2d=prob, d2d_link_intensity=d.d2d_retention * p.potential_d2d_intensity * prob)


def _mode_prob_general(p: NetworkParams, r: float) -> float:
    ec, ed, t = p.pathloss_cellular, p.pathloss_d2d, p.bias
    pl = math.pi * p.bs_intensity
    shape = ec / ed
    upper = pl * (r**ed / t) ** (2.0 / ec)
    prefactor = ec * t ** (2.0 / ed) / (ed * r * r) * pl ** (-shape)
    return prefactor * lower_incomplete_gamma(shape, upper)


def _mode_prob_equal(p: NetworkParams, r: float) -> float:
    eta, t = p.pathloss_d2d, p.bias
    mean_bs = math.pi * p.bs_intensity * r * r
    tb = t ** (2.0 / eta)
    return tb / mean_bs * -math.expm1(-mean_bs / tb)


# ---------------------------------------------------------------------------
# parameter files

DEFAULT_PARAMS = NetworkParams()

_POWER_KEYS = {"max_tx_power", "receiver_sensitivity", "cutoff_threshold", "noise_power"}
_INTENSITY_KEYS = {"bs_intensity", "ue_intensity", "potential_d2d_intensity"}
_RATIO_KEYS = {"sinr_threshold", "bias"}
_PLAIN_KEYS = {"pathloss_cellular", "pathloss_d2d", "num_channels"}

_VALUE_RE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?inf(?:inity)?)\s*([A-Za-z_0-9]*)\s*$")


def convert_value(key: str, text: str) -> Bias:
    """Convert one ``value [unit]`` string to SI for ``key``."""
    match = _VALUE_RE.match(text)
    if key not in _POWER_KEYS | _INTENSITY_KEYS | _RATIO_KEYS | _PLAIN_KEYS:
        raise ParameterFileError(f"unknown parameter key {key!r}", key=key)
    if not match:
        raise ParameterFileError(f"cannot parse value {text!r} for {key!r}", key=key)
    number, unit = match.group(1), match.group(2)
    unit_l = unit.lower()
    if number.lstrip("+").lower().startswith("inf"):
        if key == "bias" and unit == "":
            return INFINITE_BIAS
        raise ParameterFileError(f"infinite value not allowed for {key!r}", key=key)
    value = float(number)
    if key in _POWER_KEYS:
        if unit_l == "dbm":
            return dbm_to_watts(value)
        if unit_l == "w":
            return value
        if unit_l == "mw":
            return value * 1e-3
    elif key in _INTENSITY_KEYS:
        if unit_l == "per_km2":
            return value * PER_KM2
        if unit_l == "per_m2":
            return value
    elif key in _RATIO_KEYS:
        if unit_l == "db":
            return db_to_linear(value)
        if unit == "":
            return value
    elif key in _PLAIN_KEYS:
        if unit == "":
            return int(value) if key == "num_channels" else value
    raise ParameterFileError(f"unit {unit!r} not accepted for {key!r}", key=key)


def params_from_mapping(values: Mapping[str, str], base: NetworkParams = DEFAULT_PARAMS) -> NetworkParams:
    """Apply ``key -> "value unit"`` strings on top of ``base``."""
    changes = {key: convert_value(key.strip(), text) for key, text in values.items()}
    try:
        return replace(base, **changes)
    except ModelDomainError as exc:
        raise ParameterFileError(str(exc), key=_guess_key(str(exc), changes)) from exc


def _guess_key(message: str, changes) -> str | None:
    for key in changes:
        if key in message:
            return key
    return None


def parse_param_text(text: str, base: NetworkParams = DEFAULT_PARAMS) -> NetworkParams:
    """Parse the flat ``key = value unit`` format; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterFileError(f"line {lineno}: expected 'key = value [unit]'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ParameterFileError(f"line {lineno}: duplicate key {key!r}", key=key)
        values[key] = value
    return params_from_mapping(values, base)


def load_params(path: str | Path, base: NetworkParams = DEFAULT_PARAMS) -> NetworkParams:
    return parse_param_text(Path(path).read_text(), base)


def format_params(params: NetworkParams) -> str:
    """Render ``params`` in the parameter-file format with canonical SI units."""
    units = {}
    for f in fields(params):
        if f.name in _POWER_KEYS:
            units[f.name] = "W"
        elif f.name in _INTENSITY_KEYS:
            units[f.name] = "per_m2"
        else:
            units[f.name] = ""
    lines = []
    for key, value in params.to_dict().items():
        text = value if isinstance(value, str) else repr(value)
        lines.append(f"{key} = {text} {units[key]}".rstrip())
    return "\n".join(lines) + "\n"
