"""Analysis and simulation of D2D underlay uplinks with truncated channel inversion."""

__version__ = "0.1.0"

from .errors import ConvergenceError, D2DNetError, ModelDomainError, ParameterFileError, SaturationError
from .model import (
    DEFAULT_PARAMS,
    INFINITE_BIAS,
    DerivedQuantities,
    ModeSelectionResult,
    NetworkParams,
    derive,
    load_params,
    mode_selection_probability,
    parse_param_text,
)
from .outage import (
    Mode,
    link_capacity,
    outage_cellular,
    outage_d2d,
    potential_d2d_rate,
    rate_summary,
    total_network_capacity,
)
from .power import PowerDistribution, PowerKind, mean_power_potential_d2d
from .sim import SimulationConfig, classify_and_schedule, measure, realize_network, run_campaign

__all__ = [
    "ConvergenceError",
    "D2DNetError",
    "ModelDomainError",
    "ParameterFileError",
    "SaturationError",
    "DEFAULT_PARAMS",
    "INFINITE_BIAS",
    "DerivedQuantities",
    "ModeSelectionResult",
    "NetworkParams",
    "derive",
    "load_params",
    "mode_selection_probability",
    "parse_param_text",
    "Mode",
    "link_capacity",
    "outage_cellular",
    "outage_d2d",
    "potential_d2d_rate",
    "rate_summary",
    "total_network_capacity",
    "PowerDistribution",
    "PowerKind",
    "mean_power_potential_d2d",
    "SimulationConfig",
    "classify_and_schedule",
    "measure",
    "realize_network",
    "run_campaign",
]
