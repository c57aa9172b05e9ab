import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from d2dnet.errors import ModelDomainError, ParameterFileError
from d2dnet.model import (
    INFINITE_BIAS,
    NetworkParams,
    convert_value,
    db_to_linear,
    dbm_to_watts,
    derive,
    format_params,
    linear_to_db,
    mode_selection_probability,
    parse_param_text,
    watts_to_dbm,
)


@settings(max_examples=200)
@given(st.floats(1e-20, 1e3))
def test_dbm_round_trip(x):
    assert dbm_to_watts(watts_to_dbm(x)) == pytest.approx(x, rel=1e-12)
    assert db_to_linear(linear_to_db(x)) == pytest.approx(x, rel=1e-12)


def test_unit_anchors():
    assert dbm_to_watts(30.0) == 1.0
    assert dbm_to_watts(-70.0) == pytest.approx(1e-10, rel=1e-15)
    assert watts_to_dbm(0.0) == -math.inf


def test_derive_defaults(defaults):
    d = derive(defaults)
    assert d.max_d2d_range == pytest.approx(1000.0, rel=1e-12)
    assert d.d2d_range == pytest.approx(math.sqrt(1e5), rel=1e-12)
    assert d.d2d_retention == pytest.approx(0.1, rel=1e-12)
    assert d.truncation_outage == pytest.approx(math.exp(-math.pi * 5e-6 * 1e5), rel=1e-12)
    assert sum(d.case_intensities) == pytest.approx(defaults.ue_intensity, rel=1e-12)
    assert d.d2d_retention == pytest.approx((d.d2d_range / d.max_d2d_range) ** 2, rel=1e-12)


def test_no_d2d_truncation_when_cutoff_equals_sensitivity():
    p = NetworkParams(cutoff_threshold=dbm_to_watts(-90.0))
    d = derive(p)
    assert d.d2d_retention == pytest.approx(1.0)
    assert d.d2d_range == pytest.approx(d.max_d2d_range)


@pytest.mark.parametrize(
    "changes",
    [
        {"bs_intensity": 0.0},
        {"potential_d2d_intensity": 60e-6},
        {"cutoff_threshold": 1e-13},
        {"cutoff_threshold": 2.0},
        {"pathloss_cellular": 2.0},
        {"pathloss_d2d": 1.5},
        {"sinr_threshold": 0.0},
        {"noise_power": -1.0},
        {"bias": -1.0},
        {"bias": math.inf},
        {"num_channels": 0},
    ],
)
def test_invalid_params(changes):
    with pytest.raises(ModelDomainError):
        NetworkParams(**changes)


def test_mode_probability_limits(defaults):
    assert mode_selection_probability(defaults.with_(bias=0.0)).prob_d2d == 0.0
    assert mode_selection_probability(defaults.with_(bias=INFINITE_BIAS)).prob_d2d == 1.0


def test_link_intensity(defaults):
    r = mode_selection_probability(defaults)
    assert r.d2d_link_intensity == pytest.approx(0.1 * defaults.potential_d2d_intensity * r.prob_d2d, rel=1e-14)


def test_mode_probability_sampling_oracle(defaults):
    rng = np.random.default_rng(1)
    n = 10_000_000
    big_r = derive(defaults).d2d_range
    r_d = big_r * np.sqrt(rng.random(n))
    r_c = np.sqrt(rng.exponential(1.0 / (math.pi * defaults.bs_intensity), n))
    hits = defaults.bias * r_d**-4.0 >= r_c**-4.0
    est = hits.mean()
    se = math.sqrt(est * (1 - est) / n)
    assert abs(mode_selection_probability(defaults).prob_d2d - est) < 3 * se


@pytest.mark.parametrize("eta", [3.0, 4.0, 5.0])
@pytest.mark.parametrize("bias", [1e-3, 0.1, 1.0, 7.0, 1e3])
def test_equal_exponent_matches_general(eta, bias):
    p = NetworkParams(pathloss_cellular=eta, pathloss_d2d=eta, bias=bias)
    closed = mode_selection_probability(p, "equal_exponent").prob_d2d
    general = mode_selection_probability(p, "general").prob_d2d
    assert closed == pytest.approx(general, rel=1e-10)


def test_equal_exponent_requires_equal_exponents():
    with pytest.raises(ModelDomainError):
        mode_selection_probability(NetworkParams(pathloss_d2d=3.5), "equal_exponent")


def test_mode_probability_monotone_in_bias_and_intensity():
    grid = np.logspace(-3, 3, 61)
    for ed in (3.0, 4.0):
        probs = [mode_selection_probability(NetworkParams(pathloss_d2d=ed, bias=t)).prob_d2d for t in grid]
        assert all(b >= a for a, b in zip(probs, probs[1:]))
    lams = np.logspace(-7, -4, 31)
    probs = [mode_selection_probability(NetworkParams(bs_intensity=lam)).prob_d2d for lam in lams]
    assert all(b <= a for a, b in zip(probs, probs[1:]))


# --- parameter files ---------------------------------------------------------


def test_parse_units():
    text = """
    # comment line
    bs_intensity = 5 per_km2
    ue_intensity = 5e-5 per_m2
    cutoff_threshold = -70 dBm   # inline comment
    max_tx_power = 200 mW
    noise_power = 1e-12 W
    sinr_threshold = 3 dB
    bias = inf
    num_channels = 2
    """
    p = parse_param_text(text)
    assert p.bs_intensity == pytest.approx(5e-6)
    assert p.ue_intensity == 5e-5
    assert p.cutoff_threshold == pytest.approx(1e-10)
    assert p.max_tx_power == pytest.approx(0.2)
    assert p.sinr_threshold == pytest.approx(10**0.3)
    assert p.bias is INFINITE_BIAS
    assert p.num_channels == 2


@pytest.mark.parametrize(
    "text, key",
    [
        ("cutoff_threshold = -70 dBW", "cutoff_threshold"),
        ("bs_intensity = 5 per_mile2", "bs_intensity"),
        ("no_such_key = 1", "no_such_key"),
        ("sinr_threshold = abc", "sinr_threshold"),
        ("noise_power = inf W", "noise_power"),
        ("bias = 1\nbias = 2", "bias"),
        ("cutoff_threshold = 40 dBm", "cutoff_threshold"),
    ],
)
def test_parse_errors_name_key(text, key):
    with pytest.raises(ParameterFileError) as info:
        parse_param_text(text)
    assert info.value.key == key


def test_format_round_trip():
    p = NetworkParams(bias=INFINITE_BIAS, cutoff_threshold=dbm_to_watts(-63.0), num_channels=3)
    assert parse_param_text(format_params(p)) == p
    q = NetworkParams(bias=0.37)
    assert parse_param_text(format_params(q)) == q


def test_convert_value_plain_keys():
    assert convert_value("pathloss_d2d", "3.5") == 3.5
    with pytest.raises(ParameterFileError):
        convert_value("pathloss_d2d", "3.5 dB")


def test_dict_round_trip():
    for p in (NetworkParams(), NetworkParams(bias=INFINITE_BIAS, num_channels=2)):
        assert NetworkParams.from_dict(p.to_dict()) == p
    with pytest.raises(ParameterFileError):
        NetworkParams.from_dict({"lambda": 1.0})
