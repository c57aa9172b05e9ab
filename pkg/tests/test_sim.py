import math
import warnings

import numpy as np
import pytest

from d2dnet import sim
from d2dnet.errors import ModelDomainError, SaturationError
from d2dnet.model import INFINITE_BIAS, NetworkParams, derive, mode_selection_probability
from d2dnet.outage import Mode, link_capacity, lt_cellular_on_bs, lt_cellular_on_d2d, lt_d2d_on_bs, lt_d2d_on_d2d
from d2dnet.power import moment_power_cellular_generic
from d2dnet.sim import (
    MODE_CELLULAR,
    MODE_D2D,
    MODE_NONE,
    SimulationConfig,
    classify_and_schedule,
    link_states,
    measure,
    read_dump,
    realize_network,
    run_campaign,
    write_dump,
)

from conftest import campaign

SMALL = SimulationConfig(window_side=5000.0, num_realizations=40, rng_seed=99)


def _network(params=None, config=SMALL, stream=0):
    params = params or NetworkParams()
    return classify_and_schedule(realize_network(params, config, stream))


def test_config_validation():
    with pytest.raises(ModelDomainError):
        SimulationConfig(guard_fraction=0.5)
    with pytest.raises(ModelDomainError):
        SimulationConfig(num_realizations=0)
    with pytest.raises(ModelDomainError):
        SimulationConfig(window_side=-1.0)


def test_small_window_warns():
    with pytest.warns(UserWarning):
        SimulationConfig(window_side=1000.0).check_scale(NetworkParams())
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        SimulationConfig().check_scale(NetworkParams())


def test_realization_is_deterministic():
    a = _network(stream=3)
    b = _network(stream=3)
    c = _network(stream=4)
    assert a.same_as(b)
    assert not a.same_as(c)


def test_classification_invariants():
    p = NetworkParams()
    r = _network(p)
    d = derive(p)
    case = r.case_label
    covered = r.cellular_distance <= d.cellular_range
    assert np.array_equal((case == 2) | (case == 4), covered)
    potential_reachable = r.is_potential & (r.d2d_distance <= d.d2d_range)
    assert np.array_equal((case == 3) | (case == 4), potential_reachable)
    cell = r.mode == MODE_CELLULAR
    d2d = r.mode == MODE_D2D
    ro = p.cutoff_threshold
    assert np.allclose(r.tx_power[cell], ro * r.cellular_distance[cell] ** 4, rtol=1e-12)
    assert np.allclose(r.tx_power[d2d], ro * r.d2d_distance[d2d] ** 4, rtol=1e-12)
    assert np.all(r.tx_power <= p.max_tx_power * (1 + 1e-12))
    assert np.all(r.tx_power[r.mode == MODE_NONE] == 0)
    assert np.all(r.scheduled[d2d])
    # case-4 UEs follow the biased rule, case-3 UEs fall back to D2D
    assert np.array_equal(d2d[case == 4], r.selection_rule[case == 4])
    assert np.all(d2d[case == 3])
    assert not np.any(d2d[(case == 1) | (case == 2)])


@pytest.mark.parametrize("bias", [0.3, 1.0, 4.0])
def test_one_cellular_user_per_cell_after_saturation(bias):
    r = _network(NetworkParams(bias=bias))
    sched_cell = r.scheduled & (r.mode == MODE_CELLULAR)
    counts = np.bincount(r.nearest_bs[sched_cell], minlength=len(r.bs_xy))
    assert np.all(counts == 1)
    # received power at the serving BS equals rho_o before fading
    d = np.linalg.norm(r.ue_xy[sched_cell] - r.bs_xy[r.nearest_bs[sched_cell]], axis=1)
    assert np.allclose(r.tx_power[sched_cell] * d**-4.0, r.params.cutoff_threshold, rtol=1e-10)
    inserted = r.inserted
    assert np.all(r.scheduled[inserted]) and np.all(r.case_label[inserted] == 2)
    assert np.all(r.cellular_distance[inserted] <= derive(r.params).cellular_range)


def test_saturation_disabled_leaves_idle_cells():
    config = SimulationConfig(window_side=5000.0, rng_seed=99, saturation_enabled=False)
    r = _network(NetworkParams(ue_intensity=5e-6, potential_d2d_intensity=2.5e-6), config)
    sched_cell = r.scheduled & (r.mode == MODE_CELLULAR)
    counts = np.bincount(r.nearest_bs[sched_cell], minlength=len(r.bs_xy))
    assert counts.max() == 1 and counts.min() == 0
    assert not r.inserted.any()


def test_saturation_cap_raises(monkeypatch):
    monkeypatch.setattr(sim, "SATURATION_MAX_ROUNDS", 0)
    with pytest.raises(SaturationError):
        _network(NetworkParams(ue_intensity=5e-6, potential_d2d_intensity=2.5e-6))


@pytest.mark.parametrize("bias", [0.3, 1.0, 4.0, INFINITE_BIAS])
def test_d2d_interference_at_nearest_bs_is_bounded(bias):
    p = NetworkParams(bias=bias)
    r = _network(p)
    d2d = r.scheduled & (r.mode == MODE_D2D)
    received = r.tx_power[d2d] * r.cellular_distance[d2d] ** -4.0
    if bias is INFINITE_BIAS:
        assert np.all(received <= p.max_tx_power * r.cellular_distance[d2d] ** -4.0)
        return
    # rule-selected UEs obey the bias bound; fallback UEs are uncovered, hence below rho_o
    assert np.all(received <= max(bias, 1.0) * p.cutoff_threshold * (1 + 1e-12))
    rule = d2d & r.selection_rule
    assert np.all(r.tx_power[rule] * r.cellular_distance[rule] ** -4.0 <= bias * p.cutoff_threshold * (1 + 1e-12))


def test_bias_extremes():
    off = _network(NetworkParams(bias=0.0))
    assert not np.any(off.mode == MODE_D2D)
    on = _network(NetworkParams(bias=INFINITE_BIAS))
    reach = (on.case_label == 3) | (on.case_label == 4)
    assert np.all(on.mode[reach] == MODE_D2D)


def test_link_states_signal_and_paths():
    p = NetworkParams()
    r = _network(p)
    links = link_states(r)
    cell = links.mode == MODE_CELLULAR
    assert np.all(links.sinr > 0)
    assert np.allclose(links.signal / links.sinr, p.noise_power + links.interference_cellular + links.interference_d2d)
    # without fading the received signal at the serving BS is exactly rho_o
    flat = link_states(r, fading=False)
    assert np.allclose(flat.signal[cell], p.cutoff_threshold, rtol=1e-10)
    assert np.allclose(flat.signal[~cell], p.cutoff_threshold, rtol=1e-10)


def test_outage_zero_below_every_sinr():
    r = _network()
    floor = link_states(r).sinr.min()
    m = measure(r, thresholds=[floor * 0.5])
    assert m.estimate("cellular_outage").mean[0] == 0.0
    assert m.estimate("d2d_outage").mean[0] == 0.0


def test_isolated_cell_without_noise_never_fails():
    p = NetworkParams(bs_intensity=2e-8, potential_d2d_intensity=0.0, noise_power=0.0)
    config = SimulationConfig(window_side=5000.0, guard_fraction=0.0, rng_seed=5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for stream in range(200):
            r = realize_network(p, config, stream)
            if len(r.bs_xy) == 1:
                break
        else:
            pytest.fail("no single-BS realization found")
    r = classify_and_schedule(r)
    m = measure(r, thresholds=[1e3])
    assert m.estimate("cellular_outage").mean[0] == 0.0


def test_campaign_deterministic_and_worker_independent():
    a = run_campaign(NetworkParams(), SMALL, [1.0]).summary()
    b = run_campaign(NetworkParams(), SMALL, [1.0]).summary()
    c = run_campaign(NetworkParams(), SimulationConfig(window_side=5000.0, num_realizations=120, rng_seed=99),
                     [1.0], workers=2).summary()
    d = run_campaign(NetworkParams(), SimulationConfig(window_side=5000.0, num_realizations=120, rng_seed=99),
                     [1.0], workers=1).summary()
    for key in a:
        assert np.array_equal(a[key].mean, b[key].mean, equal_nan=True)
        assert np.array_equal(c[key].mean, d[key].mean, equal_nan=True)


def test_standard_error_scales_with_realizations():
    _, full = campaign()
    half = run_campaign(NetworkParams(), SimulationConfig(num_realizations=1000), [1.0])
    ratio = half.estimate("cellular_outage").stderr[0] / full.estimate("cellular_outage").stderr[5]
    assert ratio == pytest.approx(math.sqrt(2), rel=0.2)


def test_poisson_and_flag_statistics():
    params, m = campaign()
    bs = m.estimate("bs_count")
    assert abs(bs.mean - 500) < 3 * math.sqrt(500) / math.sqrt(2000)
    frac = m.estimate("potential_fraction")
    assert abs(frac.mean - 0.5) < 3 * frac.stderr


def test_guard_ring_width_is_immaterial():
    params = NetworkParams()
    base = SimulationConfig(num_realizations=300, rng_seed=17)
    wide = SimulationConfig(num_realizations=300, rng_seed=17, guard_fraction=0.3)
    a = run_campaign(params, base, [1.0])
    b = run_campaign(params, wide, [1.0])
    for name in ("cellular_outage", "d2d_outage"):
        ea, eb = a.estimate(name), b.estimate(name)
        assert abs(ea.mean[0] - eb.mean[0]) < ea.ci95()[0]


def test_d2d_log_rate_matches_analysis():
    params, m = campaign()
    assert m.estimate("d2d_log_rate").mean == pytest.approx(link_capacity(Mode.D2D, params), rel=0.05)


@pytest.mark.xfail(strict=True, reason="cellular rate sits ~6% below the PPP interference model at defaults")
def test_cellular_log_rate_matches_analysis():
    params, m = campaign()
    assert m.estimate("cellular_log_rate").mean == pytest.approx(link_capacity(Mode.CELLULAR, params), rel=0.05)


def test_rule_fraction_over_reachable_potential_users():
    params, m = campaign()
    e = m.estimate("mode_rule_fraction")
    assert abs(e.mean - mode_selection_probability(params).prob_d2d) < 3 * e.stderr


@pytest.mark.xfail(strict=True, reason="scheduled uplink users sit closer to their BS than a typical covered UE")
def test_scheduled_cellular_sqrt_power():
    params, m = campaign()
    e = m.estimate("mean_sqrt_power_scheduled_cellular")
    assert e.mean == pytest.approx(moment_power_cellular_generic(0.5, params), rel=0.02)


LT_POINTS = (0.3e10, 1e10, 3e10)
LT_CASES = [
    pytest.param("lt_d2d_on_bs", lt_d2d_on_bs, id="d2d_on_bs",
                 marks=pytest.mark.xfail(strict=True, reason="D2D transmitters form a Poisson hole process")),
    pytest.param("lt_cellular_on_bs", lt_cellular_on_bs, id="cellular_on_bs",
                 marks=pytest.mark.xfail(strict=True, reason="cellular interferers are not a PPP around a BS")),
    pytest.param("lt_d2d_on_d2d", lt_d2d_on_d2d, id="d2d_on_d2d",
                 marks=pytest.mark.xfail(strict=True, reason="D2D transmitters form a Poisson hole process")),
    pytest.param("lt_cellular_on_d2d", lt_cellular_on_d2d, id="cellular_on_d2d",
                 marks=pytest.mark.xfail(strict=True, reason="one-per-cell cellular users are more regular than a PPP")),
]


@pytest.mark.parametrize("name, fn", LT_CASES)
def test_interference_transform_against_simulation(name, fn):
    params, m = campaign(realizations=5000, seed=31, laplace_points=LT_POINTS)
    e = m.estimate(name)
    analytic = np.array([fn(s, params) for s in LT_POINTS])
    assert np.all(np.abs(e.mean - analytic) < 3 * e.stderr)


def test_dump_round_trip(tmp_path):
    r = _network()
    path = tmp_path / "dump.tsv"
    write_dump(r, path)
    rows = read_dump(path)
    assert len(rows) == r.num_ues
    assert list(rows[0]) == list(sim.DUMP_COLUMNS)
    scheduled = [row for row in rows if row["scheduled"] == "1"]
    assert all(not math.isnan(float(row["sinr_linear"])) for row in scheduled if row["mode"] == "cellular")
    assert {row["mode"] for row in rows} <= {"none", "cellular", "d2d"}
    assert float(rows[5]["tx_power_w"]) == r.tx_power[5]
