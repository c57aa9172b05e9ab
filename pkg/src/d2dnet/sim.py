"""Monte Carlo realization of the D2D-enabled uplink.

One realization draws BSs and UEs as PPPs in a square window, classifies
every UE, picks one cellular UE per cell on the probe channel, tops up idle
cells, and measures SINR at every scheduled receiver with fresh Rayleigh
fading. Receivers in the guard ring still transmit and interfere but are
not measured.

Randomness is split into three independent streams per realization
(geometry, scheduling, fading), each seeded from ``(rng_seed, stream_index,
purpose)``, so any stage can be replayed on its own.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ModelDomainError, SaturationError
from .model import NetworkParams

log = logging.getLogger(__name__)

_GEOMETRY, _SCHEDULING, _FADING = 0, 1, 2

MODE_NONE, MODE_CELLULAR, MODE_D2D = 0, 1, 2
MODE_NAMES = {MODE_NONE: "none", MODE_CELLULAR: "cellular", MODE_D2D: "d2d"}

SATURATION_MAX_ROUNDS = 1000
_SATURATION_BATCH = 16


@dataclass(frozen=True)
class SimulationConfig:
    window_side: float = 10_000.0
    guard_fraction: float = 0.2
    num_realizations: int = 10_000
    rng_seed: int = 20240601
    saturation_enabled: bool = True

    def __post_init__(self):
        if not self.window_side > 0:
            raise ModelDomainError("window_side must be positive")
        if not 0 <= self.guard_fraction < 0.5:
            raise ModelDomainError("guard_fraction must lie in [0, 0.5)")
        if self.num_realizations < 1:
            raise ModelDomainError("num_realizations must be at least 1")
        if not 0 <= self.rng_seed < 2**64:
            raise ModelDomainError("rng_seed must be a 64-bit unsigned integer")

    @property
    def area(self) -> float:
        return self.window_side**2

    def inner_bounds(self) -> tuple[float, float]:
        g = self.guard_fraction * self.window_side
        return g, self.window_side - g

    def check_scale(self, params: NetworkParams) -> None:
        expected = self.area * params.bs_intensity
        if expected < 50:
            warnings.warn(f"window holds only {expected:.1f} BSs on average; edge effects will dominate", stacklevel=2)


def _rng(config: SimulationConfig, stream_index: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.rng_seed, stream_index, purpose]))


@dataclass(frozen=True, eq=False)
class Realization:
    """One sampled network, stored column-wise.

    UE arrays have one entry per UE; UEs added by the saturation step are
    appended at the end with ``inserted`` set. ``rx_xy`` and ``d2d_distance``
    are NaN for UEs that are not potential D2D transmitters. ``case_label`` is
    0 until classification.
    """

    params: NetworkParams
    config: SimulationConfig
    stream_index: int
    bs_xy: np.ndarray
    ue_xy: np.ndarray
    is_potential: np.ndarray
    rx_xy: np.ndarray
    d2d_distance: np.ndarray
    nearest_bs: np.ndarray
    cellular_distance: np.ndarray
    case_label: np.ndarray
    mode: np.ndarray
    tx_power: np.ndarray
    scheduled: np.ndarray
    channel: np.ndarray
    inserted: np.ndarray
    selection_rule: np.ndarray
    classified: bool = False

    @property
    def num_ues(self) -> int:
        return len(self.ue_xy)

    def same_as(self, other: "Realization") -> bool:
        """Bitwise equality of every array."""
        names = [f for f in self.__dataclass_fields__ if isinstance(getattr(self, f), np.ndarray)]
        return all(np.array_equal(getattr(self, n), getattr(other, n), equal_nan=True) for n in names)


def realize_network(params: NetworkParams, config: SimulationConfig, stream_index: int) -> Realization:
    """Draw BS and UE positions, potential-D2D flags and D2D receivers."""
    rng = _rng(config, stream_index, _GEOMETRY)
    side = config.window_side
    n_bs = rng.poisson(params.bs_intensity * config.area)
    bs_xy = rng.uniform(0.0, side, size=(n_bs, 2))
    n_ue = rng.poisson(params.ue_intensity * config.area)
    ue_xy = rng.uniform(0.0, side, size=(n_ue, 2))
    is_potential = rng.random(n_ue) < params.potential_d2d_intensity / params.ue_intensity

    r_max = (params.max_tx_power / params.receiver_sensitivity) ** (1.0 / params.pathloss_d2d)
    k = int(is_potential.sum())
    radius = r_max * np.sqrt(rng.random(k))
    angle = rng.uniform(0.0, 2.0 * math.pi, size=k)
    rx_xy = np.full((n_ue, 2), np.nan)
    rx_xy[is_potential] = ue_xy[is_potential] + np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    d2d_distance = np.full(n_ue, np.nan)
    d2d_distance[is_potential] = radius

    if n_bs:
        cellular_distance, nearest_bs = cKDTree(bs_xy).query(ue_xy) if n_ue else (np.empty(0), np.empty(0, int))
    else:
        cellular_distance, nearest_bs = np.full(n_ue, np.inf), np.full(n_ue, -1)

    return Realization(
        params=params,
        config=config,
        stream_index=stream_index,
        bs_xy=bs_xy,
        ue_xy=ue_xy,
        is_potential=is_potential,
        rx_xy=rx_xy,
        d2d_distance=d2d_distance,
        nearest_bs=np.asarray(nearest_bs, dtype=np.int64),
        cellular_distance=np.asarray(cellular_distance, dtype=float),
        case_label=np.zeros(n_ue, dtype=np.int8),
        mode=np.zeros(n_ue, dtype=np.int8),
        tx_power=np.zeros(n_ue),
        scheduled=np.zeros(n_ue, dtype=bool),
        channel=np.zeros(n_ue, dtype=np.int64),
        inserted=np.zeros(n_ue, dtype=bool),
        selection_rule=np.zeros(n_ue, dtype=bool),
    )


def _satisfies_rule(params: NetworkParams, r_d: np.ndarray, r_c: np.ndarray) -> np.ndarray:
    # bias * r_d^-eta_d >= r_c^-eta_c  <=>  r_d^eta_d <= bias * r_c^eta_c
    if params.bias_is_infinite:
        return np.ones(r_d.shape, dtype=bool)
    with np.errstate(invalid="ignore"):
        return r_d**params.pathloss_d2d <= params.bias * r_c**params.pathloss_cellular


def classify_and_schedule(realization: Realization, params: NetworkParams | None = None) -> Realization:
    """Assign case labels, modes, powers and the probe-channel schedule.

    Cases: 1 uncovered non-potential, 2 covered non-potential, 3 uncovered
    potential, 4 covered potential, where "potential" means the D2D receiver
    is reachable within ``P_u``. Case-4 UEs apply the biased selection rule,
    case-3 UEs can only use D2D, and a bias of zero switches D2D off.
    """
    r = realization
    p = params if params is not None else r.params
    rng = _rng(r.config, r.stream_index, _SCHEDULING)
    ro, pu = p.cutoff_threshold, p.max_tx_power

    cell_power = ro * r.cellular_distance**p.pathloss_cellular
    with np.errstate(invalid="ignore"):
        d2d_power = ro * r.d2d_distance**p.pathloss_d2d
    covered = cell_power <= pu
    reachable = r.is_potential & (d2d_power <= pu)
    case = (1 + covered.astype(np.int8) + 2 * reachable.astype(np.int8)).astype(np.int8)

    rule = reachable & _satisfies_rule(p, np.nan_to_num(r.d2d_distance), r.cellular_distance)
    d2d_enabled = p.bias_is_infinite or p.bias > 0
    if d2d_enabled:
        d2d = (case == 3) | ((case == 4) & rule)
    else:
        d2d = np.zeros(r.num_ues, dtype=bool)
    candidate = covered & ~d2d

    mode = np.full(r.num_ues, MODE_NONE, dtype=np.int8)
    mode[candidate] = MODE_CELLULAR
    mode[d2d] = MODE_D2D
    tx_power = np.zeros(r.num_ues)
    tx_power[candidate] = cell_power[candidate]
    tx_power[d2d] = d2d_power[d2d]

    channel = np.zeros(r.num_ues, dtype=np.int64)
    if p.num_channels > 1:
        channel[d2d] = rng.integers(0, p.num_channels, size=int(d2d.sum()))

    # one cellular UE per cell, uniformly among the candidates
    scheduled = d2d.copy()
    cand_idx = np.flatnonzero(candidate)
    order = rng.permutation(cand_idx)
    _, first = np.unique(r.nearest_bs[order], return_index=True)
    scheduled[order[first]] = True

    out = replace(
        r,
        params=p,
        case_label=case,
        mode=mode,
        tx_power=tx_power,
        scheduled=scheduled,
        channel=channel,
        selection_rule=rule,
        classified=True,
    )
    if r.config.saturation_enabled:
        out = _saturate(out, rng)
    return out


def _saturate(r: Realization, rng: np.random.Generator) -> Realization:
    """Give every idle BS one uplink UE.

    Dropping UEs uniformly over the window until each idle BS captures one it
    can serve leaves each such UE uniform over (cell of that BS) x (inversion
    disk) x (window). That law is sampled directly here by rejection.
    """
    p = r.params
    n_bs = len(r.bs_xy)
    if n_bs == 0:
        return r
    busy = np.zeros(n_bs, dtype=bool)
    cell_sched = r.scheduled & (r.mode == MODE_CELLULAR)
    busy[r.nearest_bs[cell_sched]] = True
    idle = np.flatnonzero(~busy)
    if idle.size == 0:
        return r

    tree = cKDTree(r.bs_xy)
    reach = (p.max_tx_power / p.cutoff_threshold) ** (1.0 / p.pathloss_cellular)
    side = r.config.window_side
    new_xy = np.empty((idle.size, 2))
    pending = np.ones(idle.size, dtype=bool)
    for _ in range(SATURATION_MAX_ROUNDS):
        todo = np.flatnonzero(pending)
        if todo.size == 0:
            break
        centers = r.bs_xy[idle[todo]]
        rad = reach * np.sqrt(rng.random((todo.size, _SATURATION_BATCH)))
        ang = rng.uniform(0.0, 2.0 * math.pi, size=(todo.size, _SATURATION_BATCH))
        pts = centers[:, None, :] + np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1)
        inside = np.all((pts >= 0.0) & (pts <= side), axis=-1)
        dist, owner = tree.query(pts.reshape(-1, 2))
        owner = owner.reshape(todo.size, _SATURATION_BATCH)
        dist = dist.reshape(todo.size, _SATURATION_BATCH)
        ok = inside & (owner == idle[todo][:, None]) & (dist <= reach)
        hit = ok.any(axis=1)
        pick = ok.argmax(axis=1)
        rows = np.flatnonzero(hit)
        new_xy[todo[rows]] = pts[rows, pick[rows]]
        pending[todo[rows]] = False
    if pending.any():
        raise SaturationError(f"{int(pending.sum())} idle BSs left after {SATURATION_MAX_ROUNDS} rounds")

    dist = np.linalg.norm(new_xy - r.bs_xy[idle], axis=1)
    m = idle.size
    return replace(
        r,
        ue_xy=np.vstack([r.ue_xy, new_xy]),
        is_potential=np.concatenate([r.is_potential, np.zeros(m, dtype=bool)]),
        rx_xy=np.vstack([r.rx_xy, np.full((m, 2), np.nan)]),
        d2d_distance=np.concatenate([r.d2d_distance, np.full(m, np.nan)]),
        nearest_bs=np.concatenate([r.nearest_bs, idle]),
        cellular_distance=np.concatenate([r.cellular_distance, dist]),
        case_label=np.concatenate([r.case_label, np.full(m, 2, dtype=np.int8)]),
        mode=np.concatenate([r.mode, np.full(m, MODE_CELLULAR, dtype=np.int8)]),
        tx_power=np.concatenate([r.tx_power, p.cutoff_threshold * dist**p.pathloss_cellular]),
        scheduled=np.concatenate([r.scheduled, np.ones(m, dtype=bool)]),
        channel=np.concatenate([r.channel, np.zeros(m, dtype=np.int64)]),
        inserted=np.concatenate([r.inserted, np.ones(m, dtype=bool)]),
        selection_rule=np.concatenate([r.selection_rule, np.zeros(m, dtype=bool)]),
    )


# ---------------------------------------------------------------------------
# link measurement


@dataclass(frozen=True, eq=False)
class LinkState:
    """Per-link received quantities for every scheduled probe-channel link.

    ``tx`` indexes the transmitting UE, ``rx_xy`` is the receiver position
    (the serving BS for cellular links). Interference is split by the mode
    of the interferer and includes fading.
    """

    tx: np.ndarray
    mode: np.ndarray
    rx_xy: np.ndarray
    signal: np.ndarray
    interference_cellular: np.ndarray
    interference_d2d: np.ndarray
    sinr: np.ndarray


def link_states(realization: Realization, fading: bool = True) -> LinkState:
    r = realization
    if not r.classified:
        raise ModelDomainError("realization must be classified before measuring")
    p = r.params
    rng = _rng(r.config, r.stream_index, _FADING)
    active = r.scheduled & (r.channel == 0)
    tx_idx = np.flatnonzero(active)
    tx_xy = r.ue_xy[tx_idx]
    tx_pow = r.tx_power[tx_idx]
    tx_is_d2d = r.mode[tx_idx] == MODE_D2D

    rx_xy = np.where(tx_is_d2d[:, None], r.rx_xy[tx_idx], r.bs_xy[np.maximum(r.nearest_bs[tx_idx], 0)])
    # links ending at a BS use eta_c, links ending at a UE use eta_d
    eta = np.where(tx_is_d2d, p.pathloss_d2d, p.pathloss_cellular)

    n = tx_idx.size
    diff = rx_xy[:, None, :] - tx_xy[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    gain = tx_pow[None, :] * dist ** (-eta[:, None])
    if fading:
        gain = gain * rng.exponential(1.0, size=(n, n))
    own = np.arange(n)
    signal = gain[own, own].copy()
    gain[own, own] = 0.0
    i_cell = gain[:, ~tx_is_d2d].sum(axis=1)
    i_d2d = gain[:, tx_is_d2d].sum(axis=1)
    with np.errstate(divide="ignore"):
        # an interference-free, noiseless link has infinite SINR
        sinr = signal / (p.noise_power + i_cell + i_d2d)
    mode = np.where(tx_is_d2d, MODE_D2D, MODE_CELLULAR).astype(np.int8)
    return LinkState(tx_idx, mode, rx_xy, signal, i_cell, i_d2d, sinr)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class SampleMetrics:
    """Ratio statistics from one or more realizations.

    Every metric is stored as a per-realization numerator (scalar or vector)
    and denominator; means are pooled ratios and standard errors come from
    the between-realization spread of the ratio residuals.
    """

    thresholds: np.ndarray
    laplace_points: np.ndarray
    numerators: dict[str, list] = field(default_factory=dict)
    denominators: dict[str, list] = field(default_factory=dict)

    def add(self, name: str, numerator, denominator: float) -> None:
        self.numerators.setdefault(name, []).append(np.asarray(numerator, dtype=float))
        self.denominators.setdefault(name, []).append(float(denominator))

    def extend(self, other: "SampleMetrics") -> None:
        for name in other.numerators:
            self.numerators.setdefault(name, []).extend(other.numerators[name])
            self.denominators.setdefault(name, []).extend(other.denominators[name])

    @property
    def num_realizations(self) -> int:
        return max((len(v) for v in self.denominators.values()), default=0)

    def estimate(self, name: str) -> "Estimate":
        num = np.array(self.numerators[name])
        den = np.array(self.denominators[name])
        total = den.sum()
        n = len(den)
        if total == 0:
            shape = num.shape[1:]
            return Estimate(np.full(shape, np.nan), np.full(shape, np.nan), n, 0.0)
        mean = num.sum(axis=0) / total
        resid = num - np.multiply.outer(den, mean) if num.ndim > 1 else num - den * mean
        if n > 1:
            se = np.sqrt((resid**2).sum(axis=0) * n / (n - 1)) / total
        else:
            se = np.full(np.shape(mean), np.nan)
        return Estimate(mean, se, n, total)

    def summary(self) -> dict[str, "Estimate"]:
        return {name: self.estimate(name) for name in self.numerators}


@dataclass(frozen=True)
class Estimate:
    mean: np.ndarray | float
    stderr: np.ndarray | float
    num_realizations: int
    sample_size: float

    def ci95(self):
        return 1.959963984540054 * np.asarray(self.stderr)


def _inside(xy: np.ndarray, bounds: tuple[float, float]) -> np.ndarray:
    lo, hi = bounds
    with np.errstate(invalid="ignore"):
        return np.all((xy >= lo) & (xy <= hi), axis=-1)


def measure(
    realization: Realization,
    thresholds: Sequence[float] | None = None,
    laplace_points: Sequence[float] | None = None,
    metrics: SampleMetrics | None = None,
) -> SampleMetrics:
    """Collect one realization's statistics.

    ``thresholds`` are linear SINR thresholds (default: the parameter set's);
    ``laplace_points`` are the ``s`` values (per watt) at which the empirical
    interference transform E[exp(-s I)] is recorded.
    """
    r = realization
    p = r.params
    th = np.atleast_1d(np.asarray(thresholds if thresholds is not None else [p.sinr_threshold], dtype=float))
    ss = np.atleast_1d(np.asarray(laplace_points if laplace_points is not None else [], dtype=float))
    out = metrics if metrics is not None else SampleMetrics(th, ss)
    bounds = r.config.inner_bounds()

    links = link_states(r)
    keep = _inside(links.rx_xy, bounds)
    for mode, label in ((MODE_CELLULAR, "cellular"), (MODE_D2D, "d2d")):
        sel = keep & (links.mode == mode)
        sinr = links.sinr[sel]
        count = sinr.size
        out.add(f"{label}_outage", (sinr[:, None] <= th[None, :]).sum(axis=0), count)
        out.add(f"{label}_log_rate", np.log1p(sinr).sum(), count)
        ic, id_ = links.interference_cellular[sel], links.interference_d2d[sel]
        out.add(f"lt_cellular_on_{'bs' if mode == MODE_CELLULAR else 'd2d'}",
                np.exp(-np.multiply.outer(ic, ss)).sum(axis=0), count)
        out.add(f"lt_d2d_on_{'bs' if mode == MODE_CELLULAR else 'd2d'}",
                np.exp(-np.multiply.outer(id_, ss)).sum(axis=0), count)
    sched_cell = sel_c = keep & (links.mode == MODE_CELLULAR)
    out.add("mean_sqrt_power_scheduled_cellular", np.sqrt(r.tx_power[links.tx[sched_cell]]).sum(), int(sel_c.sum()))
    out.add("mean_power_scheduled_cellular", r.tx_power[links.tx[sched_cell]].sum(), int(sel_c.sum()))

    # population statistics over the original (non-inserted) UEs in the inner window
    inner = _inside(r.ue_xy, bounds) & ~r.inserted
    case = r.case_label
    covered = (case == 2) | (case == 4)
    reach = (case == 3) | (case == 4)
    pot = inner & r.is_potential
    out.add("cellular_truncation", (inner & ~covered).sum(), inner.sum())
    out.add("d2d_truncation", (pot & ~reach).sum(), pot.sum())
    out.add("potential_fraction", pot.sum(), inner.sum())
    eligible = inner & reach
    out.add("mode_rule_fraction", (eligible & r.selection_rule).sum(), eligible.sum())
    out.add("d2d_mode_fraction", (eligible & (r.mode == MODE_D2D)).sum(), eligible.sum())
    c4 = inner & (case == 4)
    out.add("case4_d2d_fraction", (c4 & (r.mode == MODE_D2D)).sum(), c4.sum())
    d2d_rule = inner & (r.mode == MODE_D2D) & r.selection_rule
    out.add("mean_power_d2d_rule", r.tx_power[d2d_rule].sum(), d2d_rule.sum())
    d2d_all = inner & (r.mode == MODE_D2D)
    out.add("mean_power_d2d", r.tx_power[d2d_all].sum(), d2d_all.sum())
    c2 = inner & (case == 2)
    out.add("mean_power_case2", r.tx_power[c2].sum(), c2.sum())
    c4c = c4 & (r.mode == MODE_CELLULAR)
    out.add("mean_power_case4_cellular", r.tx_power[c4c].sum(), c4c.sum())
    out.add("mean_power_potential", r.tx_power[eligible].sum(), eligible.sum())
    out.add("bs_count", len(r.bs_xy), 1)
    out.add("inserted_per_bs", r.inserted.sum(), len(r.bs_xy))
    return out


def simulate_one(params: NetworkParams, config: SimulationConfig, stream_index: int,
                 thresholds=None, laplace_points=None) -> SampleMetrics:
    r = classify_and_schedule(realize_network(params, config, stream_index))
    return measure(r, thresholds, laplace_points)


def _simulate_chunk(args) -> SampleMetrics:
    params, config, indices, thresholds, laplace_points = args
    th = np.atleast_1d(np.asarray(thresholds if thresholds is not None else [params.sinr_threshold], dtype=float))
    ss = np.atleast_1d(np.asarray(laplace_points if laplace_points is not None else [], dtype=float))
    acc = SampleMetrics(th, ss)
    for i in indices:
        r = classify_and_schedule(realize_network(params, config, i))
        measure(r, th, ss, acc)
    return acc


def run_campaign(
    params: NetworkParams,
    config: SimulationConfig,
    thresholds: Sequence[float] | None = None,
    laplace_points: Sequence[float] | None = None,
    workers: int = 1,
) -> SampleMetrics:
    """Run ``config.num_realizations`` independent realizations.

    The result does not depend on ``workers``: realizations are seeded by
    index and merged in index order.
    """
    config.check_scale(params)
    n = config.num_realizations
    if workers <= 1:
        return _simulate_chunk((params, config, range(n), thresholds, laplace_points))
    chunks = [range(start, min(start + 50, n)) for start in range(0, n, 50)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_simulate_chunk, [(params, config, c, thresholds, laplace_points) for c in chunks]))
    total = parts[0]
    for part in parts[1:]:
        total.extend(part)
    return total


# ---------------------------------------------------------------------------
# per-realization dump

DUMP_COLUMNS = ("x", "y", "case", "mode", "tx_power_w", "sinr_linear", "scheduled")


def dump_rows(realization: Realization) -> Iterable[tuple]:
    """One row per UE; ``sinr_linear`` is NaN unless the UE has a measured link."""
    r = realization
    sinr = np.full(r.num_ues, np.nan)
    if r.classified:
        links = link_states(r)
        sinr[links.tx] = links.sinr
    for i in range(r.num_ues):
        yield (
            float(r.ue_xy[i, 0]),
            float(r.ue_xy[i, 1]),
            int(r.case_label[i]),
            MODE_NAMES[int(r.mode[i])],
            float(r.tx_power[i]),
            float(sinr[i]),
            int(bool(r.scheduled[i])),
        )


def write_dump(realization: Realization, path) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(DUMP_COLUMNS) + "\n")
        for row in dump_rows(realization):
            fh.write("\t".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def read_dump(path) -> list[dict]:
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        rows = []
        for line in fh:
            values = line.rstrip("\n").split("\t")
            rows.append(dict(zip(header, values)))
    return rows
