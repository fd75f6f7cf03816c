"""Driver scores, control states and distribution summaries.

Reduces the optimizer outputs of one sample to the three scores, classifies
the control state from the driver inputs, and aggregates scored samples into
quantile/histogram summaries grouped by driver and control state.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .opt_cog import OptCogResult, STATUS_EXCLUDED
from .opt_tire import OptTireResult
from .vehicle_model import VehicleOutputs

DEG = math.pi / 180.0

PURE_BRAKE = "PureBrake"
TRAIL_BRAKE = "TrailBrake"
PURE_STEER = "PureSteer"
THROTTLE_STEER = "ThrottleSteer"
OTHER = "Other"
CONTROL_STATES = (PURE_BRAKE, TRAIL_BRAKE, PURE_STEER, THROTTLE_STEER, OTHER)

BRAKE_ON_BAR = 10.0
THROTTLE_ON_PCT = 10.0
STEER_ON = 10.0 * DEG
STEER_RATE_ON = 500.0 * DEG

# histogram: 1%-wide bins over [40%, 100%] plus an underflow bin; scores above
# 100% (tolerance slack) land in the top bin
HIST_EDGES = np.concatenate([[-np.inf], np.arange(0.40, 1.00, 0.01), [np.inf]])
N_BINS = HIST_EDGES.size - 1

FLAG_OK = "ok"
FLAG_LOW_SPEED = "excluded-low-speed"
FLAG_LOW_ACCEL = "excluded-low-acceleration"
FLAG_SOLVER_FAILED = "solver-failed"
FLAG_BAD_DENOMINATOR = "excluded-bad-denominator"


def to_polar(x: float, y: float) -> tuple[float, float]:
    """Quadrant-correct polar conversion; (0, 0) maps to (0, 0)."""
    rho = math.hypot(x, y)
    phi = math.atan2(y, x) if rho > 0.0 else 0.0
    return rho, phi


def classify_control_state(
    r_brake: float, r_throttle: float, delta: float, delta_rate: float
) -> str:
    """Control state from pedal and steering activity.

    Thresholds: brake > 10 bar, throttle > 10 %, steering active when
    |delta| > 10 deg or |delta rate| > 500 deg/s.
    """
    b_brake = r_brake > BRAKE_ON_BAR
    b_throttle = r_throttle > THROTTLE_ON_PCT
    b_steer = abs(delta) > STEER_ON or abs(delta_rate) > STEER_RATE_ON
    if b_brake and not b_throttle:
        return TRAIL_BRAKE if b_steer else PURE_BRAKE
    if not b_brake and not b_throttle and b_steer:
        return PURE_STEER
    if not b_brake and b_throttle and b_steer:
        return THROTTLE_STEER
    return OTHER


def steering_rate(delta: np.ndarray, sample_rate: float) -> np.ndarray:
    """Central-difference steering rate with one-sided ends."""
    delta = np.asarray(delta, dtype=float)
    if delta.size < 2:
        return np.zeros_like(delta)
    rate = np.empty_like(delta)
    rate[1:-1] = (delta[2:] - delta[:-2]) * (0.5 * sample_rate)
    rate[0] = (delta[1] - delta[0]) * sample_rate
    rate[-1] = (delta[-1] - delta[-2]) * sample_rate
    return rate


@dataclass(frozen=True)
class ScoredSample:
    index: int
    t: float
    control_state: str
    s_handling: float
    s_veh_traj: float
    s_tot: float
    a_in_rho: float
    a_oc_rho: float
    f_in_tires: float
    f_oc_tires: float
    f_ot_tires: float
    flags: tuple[str, ...] = (FLAG_OK,)
    alpha_in: tuple = ()
    alpha_oc: tuple = ()
    alpha_ot: tuple = ()
    kappa_in: tuple = ()
    kappa_oc: tuple = ()
    kappa_ot: tuple = ()

    @property
    def included(self) -> bool:
        return self.flags == (FLAG_OK,)


def excluded_sample(index: int, t: float, control_state: str, flag: str) -> ScoredSample:
    return ScoredSample(
        index=index, t=t, control_state=control_state,
        s_handling=math.nan, s_veh_traj=math.nan, s_tot=math.nan,
        a_in_rho=math.nan, a_oc_rho=math.nan,
        f_in_tires=math.nan, f_oc_tires=math.nan, f_ot_tires=math.nan,
        flags=(flag,),
    )


def compute_scores(
    index: int,
    t: float,
    control_state: str,
    init: VehicleOutputs,
    oc: OptCogResult,
    ot: OptTireResult,
    kappa_in: tuple = (),
) -> ScoredSample:
    """Scores for one sample from the three optimization states."""
    if oc.status == STATUS_EXCLUDED:
        return excluded_sample(index, t, control_state, FLAG_LOW_ACCEL)
    if not (oc.converged and ot.converged):
        return excluded_sample(index, t, control_state, FLAG_SOLVER_FAILED)

    f_in = init.f_rho_tires
    f_oc = oc.outputs.f_rho_tires
    f_ot = ot.f_rho_tires
    a_oc = oc.a_rho
    if a_oc <= 0.0 or f_ot <= 0.0:
        return excluded_sample(index, t, control_state, FLAG_BAD_DENOMINATOR)

    return ScoredSample(
        index=index,
        t=t,
        control_state=control_state,
        s_handling=init.a_rho / a_oc,
        s_veh_traj=f_oc / f_ot,
        s_tot=f_in / f_ot,
        a_in_rho=init.a_rho,
        a_oc_rho=a_oc,
        f_in_tires=f_in,
        f_oc_tires=f_oc,
        f_ot_tires=f_ot,
        alpha_in=init.alpha,
        alpha_oc=oc.outputs.alpha,
        alpha_ot=tuple(x.alpha for x in ot.tires),
        kappa_in=tuple(kappa_in),
        kappa_oc=oc.kappa,
        kappa_ot=tuple(x.kappa for x in ot.tires),
    )


@dataclass
class GroupSummary:
    group: tuple[str, str]  # (driver_id, control_state)
    count: int
    mean: dict
    quantiles: dict  # score -> (q25, q50, q75)
    histogram: dict  # score -> list of bin counts


def quantiles_linear(values: np.ndarray, qs=(0.25, 0.5, 0.75)) -> tuple:
    """Linear-interpolation quantiles between order statistics."""
    return tuple(float(np.quantile(values, q, method="linear")) for q in qs)


def score_histogram(values: np.ndarray) -> list[int]:
    counts, _ = np.histogram(values, bins=HIST_EDGES)
    return counts.tolist()


_WHEELS = ("fl", "fr", "rl", "rr")
_RESULT_COLUMNS = [
    "lap_id", "driver_id", "track_id", "t", "control_state",
    "s_handling", "s_veh_traj", "s_tot",
    "a_in_rho", "a_oc_rho", "f_in_tires", "f_oc_tires", "f_ot_tires", "flags",
] + [
    f"{stem}_{w}"
    for stem in ("alpha_in", "alpha_oc", "alpha_ot", "kappa_in", "kappa_oc", "kappa_ot")
    for w in _WHEELS
]


def _wheel4(values) -> tuple:
    return tuple(values) if len(values) == 4 else (math.nan,) * 4


def write_results_csv(path, rows: Iterable[tuple[str, str, str, ScoredSample]]) -> None:
    """One row per sample; ``rows`` yields (lap_id, driver_id, track_id, sample)."""
    with open(path, "w") as fh:
        fh.write(",".join(_RESULT_COLUMNS) + "\n")
        for lap_id, driver_id, track_id, s in rows:
            vals = [lap_id, driver_id, track_id, repr(float(s.t)), s.control_state]
            vals += [
                repr(float(x))
                for x in (s.s_handling, s.s_veh_traj, s.s_tot, s.a_in_rho, s.a_oc_rho,
                          s.f_in_tires, s.f_oc_tires, s.f_ot_tires)
            ]
            vals.append(";".join(s.flags))
            for group in (s.alpha_in, s.alpha_oc, s.alpha_ot, s.kappa_in, s.kappa_oc, s.kappa_ot):
                vals += [repr(float(x)) for x in _wheel4(group)]
            fh.write(",".join(vals) + "\n")


def read_results_csv(path) -> list[dict]:
    """Rows back as dicts with floats parsed; inverse of write_results_csv."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != _RESULT_COLUMNS:
            raise ValueError(f"{path}: unexpected results header")
        out = []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            row = dict(zip(header, parts))
            for k in header:
                if k in ("lap_id", "driver_id", "track_id", "control_state", "flags"):
                    continue
                row[k] = float(row[k])
            row["flags"] = tuple(row["flags"].split(";"))
            out.append(row)
        return out


def sample_from_row(row: dict) -> ScoredSample:
    return ScoredSample(
        index=-1, t=row["t"], control_state=row["control_state"],
        s_handling=row["s_handling"], s_veh_traj=row["s_veh_traj"], s_tot=row["s_tot"],
        a_in_rho=row["a_in_rho"], a_oc_rho=row["a_oc_rho"],
        f_in_tires=row["f_in_tires"], f_oc_tires=row["f_oc_tires"],
        f_ot_tires=row["f_ot_tires"], flags=row["flags"],
    )


def aggregate(
    samples: Iterable[tuple[str, ScoredSample]],
) -> list[GroupSummary]:
    """Distribution summaries per (driver, control state) group.

    ``samples`` yields (driver_id, sample). Excluded samples are dropped;
    empty groups are omitted with a warning.
    """
    groups: dict[tuple[str, str], list[ScoredSample]] = {}
    seen: set[tuple[str, str]] = set()
    for driver_id, s in samples:
        key = (driver_id, s.control_state)
        seen.add(key)
        if s.included:
            groups.setdefault(key, []).append(s)
    for key in sorted(seen - set(groups)):
        warnings.warn(f"group {key} has no included samples, omitted")

    out = []
    for key in sorted(groups):
        rows = groups[key]
        per_score = {
            "s_handling": np.array([r.s_handling for r in rows]),
            "s_veh_traj": np.array([r.s_veh_traj for r in rows]),
            "s_tot": np.array([r.s_tot for r in rows]),
        }
        out.append(
            GroupSummary(
                group=key,
                count=len(rows),
                mean={k: float(v.mean()) for k, v in per_score.items()},
                quantiles={k: quantiles_linear(v) for k, v in per_score.items()},
                histogram={k: score_histogram(v) for k, v in per_score.items()},
            )
        )
    return out


def group_deltas(
    summaries: list[GroupSummary], amateur_suffix: str = "A"
) -> list[dict]:
    """Mean score difference, professionals minus amateurs, per control state.

    Drivers whose id ends with ``amateur_suffix`` form the amateur group;
    returns an empty list when either group is absent.
    """
    per_state: dict[str, dict[str, list]] = {}
    for g in summaries:
        driver, state = g.group
        side = "am" if driver.endswith(amateur_suffix) else "pro"
        bucket = per_state.setdefault(state, {"pro": [], "am": []})
        bucket[side].append(g)
    out = []
    for state in CONTROL_STATES:
        bucket = per_state.get(state)
        if not bucket or not bucket["pro"] or not bucket["am"]:
            continue
        row = {"control_state": state}
        for score in ("s_handling", "s_veh_traj", "s_tot"):
            def wmean(groups):
                tot = sum(g.count for g in groups)
                return sum(g.mean[score] * g.count for g in groups) / tot
            row[score] = wmean(bucket["pro"]) - wmean(bucket["am"])
        out.append(row)
    return out
