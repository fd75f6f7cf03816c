"""Batch analysis pipeline: telemetry -> optCog -> optTire -> scores.

Samples are independent, so laps can be processed by a worker pool; results
are aggregated in sample order, making outputs identical for any worker
count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nlp, scores
from .opt_cog import optimize_cog
from .opt_tire import optimize_tires
from .scores import ScoredSample, classify_control_state, steering_rate
from .telemetry import LapTelemetry, WHEELS
from .tire_model import TireParams, TireState
from .vehicle_model import KinematicsError, VehicleParams, VehicleState, evaluate


def state_from_lap(lap: LapTelemetry, i: int) -> VehicleState:
    ch = lap.channels
    return VehicleState(
        psi_dot=float(ch["psi_dot"][i]),
        v=float(ch["v"][i]),
        fz=tuple(float(ch[f"fz_n_{w}"][i]) for w in WHEELS),
        mu_toe=tuple(float(ch[f"mu_toe_{w}"][i]) for w in WHEELS),
        b_half=tuple(float(ch[f"b_half_m_{w}"][i]) for w in WHEELS),
        d_x_aero=float(ch["dx_n"][i]),
        d_y_aero=float(ch["dy_n"][i]),
        gamma=tuple(float(ch[f"gamma_{w}"][i]) for w in WHEELS),
        r_dyn=tuple(float(ch[f"r_dyn_m_{w}"][i]) for w in WHEELS),
        n_engine=float(ch["n_engine_rpm"][i]),
        i_tot=float(ch["i_tot"][i]),
        delta=float(ch["delta"][i]),
        beta=float(ch["beta"][i]),
        kappa=tuple(float(ch[f"kappa_{w}"][i]) for w in WHEELS),
        alpha_prev=tuple(float(ch[f"alpha_prev_{w}"][i]) for w in WHEELS),
    )


def analyze_sample(
    lap: LapTelemetry,
    i: int,
    params: VehicleParams,
    tires: TireParams,
    control_state: str,
    options: Optional[nlp.NlpOptions] = None,
) -> ScoredSample:
    t_i = float(lap.channel("t")[i])
    state = state_from_lap(lap, i)
    if state.v <= params.v_min:
        return scores.excluded_sample(i, t_i, control_state, scores.FLAG_LOW_SPEED)
    init_out = evaluate(state, params, tires)
    oc = optimize_cog(
        state, params, tires, options=options,
        br_drv=float(lap.channel("br_drv")[i]), init_out=init_out,
    )
    if oc.status == "excluded-low-acceleration":
        return scores.excluded_sample(i, t_i, control_state, scores.FLAG_LOW_ACCEL)
    cog_states = tuple(
        TireState(
            fz=state.fz[w],
            alpha=oc.outputs.alpha[w],
            kappa=oc.kappa[w],
            gamma=state.gamma[w],
            mu_toe=state.mu_toe[w],
            r_dyn=state.r_dyn[w],
        )
        for w in range(4)
    )
    ot = optimize_tires(
        cog_states, tires, params.alpha_max, params.kappa_max,
        oc.outputs.fx, oc.outputs.fy,
    )
    return scores.compute_scores(i, t_i, control_state, init_out, oc, ot, kappa_in=state.kappa)


_WORKER = {}


def _worker_init(lap, params, tires, states, options):
    _WORKER["args"] = (lap, params, tires, states, options)


def _worker_run(span):
    lap, params, tires, states, options = _WORKER["args"]
    lo, hi = span
    return [
        analyze_sample(lap, i, params, tires, states[i], options=options)
        for i in range(lo, hi)
    ]


@dataclass
class LapAnalysis:
    lap: LapTelemetry
    samples: list
    wall_time: float

    @property
    def included(self) -> list:
        return [s for s in self.samples if s.included]

    def convergence_rate(self) -> float:
        attempted = [
            s for s in self.samples
            if scores.FLAG_LOW_SPEED not in s.flags and scores.FLAG_LOW_ACCEL not in s.flags
        ]
        if not attempted:
            return 1.0
        ok = sum(1 for s in attempted if s.included)
        return ok / len(attempted)


def control_states_for_lap(lap: LapTelemetry) -> list:
    delta = lap.channel("delta")
    rate = steering_rate(delta, lap.sample_rate)
    brake = lap.channel("r_brake_bar")
    throttle = lap.channel("r_throttle_pct")
    return [
        classify_control_state(brake[i], throttle[i], delta[i], rate[i])
        for i in range(len(lap))
    ]


def analyze_lap(
    lap: LapTelemetry,
    params: VehicleParams,
    tires: TireParams,
    workers: int = 1,
    options: Optional[nlp.NlpOptions] = None,
) -> LapAnalysis:
    """Run the optimizer chain over every sample of one lap."""
    t0 = time.perf_counter()
    states = control_states_for_lap(lap)
    n = len(lap)
    if workers <= 1:
        samples = [
            analyze_sample(lap, i, params, tires, states[i], options=options)
            for i in range(n)
        ]
    else:
        chunk = max(50, math.ceil(n / (workers * 8)))
        spans = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_worker_init,
            initargs=(lap, params, tires, states, options),
        ) as ex:
            parts = list(ex.map(_worker_run, spans))
        samples = [s for part in parts for s in part]
    return LapAnalysis(lap=lap, samples=samples, wall_time=time.perf_counter() - t0)


def traditional_metrics(lap: LapTelemetry) -> dict:
    """Per-lap metrics: lap time, average speed, distance, curvature sum."""
    v = lap.channel("v")
    psi_dot = lap.channel("psi_dot")
    dt = 1.0 / lap.sample_rate
    return {
        "t_lap": len(lap) * dt,
        "v_avg": float(v.mean()),
        "s_lap": float(np.sum(v) * dt),
        "c_sum": float(np.sum(np.abs(psi_dot)) * dt),
    }
