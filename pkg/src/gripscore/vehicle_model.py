"""Two-track vehicle model.

Maps a vehicle state through wheel kinematics and the tire model to per-wheel
forces, CoG accelerations and yaw acceleration. Wheel order is always
(front-left, front-right, rear-left, rear-right). Axes: x forward, y left,
z up; positive steering/yaw is a left turn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import kernels
from .tire_model import TireParams, _parse_kv_file

DEG = math.pi / 180.0


class KinematicsError(ValueError):
    """Raised for states below the kinematic validity floor."""


class VehicleParamError(ValueError):
    """Bad or missing vehicle parameter."""


@dataclass(frozen=True)
class VehicleParams:
    m: float
    j_zz: float
    l_f: float
    l_r: float
    b_fl: float
    b_fr: float
    b_rl: float
    b_rr: float
    steering_ratio: float
    t_engine_max: float
    alpha_max: float
    kappa_max: float
    eps1: float = 0.01
    eps2: float = 0.0
    v_min: float = 5.0
    a_min: float = 2.0
    delta_max: float = 220.0 * DEG
    beta_max: float = 12.0 * DEG
    brake_gain_front: float = 120.0
    brake_gain_rear: float = 85.0
    br_drv: float = 0.585
    cd_x: float = 0.62
    cdown_front: float = 0.95
    cdown_rear: float = 1.25
    r0: float = 0.33
    r_load_factor: float = 0.010
    toe_front: float = -0.08 * DEG
    toe_rear: float = 0.10 * DEG
    camber_front: float = -3.2 * DEG
    camber_rear: float = -2.8 * DEG
    h_cog: float = 0.42
    rocker_gain: float = 0.0009 * DEG
    gear_ratios: tuple[float, ...] = (13.2, 9.8, 7.6, 6.1, 5.0, 4.2)
    gear_speeds: tuple[float, ...] = (18.0, 26.0, 35.0, 45.0, 56.0)

    def __post_init__(self):
        for name in ("m", "j_zz", "l_f", "l_r", "b_fl", "b_fr", "b_rl", "b_rr"):
            if getattr(self, name) <= 0:
                raise VehicleParamError(f"{name} must be > 0")
        if self.alpha_max <= 0 or self.kappa_max <= 0:
            raise VehicleParamError("slip bounds must be > 0")
        if len(self.gear_speeds) != len(self.gear_ratios) - 1:
            raise VehicleParamError("need one gear speed threshold less than ratios")

    def packed(self) -> np.ndarray:
        """10-double array consumed by the kernels."""
        return np.array(
            [
                self.m, self.j_zz, self.l_f, self.l_r, self.steering_ratio,
                self.alpha_max, self.kappa_max, self.eps1, self.eps2, self.t_engine_max,
            ],
            dtype=np.float64,
        )

    @property
    def half_tracks(self) -> tuple[float, float, float, float]:
        return (self.b_fl, self.b_fr, self.b_rl, self.b_rr)

    def i_tot_for_speed(self, v: float) -> float:
        for ratio, vmax in zip(self.gear_ratios, self.gear_speeds):
            if v < vmax:
                return ratio
        return self.gear_ratios[-1]


def load_vehicle_params(path=None) -> VehicleParams:
    """Load a vehicle parameter file; default path loads the packaged set."""
    if path is None:
        text = resources.files("gripscore.data").joinpath("vehicle_default.par").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    kv = _parse_kv_file(text)

    def num(key: str) -> float:
        if key not in kv:
            raise VehicleParamError(f"missing parameter {key}")
        try:
            return float(kv[key])
        except ValueError as exc:
            raise VehicleParamError(f"non-numeric value for {key}: {kv[key]!r}") from exc

    def tup(key: str) -> tuple[float, ...]:
        try:
            return tuple(float(x) for x in kv[key].split(","))
        except (KeyError, ValueError) as exc:
            raise VehicleParamError(f"bad list for {key}") from exc

    return VehicleParams(
        m=num("m"), j_zz=num("j_zz"), l_f=num("l_f"), l_r=num("l_r"),
        b_fl=num("b_fl"), b_fr=num("b_fr"), b_rl=num("b_rl"), b_rr=num("b_rr"),
        steering_ratio=num("steering_ratio"), t_engine_max=num("t_engine_max"),
        alpha_max=num("alpha_max_deg") * DEG, kappa_max=num("kappa_max"),
        eps1=num("eps1"), eps2=num("eps2"), v_min=num("v_min"), a_min=num("a_min"),
        delta_max=num("delta_max_deg") * DEG, beta_max=num("beta_max_deg") * DEG,
        brake_gain_front=num("brake_gain_front"), brake_gain_rear=num("brake_gain_rear"),
        br_drv=num("br_drv"), cd_x=num("cd_x"),
        cdown_front=num("cdown_front"), cdown_rear=num("cdown_rear"),
        r0=num("r0"), r_load_factor=num("r_load_factor"),
        toe_front=num("toe_front_deg") * DEG, toe_rear=num("toe_rear_deg") * DEG,
        camber_front=num("camber_front_deg") * DEG, camber_rear=num("camber_rear_deg") * DEG,
        h_cog=num("h_cog"), rocker_gain=num("rocker_gain_deg") * DEG,
        gear_ratios=tup("gear_ratios"), gear_speeds=tup("gear_speeds"),
    )


@dataclass(frozen=True)
class VehicleState:
    """Per-sample state: constant part plus the optimizable (delta, beta, kappa)."""

    psi_dot: float
    v: float
    fz: tuple[float, float, float, float]
    mu_toe: tuple[float, float, float, float]
    b_half: tuple[float, float, float, float]
    d_x_aero: float
    d_y_aero: float
    gamma: tuple[float, float, float, float]
    r_dyn: tuple[float, float, float, float]
    n_engine: float
    i_tot: float
    delta: float
    beta: float
    kappa: tuple[float, float, float, float]
    alpha_prev: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def packed(self) -> np.ndarray:
        """36-double array consumed by the kernels."""
        out = np.empty(kernels.N_STATE, dtype=np.float64)
        out[0] = self.psi_dot
        out[1] = self.v
        out[2:6] = self.fz
        out[6:10] = self.alpha_prev
        out[10:14] = self.mu_toe
        out[14:18] = self.b_half
        out[18] = self.d_x_aero
        out[19] = self.d_y_aero
        out[20:24] = self.gamma
        out[24:28] = self.r_dyn
        out[28] = self.n_engine
        out[29] = self.i_tot
        out[30] = self.delta
        out[31] = self.beta
        out[32:36] = self.kappa
        return out

    def with_variables(self, delta: float, beta: float, kappa) -> "VehicleState":
        return VehicleState(
            psi_dot=self.psi_dot, v=self.v, fz=self.fz, mu_toe=self.mu_toe,
            b_half=self.b_half, d_x_aero=self.d_x_aero, d_y_aero=self.d_y_aero,
            gamma=self.gamma, r_dyn=self.r_dyn, n_engine=self.n_engine,
            i_tot=self.i_tot, delta=delta, beta=beta, kappa=tuple(kappa),
            alpha_prev=self.alpha_prev,
        )


@dataclass(frozen=True)
class VehicleOutputs:
    a_x: float
    a_y: float
    psi_ddot: float
    alpha: tuple[float, float, float, float]
    fx: tuple[float, float, float, float]
    fy: tuple[float, float, float, float]
    mz: tuple[float, float, float, float]
    torque: tuple[float, float, float, float]

    @property
    def a_rho(self) -> float:
        return math.hypot(self.a_x, self.a_y)

    @property
    def f_rho(self) -> tuple[float, float, float, float]:
        return tuple(math.hypot(x, y) for x, y in zip(self.fx, self.fy))

    @property
    def f_rho_tires(self) -> float:
        return sum(self.f_rho)


def wheel_steer_angles(state: VehicleState, params: VehicleParams):
    """Road-wheel steering angles: linear map of the wheel angle plus toe on
    the front axle, toe only on the rear."""
    d_road = state.delta / params.steering_ratio
    return (
        d_road + state.mu_toe[0],
        d_road + state.mu_toe[1],
        state.mu_toe[2],
        state.mu_toe[3],
    )


def wheel_slip_angles(state: VehicleState, params: VehicleParams):
    """Per-wheel slip angles from sideslip, yaw rate and wheel position."""
    if state.v <= params.v_min:
        raise KinematicsError(
            f"v={state.v:.2f} m/s is below kinematic validity floor {params.v_min} m/s"
        )
    deltas = wheel_steer_angles(state, params)
    vx = state.v * math.cos(state.beta)
    vy = state.v * math.sin(state.beta)
    xs = (params.l_f, params.l_f, -params.l_r, -params.l_r)
    out = []
    for w in range(4):
        y_w = state.b_half[w] if w % 2 == 0 else -state.b_half[w]
        out.append(deltas[w] - math.atan2(vy + state.psi_dot * xs[w], vx - state.psi_dot * y_w))
    return tuple(out)


def evaluate(state: VehicleState, params: VehicleParams, tires: TireParams) -> VehicleOutputs:
    """Full evaluation through the tire model and the momentum equalities."""
    if state.v <= params.v_min:
        raise KinematicsError(
            f"v={state.v:.2f} m/s is below kinematic validity floor {params.v_min} m/s"
        )
    out = np.empty(kernels.N_VEH_OUT, dtype=np.float64)
    kernels.vehicle_eval(state.packed(), params.packed(), tires.packed(), out)
    return VehicleOutputs(
        a_x=float(out[0]),
        a_y=float(out[1]),
        psi_ddot=float(out[2]),
        alpha=tuple(out[3:7]),
        fx=tuple(out[7:11]),
        fy=tuple(out[11:15]),
        mz=tuple(out[15:19]),
        torque=tuple(out[19:23]),
    )
