"""Maximum-CoG-acceleration optimization.

Per telemetry sample, maximizes the magnitude of the horizontal CoG
acceleration over (delta, beta, kappa x4) while preserving the trajectory:
yaw acceleration and acceleration direction are pinned to the initial state,
per-axle left/right torque differences are preserved, the front/rear brake
split follows the driver's brake balance while braking, and slips stay inside
their bounds. The initial telemetry point is feasible by construction, so a
converged result never reports a lower acceleration than the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from . import kernels, nlp
from .tire_model import TireParams, pure_slip_peak
from .vehicle_model import VehicleOutputs, VehicleParams, VehicleState, evaluate


@lru_cache(maxsize=8)
def _peak_kappas(tires: TireParams) -> tuple[float, float]:
    front, _ = pure_slip_peak(tires.front, tires.front.fz0, lateral=False, step=2e-4)
    rear, _ = pure_slip_peak(tires.rear, tires.rear.fz0, lateral=False, step=2e-4)
    return front, rear

STATUS_EXCLUDED = "excluded-low-acceleration"

_N_EQ = 5
_N_INEQ = 11


@dataclass(frozen=True)
class OptCogResult:
    delta: float
    beta: float
    kappa: tuple[float, float, float, float]
    outputs: VehicleOutputs
    init_outputs: VehicleOutputs
    status: str
    iterations: int
    improvement: float
    psidd_residual: float
    direction_error: float

    @property
    def a_rho(self) -> float:
        return self.outputs.a_rho

    @property
    def converged(self) -> bool:
        return self.status == nlp.STATUS_CONVERGED

    def optimized_state(self, state: VehicleState) -> VehicleState:
        return state.with_variables(self.delta, self.beta, self.kappa)


def _wrap_angle(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


def build_pack(
    state: VehicleState,
    params: VehicleParams,
    tires: TireParams,
    init_out: VehicleOutputs,
    br_drv: float,
) -> np.ndarray:
    """Assemble the fused-kernel problem pack for one sample."""
    a_rho = init_out.a_rho
    ux = init_out.a_x / a_rho
    uy = init_out.a_y / a_rho
    t = init_out.torque
    t_f_in = t[0] + t[1]
    t_r_in = t[2] + t[3]
    t_scale = max(1000.0, abs(t_f_in) + abs(t_r_in))
    margin = max(1e-3, 2e-6 * t_scale)
    ref = np.array(
        [
            init_out.psi_ddot,
            ux,
            uy,
            t[0] - t[1],
            t[2] - t[3],
            1.0 if (t_f_in + t_r_in) < 0.0 else 0.0,
            br_drv,
            max(1.0, a_rho),
            t_scale,
            max(1.0, abs(init_out.psi_ddot)),
            params.t_engine_max * state.i_tot,
            margin,
            max(0.0, t_f_in) + margin,  # front axle carries braking torque only
        ],
        dtype=np.float64,
    )
    return np.concatenate([state.packed(), params.packed(), tires.packed(), ref])


class _NativeMerit:
    """Compiled augmented-Lagrangian merit/gradient for one problem pack."""

    def __init__(self, pack, merit_fn, grad_fn):
        self.pack = pack
        self._merit = merit_fn
        self._grad = grad_fn

    def merit(self, z, lam, mu, rho):
        return self._merit(z, self.pack, lam, mu, rho)

    def merit_grad(self, z, lam, mu, rho, lo, hi, step, out):
        return self._grad(z, self.pack, lam, mu, rho, lo, hi, step, out)


def build_problem(
    state: VehicleState,
    params: VehicleParams,
    tires: TireParams,
    init_out: VehicleOutputs,
    br_drv: float,
) -> nlp.NlpProblem:
    pack = build_pack(state, params, tires, init_out, br_drv)
    out = np.empty(kernels.N_OC_OUT, dtype=np.float64)

    def fused(z):
        kernels.optcog_eval(np.asarray(z, dtype=np.float64), pack, out)
        return float(out[0]), out[1 : 1 + _N_EQ], out[1 + _N_EQ :]

    def objective(z):
        return fused(z)[0]

    def eq_c(z):
        return fused(z)[1].copy()

    def ineq_c(z):
        return fused(z)[2].copy()

    k = params.kappa_max
    lower = np.array([-params.delta_max, -params.beta_max, -k, -k, -k, -k])
    upper = -lower
    x0 = np.array([state.delta, state.beta, *state.kappa], dtype=np.float64)

    # under near-pure braking the brake-split manifold carries two branches
    # (front axle at its force peak vs rear axle at its peak); a deep-braking
    # start targets the front-limited branch so the better branch competes.
    # cornering samples keep the single telemetry start (basin hopping there
    # would trade one feasible mode for another and break idempotence)
    extra = ()
    t = init_out.torque
    braking = (t[0] + t[1] + t[2] + t[3]) < 0.0
    if braking and abs(init_out.a_y) < 0.25 * abs(init_out.a_x):
        kp_f, kp_r = _peak_kappas(tires)
        extra = (
            np.array([state.delta, state.beta,
                      -0.95 * kp_f, -0.95 * kp_f, -0.45 * kp_r, -0.45 * kp_r]),
        )

    return nlp.NlpProblem(
        dimension=6,
        objective=objective,
        eq_constraints=eq_c,
        ineq_constraints=ineq_c,
        lower=lower,
        upper=upper,
        x0=x0,
        fused=fused,
        native=_NativeMerit(pack, kernels.optcog_merit, kernels.optcog_merit_grad),
        extra_starts=extra,
    )


def optimize_cog(
    state: VehicleState,
    params: VehicleParams,
    tires: TireParams,
    options: Optional[nlp.NlpOptions] = None,
    br_drv: Optional[float] = None,
    init_out: Optional[VehicleOutputs] = None,
) -> OptCogResult:
    """Solve the per-sample acceleration maximization.

    ``init_out`` may be passed to reuse an existing evaluation of the state.
    Samples whose initial acceleration magnitude is below ``params.a_min``
    are not optimized and come back with an excluded status.
    """
    if init_out is None:
        init_out = evaluate(state, params, tires)
    if br_drv is None:
        br_drv = params.br_drv

    if init_out.a_rho < params.a_min:
        return OptCogResult(
            delta=state.delta, beta=state.beta, kappa=state.kappa,
            outputs=init_out, init_outputs=init_out, status=STATUS_EXCLUDED,
            iterations=0, improvement=0.0, psidd_residual=0.0, direction_error=0.0,
        )

    problem = build_problem(state, params, tires, init_out, br_drv)
    opts = options or nlp.NlpOptions(max_iter=600)
    sol = nlp.solve(problem, opts)

    z = sol.z
    opt_state = state.with_variables(float(z[0]), float(z[1]), tuple(float(v) for v in z[2:6]))
    out = evaluate(opt_state, params, tires)

    # a feasible start guarantees the optimum dominates the input; fall back
    # to the input variables if numerics ever report otherwise
    if out.a_rho < init_out.a_rho:
        opt_state = state
        out = init_out

    return OptCogResult(
        delta=opt_state.delta,
        beta=opt_state.beta,
        kappa=opt_state.kappa,
        outputs=out,
        init_outputs=init_out,
        status=sol.status,
        iterations=sol.iterations,
        improvement=out.a_rho - init_out.a_rho,
        psidd_residual=out.psi_ddot - init_out.psi_ddot,
        direction_error=_wrap_angle(
            math.atan2(out.a_y, out.a_x) - math.atan2(init_out.a_y, init_out.a_x)
        ),
    )
