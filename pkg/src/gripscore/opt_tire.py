"""Per-tire force maximization.

Starting from the CoG-optimized state, each tire's force magnitude is
maximized independently over (alpha, kappa) with the force direction pinned
to the CoG-optimized direction of that tire. The four problems are
independent; no combined vehicle state is implied by their optima.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels, nlp
from .tire_model import TireParams, TireState

STATUS_SKIPPED = "skipped-zero-force"

_MIN_FORCE = 1e-6  # N, below this the force direction is undefined


@dataclass(frozen=True)
class TireOptimum:
    alpha: float
    kappa: float
    fx: float
    fy: float
    status: str
    iterations: int

    @property
    def f_rho(self) -> float:
        return math.hypot(self.fx, self.fy)

    @property
    def converged(self) -> bool:
        return self.status == nlp.STATUS_CONVERGED

    @property
    def skipped(self) -> bool:
        return self.status == STATUS_SKIPPED


@dataclass(frozen=True)
class OptTireResult:
    tires: tuple[TireOptimum, TireOptimum, TireOptimum, TireOptimum]

    @property
    def f_rho_tires(self) -> float:
        return sum(t.f_rho for t in self.tires)

    @property
    def converged(self) -> bool:
        return all(t.converged or t.skipped for t in self.tires)


def optimize_tire(
    tire_state: TireState,
    params,  # AxleTireParams
    alpha_max: float,
    kappa_max: float,
    fx_ref: float,
    fy_ref: float,
    options: Optional[nlp.NlpOptions] = None,
) -> TireOptimum:
    """Maximize one tire's force along the direction of (fx_ref, fy_ref).

    The reference force comes from the CoG-optimized state, which is feasible
    for this problem, so the optimum dominates it.
    """
    f_ref = math.hypot(fx_ref, fy_ref)
    if f_ref <= _MIN_FORCE or tire_state.fz <= 0.0:
        return TireOptimum(
            alpha=tire_state.alpha, kappa=tire_state.kappa,
            fx=fx_ref, fy=fy_ref, status=STATUS_SKIPPED, iterations=0,
        )
    ux = fx_ref / f_ref
    uy = fy_ref / f_ref
    pack = np.empty(kernels.N_OT_PACK, dtype=np.float64)
    pack[0] = tire_state.fz
    pack[1] = tire_state.gamma
    pack[2] = ux
    pack[3] = uy
    pack[4] = max(1.0, f_ref)
    pack[5:] = params.packed()
    out = np.empty(kernels.N_OT_OUT, dtype=np.float64)

    def fused(z):
        kernels.opttire_eval(np.asarray(z, dtype=np.float64), pack, out)
        return float(out[0]), out[1:2], out[2:3]

    from .opt_cog import _NativeMerit

    problem = nlp.NlpProblem(
        dimension=2,
        objective=lambda z: fused(z)[0],
        eq_constraints=lambda z: fused(z)[1].copy(),
        ineq_constraints=lambda z: fused(z)[2].copy(),
        lower=np.array([-alpha_max, -kappa_max]),
        upper=np.array([alpha_max, kappa_max]),
        x0=np.array([tire_state.alpha, tire_state.kappa]),
        fused=fused,
        native=_NativeMerit(pack, kernels.opttire_merit, kernels.opttire_merit_grad),
    )
    sol = nlp.solve(problem, options or nlp.NlpOptions())
    fx, fy, _ = kernels.tire_forces(
        tire_state.fz, float(sol.z[0]), float(sol.z[1]), tire_state.gamma, params.packed(), 0
    )
    if math.hypot(fx, fy) < f_ref:
        return TireOptimum(
            alpha=tire_state.alpha, kappa=tire_state.kappa,
            fx=fx_ref, fy=fy_ref, status=sol.status, iterations=sol.iterations,
        )
    return TireOptimum(
        alpha=float(sol.z[0]), kappa=float(sol.z[1]),
        fx=fx, fy=fy, status=sol.status, iterations=sol.iterations,
    )


def optimize_tires(
    cog_states: tuple[TireState, TireState, TireState, TireState],
    tires: TireParams,
    alpha_max: float,
    kappa_max: float,
    fx_ref,
    fy_ref,
    options: Optional[nlp.NlpOptions] = None,
) -> OptTireResult:
    """Run the four independent per-tire maximizations of one sample."""
    results = []
    for w in range(4):
        results.append(
            optimize_tire(
                cog_states[w],
                tires.axle(front=w < 2),
                alpha_max,
                kappa_max,
                fx_ref[w],
                fy_ref[w],
                options=options,
            )
        )
    return OptTireResult(tires=tuple(results))
