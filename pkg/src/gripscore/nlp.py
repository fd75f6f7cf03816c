"""Smooth constrained nonlinear program solver.

Minimize L(z) subject to ceq(z) = 0, c(z) <= 0 and box bounds, via an
augmented-Lagrangian outer loop around a projected-BFGS inner minimizer.
Gradients are central finite differences. Everything is deterministic for
identical inputs and options; restarts draw from a solver-local seeded
generator.

Problems here are desk-scale (a handful of variables); no attempt is made at
sparse or large-scale structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

STATUS_CONVERGED = "converged"
STATUS_MAX_ITER = "max-iter"
STATUS_INFEASIBLE = "infeasible"


@dataclass
class NlpProblem:
    """Problem data. ``fused``, when given, must return (objective, ceq, c)
    in one call and agree exactly with the separate callables. ``native``,
    when given, provides compiled merit evaluation: ``merit(z, lam, mu, rho)``
    and ``merit_grad(z, lam, mu, rho, lo, hi, step, out) -> merit``; it must
    agree with the augmented Lagrangian built from ``fused``."""

    dimension: int
    objective: Callable[[np.ndarray], float]
    eq_constraints: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ineq_constraints: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    x0: Optional[np.ndarray] = None
    fused: Optional[Callable[[np.ndarray], tuple]] = None
    native: Optional[object] = None
    # additional structured starting points; solutions from every start
    # compete and the best feasible one wins (multimodal problems)
    extra_starts: tuple = ()


@dataclass
class NlpOptions:
    feas_tol: float = 1e-6
    opt_tol: float = 1e-6
    max_iter: int = 200  # total inner-iteration budget
    max_outer: int = 30
    # strong initial penalty: keeps iterates near the feasible manifold when
    # the start is feasible, which it is for the per-sample problems here
    rho0: float = 1000.0
    rho_max: float = 1e9
    fd_step: float = 1e-6
    restarts: int = 3
    restart_seed: int = 0
    stall_pg_cap: float = 0.15  # accept feasible line-search stalls below this


@dataclass
class NlpSolution:
    z: np.ndarray
    objective: float
    max_eq_violation: float
    max_ineq_violation: float
    iterations: int
    status: str

    @property
    def feasible(self) -> bool:
        return self.status != STATUS_INFEASIBLE


def _make_fused(problem: NlpProblem):
    if problem.fused is not None:
        return problem.fused
    obj = problem.objective
    eq = problem.eq_constraints
    ineq = problem.ineq_constraints
    empty = np.empty(0)

    def fused(z):
        ce = np.atleast_1d(np.asarray(eq(z), dtype=float)) if eq is not None else empty
        ci = np.atleast_1d(np.asarray(ineq(z), dtype=float)) if ineq is not None else empty
        return float(obj(z)), ce, ci

    return fused


def _violations(ce: np.ndarray, ci: np.ndarray) -> tuple[float, float]:
    ve = float(np.max(np.abs(ce))) if ce.size else 0.0
    vi = float(max(0.0, np.max(ci))) if ci.size else 0.0
    return ve, vi


class _Merit:
    """Augmented Lagrangian with smooth inequality treatment."""

    def __init__(self, fused, lam, mu, rho):
        self.fused = fused
        self.lam = lam
        self.mu = mu
        self.rho = rho
        self.evals = 0

    def __call__(self, z) -> float:
        self.evals += 1
        try:
            f, ce, ci = self.fused(z)
        except (FloatingPointError, OverflowError, ValueError):
            return math.inf
        if not (math.isfinite(f) and np.all(np.isfinite(ce)) and np.all(np.isfinite(ci))):
            return math.inf
        phi = f
        if ce.size:
            phi += float(self.lam @ ce) + 0.5 * self.rho * float(ce @ ce)
        if ci.size:
            t = np.maximum(0.0, self.mu + self.rho * ci)
            phi += float(np.sum(t * t - self.mu * self.mu)) / (2.0 * self.rho)
        return phi


def _fd_grad(phi, z, lo, hi, step):
    """Central differences with steps shrunk to stay inside the box."""
    n = z.size
    g = np.zeros(n)
    for i in range(n):
        h = step * max(1.0, abs(z[i]))
        hp = min(h, hi[i] - z[i])
        hm = min(h, z[i] - lo[i])
        if hp <= 0.0 and hm <= 0.0:
            continue
        if hp <= 0.0:
            hp = 0.0
        if hm <= 0.0:
            hm = 0.0
        zp = z.copy()
        zp[i] += hp
        zm = z.copy()
        zm[i] -= hm
        fp = phi(zp)
        fm = phi(zm)
        if not (math.isfinite(fp) and math.isfinite(fm)) or hp + hm == 0.0:
            g[i] = 0.0
        else:
            g[i] = (fp - fm) / (hp + hm)
    return g


def _proj(z, lo, hi):
    return np.minimum(np.maximum(z, lo), hi)


def _inner_minimize(phi, grad_fn, z, lo, hi, tol, iter_budget, H=None):
    """Projected BFGS with backtracking Armijo line search.

    Returns (z, projected gradient norm, iterations used, stalled, H). A stall
    means no descent step could be found; at model kinks the finite-difference
    gradient can stay nonzero while the merit is numerically unimprovable.
    ``H`` warm-starts the inverse-Hessian approximation.
    """
    n = z.size
    if H is None:
        H = np.eye(n)
    f = phi(z)
    if not math.isfinite(f):
        return z, math.inf, 0, False, H
    g = grad_fn(z)
    used = 0
    t_prev = 1.0
    stalled = False
    while used < iter_budget:
        pg = float(np.max(np.abs(z - _proj(z - g, lo, hi)))) if n else 0.0
        if pg <= tol:
            break
        used += 1
        d = -H @ g
        if float(d @ g) > -1e-14 * float(g @ g):
            H = np.eye(n)
            d = -g
        t = min(1.0, 2.0 * t_prev)
        accepted = False
        for _ in range(30):
            z_new = _proj(z + t * d, lo, hi)
            step_vec = z_new - z
            if not step_vec.any():
                break
            f_new = phi(z_new)
            if f_new <= f + 1e-4 * float(g @ step_vec):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # retry along steepest descent before giving up
            if H[0, 0] != 1.0 or n > 1 and not np.array_equal(H, np.eye(n)):
                H = np.eye(n)
                d = -g
                t = 1.0
                for _ in range(20):
                    z_new = _proj(z + t * d, lo, hi)
                    step_vec = z_new - z
                    if not step_vec.any():
                        break
                    f_new = phi(z_new)
                    if f_new <= f + 1e-4 * float(g @ step_vec):
                        accepted = True
                        break
                    t *= 0.5
            if not accepted:
                stalled = True
                break
        if stalled:
            break
        # treat numerically-flat accepted steps as a stall as well
        if abs(f - f_new) <= 1e-13 * max(1.0, abs(f)) and t <= 1e-6:
            z, f = z_new, f_new
            stalled = True
            break
        t_prev = t
        g_new = grad_fn(z_new)
        s = z_new - z
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y) + 1e-300):
            rho_b = 1.0 / sy
            I = np.eye(n)
            V = I - rho_b * np.outer(s, y)
            H = V @ H @ V.T + rho_b * np.outer(s, s)
        z, f, g = z_new, f_new, g_new
    pg = float(np.max(np.abs(z - _proj(z - g, lo, hi))))
    return z, pg, used, stalled, H


def _auglag(fused, native, z0, lo, hi, opt: NlpOptions):
    """One augmented-Lagrangian run from z0."""
    try:
        f0, ce0, ci0 = fused(z0)
    except (FloatingPointError, OverflowError, ValueError):
        return z0, math.inf, 0, STATUS_INFEASIBLE
    if not (math.isfinite(f0) and np.all(np.isfinite(ce0)) and np.all(np.isfinite(ci0))):
        return z0, math.inf, 0, STATUS_INFEASIBLE

    lam = np.zeros(ce0.size)
    mu = np.zeros(ci0.size)
    rho = opt.rho0
    z = z0.copy()
    used_total = 0
    # safeguarded multiplier/penalty schedule (Conn-Gould-Toint style)
    eta = 1.0 / rho ** 0.1
    omega = 1.0 / rho
    status = STATUS_MAX_ITER
    pg = math.inf
    updates = 0
    H = None
    n = z0.size
    for _ in range(opt.max_outer):
        budget = opt.max_iter - used_total
        if budget <= 0:
            break
        if native is None:
            phi = _Merit(fused, lam, mu, rho)

            def grad_fn(zz, phi=phi):
                return _fd_grad(phi, zz, lo, hi, opt.fd_step)

        else:
            phi = lambda zz, lam=lam, mu=mu, rho=rho: native.merit(zz, lam, mu, rho)

            def grad_fn(zz, lam=lam, mu=mu, rho=rho):
                g = np.empty(n)
                native.merit_grad(zz, lam, mu, rho, lo, hi, opt.fd_step, g)
                return g

        z, pg, used, stalled, H = _inner_minimize(
            phi, grad_fn, z, lo, hi, max(omega, 0.5 * opt.opt_tol), budget, H=H
        )
        used_total += max(used, 1)
        f, ce, ci = fused(z)
        ve, vi = _violations(ce, ci)
        feas = max(ve, vi)
        if feas <= opt.feas_tol and pg <= opt.opt_tol:
            status = STATUS_CONVERGED
            break
        if feas <= opt.feas_tol and stalled and updates >= 1 and pg <= opt.stall_pg_cap:
            # merit numerically unimprovable at a feasible point with settled
            # multipliers: first-order optimal within line-search resolution
            # (the projected gradient is unreliable at model kinks)
            status = STATUS_CONVERGED
            break
        if feas <= max(eta, opt.feas_tol):
            updates += 1
            if ce.size:
                lam = lam + rho * ce
            if ci.size:
                mu = np.maximum(0.0, mu + rho * ci)
            eta = max(0.1 * opt.feas_tol, eta / rho ** 0.9)
            omega = max(0.1 * opt.opt_tol, omega / rho)
        else:
            rho = min(rho * 10.0, opt.rho_max)
            eta = max(0.1 * opt.feas_tol, 1.0 / rho ** 0.1)
            omega = max(0.1 * opt.opt_tol, 1.0 / rho)
            H = None  # curvature changed with the penalty
    return z, pg, used_total, status


def solve(problem: NlpProblem, options: Optional[NlpOptions] = None) -> NlpSolution:
    """Solve the problem; multi-start on non-convergence, keep best feasible.

    The (clipped) initial point counts as a candidate when it is feasible, so
    a feasible start never yields a worse-than-start solution.
    """
    opt = options or NlpOptions()
    n = problem.dimension
    lo = (
        np.full(n, -np.inf)
        if problem.lower is None
        else np.ascontiguousarray(problem.lower, dtype=float)
    )
    hi = (
        np.full(n, np.inf)
        if problem.upper is None
        else np.ascontiguousarray(problem.upper, dtype=float)
    )
    z0 = np.zeros(n) if problem.x0 is None else np.ascontiguousarray(problem.x0, dtype=float)
    z0 = _proj(z0, lo, hi)
    fused = _make_fused(problem)

    def measure(z):
        f, ce, ci = fused(z)
        ve, vi = _violations(ce, ci)
        return f, ve, vi

    candidates = []  # (z, f, ve, vi, status, iters)
    try:
        f0, ve0, vi0 = measure(z0)
        if math.isfinite(f0) and max(ve0, vi0) <= opt.feas_tol:
            candidates.append((z0.copy(), f0, ve0, vi0, None, 0))
    except (FloatingPointError, OverflowError, ValueError):
        pass

    rng = np.random.default_rng(opt.restart_seed)
    total_iters = 0
    first_status = None
    converged_any = False
    span = np.where(np.isfinite(hi - lo), hi - lo, 2.0 * np.maximum(1.0, np.abs(z0)))
    for attempt in range(opt.restarts + 1):
        if attempt == 0:
            z_start = z0
        else:
            z_start = _proj(z0 + rng.uniform(-0.05, 0.05, n) * span, lo, hi)
        z, pg, used, status = _auglag(fused, problem.native, z_start, lo, hi, opt)
        total_iters += used
        if first_status is None:
            first_status = status
        if status != STATUS_INFEASIBLE:
            f, ve, vi = measure(z)
            if math.isfinite(f):
                candidates.append((z, f, ve, vi, status, used))
            if status == STATUS_CONVERGED:
                converged_any = True
                break

    if not converged_any and candidates and candidates[0][4] is None:
        # all attempts failed from a feasible start: retry once with a strong
        # penalty fence that keeps the iterates glued to the feasible manifold
        rescue = replace(opt, rho0=max(50.0 * opt.rho0, 5e4), restarts=0)
        z, pg, used, status = _auglag(fused, problem.native, z0, lo, hi, rescue)
        total_iters += used
        if status != STATUS_INFEASIBLE:
            f, ve, vi = measure(z)
            if math.isfinite(f):
                candidates.append((z, f, ve, vi, status, used))

    for extra in problem.extra_starts:
        z_start = _proj(np.ascontiguousarray(extra, dtype=float), lo, hi)
        z, pg, used, status = _auglag(fused, problem.native, z_start, lo, hi, opt)
        total_iters += used
        if status != STATUS_INFEASIBLE:
            f, ve, vi = measure(z)
            if math.isfinite(f):
                candidates.append((z, f, ve, vi, status, used))

    feasible = [c for c in candidates if max(c[2], c[3]) <= opt.feas_tol]
    if feasible:
        best = min(feasible, key=lambda c: c[1])
        status = best[4]
        if status is None:
            # initial point won; converged if any run certified optimality there
            status = (
                STATUS_CONVERGED
                if any(c[4] == STATUS_CONVERGED for c in candidates)
                else STATUS_MAX_ITER
            )
    elif candidates:
        best = min(candidates, key=lambda c: (max(c[2], c[3]), c[1]))
        status = best[4] if best[4] not in (None, STATUS_CONVERGED) else STATUS_MAX_ITER
    else:
        return NlpSolution(
            z=z0, objective=math.inf, max_eq_violation=math.inf,
            max_ineq_violation=math.inf, iterations=total_iters, status=STATUS_INFEASIBLE,
        )
    return NlpSolution(
        z=best[0], objective=best[1], max_eq_violation=best[2],
        max_ineq_violation=best[3], iterations=total_iters, status=status,
    )
