import math

import numpy as np
import pytest

from gripscore import nlp


def solve(problem, **kw):
    return nlp.solve(problem, nlp.NlpOptions(**kw)) if kw else nlp.solve(problem)


def test_active_bound():
    p = nlp.NlpProblem(
        dimension=1,
        objective=lambda z: (z[0] - 1.0) ** 2,
        ineq_constraints=lambda z: np.array([2.0 - z[0]]),  # z >= 2
        x0=np.array([5.0]),
    )
    sol = solve(p)
    assert sol.status == nlp.STATUS_CONVERGED
    assert sol.z[0] == pytest.approx(2.0, abs=1e-6)
    assert sol.objective == pytest.approx(1.0, abs=1e-5)


def test_analytic_kkt_circle():
    p = nlp.NlpProblem(
        dimension=2,
        objective=lambda z: -(z[0] + z[1]),
        eq_constraints=lambda z: np.array([z[0] ** 2 + z[1] ** 2 - 1.0]),
        x0=np.array([0.1, 0.3]),
    )
    sol = solve(p)
    assert sol.status == nlp.STATUS_CONVERGED
    assert sol.z == pytest.approx([math.sqrt(2) / 2] * 2, abs=1e-6)


def test_rosenbrock_on_line_matches_grid():
    def rosen(z):
        return (1 - z[0]) ** 2 + 100.0 * (z[1] - z[0] ** 2) ** 2

    p = nlp.NlpProblem(
        dimension=2,
        objective=rosen,
        eq_constraints=lambda z: np.array([z[0] + z[1] - 1.0]),
        x0=np.array([0.0, 1.0]),
    )
    sol = solve(p)
    # brute-force oracle along the constraint line
    xs = np.linspace(-2.0, 2.0, 400001)
    vals = (1 - xs) ** 2 + 100.0 * ((1 - xs) - xs ** 2) ** 2
    x_star = xs[int(np.argmin(vals))]
    assert sol.status == nlp.STATUS_CONVERGED
    assert sol.z[0] == pytest.approx(x_star, abs=1e-4)
    assert sol.objective == pytest.approx(float(vals.min()), abs=1e-4)


def test_convex_qp_to_high_accuracy():
    # min (z-a)'Q(z-a) s.t. sum z = 1; analytic optimum via KKT
    Q = np.diag([2.0, 5.0, 1.0])
    a = np.array([0.3, -0.2, 0.9])
    ones = np.ones(3)
    nu = (ones @ a - 1.0) / (ones @ np.linalg.solve(Q, ones))
    z_star = a - nu * np.linalg.solve(Q, ones)

    p = nlp.NlpProblem(
        dimension=3,
        objective=lambda z: float((z - a) @ Q @ (z - a)),
        eq_constraints=lambda z: np.array([z.sum() - 1.0]),
        x0=np.array([1.0, 0.0, 0.0]),
    )
    sol = solve(p, feas_tol=1e-10, opt_tol=1e-9, max_iter=500)
    assert sol.status == nlp.STATUS_CONVERGED
    assert np.max(np.abs(sol.z - z_star)) < 1e-8


def test_reported_violations_are_reevaluated():
    p = nlp.NlpProblem(
        dimension=2,
        objective=lambda z: float(z @ z),
        eq_constraints=lambda z: np.array([z[0] - 1.0]),
        ineq_constraints=lambda z: np.array([0.5 - z[1]]),
        x0=np.array([2.0, 2.0]),
    )
    sol = solve(p)
    ce = abs(sol.z[0] - 1.0)
    ci = max(0.0, 0.5 - sol.z[1])
    assert sol.max_eq_violation == pytest.approx(ce, abs=1e-15)
    assert sol.max_ineq_violation == pytest.approx(ci, abs=1e-15)


def test_determinism_bit_identical():
    def obj(z):
        return math.sin(z[0]) + z[0] ** 4 + (z[1] - 0.3) ** 2

    def make():
        return nlp.NlpProblem(
            dimension=2,
            objective=obj,
            ineq_constraints=lambda z: np.array([z[0] * z[1] - 0.5]),
            x0=np.array([1.3, -0.7]),
        )

    s1 = solve(make())
    s2 = solve(make())
    assert np.array_equal(s1.z, s2.z)
    assert s1.objective == s2.objective
    assert s1.iterations == s2.iterations


def test_nonfinite_objective_reported_not_raised():
    def obj(z):
        if z[0] > 0.5:
            return math.nan
        return z[0] ** 2

    p = nlp.NlpProblem(
        dimension=1, objective=obj, x0=np.array([0.9]),
        lower=np.array([-2.0]), upper=np.array([2.0]),
    )
    sol = solve(p)  # must not raise
    assert sol.status in (nlp.STATUS_CONVERGED, nlp.STATUS_MAX_ITER, nlp.STATUS_INFEASIBLE)


def test_nonfinite_at_start_is_infeasible_status():
    p = nlp.NlpProblem(
        dimension=1, objective=lambda z: math.inf, x0=np.array([0.0]),
    )
    sol = solve(p)
    assert sol.status == nlp.STATUS_INFEASIBLE


def test_unsatisfiable_equality_flagged():
    p = nlp.NlpProblem(
        dimension=1,
        objective=lambda z: z[0] ** 2,
        eq_constraints=lambda z: np.array([z[0] ** 2 + 1.0]),
        x0=np.array([0.5]),
    )
    sol = solve(p, max_iter=150)
    assert sol.status != nlp.STATUS_CONVERGED
    assert sol.max_eq_violation > 0.5


def test_feasible_start_never_made_worse():
    # start feasible; solution objective must not exceed the start
    p = nlp.NlpProblem(
        dimension=2,
        objective=lambda z: (z[0] - 3.0) ** 2 + (z[1] + 1.0) ** 2,
        ineq_constraints=lambda z: np.array([z[0] - 1.0]),  # z0 <= 1
        x0=np.array([0.5, 0.0]),
    )
    sol = solve(p)
    f0 = (0.5 - 3.0) ** 2 + 1.0
    assert sol.objective <= f0 + 1e-12
    assert sol.z[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.z[1] == pytest.approx(-1.0, abs=1e-6)


def test_initial_point_outside_box_is_clipped():
    p = nlp.NlpProblem(
        dimension=1,
        objective=lambda z: z[0] ** 2,
        lower=np.array([1.0]),
        upper=np.array([4.0]),
        x0=np.array([10.0]),
    )
    sol = solve(p)
    assert sol.z[0] == pytest.approx(1.0, abs=1e-8)
