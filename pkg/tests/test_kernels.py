"""Compiled and pure kernel backends must agree bit for bit."""

import numpy as np
import pytest

from gripscore.kernels import pure

_fast = pytest.importorskip("gripscore.kernels._fast")


@pytest.fixture(scope="module")
def problem_packs(vehicle, tires):
    """Realistic packs built from a synthetic lap sample."""
    from gripscore import synth
    from gripscore.pipeline import state_from_lap
    from gripscore.vehicle_model import evaluate
    from gripscore.opt_cog import build_pack

    track = synth.canned_track("synt-b")
    lap = synth.generate_lap(track, synth.canned_driver("D1"), vehicle, tires, seed=3)
    packs = []
    for i in (400, 1500, 3200, 5000):
        st = state_from_lap(lap, i)
        init = evaluate(st, vehicle, tires)
        packs.append((st.packed(), build_pack(st, vehicle, tires, init, vehicle.br_drv)))
    return packs


def test_tire_forces_bitwise(tires):
    tp = tires.packed()
    rng = np.random.default_rng(0)
    for _ in range(500):
        args = (
            rng.uniform(-100, 9000), rng.uniform(-0.4, 0.4),
            rng.uniform(-0.25, 0.25), rng.uniform(-0.1, 0.1),
        )
        off = 17 * int(rng.random() < 0.5)
        assert pure.tire_forces(*args, tp, off) == _fast.tire_forces(*args, tp, off)


def test_vehicle_eval_bitwise(vehicle, tires, problem_packs):
    vp = vehicle.packed()
    tp = tires.packed()
    for state, _ in problem_packs:
        out_p = [0.0] * pure.N_VEH_OUT
        out_f = np.zeros(pure.N_VEH_OUT)
        pure.vehicle_eval(state, vp, tp, out_p)
        _fast.vehicle_eval(state, vp, tp, out_f)
        assert out_f.tolist() == out_p


def test_fused_evals_bitwise(problem_packs):
    rng = np.random.default_rng(1)
    for _, pack in problem_packs:
        for _ in range(40):
            z = np.array([
                rng.uniform(-2, 2), rng.uniform(-0.1, 0.1),
                *rng.uniform(-0.15, 0.15, 4),
            ])
            out_p = [0.0] * pure.N_OC_OUT
            out_f = np.zeros(pure.N_OC_OUT)
            pure.optcog_eval(z, pack, out_p)
            _fast.optcog_eval(z, pack, out_f)
            assert out_f.tolist() == out_p


def test_merit_and_gradient_bitwise(problem_packs, vehicle):
    rng = np.random.default_rng(2)
    lo = np.array([-vehicle.delta_max, -vehicle.beta_max, *(-vehicle.kappa_max,) * 4])
    hi = -lo
    for _, pack in problem_packs:
        lam = rng.standard_normal(5)
        mu = np.abs(rng.standard_normal(11))
        z = np.array([0.2, -0.01, 0.01, 0.01, -0.02, -0.02])
        for rho in (10.0, 1e4):
            m_p = pure.optcog_merit(z, pack, lam, mu, rho)
            m_f = _fast.optcog_merit(z, pack, lam, mu, rho)
            assert m_p == m_f
            g_p = [0.0] * 6
            g_f = np.zeros(6)
            r_p = pure.optcog_merit_grad(z, pack, lam, mu, rho, lo, hi, 1e-6, g_p)
            r_f = _fast.optcog_merit_grad(z, pack, lam, mu, rho, lo, hi, 1e-6, g_f)
            assert r_p == r_f
            assert g_f.tolist() == g_p


def test_opttire_kernels_bitwise(tires):
    rng = np.random.default_rng(3)
    for _ in range(60):
        ap = tires.front if rng.random() < 0.5 else tires.rear
        pack = np.concatenate([
            [rng.uniform(500, 8000), rng.uniform(-0.08, 0.08),
             0.6, 0.8, rng.uniform(1000, 9000)],
            ap.packed(),
        ])
        z = np.array([rng.uniform(-0.2, 0.2), rng.uniform(-0.15, 0.15)])
        out_p = [0.0] * pure.N_OT_OUT
        out_f = np.zeros(pure.N_OT_OUT)
        pure.opttire_eval(z, pack, out_p)
        _fast.opttire_eval(z, pack, out_f)
        assert out_f.tolist() == out_p
        lam = np.array([0.4])
        mu = np.array([0.1])
        lo = np.array([-0.21, -0.15])
        hi = -lo
        g_p = [0.0, 0.0]
        g_f = np.zeros(2)
        pure.opttire_merit_grad(z, pack, lam, mu, 1e3, lo, hi, 1e-6, g_p)
        _fast.opttire_merit_grad(z, pack, lam, mu, 1e3, lo, hi, 1e-6, g_f)
        assert g_f.tolist() == g_p


def test_backend_selection_env(tmp_path):
    import subprocess, sys

    code = "import gripscore; print(gripscore.KERNEL_BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"PATH": "/usr/bin:/bin", "GRIPSCORE_PURE_KERNELS": "1"})
    assert out.stdout.strip() == "pure"
