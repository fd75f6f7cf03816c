"""Acceptance criteria, one test per criterion.

The heavy fixtures (a 20-lap professional fleet on two tracks plus four
amateur laps, all run through the optimizer pipeline) are computed once and
shared. Each test prints one PASS line with its measured numbers; run with
``pytest tests/test_acceptance.py -v -s`` to see them.
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import mkstate
from gripscore import cli, synth
from gripscore import surrogate as sg
from gripscore import telemetry as tel
from gripscore.opt_cog import optimize_cog
from gripscore.opt_tire import optimize_tire
from gripscore.pipeline import analyze_lap, state_from_lap
from gripscore.scores import PURE_BRAKE, PURE_STEER, TRAIL_BRAKE
from gripscore.synth import _brake_split_fixed_point, _axle_peaks, invert_kappa_given_alpha
from gripscore.tire_model import TireState, forces_grid, max_force_direction_sweep, tire_forces
from gripscore.vehicle_model import evaluate

WORKERS = 2

# 20 professional laps over two tracks plus 4 amateur laps on track A
FLEET = (
    [("synt-a", "D1", 100 + k) for k in range(3)]
    + [("synt-a", "D2", 200 + k) for k in range(3)]
    + [("synt-a", "D1", 110 + k) for k in range(2)]
    + [("synt-a", "D2", 210 + k) for k in range(2)]
    + [("synt-b", "D1", 300 + k) for k in range(5)]
    + [("synt-b", "D2", 400 + k) for k in range(5)]
)
AMATEURS = [("synt-a", "D8A", 800), ("synt-a", "D8A", 801),
            ("synt-a", "D9A", 900), ("synt-a", "D9A", 901)]

CRITERION_1_LAPS = 5  # first five synt-a professional laps


def _passline(num, text):
    print(f"\nACCEPTANCE {num}: PASS - {text}")


@pytest.fixture(scope="module")
def fleet(vehicle, tires):
    tracks = {name: synth.canned_track(name) for name in ("synt-a", "synt-b")}
    laps = []
    for track, driver, seed in FLEET + AMATEURS:
        laps.append(
            synth.generate_lap(tracks[track], synth.canned_driver(driver),
                               vehicle, tires, seed=seed)
        )
    return laps


@pytest.fixture(scope="module")
def analyses(fleet, vehicle, tires):
    """lap_id -> LapAnalysis over the whole fleet (the expensive fixture)."""
    out = {}
    for lap in fleet:
        out[lap.lap_id] = analyze_lap(lap, vehicle, tires, workers=WORKERS)
    return out


def _pro_laps(fleet):
    return [lap for lap in fleet if not lap.driver_id.endswith("A")]


def _am_laps(fleet):
    return [lap for lap in fleet if lap.driver_id.endswith("A")]


def test_criterion_1_score_bounds_and_convergence(fleet, analyses):
    laps = [lap for lap in fleet if lap.track_id == "synt-a"
            and not lap.driver_id.endswith("A")][:CRITERION_1_LAPS]
    assert len(laps) == CRITERION_1_LAPS
    total = 0
    attempted = 0
    converged = 0
    wall = 0.0
    for lap in laps:
        a = analyses[lap.lap_id]
        wall += a.wall_time
        total += len(a.samples)
        for s in a.samples:
            if s.flags[0] in ("excluded-low-speed", "excluded-low-acceleration"):
                continue
            attempted += 1
            if not s.included:
                continue
            converged += 1
            for v in (s.s_handling, s.s_veh_traj, s.s_tot):
                assert 0.0 < v <= 1.001, f"score {v} out of bounds in {lap.lap_id}"
    rate = converged / attempted
    assert 30000 <= total <= 55000
    assert rate >= 0.99
    assert wall <= 1800.0
    _passline(1, f"{total} samples over {len(laps)} laps, convergence {rate*100:.2f}%, "
                 f"all scores in (0, 1.001], wall {wall:.0f}s")


def test_criterion_2_opttire_oracle(vehicle, tires):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    checked = 0
    while checked < 100:
        ap = tires.front if rng.random() < 0.5 else tires.rear
        state = TireState(
            fz=float(rng.uniform(1500, 8000)),
            alpha=float(rng.uniform(-0.8, 0.8)) * vehicle.alpha_max,
            kappa=float(rng.uniform(-0.8, 0.8)) * vehicle.kappa_max,
            gamma=float(rng.uniform(-0.06, 0.06)),
        )
        fx, fy, _ = tire_forces(state, ap)
        if math.hypot(fx, fy) < 50.0:
            continue
        res = optimize_tire(state, ap, vehicle.alpha_max, vehicle.kappa_max, fx, fy)
        assert res.converged
        sweep = max_force_direction_sweep(
            state, ap, math.atan2(fy, fx), vehicle.alpha_max, vehicle.kappa_max,
            grid=901, angle_tol=0.005,
        )
        if not sweep.feasible:
            continue
        worst = max(worst, abs(res.f_rho - sweep.force) / sweep.force)
        checked += 1
    wall = time.perf_counter() - t0
    assert worst <= 0.005
    assert wall <= 120.0
    _passline(2, f"100 tire states, max deviation {worst*100:.3f}%, wall {wall:.0f}s")


def _symmetric_braking_state(vehicle, tires, rng):
    """Mirror-symmetric pure-braking sample whose start satisfies the
    brake-split equality exactly, the way generated telemetry does."""
    v = float(rng.uniform(25.0, 70.0))
    decel = float(rng.uniform(4.0, 14.0))
    m, wl, h = vehicle.m, vehicle.l_f + vehicle.l_r, vehicle.h_cog
    fz_f = m * 9.81 * vehicle.l_r / wl + vehicle.cdown_front * v * v + m * decel * h / wl
    fz_r = m * 9.81 * vehicle.l_f / wl + vehicle.cdown_rear * v * v - m * decel * h / wl
    st = mkstate(
        vehicle, v=v, fz=(fz_f / 2, fz_f / 2, max(fz_r, 800.0) / 2, max(fz_r, 800.0) / 2),
        d_x_aero=vehicle.cd_x * v * v,
    )
    t_tot = -(m * decel + vehicle.cd_x * v * v) * vehicle.r0 * 0.55
    t_f = float(_brake_split_fixed_point(np.array([t_tot]), vehicle.br_drv,
                                         vehicle.eps1, vehicle.eps2)[0])
    init0 = evaluate(st, vehicle, tires)
    kx_f = _axle_peaks(tires.front)[0]
    kx_r = _axle_peaks(tires.rear)[0]
    k_f = float(invert_kappa_given_alpha(
        np.array([t_f / 2 / st.r_dyn[0]]), np.array([init0.alpha[0]]),
        np.array([st.fz[0]]), np.array([st.gamma[0]]), tires.front, kx_f)[0])
    k_r = float(invert_kappa_given_alpha(
        np.array([(t_tot - t_f) / 2 / st.r_dyn[2]]), np.array([init0.alpha[2]]),
        np.array([st.fz[2]]), np.array([st.gamma[2]]), tires.rear, kx_r)[0])
    return st.with_variables(0.0, 0.0, (k_f, k_f, k_r, k_r))


def _braking_grid_optimum(st, vehicle, tires, n_f=241, n_r=2001, resid_tol=12.0):
    """Exhaustive symmetric-braking search honoring the brake-split equality.

    Pairs whose rear torque cannot meet the split target within the grid
    resolution are infeasible and rejected.
    """
    kf = np.linspace(-vehicle.kappa_max, 0.0, n_f)
    kr = np.linspace(-vehicle.kappa_max, 0.0, n_r)
    fxf, _ = forces_grid(st.fz[0], np.full_like(kf, st.mu_toe[0]), kf, st.gamma[0], tires.front)
    fxr, _ = forces_grid(st.fz[2], np.full_like(kr, st.mu_toe[2]), kr, st.gamma[2], tires.rear)
    t_f = 2.0 * fxf * st.r_dyn[0]
    t_r_grid = 2.0 * fxr * st.r_dyn[2]
    best = -np.inf
    for i in range(n_f):
        tf = t_f[i]
        if tf > 0:
            continue
        dist = vehicle.br_drv * (math.atan(-vehicle.eps1 * (tf - vehicle.eps2)) / math.pi + 0.5)
        if dist <= 0:
            continue
        tr_target = tf / dist - tf
        j = int(np.argmin(np.abs(t_r_grid - tr_target)))
        if abs(t_r_grid[j] - tr_target) > resid_tol:
            continue
        ax = (2.0 * fxf[i] + 2.0 * fxr[j] - st.d_x_aero) / vehicle.m
        best = max(best, abs(ax))
    return best


def test_criterion_3_optcog_reduced_grid(vehicle, tires):
    rng = np.random.default_rng(31)
    worst = 0.0
    worst_sym = 0.0
    for _ in range(50):
        st = _symmetric_braking_state(vehicle, tires, rng)
        res = optimize_cog(st, vehicle, tires)
        assert res.converged, "braking sample failed to converge"
        grid_best = _braking_grid_optimum(st, vehicle, tires)
        worst = max(worst, abs(res.a_rho - grid_best) / grid_best)
        worst_sym = max(worst_sym, abs(res.kappa[0] - res.kappa[1]),
                        abs(res.kappa[2] - res.kappa[3]))
    assert worst <= 0.005
    assert worst_sym <= 1e-4
    _passline(3, f"50 braking samples, max a deviation {worst*100:.3f}%, "
                 f"max left/right kappa asymmetry {worst_sym:.2e}")


def test_criterion_4_idempotence(fleet, vehicle, tires):
    rng = np.random.default_rng(4)
    laps = _pro_laps(fleet)[:4] + _am_laps(fleet)[:2]
    worst = 0.0
    count = 0
    while count < 100:
        lap = laps[int(rng.integers(len(laps)))]
        i = int(rng.integers(len(lap)))
        st = state_from_lap(lap, i)
        if st.v <= vehicle.v_min:
            continue
        first = optimize_cog(st, vehicle, tires,
                             br_drv=float(lap.channel("br_drv")[i]))
        if not first.converged or first.status == "excluded-low-acceleration":
            continue
        second = optimize_cog(first.optimized_state(st), vehicle, tires,
                              br_drv=float(lap.channel("br_drv")[i]))
        worst = max(worst, abs(second.a_rho - first.a_rho) / first.a_rho)
        count += 1
    assert worst < 1e-3
    _passline(4, f"100 re-optimized samples, max relative change {worst:.2e}")


def _slip_gap_medians(fleet, analyses, driver_ids):
    """Median |slip_in| - |slip_ot| per wheel, braking states for kappa and
    high-lateral samples for alpha."""
    k_gaps = [[] for _ in range(4)]
    a_gaps = [[] for _ in range(4)]
    for lap in fleet:
        if lap.driver_id not in driver_ids or lap.track_id != "synt-a":
            continue
        ay = lap.channel("ay_cog")
        for s in analyses[lap.lap_id].samples:
            if not s.included:
                continue
            for w in range(4):
                if s.control_state in (PURE_BRAKE, TRAIL_BRAKE):
                    k_gaps[w].append(abs(s.kappa_in[w]) - abs(s.kappa_ot[w]))
                if abs(ay[s.index]) >= 8.0:
                    a_gaps[w].append(abs(s.alpha_in[w]) - abs(s.alpha_ot[w]))
    return ([float(np.median(g)) for g in k_gaps], [float(np.median(g)) for g in a_gaps])


def test_criterion_5_slip_margin_gap(fleet, analyses):
    pro_k, pro_a = _slip_gap_medians(fleet, analyses, {"D1", "D2"})
    am_k, am_a = _slip_gap_medians(fleet, analyses, {"D8A", "D9A"})
    for w in range(4):
        assert abs(am_k[w]) > abs(pro_k[w]), f"kappa gap wheel {w}"
        assert abs(am_a[w]) > abs(pro_a[w]), f"alpha gap wheel {w}"
    _passline(5, "amateur slip-gap medians farther from zero on all four wheels "
                 f"(kappa pro {np.round(pro_k,4).tolist()} vs am {np.round(am_k,4).tolist()})")


def test_criterion_6_control_state_skew(fleet, analyses):
    for driver in ("D1", "D2", "D8A", "D9A"):
        brake = []
        steer = []
        for lap in fleet:
            if lap.driver_id != driver:
                continue
            for s in analyses[lap.lap_id].samples:
                if not s.included:
                    continue
                if s.control_state == PURE_BRAKE:
                    brake.append(s.s_handling)
                elif s.control_state == PURE_STEER:
                    steer.append(s.s_handling)
        assert len(brake) > 30 and len(steer) > 30
        assert np.median(brake) < np.median(steer), driver
    _passline(6, "median handling score under PureBrake below PureSteer for every driver")


@pytest.fixture(scope="module")
def surrogate_model(fleet, analyses, vehicle, tires):
    """M2 surrogate trained on the professional fleet, track synt-b held out."""
    channels = sg.feature_channels("m2")
    config = sg.SurrogateConfig(feature_set="m2")
    pro = _pro_laps(fleet)
    split = sg.DatasetSplit.of(pro, seed=7, holdout_track="synt-b")
    stats = tel.fit_normalization(split.train, channels)

    def windows_of(laps):
        wins = []
        for lap in laps:
            samples = analyses[lap.lap_id].samples
            y = np.zeros((len(lap), 3))
            w = np.zeros(len(lap))
            for s in samples:
                if s.included:
                    y[s.index] = (s.s_handling, s.s_veh_traj, s.s_tot)
                    w[s.index] = 1.0
            norm = tel.apply_normalization(lap, stats)
            wins.extend(sg.make_windows(norm, y, w, channels, window=config.window))
        return wins

    t0 = time.perf_counter()
    model = sg.train(windows_of(split.train), windows_of(split.validation),
                     config, seed=7, stats=stats, channels=channels)
    wall = time.perf_counter() - t0
    return model, split, windows_of, wall


def _lap_rmse(model, lap, analysis, per_score=False):
    norm = tel.apply_normalization(lap, model.stats)
    pred = sg.predict(model, norm)
    n = len(pred)
    y = np.zeros((len(lap), 3))
    w = np.zeros(len(lap))
    for s in analysis.samples:
        if s.included:
            y[s.index] = (s.s_handling, s.s_veh_traj, s.s_tot)
            w[s.index] = 1.0
    if per_score:
        return [sg.rmse(y[:n, k], pred[:, k], w[:n]) for k in range(3)]
    return sg.rmse(y[:n], pred, w[:n])


def test_criterion_7_surrogate_heldout_track(surrogate_model, fleet, analyses):
    model, split, _, wall = surrogate_model
    held = [lap for lap in split.test if lap.track_id == "synt-b"]
    assert held, "held-out track missing from test partition"
    per_score = np.zeros(3)
    counts = 0
    for lap in held:
        per_score += np.array(_lap_rmse(model, lap, analyses[lap.lap_id], per_score=True)) ** 2
        counts += 1
    rms = np.sqrt(per_score / counts)
    assert (rms <= 0.05).all(), rms
    assert wall <= 3600.0
    _passline(7, f"held-out-track RMSE per score {np.round(rms, 4).tolist()}, "
                 f"training wall {wall:.0f}s")


def test_criterion_8_surrogate_amateur_robustness(surrogate_model, fleet, analyses):
    model, split, _, _ = surrogate_model
    seen = [lap for lap in split.validation + split.test if lap.track_id == "synt-a"]
    if not seen:
        seen = split.validation
    seen_rmse = float(np.mean([_lap_rmse(model, lap, analyses[lap.lap_id]) for lap in seen]))
    am = _am_laps(fleet)
    am_rmse = float(np.mean([_lap_rmse(model, lap, analyses[lap.lap_id]) for lap in am]))
    assert am_rmse <= 2.0 * seen_rmse
    assert am_rmse <= 0.08
    _passline(8, f"amateur RMSE {am_rmse:.4f} vs seen {seen_rmse:.4f} "
                 f"(ratio {am_rmse/seen_rmse:.2f})")


def test_criterion_9_speedup(surrogate_model, fleet, analyses):
    model, _, _, _ = surrogate_model
    laps = [lap for lap in fleet if lap.track_id == "synt-a"][:6]
    optimizer_wall = sum(analyses[lap.lap_id].wall_time for lap in laps)
    t0 = time.perf_counter()
    for lap in laps:
        norm = tel.apply_normalization(lap, model.stats)
        sg.predict(model, norm)
    surrogate_wall = time.perf_counter() - t0
    ratio = optimizer_wall / surrogate_wall
    assert ratio >= 100.0
    _passline(9, f"surrogate {surrogate_wall:.2f}s vs optimizer {optimizer_wall:.0f}s "
                 f"on {len(laps)} laps: {ratio:.0f}x")


def test_criterion_10_gradient_check():
    cfg = sg.SurrogateConfig(window=5, hidden_lstm=4, hidden_dense=3, outputs=3,
                             dropout=0.0, recurrent_dropout=0.0)
    rng = np.random.default_rng(10)
    X = rng.standard_normal((3, 5, 7))
    Y = rng.standard_normal((3, 5, 3))
    Wt = np.ones((3, 5))
    params = sg.init_params(cfg, 7, seed=3)
    _, grads = sg.loss_and_grads(params, X, Y, Wt, cfg, rng=None)
    worst = 0.0
    for k, p in params.items():
        fd = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            h = 1e-5 * max(1.0, abs(p[idx]))
            old = p[idx]
            p[idx] = old + h
            lp, _ = sg.loss_and_grads(params, X, Y, Wt, cfg, rng=None)
            p[idx] = old - h
            lm, _ = sg.loss_and_grads(params, X, Y, Wt, cfg, rng=None)
            p[idx] = old
            fd[idx] = (lp - lm) / (2 * h)
            it.iternext()
        rel = np.linalg.norm(fd - grads[k]) / max(np.linalg.norm(fd),
                                                  np.linalg.norm(grads[k]), 1e-300)
        worst = max(worst, rel)
    assert worst < 1e-5
    _passline(10, f"BPTT vs central differences, worst relative error {worst:.2e}")


def test_criterion_11_determinism(tmp_path, fleet):
    lap = next(lap for lap in fleet if lap.track_id == "synt-b")
    lap_dir = tmp_path / "laps"
    lap_dir.mkdir()
    tel.save_lap(lap, lap_dir / "lap.csv")

    analyze_outs = []
    for name in ("a1", "a2"):
        out = tmp_path / name
        rc = cli.main(["analyze", "--input", str(lap_dir), "--out", str(out),
                       "--seed", "11", "--workers", str(WORKERS)])
        assert rc == cli.EXIT_OK
        analyze_outs.append(out)
    for fname in ("results.csv", "summary.json"):
        assert (analyze_outs[0] / fname).read_bytes() == (analyze_outs[1] / fname).read_bytes()

    train_outs = []
    for name in ("t1", "t2"):
        out = tmp_path / name
        rc = cli.main([
            "train", "--input", str(lap_dir), "--results",
            str(analyze_outs[0] / "results.csv"), "--out", str(out),
            "--seed", "11", "--feature-set", "m3", "--epochs", "3",
        ])
        assert rc == cli.EXIT_OK
        train_outs.append(out)
    for fname in ("surrogate.npz", "metrics.json"):
        assert (train_outs[0] / fname).read_bytes() == (train_outs[1] / fname).read_bytes()
    _passline(11, "repeated cmd_analyze and cmd_train outputs byte-identical")
