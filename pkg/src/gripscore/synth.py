"""Synthetic telemetry generation.

Generates quasi-steady-state laps with controllable driver skill, standing in
for proprietary data in tests and demos. Per track station the speed follows
a driver-scaled grip/power envelope (forward-backward friction-ellipse pass);
per emitted sample the tire slips are back-solved through the tire model so
that the resulting state is feasible for the optimizers: torque splits follow
the brake balance exactly, the engine cap holds, and slips stay inside their
bounds. All channels are produced by evaluating the final states through the
vehicle model, so generated laps are self-consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .tire_model import AxleTireParams, TireParams, pure_slip_peak
from .telemetry import LapTelemetry, WHEELS
from .vehicle_model import VehicleParams

G = 9.81


class InfeasibleTrackError(ValueError):
    """A segment demands more than the scaled grip allows at the speed floor."""


@dataclass(frozen=True)
class TrackSegment:
    length: float
    curvature: float  # 1/m, positive = left turn

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("segment length must be > 0")


@dataclass(frozen=True)
class TrackSpec:
    track_id: str
    segments: tuple
    closed: bool = True

    def __post_init__(self):
        if self.closed:
            turn = sum(s.length * s.curvature for s in self.segments)
            k = turn / (2.0 * math.pi)
            if abs(k - round(k)) > 1e-6:
                raise ValueError(
                    f"closed track heading change is {turn:.6f} rad, not a multiple of 2*pi"
                )

    @property
    def length(self) -> float:
        return sum(s.length for s in self.segments)


@dataclass(frozen=True)
class DriverSpec:
    """Driver skill model: grip exploitation per control state plus margins.

    Exploitation factors scale the acceleration envelope the driver uses.
    Force margins cap the per-wheel force demand as a fraction of that tire's
    peak, which sets how far below the optimal slip the driver operates.
    """

    driver_id: str
    exploit_brake: float = 0.9
    exploit_corner: float = 0.95
    exploit_throttle: float = 0.95
    margin_front: float = 0.96
    margin_rear: float = 0.94
    noise: float = 0.01
    smoothness: float = 0.5  # seconds of input smoothing

    def __post_init__(self):
        for name in ("exploit_brake", "exploit_corner", "exploit_throttle"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1]")


def straight(length: float) -> TrackSegment:
    return TrackSegment(length=length, curvature=0.0)


def arc(radius: float, degrees: float) -> TrackSegment:
    """Constant-radius arc; positive degrees turn left."""
    ang = math.radians(degrees)
    return TrackSegment(length=abs(ang) * radius, curvature=math.copysign(1.0 / radius, ang))


def canned_track(name: str) -> TrackSpec:
    """Two shipped circuits: 'synt-a' (~3.9 km) and 'synt-b' (~2.6 km)."""
    if name == "synt-a":
        segs = [
            straight(500), arc(140, -75), straight(200), arc(70, 95), straight(150),
            arc(45, -80), straight(330), arc(150, -110), straight(120), arc(60, 70),
            straight(70), arc(38, 150), straight(430), arc(95, -90), straight(170),
            arc(55, 60), straight(250), arc(110, -100), straight(200), arc(80, -80),
        ]
    elif name == "synt-b":
        segs = [
            straight(420), arc(110, -95), straight(200), arc(52, 120), straight(280),
            arc(85, -70), straight(130), arc(40, 115), straight(340), arc(130, -120),
            straight(180), arc(65, 90),
        ]
    else:
        raise ValueError(f"unknown canned track {name!r}")
    turn = sum(s.length * s.curvature for s in segs)
    # close the loop with one final right-hand sweeper
    rest = -2.0 * math.pi - turn
    segs.append(arc(150.0, math.degrees(rest)))
    segs.append(straight(60))
    return TrackSpec(track_id=name, segments=tuple(segs))


def load_track_spec(path) -> TrackSpec:
    """Track config file: ``track_id = ...``, ``closed = true|false`` and one
    ``segment = straight <m>`` or ``segment = arc <radius_m> <degrees>`` line
    per segment, in driving order."""
    track_id = None
    closed = True
    segments = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (p.strip() for p in line.split("=", 1))
            if key == "track_id":
                track_id = val
            elif key == "closed":
                closed = val.lower() in ("1", "true", "yes")
            elif key == "segment":
                parts = val.split()
                try:
                    if parts[0] == "straight" and len(parts) == 2:
                        segments.append(straight(float(parts[1])))
                    elif parts[0] == "arc" and len(parts) == 3:
                        segments.append(arc(float(parts[1]), float(parts[2])))
                    else:
                        raise ValueError
                except (ValueError, IndexError):
                    raise ValueError(
                        f"{path}:{lineno}: bad segment {val!r} "
                        "(use 'straight <m>' or 'arc <radius_m> <deg>')"
                    ) from None
            else:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    if track_id is None or not segments:
        raise ValueError(f"{path}: need a track_id and at least one segment")
    return TrackSpec(track_id=track_id, segments=tuple(segments), closed=closed)


def load_driver_spec(path) -> DriverSpec:
    """Driver config file: one ``key = value`` per DriverSpec field."""
    fields = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (p.strip() for p in line.split("=", 1))
            if key == "driver_id":
                fields[key] = val
            elif key in ("exploit_brake", "exploit_corner", "exploit_throttle",
                         "margin_front", "margin_rear", "noise", "smoothness"):
                try:
                    fields[key] = float(val)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: non-numeric {key}") from None
            else:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    if "driver_id" not in fields:
        raise ValueError(f"{path}: missing driver_id")
    return DriverSpec(**fields)


def canned_driver(name: str) -> DriverSpec:
    """Four shipped drivers: two professionals, two amateurs."""
    table = {
        "D1": DriverSpec("D1", exploit_brake=0.90, exploit_corner=0.96,
                         exploit_throttle=0.95, margin_front=0.975, margin_rear=0.955,
                         noise=0.008, smoothness=0.45),
        "D2": DriverSpec("D2", exploit_brake=0.87, exploit_corner=0.95,
                         exploit_throttle=0.95, margin_front=0.965, margin_rear=0.945,
                         noise=0.012, smoothness=0.5),
        "D8A": DriverSpec("D8A", exploit_brake=0.66, exploit_corner=0.74,
                          exploit_throttle=0.80, margin_front=0.86, margin_rear=0.82,
                          noise=0.03, smoothness=0.8),
        "D9A": DriverSpec("D9A", exploit_brake=0.70, exploit_corner=0.77,
                          exploit_throttle=0.82, margin_front=0.88, margin_rear=0.84,
                          noise=0.025, smoothness=0.7),
    }
    if name not in table:
        raise ValueError(f"unknown canned driver {name!r}")
    return table[name]


# ---------------------------------------------------------------------------
# tire inversion helpers (vectorized over samples)

def _pure_slip_fraction(s, b, c, e):
    bs = b * s
    return np.sin(c * np.arctan(bs - e * (bs - np.arctan(bs))))


def _invert_pure_slip(frac, s_peak, b, c, e):
    """Slip on the below-peak branch for a force fraction in [0, 1)."""
    frac = np.clip(np.asarray(frac, dtype=float), 0.0, None)
    lo = np.zeros_like(frac)
    hi = np.full_like(frac, s_peak)
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        too_low = _pure_slip_fraction(mid, b, c, e) < frac
        lo = np.where(too_low, mid, lo)
        hi = np.where(too_low, hi, mid)
    return 0.5 * (lo + hi)


def _axle_peaks(ap: AxleTireParams):
    sx, _ = pure_slip_peak(ap, ap.fz0, lateral=False, step=2e-4)
    sy, _ = pure_slip_peak(ap, ap.fz0, lateral=True, step=2e-4)
    return sx, sy


def _mu(ap: AxleTireParams, fz, lateral: bool):
    d = ap.d_y if lateral else ap.d_x
    return d * (1.0 + ap.d_load * (fz - ap.fz0) / ap.fz0)


def invert_wheel_slips(fx_t, fy_t, fz, gamma, ap: AxleTireParams, s_peaks, rounds=8):
    """Solve (alpha, kappa) with combined weighting for below-peak targets."""
    kx_peak, ky_peak = s_peaks
    fz = np.maximum(fz, 1.0)
    dx = _mu(ap, fz, lateral=False) * fz
    dy = _mu(ap, fz, lateral=True) * fz
    kappa = np.zeros_like(fz)
    alpha_y = np.zeros_like(fz)
    for _ in range(rounds):
        gx = np.cos(ap.c_wx * np.arctan(ap.w_bx * alpha_y))
        frac_x = np.clip(np.abs(fx_t) / (dx * gx), 0.0, 0.999)
        kappa = np.sign(fx_t) * _invert_pure_slip(frac_x, kx_peak, ap.b_x, ap.c_x, ap.e_x)
        gy = np.cos(ap.c_wy * np.arctan(ap.w_by * kappa))
        frac_y = np.clip(np.abs(fy_t) / (dy * gy), 0.0, 0.999)
        alpha_y = np.sign(fy_t) * _invert_pure_slip(frac_y, ky_peak, ap.b_y, ap.c_y, ap.e_y)
    alpha = alpha_y - ap.c_gamma * gamma
    return alpha, kappa


def invert_kappa_given_alpha(fx_t, alpha, fz, gamma, ap: AxleTireParams, kx_peak):
    """Exact kappa for a longitudinal force target at a known slip angle."""
    fz = np.maximum(fz, 1.0)
    dx = _mu(ap, fz, lateral=False) * fz
    alpha_y = alpha + ap.c_gamma * gamma
    gx = np.cos(ap.c_wx * np.arctan(ap.w_bx * alpha_y))
    frac = np.clip(np.abs(fx_t) / (dx * gx), 0.0, 0.999)
    return np.sign(fx_t) * _invert_pure_slip(frac, kx_peak, ap.b_x, ap.c_x, ap.e_x)


def _smooth(x: np.ndarray, n: int, wrap: bool) -> np.ndarray:
    if n <= 1:
        return x
    kernel = np.ones(n) / n
    if wrap:
        pad = np.concatenate([x[-n:], x, x[:n]])
    else:
        pad = np.concatenate([np.full(n, x[0]), x, np.full(n, x[-1])])
    return np.convolve(pad, kernel, mode="same")[n:-n]


# ---------------------------------------------------------------------------

def _brake_split_fixed_point(t_tot, br_drv, eps1, eps2):
    """Front torque satisfying the smoothed brake-distribution equality."""
    t_f = br_drv * t_tot
    for _ in range(60):
        dist = br_drv * (np.arctan(-eps1 * (t_f - eps2)) / math.pi + 0.5)
        t_f = t_tot * dist
    return t_f


def generate_lap(
    track: TrackSpec,
    driver: DriverSpec,
    vehicle: VehicleParams,
    tires: TireParams,
    seed: int,
    lap_id: Optional[str] = None,
) -> LapTelemetry:
    """Generate one lap of telemetry at 100 Hz. Deterministic for a seed."""
    rng = np.random.default_rng(seed)
    rate = 100.0
    ds = 2.0

    # station grid and smoothed curvature
    seg_len = np.array([s.length for s in track.segments])
    seg_curv = np.array([s.curvature for s in track.segments])
    bounds = np.concatenate([[0.0], np.cumsum(seg_len)])
    s_grid = np.arange(0.0, bounds[-1], ds)
    seg_idx = np.searchsorted(bounds, s_grid, side="right") - 1
    curv = seg_curv[seg_idx]
    curv = _smooth(curv, int(30 / ds), wrap=track.closed)

    m = vehicle.m
    lf, lr = vehicle.l_f, vehicle.l_r
    wl = lf + lr
    mu_f = tires.front.d_y
    mu_r = tires.rear.d_y

    def axle_loads(v, ax, ay):
        """Static + aero + longitudinal transfer loads per axle."""
        fz_f = m * G * lr / wl + vehicle.cdown_front * v * v - m * ax * vehicle.h_cog / wl
        fz_r = m * G * lf / wl + vehicle.cdown_rear * v * v + m * ax * vehicle.h_cog / wl
        return np.maximum(fz_f, 400.0), np.maximum(fz_r, 400.0)

    def wheel_loads(v, ax, ay):
        fz_f, fz_r = axle_loads(v, ax, ay)
        dlat_f = m * ay * vehicle.h_cog / (2.0 * vehicle.b_fl) * (lr / wl)
        dlat_r = m * ay * vehicle.h_cog / (2.0 * vehicle.b_rl) * (lf / wl)
        return (
            np.maximum(fz_f / 2 - dlat_f / 2, 200.0),
            np.maximum(fz_f / 2 + dlat_f / 2, 200.0),
            np.maximum(fz_r / 2 - dlat_r / 2, 200.0),
            np.maximum(fz_r / 2 + dlat_r / 2, 200.0),
        )

    # combined-slip weighting of Fx at the setup's standing slip angles
    def gx_setup(ap: AxleTireParams, toe, camber):
        a_y = abs(toe + ap.c_gamma * camber)
        return math.cos(ap.c_wx * math.atan(ap.w_bx * a_y))

    gx_f = gx_setup(tires.front, vehicle.toe_front, vehicle.camber_front)
    gx_r = gx_setup(tires.rear, vehicle.toe_rear, vehicle.camber_rear)

    def axle_peak_x(front, fzl, fzr, margined):
        ap = tires.front if front else tires.rear
        gx = gx_f if front else gx_r
        margin = (driver.margin_front if front else driver.margin_rear) if margined else 1.0
        return margin * gx * (_mu(ap, fzl, False) * fzl + _mu(ap, fzr, False) * fzr)

    def lateral_cap(v, ay_guess=None):
        """Yaw-balanced lateral acceleration limit at self-consistent loads."""
        ay = np.zeros_like(np.asarray(v, dtype=float)) if ay_guess is None else ay_guess
        cap = None
        for _ in range(3):
            fzs = wheel_loads(v, 0.0, ay)
            peak_f = _mu(tires.front, fzs[0], True) * fzs[0] + _mu(tires.front, fzs[1], True) * fzs[1]
            peak_r = _mu(tires.rear, fzs[2], True) * fzs[2] + _mu(tires.rear, fzs[3], True) * fzs[3]
            cap = np.minimum(peak_f * wl / (m * lr), peak_r * wl / (m * lf))
            ay = driver.exploit_corner * cap
        return cap

    def brake_cap(v, margined=True):
        """Deceleration limit under the driver's brake balance, with loads
        transferred consistently with the achieved deceleration."""
        v = np.asarray(v, dtype=float)
        ax = np.full_like(v, -12.0)
        cap = None
        for _ in range(4):
            fzs = wheel_loads(v, ax, 0.0)
            p_f = axle_peak_x(True, fzs[0], fzs[1], margined)
            p_r = axle_peak_x(False, fzs[2], fzs[3], margined)
            f_tot = np.minimum(p_f / vehicle.br_drv, p_r / (1.0 - vehicle.br_drv))
            cap = (f_tot + vehicle.cd_x * v * v) / m
            ax = -driver.exploit_brake * cap
        return cap

    def drive_cap(v, ay_frac):
        v = np.asarray(v, dtype=float)
        fzs = wheel_loads(v, 0.5 * G, 0.0)
        peak_r = axle_peak_x(False, fzs[2], fzs[3], margined=True)
        grip = driver.exploit_throttle * peak_r * np.sqrt(np.maximum(0.0, 1.0 - ay_frac ** 2))
        i_tot = np.array([vehicle.i_tot_for_speed(x) for x in np.atleast_1d(v)])
        engine = 0.998 * vehicle.t_engine_max * i_tot / vehicle.r0
        force = np.minimum(grip, engine) - vehicle.cd_x * v * v
        return force / m

    # per-segment feasibility on the raw (unsmoothed) curvature
    cap_floor = driver.exploit_corner * float(lateral_cap(np.array([vehicle.v_min]))[0])
    for si, seg in enumerate(track.segments):
        if abs(seg.curvature) > 1e-9 and math.sqrt(cap_floor / abs(seg.curvature)) < vehicle.v_min:
            raise InfeasibleTrackError(
                f"segment {si} of {track.track_id} (curvature {seg.curvature:.4f} 1/m) "
                f"demands less than v_min at scaled grip"
            )

    # speed limit per station from scaled lateral grip (two downforce passes)
    v_lim = np.full_like(s_grid, 95.0)
    for _ in range(3):
        cap = driver.exploit_corner * lateral_cap(v_lim)
        with np.errstate(divide="ignore"):
            v_c = np.sqrt(np.where(np.abs(curv) > 1e-9, cap / np.maximum(np.abs(curv), 1e-9), np.inf))
        v_lim = np.minimum(v_c, 95.0)

    # forward-backward friction-ellipse passes around the closed loop
    n_s = len(s_grid)
    lat_used = np.maximum(driver.exploit_corner * lateral_cap(v_lim), 1e-9)
    brk_used = driver.exploit_brake * brake_cap(v_lim)
    v = v_lim.copy()
    for _ in range(3):
        for i in range(n_s):  # forward: traction
            j = (i + 1) % n_s
            ay_frac = min(abs(v[i] ** 2 * curv[i]) / lat_used[i], 1.0)
            acc = max(float(drive_cap(v[i], ay_frac)[0]), -5.0)
            v_next = math.sqrt(max(v[i] ** 2 + 2.0 * acc * ds, vehicle.v_min ** 2))
            v[j] = min(v_lim[j], v_next)
        for i in range(n_s - 1, -1, -1):  # backward: braking
            j = (i + 1) % n_s
            ay_frac = min(abs(v[j] ** 2 * curv[j]) / lat_used[j], 1.0)
            dec = brk_used[j] * math.sqrt(max(0.0, 1.0 - ay_frac ** 2))
            v_prev = math.sqrt(v[j] ** 2 + 2.0 * max(dec, 0.05) * ds)
            v[i] = min(v[i], v_prev)
        lat_used = np.maximum(driver.exploit_corner * lateral_cap(v), 1e-9)
        brk_used = driver.exploit_brake * brake_cap(v)

    # time-resample to the fixed rate
    seg_t = ds / v
    t_cum = np.concatenate([[0.0], np.cumsum(seg_t)])
    lap_time = t_cum[-1]
    n = int(math.floor(lap_time * rate))
    t = np.arange(n) / rate
    s_t = np.interp(t, t_cum, np.concatenate([s_grid, [bounds[-1]]]))
    v_t = np.interp(s_t, s_grid, v, period=bounds[-1] if track.closed else None)
    curv_t = np.interp(s_t, s_grid, curv, period=bounds[-1] if track.closed else None)

    # smooth driver inputs and add seeded noise on the used acceleration
    w = max(1, int(driver.smoothness * rate * 0.5))
    v_t = _smooth(v_t, w, wrap=False)
    noise = _smooth(rng.standard_normal(n), int(rate * 0.7), wrap=False) * driver.noise
    v_t = v_t * (1.0 + 0.3 * noise)

    ax_t = np.gradient(v_t, 1.0 / rate)
    ay_t = v_t ** 2 * curv_t
    psi_dot_t = v_t * curv_t
    psidd_t = np.gradient(psi_dot_t, 1.0 / rate)

    # loads per wheel
    fz_w = np.stack(wheel_loads(v_t, ax_t, ay_t))

    # demanded axle forces
    drag = vehicle.cd_x * v_t ** 2
    fx_total = m * ax_t + drag
    i_tot_t = np.array([vehicle.i_tot_for_speed(x) for x in v_t])
    engine_cap_force = 0.998 * vehicle.t_engine_max * i_tot_t / vehicle.r0
    braking = fx_total < 0.0

    mu_toe = np.array([vehicle.toe_front, -vehicle.toe_front, vehicle.toe_rear, -vehicle.toe_rear])
    gamma_w = np.array([vehicle.camber_front, -vehicle.camber_front,
                        vehicle.camber_rear, -vehicle.camber_rear])
    s_peaks_f = _axle_peaks(tires.front)
    s_peaks_r = _axle_peaks(tires.rear)

    share = np.stack([
        fz_w[0] / (fz_w[0] + fz_w[1]),
        fz_w[1] / (fz_w[0] + fz_w[1]),
        fz_w[2] / (fz_w[2] + fz_w[3]),
        fz_w[3] / (fz_w[2] + fz_w[3]),
    ])
    r_dyn_w = [None] * 4
    for wi in range(4):
        ap = tires.front if wi < 2 else tires.rear
        r_dyn_w[wi] = vehicle.r0 * (1.0 - vehicle.r_load_factor * fz_w[wi] / ap.fz0)

    def split_torques(t_tot):
        """Axle torque split: brake-balance fixed point while braking, rear
        only while driving, engine-capped."""
        t_f = np.where(
            braking,
            _brake_split_fixed_point(t_tot, vehicle.br_drv, vehicle.eps1, vehicle.eps2),
            0.0,
        )
        t_r = np.clip(t_tot - t_f, None, engine_cap_force * vehicle.r0)
        return t_f, t_r

    def wheel_fx_targets(t_f, t_r):
        return [
            (t_f if wi < 2 else t_r) * share[wi] / r_dyn_w[wi] for wi in range(4)
        ]

    t_tot_dem = fx_total * vehicle.r0  # wheel torque total at nominal radius
    t_f_dem, t_r_dem = split_torques(t_tot_dem)
    fx_t_w = wheel_fx_targets(t_f_dem, t_r_dem)

    # lateral force split from lateral+yaw balance, margin-clipped per wheel
    fy_total = m * ay_t
    fy_f = (fy_total * lr + vehicle.j_zz * psidd_t) / wl
    fy_r = fy_total - fy_f
    fy_t_w = [None] * 4
    for wi in range(4):
        front = wi < 2
        ap = tires.front if front else tires.rear
        margin = driver.margin_front if front else driver.margin_rear
        peak_y = _mu(ap, fz_w[wi], True) * fz_w[wi]
        fy_t_w[wi] = np.clip((fy_f if front else fy_r) * share[wi], -margin * peak_y, margin * peak_y)

    # first inversion pass: per-wheel slips for the targets
    alpha_w = [None] * 4
    for wi in range(4):
        front = wi < 2
        ap = tires.front if front else tires.rear
        speaks = s_peaks_f if front else s_peaks_r
        alpha_w[wi], _ = invert_wheel_slips(
            fx_t_w[wi], fy_t_w[wi], fz_w[wi], gamma_w[wi], ap, speaks
        )

    # body sideslip from the rear-axle slip target, steering from the front
    alpha_f_t = 0.5 * (alpha_w[0] + alpha_w[1]) - 0.5 * (mu_toe[0] + mu_toe[1])
    alpha_r_t = 0.5 * (alpha_w[2] + alpha_w[3]) - 0.5 * (mu_toe[2] + mu_toe[3])
    beta = np.zeros(n)
    for _ in range(3):
        vx = v_t * np.cos(beta)
        beta = np.arctan((psi_dot_t * lr + vx * np.tan(-alpha_r_t)) / np.maximum(vx, 1.0))
    vx = v_t * np.cos(beta)
    vy = v_t * np.sin(beta)
    delta_road = alpha_f_t + np.arctan2(vy + psi_dot_t * lf, vx)
    delta = delta_road * vehicle.steering_ratio

    # exact per-wheel kinematic slip angles for the final state
    b_half = np.array(vehicle.half_tracks)
    alpha_kin = [None] * 4
    xs = (lf, lf, -lr, -lr)
    for wi in range(4):
        y_w = b_half[wi] if wi % 2 == 0 else -b_half[wi]
        d_w = mu_toe[wi] + (delta_road if wi < 2 else 0.0)
        alpha_kin[wi] = d_w - np.arctan2(vy + psi_dot_t * xs[wi], vx - psi_dot_t * y_w)

    # rescale the braking demand so no wheel exceeds its margined peak at the
    # true slip angle; scaling the torque total preserves the brake split
    scale = np.ones(n)
    for wi in range(4):
        front = wi < 2
        ap = tires.front if front else tires.rear
        margin = driver.margin_front if front else driver.margin_rear
        alpha_y = alpha_kin[wi] + ap.c_gamma * gamma_w[wi]
        gx = np.cos(ap.c_wx * np.arctan(ap.w_bx * alpha_y))
        allowed = 0.995 * margin * _mu(ap, fz_w[wi], False) * fz_w[wi] * gx
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(np.abs(fx_t_w[wi]) > 1.0, allowed / np.abs(fx_t_w[wi]), 1.0)
        scale = np.minimum(scale, np.clip(ratio, None, 1.0))
    t_f_dem, t_r_dem = split_torques(t_tot_dem * np.where(braking, scale, 1.0))
    fx_t_w = wheel_fx_targets(t_f_dem, t_r_dem)

    # second pass: exact kappa for the demanded torque at the true slip angle
    kappa_w = [None] * 4
    for wi in range(4):
        front = wi < 2
        ap = tires.front if front else tires.rear
        speaks = s_peaks_f if front else s_peaks_r
        kappa_w[wi] = invert_kappa_given_alpha(
            fx_t_w[wi], alpha_kin[wi], fz_w[wi], gamma_w[wi], ap, speaks[0]
        )

    # evaluate all states through the vehicle model for consistent channels
    vp = vehicle.packed()
    tp = tires.packed()
    state = np.empty(kernels.N_STATE)
    out = np.empty(kernels.N_VEH_OUT)
    ax_m = np.empty(n)
    ay_m = np.empty(n)
    alpha_m = np.empty((4, n))
    fx_m = np.empty((4, n))
    fy_m = np.empty((4, n))
    n_engine = v_t / vehicle.r0 * i_tot_t * 60.0 / (2.0 * math.pi)
    for i in range(n):
        state[0] = psi_dot_t[i]
        state[1] = v_t[i]
        for wi in range(4):
            state[2 + wi] = fz_w[wi][i]
            state[6 + wi] = 0.0
            state[10 + wi] = mu_toe[wi]
            state[14 + wi] = b_half[wi]
            state[20 + wi] = gamma_w[wi]
            state[24 + wi] = r_dyn_w[wi][i]
            state[32 + wi] = kappa_w[wi][i]
        state[18] = drag[i]
        state[19] = 0.0
        state[28] = n_engine[i]
        state[29] = i_tot_t[i]
        state[30] = delta[i]
        state[31] = beta[i]
        kernels.vehicle_eval(state, vp, tp, out)
        ax_m[i] = out[0]
        ay_m[i] = out[1]
        for wi in range(4):
            alpha_m[wi][i] = out[3 + wi]
            fx_m[wi][i] = out[7 + wi]
            fy_m[wi][i] = out[11 + wi]

    # driver input channels
    t_f_real = (fx_m[0] * r_dyn_w[0] + fx_m[1] * r_dyn_w[1])
    r_brake = np.where(braking, -t_f_real / vehicle.brake_gain_front, 0.0)
    r_brake = np.clip(r_brake, 0.0, 200.0)
    t_r_real = (fx_m[2] * r_dyn_w[2] + fx_m[3] * r_dyn_w[3])
    r_throttle = np.where(
        ~braking, 100.0 * np.clip(t_r_real, 0.0, None) / (vehicle.t_engine_max * i_tot_t), 0.0
    )
    r_throttle = np.clip(r_throttle, 0.0, 100.0)

    channels = {
        "t": t,
        "v": v_t,
        "psi_dot": psi_dot_t,
        "beta": beta,
        "delta": delta,
        "ax_cog": ax_m,
        "ay_cog": ay_m,
        "r_brake_bar": r_brake,
        "r_throttle_pct": r_throttle,
        "n_engine_rpm": n_engine,
        "i_tot": i_tot_t,
        "dx_n": drag,
        "dy_n": np.zeros(n),
        "br_drv": np.full(n, vehicle.br_drv),
    }
    for wi, wname in enumerate(WHEELS):
        channels[f"fz_n_{wname}"] = fz_w[wi]
        channels[f"alpha_{wname}"] = alpha_m[wi]
        channels[f"kappa_{wname}"] = kappa_w[wi]
        channels[f"mu_toe_{wname}"] = np.full(n, mu_toe[wi])
        channels[f"gamma_{wname}"] = np.full(n, gamma_w[wi])
        channels[f"r_dyn_m_{wname}"] = r_dyn_w[wi]
        channels[f"b_half_m_{wname}"] = np.full(n, b_half[wi])
        channels[f"rocker_{wname}"] = vehicle.rocker_gain * (fz_w[wi] - m * G / 4)
        channels[f"fx_n_{wname}"] = fx_m[wi]
        channels[f"fy_n_{wname}"] = fy_m[wi]
        channels[f"alpha_prev_{wname}"] = np.concatenate([[alpha_m[wi][0]], alpha_m[wi][:-1]])

    return LapTelemetry(
        lap_id=lap_id or f"{track.track_id}-{driver.driver_id}-{seed}",
        driver_id=driver.driver_id,
        track_id=track.track_id,
        sample_rate=rate,
        channels={k: np.asarray(c, dtype=np.float64) for k, c in channels.items()},
    )
