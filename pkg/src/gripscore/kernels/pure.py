"""Pure-Python kernels.

Reference implementations of the hot evaluation kernels. The compiled
extension in ``_fast.pyx`` mirrors these bit-for-bit (same operations in the
same order); ``gripscore.kernels`` picks whichever backend is importable.

Packed-array layouts shared by both backends:

tire params, per axle (17 doubles, front then rear in a 34-double array)::

    0 b_x   1 c_x   2 d_x   3 e_x
    4 b_y   5 c_y   6 d_y   7 e_y
    8 fz0   9 d_load
    10 w_bx 11 c_wx 12 w_by 13 c_wy
    14 c_gamma  15 t0  16 alpha_t0

vehicle params (10 doubles)::

    0 m   1 j_zz   2 l_f   3 l_r   4 steering_ratio
    5 alpha_max   6 kappa_max   7 eps1   8 eps2   9 t_engine_max

vehicle state (36 doubles, wheel order fl, fr, rl, rr everywhere)::

    0 psi_dot  1 v
    2:6 fz     6:10 alpha_prev   10:14 mu_toe   14:18 b_half
    18 d_x_aero  19 d_y_aero
    20:24 gamma  24:28 r_dyn
    28 n_engine  29 i_tot
    30 delta     31 beta   32:36 kappa

vehicle eval output (23 doubles)::

    0 ax  1 ay  2 psi_ddot
    3:7 alpha   7:11 fx   11:15 fy   15:19 mz   19:23 torque
"""

import math

BACKEND = "pure"

N_TP_AXLE = 17
N_VP = 10
N_STATE = 36
N_VEH_OUT = 23

# optCog problem pack: state(36) + vp(10) + tp(34) + ref(13)
OC_REF = N_STATE + N_VP + 2 * N_TP_AXLE
N_OC_PACK = OC_REF + 13
N_OC_OUT = 17  # f, ceq[5], c[11]

# optTire pack: fz, gamma, ux, uy, f_scale + tp_axle(17)
N_OT_PACK = 5 + N_TP_AXLE
N_OT_OUT = 3  # f, ceq[1], c[1]


def tire_forces(fz, alpha, kappa, gamma, tp, off=0):
    """Magic Formula forces for one tire.

    ``tp`` is a packed coefficient array, ``off`` the axle offset (0 front,
    17 rear). Returns (fx, fy, mz). Zero load gives zero output.
    """
    if fz <= 0.0:
        return 0.0, 0.0, 0.0
    dfz = (fz - tp[off + 8]) / tp[off + 8]
    scale = 1.0 + tp[off + 9] * dfz
    dx = tp[off + 2] * scale * fz
    dy = tp[off + 6] * scale * fz

    alpha_y = alpha + tp[off + 14] * gamma

    bk = tp[off + 0] * kappa
    fx0 = dx * math.sin(tp[off + 1] * math.atan(bk - tp[off + 3] * (bk - math.atan(bk))))
    ba = tp[off + 4] * alpha_y
    fy0 = dy * math.sin(tp[off + 5] * math.atan(ba - tp[off + 7] * (ba - math.atan(ba))))

    gx = math.cos(tp[off + 11] * math.atan(tp[off + 10] * alpha_y))
    gy = math.cos(tp[off + 13] * math.atan(tp[off + 12] * kappa))
    fx = fx0 * gx
    fy = fy0 * gy

    trail = tp[off + 15] * max(0.0, 1.0 - abs(alpha) / tp[off + 16])
    mz = -trail * fy
    return fx, fy, mz


def vehicle_eval(state, vp, tp, out):
    """Two-track evaluation: slip angles, tire forces, momentum sums.

    Fills ``out`` (23 doubles) and returns it.
    """
    psi_dot = state[0]
    v = state[1]
    delta = state[30]
    beta = state[31]
    delta_road = delta / vp[4]

    vx = v * math.cos(beta)
    vy = v * math.sin(beta)

    l_f = vp[2]
    l_r = vp[3]

    sum_x = 0.0
    sum_y = 0.0
    yaw = 0.0

    for w in range(4):
        front = w < 2
        left = (w & 1) == 0
        x_w = l_f if front else -l_r
        b_w = state[14 + w]
        y_w = b_w if left else -b_w

        d_w = state[10 + w] + (delta_road if front else 0.0)
        vxw = vx - psi_dot * y_w
        vyw = vy + psi_dot * x_w
        a_w = d_w - math.atan2(vyw, vxw)

        fx, fy, mz = tire_forces(
            state[2 + w], a_w, state[32 + w], state[20 + w], tp, 0 if front else N_TP_AXLE
        )

        cd = math.cos(d_w)
        sd = math.sin(d_w)
        fxb = fx * cd - fy * sd
        fyb = fx * sd + fy * cd
        sum_x += fxb
        sum_y += fyb
        yaw += (x_w * fyb) + (-y_w * fxb) + mz

        out[3 + w] = a_w
        out[7 + w] = fx
        out[11 + w] = fy
        out[15 + w] = mz
        out[19 + w] = fx * state[24 + w]

    out[0] = (sum_x - state[18]) / vp[0]
    out[1] = (sum_y + state[19]) / vp[0]
    out[2] = yaw / vp[1]
    return out


def optcog_eval(z, pack, out):
    """Fused objective + constraints for the CoG-acceleration problem.

    z = [delta, beta, kappa_fl, kappa_fr, kappa_rl, kappa_rr].
    out = [f, ceq(5), c(10)]:
      ceq0  yaw-acceleration preservation (scaled)
      ceq1  acceleration direction cross product (scaled)
      ceq2  front axle left/right torque difference preservation (scaled)
      ceq3  rear axle left/right torque difference preservation (scaled)
      ceq4  brake-distribution equality (scaled; identically 0 when driving)
      c0..3   (alpha/alpha_max)^2 - 1
      c4..7   (kappa/kappa_max)^2 - 1
      c8      rear driving torque below engine cap (scaled, margin applied)
      c9      acceleration keeps pointing along the initial direction
      c10     front axle torque carries braking only (no front drive)
    """
    state = list(pack[:N_STATE])
    state[30] = z[0]
    state[31] = z[1]
    state[32] = z[2]
    state[33] = z[3]
    state[34] = z[4]
    state[35] = z[5]
    vp = pack[N_STATE : N_STATE + N_VP]
    tp = pack[N_STATE + N_VP : OC_REF]
    ref = pack[OC_REF:]

    vo = [0.0] * N_VEH_OUT
    vehicle_eval(state, vp, tp, vo)

    ax = vo[0]
    ay = vo[1]
    psidd = vo[2]
    t_fl, t_fr, t_rl, t_rr = vo[19], vo[20], vo[21], vo[22]
    t_f = t_fl + t_fr
    t_r = t_rl + t_rr

    psidd_in = ref[0]
    ux = ref[1]
    uy = ref[2]
    a_scale = ref[7]
    t_scale = ref[8]
    psidd_scale = ref[9]

    # objective normalized to O(1) so penalty terms and finite-difference
    # noise stay balanced across samples
    out[0] = -math.sqrt(ax * ax + ay * ay) / a_scale

    out[1] = (psidd - psidd_in) / psidd_scale
    out[2] = (ax * uy - ay * ux) / a_scale
    out[3] = ((t_fl - t_fr) - ref[3]) / t_scale
    out[4] = ((t_rl - t_rr) - ref[4]) / t_scale
    if ref[5] != 0.0:
        eps1 = vp[7]
        eps2 = vp[8]
        br_dist = ref[6] * (math.atan(-eps1 * (t_f - eps2)) / math.pi + 0.5)
        out[5] = (t_f - (t_f + t_r) * br_dist) / t_scale
    else:
        out[5] = 0.0

    alpha_max = vp[5]
    kappa_max = vp[6]
    for w in range(4):
        r = vo[3 + w] / alpha_max
        out[6 + w] = r * r - 1.0
        r = z[2 + w] / kappa_max
        out[10 + w] = r * r - 1.0
    out[14] = (t_r - ref[10] + ref[11]) / t_scale
    out[15] = -(ax * ux + ay * uy) / a_scale
    out[16] = (t_f - ref[12]) / t_scale
    return out


def opttire_eval(z, pack, out):
    """Fused objective + constraints for the single-tire problem.

    z = [alpha, kappa]; pack = [fz, gamma, ux, uy, f_scale, tp_axle...].
    out = [f, direction cross product (scaled), direction sign (scaled)].
    """
    fx, fy, _ = tire_forces(pack[0], z[0], z[1], pack[1], pack, 5)
    ux = pack[2]
    uy = pack[3]
    f_scale = pack[4]
    out[0] = -math.sqrt(fx * fx + fy * fy) / f_scale
    out[1] = (fx * uy - fy * ux) / f_scale
    out[2] = -(fx * ux + fy * uy) / f_scale
    return out


def _merit_of(out, n_eq, n_ineq, lam, mu, rho):
    """Augmented Lagrangian value from a fused-eval output block."""
    phi = out[0]
    if not math.isfinite(phi):
        return math.inf
    for j in range(n_eq):
        ce = out[1 + j]
        if not math.isfinite(ce):
            return math.inf
        phi += lam[j] * ce + 0.5 * rho * ce * ce
    for i in range(n_ineq):
        ci = out[1 + n_eq + i]
        if not math.isfinite(ci):
            return math.inf
        t = mu[i] + rho * ci
        if t > 0.0:
            phi += (t * t - mu[i] * mu[i]) / (2.0 * rho)
        else:
            phi += -mu[i] * mu[i] / (2.0 * rho)
    return phi


def _merit_grad(eval_fn, n_out, n_eq, n_ineq, z, pack, lam, mu, rho, lo, hi, step, grad):
    """Central-difference gradient of the merit, steps shrunk into the box.

    Returns the merit at z and fills ``grad``.
    """
    n = len(z)
    out = [0.0] * n_out
    zp = list(z)
    eval_fn(zp, pack, out)
    phi0 = _merit_of(out, n_eq, n_ineq, lam, mu, rho)
    for i in range(n):
        h = step * max(1.0, abs(z[i]))
        hp = min(h, hi[i] - z[i])
        hm = min(h, z[i] - lo[i])
        if hp < 0.0:
            hp = 0.0
        if hm < 0.0:
            hm = 0.0
        if hp + hm == 0.0:
            grad[i] = 0.0
            continue
        zp[i] = z[i] + hp
        eval_fn(zp, pack, out)
        fp = _merit_of(out, n_eq, n_ineq, lam, mu, rho)
        zp[i] = z[i] - hm
        eval_fn(zp, pack, out)
        fm = _merit_of(out, n_eq, n_ineq, lam, mu, rho)
        zp[i] = z[i]
        if math.isfinite(fp) and math.isfinite(fm):
            grad[i] = (fp - fm) / (hp + hm)
        else:
            grad[i] = 0.0
    return phi0


def optcog_merit(z, pack, lam, mu, rho):
    out = [0.0] * N_OC_OUT
    optcog_eval(z, pack, out)
    return _merit_of(out, 5, 11, lam, mu, rho)


def optcog_merit_grad(z, pack, lam, mu, rho, lo, hi, step, grad):
    return _merit_grad(optcog_eval, N_OC_OUT, 5, 11, z, pack, lam, mu, rho, lo, hi, step, grad)


def opttire_merit(z, pack, lam, mu, rho):
    out = [0.0] * N_OT_OUT
    opttire_eval(z, pack, out)
    return _merit_of(out, 1, 1, lam, mu, rho)


def opttire_merit_grad(z, pack, lam, mu, rho, lo, hi, step, grad):
    return _merit_grad(opttire_eval, N_OT_OUT, 1, 1, z, pack, lam, mu, rho, lo, hi, step, grad)
