# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Mirrors kernels/pure.py operation for operation;
see that module for the packed-array layouts."""

from libc.math cimport sin, cos, atan, atan2, sqrt, fabs, pi, isfinite, INFINITY

BACKEND = "compiled"


cdef inline void _tire_forces(double fz, double alpha, double kappa, double gamma,
                              const double* tp, double* fx, double* fy, double* mz) noexcept nogil:
    cdef double dfz, scale, dx, dy, alpha_y, bk, ba, fx0, fy0, gx, gy, trail, t
    if fz <= 0.0:
        fx[0] = 0.0
        fy[0] = 0.0
        mz[0] = 0.0
        return
    dfz = (fz - tp[8]) / tp[8]
    scale = 1.0 + tp[9] * dfz
    dx = tp[2] * scale * fz
    dy = tp[6] * scale * fz

    alpha_y = alpha + tp[14] * gamma

    bk = tp[0] * kappa
    fx0 = dx * sin(tp[1] * atan(bk - tp[3] * (bk - atan(bk))))
    ba = tp[4] * alpha_y
    fy0 = dy * sin(tp[5] * atan(ba - tp[7] * (ba - atan(ba))))

    gx = cos(tp[11] * atan(tp[10] * alpha_y))
    gy = cos(tp[13] * atan(tp[12] * kappa))
    fx[0] = fx0 * gx
    fy[0] = fy0 * gy

    t = 1.0 - fabs(alpha) / tp[16]
    if t < 0.0:
        t = 0.0
    trail = tp[15] * t
    mz[0] = -trail * fy[0]


def tire_forces(double fz, double alpha, double kappa, double gamma,
                const double[::1] tp, int off=0):
    cdef double fx, fy, mz
    _tire_forces(fz, alpha, kappa, gamma, &tp[off], &fx, &fy, &mz)
    return fx, fy, mz


cdef void _vehicle_eval(const double* state, const double* vp, const double* tp,
                        double* out) noexcept nogil:
    cdef double psi_dot = state[0]
    cdef double v = state[1]
    cdef double delta = state[30]
    cdef double beta = state[31]
    cdef double delta_road = delta / vp[4]

    cdef double vx = v * cos(beta)
    cdef double vy = v * sin(beta)

    cdef double l_f = vp[2]
    cdef double l_r = vp[3]

    cdef double sum_x = 0.0
    cdef double sum_y = 0.0
    cdef double yaw = 0.0

    cdef int w
    cdef bint front, left
    cdef double x_w, b_w, y_w, d_w, vxw, vyw, a_w
    cdef double fx, fy, mz, cd, sd, fxb, fyb

    for w in range(4):
        front = w < 2
        left = (w & 1) == 0
        x_w = l_f if front else -l_r
        b_w = state[14 + w]
        y_w = b_w if left else -b_w

        d_w = state[10 + w] + (delta_road if front else 0.0)
        vxw = vx - psi_dot * y_w
        vyw = vy + psi_dot * x_w
        a_w = d_w - atan2(vyw, vxw)

        _tire_forces(state[2 + w], a_w, state[32 + w], state[20 + w],
                     tp if front else tp + 17, &fx, &fy, &mz)

        cd = cos(d_w)
        sd = sin(d_w)
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


def vehicle_eval(const double[::1] state, const double[::1] vp,
                 const double[::1] tp, double[::1] out):
    _vehicle_eval(&state[0], &vp[0], &tp[0], &out[0])
    return out


def optcog_eval(const double[::1] z, const double[::1] pack, double[::1] out):
    _optcog_eval_c(&z[0], &pack[0], &out[0])
    return out


def opttire_eval(const double[::1] z, const double[::1] pack, double[::1] out):
    _opttire_eval_c(&z[0], &pack[0], &out[0])
    return out


cdef void _optcog_eval_c(const double* z, const double* pack, double* out) noexcept nogil:
    cdef double state[36]
    cdef double vo[23]
    cdef int i, w
    for i in range(36):
        state[i] = pack[i]
    state[30] = z[0]
    state[31] = z[1]
    state[32] = z[2]
    state[33] = z[3]
    state[34] = z[4]
    state[35] = z[5]

    cdef const double* vp = pack + 36
    cdef const double* tp = pack + 46
    cdef const double* ref = pack + 80

    _vehicle_eval(state, vp, tp, vo)

    cdef double ax = vo[0]
    cdef double ay = vo[1]
    cdef double t_fl = vo[19], t_fr = vo[20], t_rl = vo[21], t_rr = vo[22]
    cdef double t_f = t_fl + t_fr
    cdef double t_r = t_rl + t_rr
    cdef double ux = ref[1]
    cdef double uy = ref[2]
    cdef double a_scale = ref[7]
    cdef double t_scale = ref[8]
    cdef double br_dist, eps1, eps2, r

    out[0] = -sqrt(ax * ax + ay * ay) / a_scale
    out[1] = (vo[2] - ref[0]) / ref[9]
    out[2] = (ax * uy - ay * ux) / a_scale
    out[3] = ((t_fl - t_fr) - ref[3]) / t_scale
    out[4] = ((t_rl - t_rr) - ref[4]) / t_scale
    if ref[5] != 0.0:
        eps1 = vp[7]
        eps2 = vp[8]
        br_dist = ref[6] * (atan(-eps1 * (t_f - eps2)) / pi + 0.5)
        out[5] = (t_f - (t_f + t_r) * br_dist) / t_scale
    else:
        out[5] = 0.0
    for w in range(4):
        r = vo[3 + w] / vp[5]
        out[6 + w] = r * r - 1.0
        r = z[2 + w] / vp[6]
        out[10 + w] = r * r - 1.0
    out[14] = (t_r - ref[10] + ref[11]) / t_scale
    out[15] = -(ax * ux + ay * uy) / a_scale
    out[16] = (t_f - ref[12]) / t_scale


cdef void _opttire_eval_c(const double* z, const double* pack, double* out) noexcept nogil:
    cdef double fx, fy, mz
    _tire_forces(pack[0], z[0], z[1], pack[1], pack + 5, &fx, &fy, &mz)
    cdef double ux = pack[2]
    cdef double uy = pack[3]
    cdef double f_scale = pack[4]
    out[0] = -sqrt(fx * fx + fy * fy) / f_scale
    out[1] = (fx * uy - fy * ux) / f_scale
    out[2] = -(fx * ux + fy * uy) / f_scale


cdef double _merit_of_c(const double* out, int n_eq, int n_ineq,
                        const double* lam, const double* mu, double rho) noexcept nogil:
    cdef double phi = out[0]
    cdef double ce, ci, t
    cdef int j, i
    if not isfinite(phi):
        return INFINITY
    for j in range(n_eq):
        ce = out[1 + j]
        if not isfinite(ce):
            return INFINITY
        phi += lam[j] * ce + 0.5 * rho * ce * ce
    for i in range(n_ineq):
        ci = out[1 + n_eq + i]
        if not isfinite(ci):
            return INFINITY
        t = mu[i] + rho * ci
        if t > 0.0:
            phi += (t * t - mu[i] * mu[i]) / (2.0 * rho)
        else:
            phi += -mu[i] * mu[i] / (2.0 * rho)
    return phi


def optcog_merit(const double[::1] z, const double[::1] pack,
                 const double[::1] lam, const double[::1] mu, double rho):
    cdef double out[17]
    _optcog_eval_c(&z[0], &pack[0], out)
    return _merit_of_c(out, 5, 11, &lam[0], &mu[0], rho)


def opttire_merit(const double[::1] z, const double[::1] pack,
                  const double[::1] lam, const double[::1] mu, double rho):
    cdef double out[3]
    _opttire_eval_c(&z[0], &pack[0], out)
    return _merit_of_c(out, 1, 1, &lam[0], &mu[0], rho)


cdef double _merit_grad_c(bint cog, int n, int n_out, int n_eq, int n_ineq,
                          const double* z, const double* pack,
                          const double* lam, const double* mu, double rho,
                          const double* lo, const double* hi, double step,
                          double* grad) noexcept nogil:
    cdef double out[17]
    cdef double zp[6]
    cdef double phi0, fp, fm, h, hp, hm
    cdef int i
    for i in range(n):
        zp[i] = z[i]
    if cog:
        _optcog_eval_c(zp, pack, out)
    else:
        _opttire_eval_c(zp, pack, out)
    phi0 = _merit_of_c(out, n_eq, n_ineq, lam, mu, rho)
    for i in range(n):
        h = step * max(1.0, fabs(z[i]))
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
        if cog:
            _optcog_eval_c(zp, pack, out)
        else:
            _opttire_eval_c(zp, pack, out)
        fp = _merit_of_c(out, n_eq, n_ineq, lam, mu, rho)
        zp[i] = z[i] - hm
        if cog:
            _optcog_eval_c(zp, pack, out)
        else:
            _opttire_eval_c(zp, pack, out)
        fm = _merit_of_c(out, n_eq, n_ineq, lam, mu, rho)
        zp[i] = z[i]
        if isfinite(fp) and isfinite(fm):
            grad[i] = (fp - fm) / (hp + hm)
        else:
            grad[i] = 0.0
    return phi0


def optcog_merit_grad(const double[::1] z, const double[::1] pack,
                      const double[::1] lam, const double[::1] mu, double rho,
                      const double[::1] lo, const double[::1] hi, double step,
                      double[::1] grad):
    return _merit_grad_c(True, 6, 17, 5, 11, &z[0], &pack[0], &lam[0], &mu[0],
                         rho, &lo[0], &hi[0], step, &grad[0])


def opttire_merit_grad(const double[::1] z, const double[::1] pack,
                       const double[::1] lam, const double[::1] mu, double rho,
                       const double[::1] lo, const double[::1] hi, double step,
                       double[::1] grad):
    return _merit_grad_c(False, 2, 3, 1, 1, &z[0], &pack[0], &lam[0], &mu[0],
                         rho, &lo[0], &hi[0], step, &grad[0])
