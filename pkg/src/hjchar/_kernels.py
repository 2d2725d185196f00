"""Compiled shooting kernels for the eikonal (Mayer) and Bolza characteristic
systems.

State layout: ``y = [x (n), running cost (1), p (n)]``; the auxiliary adjoint
of the Bolza transform is constant and passed as a scalar. The integrator
mirrors :func:`hjchar.numerics.integrate_adaptive` (same tableau, same
controller) so both paths agree to round-off-level differences.
"""

import math

import numba
import numpy as np

from .fields import HEADER, KIND_CONSTANT, KIND_NORMSQ, KIND_QUADRATIC, embed_nb
from .numerics import CK_A, CK_B5, CK_E, MAX_GROWTH, MAX_SHRINK, SAFETY, STOP_TIME_RESOLUTION, powell_family

P_ZERO = 1e-12
FAIL_VALUE = 1e100

# layout of the per-shot output record
OUT_J = 0
OUT_SCAN = 1
OUT_ALIGN = 2
OUT_STOP = 3
OUT_PMIN = 4
OUT_GRADNORM = 5
OUT_STEPS = 6
OUT_SCAN_T = 7
OUT_STATUS = 8
OUT_GAPMIN = 9
OUT_Y = 10

STATUS_OK = 0
STATUS_BUDGET = 1
STATUS_NONFINITE = 2

jit = numba.njit(cache=True, nogil=True, error_model="numpy")


def out_size(n):
    return OUT_Y + 2 * n + 1


@jit
def field_eval(buf, x, g):
    """Value of a packed field at ``x[:n]``; gradient written to ``g``.

    Only the leading ``n`` entries of ``x`` are read, so a full
    characteristic state can be passed without slicing.
    """
    kind = int(buf[0])
    n = int(buf[1])
    if kind == KIND_CONSTANT:
        for i in range(n):
            g[i] = 0.0
        return buf[2]
    if kind == KIND_NORMSQ:
        s = 0.0
        for i in range(n):
            g[i] = x[i]
            s += x[i] * x[i]
        return 0.5 * s
    if kind == KIND_QUADRATIC:
        s = 0.0
        base = HEADER + n
        if buf[3] != 0.0:
            # diagonal matrix
            for i in range(n):
                acc = buf[base + i * (n + 1)] * x[i]
                g[i] = acc
                s += acc * x[i]
        else:
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += buf[base + i * n + j] * x[j]
                g[i] = acc
                s += acc * x[i]
        return 0.5 * s + buf[2]
    # gauss offset
    r2 = 0.0
    for i in range(n):
        d = x[i] - buf[HEADER + i]
        r2 += d * d
    bump = buf[3] * math.exp(-buf[4] * r2)
    scale = -2.0 * buf[4] * bump
    for i in range(n):
        g[i] = scale * (x[i] - buf[HEADER + i])
    return buf[2] + bump


@jit
def char_rhs(y, dy, n, cbuf, ebuf, has_eta, ptil, gc, ge):
    c = field_eval(cbuf, y, gc)
    pn = 0.0
    for i in range(n):
        pn += y[n + 1 + i] * y[n + 1 + i]
    pn = math.sqrt(pn)
    if pn > P_ZERO:
        scale = c / pn
        for i in range(n):
            dy[i] = scale * y[n + 1 + i]
    else:
        for i in range(n):
            dy[i] = 0.0
    total = 0.0
    if has_eta:
        dy[n] = field_eval(ebuf, y, ge)
        for i in range(n):
            dy[n + 1 + i] = -gc[i] * pn - ptil * ge[i]
            total += dy[n + 1 + i]
    else:
        dy[n] = 0.0
        for i in range(n):
            dy[n + 1 + i] = -gc[i] * pn
            total += dy[n + 1 + i]
    # a single sum propagates any inf/nan from the components
    return math.isfinite(total + dy[n] + c)


@jit
def hermite(y0, f0, y1, f1, h, s, out, m):
    s2 = s * s
    s3 = s2 * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    for i in range(m):
        out[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i]


@jit
def gap_min_in_step(y, f0, y_new, f_new, h, ebuf, stop_sign, eta_crit, xi, ge):
    """Golden-section minimum ``(value, s)`` of ``stop_sign * (eta -
    eta_crit)`` over the Hermite interpolant of one step, ``s in [0, 1]``."""
    n = xi.size
    a = 0.0
    b = 1.0
    c1 = b - 0.6180339887498949 * (b - a)
    c2 = a + 0.6180339887498949 * (b - a)
    hermite(y, f0, y_new, f_new, h, c1, xi, n)
    v1 = stop_sign * (field_eval(ebuf, xi, ge) - eta_crit)
    hermite(y, f0, y_new, f_new, h, c2, xi, n)
    v2 = stop_sign * (field_eval(ebuf, xi, ge) - eta_crit)
    for _ in range(60):
        if v1 <= v2:
            b = c2
            c2 = c1
            v2 = v1
            c1 = b - 0.6180339887498949 * (b - a)
            hermite(y, f0, y_new, f_new, h, c1, xi, n)
            v1 = stop_sign * (field_eval(ebuf, xi, ge) - eta_crit)
        else:
            a = c1
            c1 = c2
            v1 = v2
            c2 = a + 0.6180339887498949 * (b - a)
            hermite(y, f0, y_new, f_new, h, c2, xi, n)
            v2 = stop_sign * (field_eval(ebuf, xi, ge) - eta_crit)
        if b - a < 1e-12:
            break
    if v1 <= v2:
        return v1, c1
    return v2, c2


@jit
def shoot(cbuf, sbuf, ebuf, has_eta, ptil, x0, p0, t0, T, atol, rtol, h0, max_steps,
          scan_sign, stop_on, stop_sign, eta_crit, crit_tol, out):
    """Integrate one characteristic from ``(x0, p0)`` and fill ``out``."""
    n = x0.size
    d = 2 * n + 1
    y = np.empty(d)
    y[:n] = x0
    y[n] = 0.0
    y[n + 1 :] = p0
    gc = np.empty(n)
    ge = np.empty(n)
    gs = np.empty(n)
    k = np.empty((6, d))
    ys = np.empty(d)
    y_new = np.empty(d)
    f_new = np.empty(d)
    xi = np.empty(n)

    out[OUT_STOP] = np.nan
    out[OUT_STATUS] = STATUS_OK
    pmin = 0.0
    for i in range(n):
        pmin += p0[i] * p0[i]
    pmin = math.sqrt(pmin)

    sig = field_eval(sbuf, x0, gs)
    scan_best = sig
    scan_t = t0

    t = t0
    stopped = False
    t_stop = T
    gap = np.inf
    dgap = 0.0
    if stop_on:
        gap = stop_sign * (field_eval(ebuf, x0, ge) - eta_crit)
        if gap < crit_tol:
            stopped = True
            t_stop = t0
    gap_min = gap
    steps = 0
    if not stopped and T > t0:
        if not char_rhs(y, k[0], n, cbuf, ebuf, has_eta, ptil, gc, ge):
            out[OUT_STATUS] = STATUS_NONFINITE
            return STATUS_NONFINITE
        if stop_on:
            field_eval(ebuf, y, ge)
            for i in range(n):
                dgap += ge[i] * k[0, i]
            dgap *= stop_sign
        h = min(h0, T - t0)
        attempts = 0
        while t < T:
            if attempts >= max_steps:
                out[OUT_STATUS] = STATUS_BUDGET
                return STATUS_BUDGET
            attempts += 1
            last = t + h >= T
            if last:
                h = T - t
            ok = True
            for s in range(1, 6):
                for i in range(d):
                    acc = 0.0
                    for r in range(s):
                        acc += CK_A[s, r] * k[r, i]
                    ys[i] = y[i] + h * acc
                ok = char_rhs(ys, k[s], n, cbuf, ebuf, has_eta, ptil, gc, ge)
                if not ok:
                    break
            if not ok:
                out[OUT_STATUS] = STATUS_NONFINITE
                return STATUS_NONFINITE
            e = 0.0
            for i in range(d):
                a5 = 0.0
                ae = 0.0
                for r in range(6):
                    a5 += CK_B5[r] * k[r, i]
                    ae += CK_E[r] * k[r, i]
                y_new[i] = y[i] + h * a5
                sc = atol + rtol * max(abs(y[i]), abs(y_new[i]))
                q = abs(h * ae) / sc
                if q > e:
                    e = q
            if not math.isfinite(e):
                out[OUT_STATUS] = STATUS_NONFINITE
                return STATUS_NONFINITE
            if e > 1.0:
                h *= max(MAX_SHRINK, SAFETY * e ** -0.25)
                continue
            t_new = T if last else t + h
            if not char_rhs(y_new, f_new, n, cbuf, ebuf, has_eta, ptil, gc, ge):
                out[OUT_STATUS] = STATUS_NONFINITE
                return STATUS_NONFINITE
            steps += 1

            if stop_on:
                # Freeze on entering the critical level set. The entry may be
                # at the step end or, when the trajectory dips in and out
                # within one step, before an interior minimum of the gap.
                gap_end = stop_sign * (field_eval(ebuf, y_new, ge) - eta_crit)
                dgap_end = 0.0
                for i in range(n):
                    dgap_end += ge[i] * f_new[i]
                dgap_end *= stop_sign
                s_hit = -1.0
                if gap_end < crit_tol:
                    s_hit = 1.0
                elif dgap < 0.0 and dgap_end > 0.0:
                    g_in, s_in = gap_min_in_step(y, k[0], y_new, f_new, h, ebuf, stop_sign, eta_crit, xi, ge)
                    if g_in < gap_min:
                        gap_min = g_in
                    if g_in < crit_tol:
                        s_hit = s_in
                if s_hit > 0.0:
                    lo = 0.0
                    hi = s_hit
                    while (hi - lo) * h > STOP_TIME_RESOLUTION:
                        mid = 0.5 * (lo + hi)
                        hermite(y, k[0], y_new, f_new, h, mid, ys, d)
                        if stop_sign * (field_eval(ebuf, ys, ge) - eta_crit) < crit_tol:
                            hi = mid
                        else:
                            lo = mid
                    if hi < 1.0:
                        hermite(y, k[0], y_new, f_new, h, hi, ys, d)
                        y_new[:] = ys
                        t_new = t + hi * h
                    stopped = True
                    t_stop = t_new
                    gap_end = stop_sign * (field_eval(ebuf, y_new, ge) - eta_crit)
                if gap_end < gap_min:
                    gap_min = gap_end
                gap = gap_end
                dgap = dgap_end

            if scan_sign != 0:
                # golden-section search of the step interior, then the step end
                a = 0.0
                b = 1.0 if not stopped else (t_new - t) / h
                c1 = b - 0.6180339887498949 * (b - a)
                c2 = a + 0.6180339887498949 * (b - a)
                hermite(y, k[0], y_new, f_new, h, c1, xi, n)
                v1 = scan_sign * field_eval(sbuf, xi, gs)
                hermite(y, k[0], y_new, f_new, h, c2, xi, n)
                v2 = scan_sign * field_eval(sbuf, xi, gs)
                for _ in range(40):
                    if v1 >= v2:
                        b = c2
                        c2 = c1
                        v2 = v1
                        c1 = b - 0.6180339887498949 * (b - a)
                        hermite(y, k[0], y_new, f_new, h, c1, xi, n)
                        v1 = scan_sign * field_eval(sbuf, xi, gs)
                    else:
                        a = c1
                        c1 = c2
                        v1 = v2
                        c2 = a + 0.6180339887498949 * (b - a)
                        hermite(y, k[0], y_new, f_new, h, c2, xi, n)
                        v2 = scan_sign * field_eval(sbuf, xi, gs)
                    if b - a < 1e-9:
                        break
                if v1 >= v2:
                    vin, sin_ = v1, c1
                else:
                    vin, sin_ = v2, c2
                if vin > scan_sign * scan_best:
                    scan_best = scan_sign * vin
                    scan_t = t + sin_ * h
                vend = field_eval(sbuf, y_new, gs)
                if scan_sign * vend > scan_sign * scan_best:
                    scan_best = vend
                    scan_t = t_new

            for i in range(d):
                y[i] = y_new[i]
                k[0, i] = f_new[i]
            t = t_new
            pn = 0.0
            for i in range(n):
                pn += y[n + 1 + i] * y[n + 1 + i]
            pn = math.sqrt(pn)
            if pn < pmin:
                pmin = pn
            if stopped:
                break
            if e == 0.0:
                h *= MAX_GROWTH
            else:
                h *= min(MAX_GROWTH, SAFETY * e ** -0.2)

    sig = field_eval(sbuf, y, gs)
    J = sig + y[n]
    if stopped:
        J += eta_crit * (T - t_stop)
        out[OUT_STOP] = t_stop
    pn = 0.0
    gn = 0.0
    dot = 0.0
    for i in range(n):
        pn += y[n + 1 + i] * y[n + 1 + i]
        gn += gs[i] * gs[i]
        dot += y[n + 1 + i] * gs[i]
    pn = math.sqrt(pn)
    out[OUT_J] = J
    out[OUT_SCAN] = scan_best
    out[OUT_ALIGN] = dot / pn if pn > P_ZERO else np.nan
    out[OUT_PMIN] = pmin
    out[OUT_GRADNORM] = math.sqrt(gn)
    out[OUT_STEPS] = steps
    out[OUT_SCAN_T] = scan_t
    out[OUT_GAPMIN] = gap_min
    out[OUT_Y : OUT_Y + d] = y
    return STATUS_OK


@jit
def shoot_batch(cbuf, sbuf, ebuf, has_eta, ptils, x0, P, t0, T, atol, rtol, h0, max_steps,
                scan_sign, stop_on, stop_sign, eta_crit, crit_tol, outs):
    for j in range(P.shape[0]):
        shoot(cbuf, sbuf, ebuf, has_eta, ptils[j], x0, P[j], t0, T, atol, rtol, h0, max_steps,
              scan_sign, stop_on, stop_sign, eta_crit, crit_tol, outs[j])


@jit
def angle_objective(theta, args):
    (cbuf, sbuf, ebuf, has_eta, x0, t0, T, atol, rtol, h0, max_steps,
     scan_sign, stop_on, stop_sign, eta_crit, crit_tol, sign, which, bolza, work) = args
    n = x0.size
    v = np.empty(theta.size + 1)
    embed_nb(theta, v)
    if bolza:
        status = shoot(cbuf, sbuf, ebuf, has_eta, v[n], x0, v[:n], t0, T, atol, rtol, h0, max_steps,
                       scan_sign, stop_on, stop_sign, eta_crit, crit_tol, work)
    else:
        status = shoot(cbuf, sbuf, ebuf, has_eta, 0.0, x0, v, t0, T, atol, rtol, h0, max_steps,
                       scan_sign, stop_on, stop_sign, eta_crit, crit_tol, work)
    if status != STATUS_OK:
        return FAIL_VALUE
    return sign * work[which]


_powell_multi = powell_family(angle_objective, jit)["powell_multi"]


@jit
def powell_angles(args, starts, ftol, xtol, maxiter):
    return _powell_multi(args, starts, ftol, xtol, maxiter)
