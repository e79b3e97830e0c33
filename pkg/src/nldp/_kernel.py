"""Compiled per-path simulation loop.

One call advances every path in ``[start, stop)`` to completion. A path's
result depends only on its inputs and its own random stream, so any partition
of the index range over threads yields identical outputs.
"""
from __future__ import annotations

import numba as nb
import numpy as np

from .fields import eval_field
from .rng import BUFFER, fill_normals, fill_uniforms

# status codes
EXITED = 0
NONEXIT = 1
JUMP_BUDGET = 2
KILLED = 3
HORIZON = 4

# exit modes
NO_EXIT = -1
DIFFUSED_ACROSS = 0
JUMPED_OUTSIDE = 1

# trace events
EV_STEP = 0
EV_JUMP = 1
EV_EXIT = 2
EV_DEATH = 3
EV_HORIZON = 4

# domain codes
WHOLE_SPACE = -1
BALL = 0
BOX = 1

# float config slots
F_DT = 0
F_BFAC = 1
F_DTMIN = 2
F_HORIZON = 3
F_ALPHA = 4
F_BTOL = 5
F_BRIDGE_VAR = 6
F_LAM = 7
N_FCFG = 8

# int config slots
I_MAX_STEPS = 0
I_MAX_JUMPS = 1
I_HAZARD = 2  # 0 trapezoid, 1 left point
I_EXIT = 3  # 0 first exterior sample, 1 bridge corrected
I_REDIST = 4
I_USE_DOMAIN = 5
I_A_MODE = 6  # 0 constant, 1 variable
I_KAPPA = 7
I_F = 8
I_B_ZERO = 9
N_ICFG = 10


@nb.njit(cache=True)
def dom_sd(code, p, x):
    d = x.shape[0]
    if code == BALL:
        s = 0.0
        for j in range(d):
            s += (x[j] - p[j]) ** 2
        return np.sqrt(s) - p[d]
    if code == BOX:
        out2 = 0.0
        qmax = -np.inf
        for j in range(d):
            q = max(p[j] - x[j], x[j] - p[d + j])
            if q > 0:
                out2 += q * q
            qmax = max(qmax, q)
        return np.sqrt(out2) + min(qmax, 0.0)
    return -np.inf


@nb.njit(cache=True)
def dom_contains(code, p, x):
    d = x.shape[0]
    if code == BALL:
        s = 0.0
        for j in range(d):
            s += (x[j] - p[j]) ** 2
        return s < p[d] * p[d]
    if code == BOX:
        for j in range(d):
            if not (p[j] < x[j] < p[d + j]):
                return False
        return True
    return True


@nb.njit(cache=True)
def dom_project(code, p, x, out):
    """Nearest boundary point, nudged so that it is not in the open domain."""
    d = x.shape[0]
    if code == BALL:
        n = 0.0
        for j in range(d):
            n += (x[j] - p[j]) ** 2
        n = np.sqrt(n)
        scale = p[d] / n if n > 0 else 0.0
        for j in range(d):
            out[j] = p[j] + (x[j] - p[j]) * scale
        if n == 0:
            out[0] = p[0] + p[d]
        grow = 1.0
        while dom_contains(code, p, out):
            grow *= 1.0 + 2.2e-16 * 4
            for j in range(d):
                out[j] = p[j] + (out[j] - p[j]) * grow
    elif code == BOX:
        best = np.inf
        k = 0
        for j in range(d):
            out[j] = min(max(x[j], p[j]), p[d + j])
        if dom_contains(code, p, out):
            for j in range(d):
                if out[j] - p[j] < best:
                    best = out[j] - p[j]
                    k = j
                if p[d + j] - out[j] < best:
                    best = p[d + j] - out[j]
                    k = d + j
            if k < d:
                out[k] = p[k]
            else:
                out[k - d] = p[k]
    else:
        for j in range(d):
            out[j] = x[j]


@nb.njit(cache=True)
def _sqrt_into(bp, bi, a_ids, x, s_out, a_work):
    d = x.shape[0]
    for i in range(d):
        for j in range(d):
            a_work[i, j] = eval_field(bp, bi, a_ids[i, j], x)
    if d == 1:
        s_out[0, 0] = np.sqrt(a_work[0, 0])
    elif d == 2:
        a, b, c = a_work[0, 0], 0.5 * (a_work[0, 1] + a_work[1, 0]), a_work[1, 1]
        sdet = np.sqrt(max(a * c - b * b, 0.0))
        t = np.sqrt(a + c + 2.0 * sdet)
        s_out[0, 0] = (a + sdet) / t
        s_out[0, 1] = b / t
        s_out[1, 0] = b / t
        s_out[1, 1] = (c + sdet) / t
    else:
        w, v = np.linalg.eigh(a_work)
        for i in range(d):
            for j in range(d):
                acc = 0.0
                for k in range(d):
                    acc += v[i, k] * np.sqrt(max(w[k], 0.0)) * v[j, k]
                s_out[i, j] = acc


@nb.njit(cache=True)
def _uniform(k0, k1, ublk, upos, ubuf):
    """Next uniform of the path; returns (u, block, position)."""
    if upos >= BUFFER:
        ublk = fill_uniforms(k0, k1, ublk, ubuf)
        upos = 0
    return ubuf[upos], ublk, upos + 1


@nb.njit(cache=True)
def _discount(alpha, t, s):
    if alpha == 0.0:
        return s
    return np.exp(-alpha * t) * (-np.expm1(-alpha * s)) / alpha


@nb.njit(cache=True)
def _record(trace, tn, step, t, x, h, ev):
    if tn[0] < trace.shape[0]:
        r = tn[0]
        trace[r, 0] = step
        trace[r, 1] = t
        for j in range(x.shape[0]):
            trace[r, 2 + j] = x[j]
        trace[r, 2 + x.shape[0]] = h
        trace[r, 3 + x.shape[0]] = ev
        tn[0] += 1


@nb.njit(cache=True)
def _sample_nu(k0, k1, rs, nbuf, ubuf, xm, atom_w, atom_pts, atom_rel, dens, z):
    """Draw the landing point into ``z``; ``rs`` = (nblk, npos, ublk, upos)."""
    nblk, npos, ublk, upos = rs
    d = xm.shape[0]
    u, ublk, upos = _uniform(k0, k1, ublk, upos, ubuf)
    cum = 0.0
    m = atom_w.shape[0]
    for a in range(m):
        cum += atom_w[a]
        if u < cum:
            for j in range(d):
                z[j] = atom_pts[a, j] + (xm[j] if atom_rel[a] else 0.0)
            return nblk, npos, ublk, upos
    if dens[0] > 0.0:
        radius = dens[1]
        rel = dens[2] > 0.5
        nrm = 0.0
        for j in range(d):
            if npos >= BUFFER:
                nblk = fill_normals(k0, k1, nblk, nbuf)
                npos = 0
            z[j] = nbuf[npos]
            npos += 1
            nrm += z[j] * z[j]
        nrm = np.sqrt(nrm)
        v, ublk, upos = _uniform(k0, k1, ublk, upos, ubuf)
        r = radius * v ** (1.0 / d)
        for j in range(d):
            z[j] = dens[3 + j] + (xm[j] if rel else 0.0) + r * z[j] / nrm
        return nblk, npos, ublk, upos
    # weights summed to slightly below u through rounding: last atom
    for j in range(d):
        z[j] = atom_pts[m - 1, j] + (xm[j] if atom_rel[m - 1] else 0.0)
    return nblk, npos, ublk, upos


@nb.njit(cache=True, nogil=True)
def run_paths(
    start, stop, x0, streams, seed, fcfg, icfg, bp, bi, s_const, a_ids, div_ids, b_ids,
    atom_w, atom_pts, atom_rel, dens, dom_code, dom_p,
    pos_out, time_out, jumps_out, mode_out, flag_out, steps_out, status_out,
    pre_out, integral_out, hazard_out, first_jump_out, trace, trace_n,
):
    d = x0.shape[1]
    dt_base = fcfg[F_DT]
    bfac = fcfg[F_BFAC]
    dt_min = fcfg[F_DTMIN]
    horizon = fcfg[F_HORIZON]
    alpha = fcfg[F_ALPHA]
    btol = fcfg[F_BTOL]
    bridge_var = fcfg[F_BRIDGE_VAR]
    lam = fcfg[F_LAM]
    max_steps = icfg[I_MAX_STEPS]
    max_jumps = icfg[I_MAX_JUMPS]
    trapezoid = icfg[I_HAZARD] == 0
    bridge = icfg[I_EXIT] == 1
    redistribute = icfg[I_REDIST] == 1
    use_domain = icfg[I_USE_DOMAIN] == 1 and dom_code != WHOLE_SPACE
    a_const = icfg[I_A_MODE] == 0
    kid = icfg[I_KAPPA]
    fid = icfg[I_F]
    b_zero = icfg[I_B_ZERO] == 1
    has_div = div_ids[0] >= 0
    horizon_tol = horizon * (1.0 - 1e-12)

    x = np.empty(d)
    y = np.empty(d)
    xm = np.empty(d)
    z = np.empty(d)
    mu = np.empty(d)
    dw = np.empty(d)
    s_var = np.empty((d, d))
    a_work = np.empty((d, d))
    nbuf = np.empty(BUFFER)
    ubuf = np.empty(BUFFER)

    for i in range(start, stop):
        k0 = seed
        k1 = streams[i]
        nblk = 0
        npos = BUFFER
        ublk = 0
        upos = BUFFER
        for j in range(d):
            x[j] = x0[i, j]
        t = 0.0
        h_acc = 0.0
        h_total = 0.0
        integral = 0.0
        jumps = 0
        steps = 0
        status = -1
        mode = NO_EXIT
        bflag = 0
        first_jump = np.inf
        for j in range(d):
            pre_out[i, j] = np.nan
        threshold = np.inf
        kx = 0.0
        if kid >= 0:
            u, ublk, upos = _uniform(k0, k1, ublk, upos, ubuf)
            threshold = -np.log(1.0 - u)
            kx = eval_field(bp, bi, kid, x)
        fx = eval_field(bp, bi, fid, x) if fid >= 0 else 0.0
        tracing = trace.shape[0] > 0
        if tracing:
            _record(trace, trace_n, 0, t, x, h_acc, EV_STEP)

        sdx = 0.0
        if use_domain:
            sdx = dom_sd(dom_code, dom_p, x)
            if not dom_contains(dom_code, dom_p, x):
                status = EXITED
                mode = DIFFUSED_ACROSS

        while status < 0:
            dt = dt_base
            if use_domain:
                if bfac > 0.0:
                    dt = dt_base * min(1.0, bfac * sdx * sdx / (lam * dt_base))
                    if dt < dt_min:
                        dt = dt_min
            if t + dt > horizon:
                dt = horizon - t
            sq = np.sqrt(dt)

            for j in range(d):
                if npos >= BUFFER:
                    nblk = fill_normals(k0, k1, nblk, nbuf)
                    npos = 0
                dw[j] = nbuf[npos] * sq
                npos += 1
            for j in range(d):
                mu[j] = 0.0 if b_zero else eval_field(bp, bi, b_ids[j], x)
            if has_div:
                for j in range(d):
                    mu[j] += 0.5 * eval_field(bp, bi, div_ids[j], x)
            if a_const:
                for j in range(d):
                    acc = 0.0
                    for k in range(d):
                        acc += s_const[j, k] * dw[k]
                    y[j] = x[j] + mu[j] * dt + acc
            else:
                _sqrt_into(bp, bi, a_ids, x, s_var, a_work)
                for j in range(d):
                    acc = 0.0
                    for k in range(d):
                        acc += s_var[j, k] * dw[k]
                    y[j] = x[j] + mu[j] * dt + acc

            ky = 0.0
            dh = 0.0
            if kid >= 0:
                ky = eval_field(bp, bi, kid, y)
                dh = 0.5 * (kx + ky) * dt if trapezoid else kx * dt

            if kid >= 0 and h_acc + dh >= threshold:
                theta = (threshold - h_acc) / dh
                s = theta * dt
                for j in range(d):
                    xm[j] = x[j] + theta * (y[j] - x[j])
                steps += 1
                if fid >= 0:
                    integral += fx * _discount(alpha, t, s)
                if use_domain and not dom_contains(dom_code, dom_p, xm):
                    # the path left D before the clock rang
                    h_total += threshold - h_acc
                    t += s
                    for j in range(d):
                        x[j] = xm[j]
                    status = EXITED
                    mode = DIFFUSED_ACROSS
                    if tracing:
                        _record(trace, trace_n, steps, t, x, h_acc, EV_EXIT)
                    break
                h_total += threshold - h_acc
                t += s
                if first_jump == np.inf:
                    first_jump = t
                for j in range(d):
                    pre_out[i, j] = xm[j]
                if not redistribute:
                    for j in range(d):
                        x[j] = xm[j]
                    status = KILLED
                    if tracing:
                        _record(trace, trace_n, steps, t, x, threshold, EV_DEATH)
                    break
                jumps += 1
                if jumps > max_jumps:
                    for j in range(d):
                        x[j] = xm[j]
                    status = JUMP_BUDGET
                    break
                nblk, npos, ublk, upos = _sample_nu(
                    k0, k1, (nblk, npos, ublk, upos), nbuf, ubuf, xm, atom_w, atom_pts, atom_rel, dens, z
                )
                for j in range(d):
                    x[j] = z[j]
                h_acc = 0.0
                u, ublk, upos = _uniform(k0, k1, ublk, upos, ubuf)
                threshold = -np.log(1.0 - u)
                kx = eval_field(bp, bi, kid, x)
                if fid >= 0:
                    fx = eval_field(bp, bi, fid, x)
                if tracing:
                    _record(trace, trace_n, steps, t, x, h_acc, EV_JUMP)
                if use_domain:
                    sdx = dom_sd(dom_code, dom_p, x)
                if use_domain and not dom_contains(dom_code, dom_p, x):
                    status = EXITED
                    mode = JUMPED_OUTSIDE
                    if abs(sdx) <= btol:
                        bflag = 1
                    if tracing:
                        _record(trace, trace_n, steps, t, x, h_acc, EV_EXIT)
                    break
            else:
                steps += 1
                if fid >= 0:
                    integral += fx * _discount(alpha, t, dt)
                h_acc += dh
                h_total += dh
                t += dt
                for j in range(d):
                    x[j] = y[j]
                kx = ky
                if fid >= 0:
                    fx = eval_field(bp, bi, fid, x)
                if use_domain:
                    sdy = dom_sd(dom_code, dom_p, x)
                    # sd < 0 implies membership; the exact open-set test runs only near the boundary
                    if sdy > -1e-12 and not dom_contains(dom_code, dom_p, x):
                        status = EXITED
                        mode = DIFFUSED_ACROSS
                    elif bridge:
                        p_cross = np.exp(-2.0 * sdx * sdy / (bridge_var * dt))
                        u, ublk, upos = _uniform(k0, k1, ublk, upos, ubuf)
                        if u < p_cross:
                            dom_project(dom_code, dom_p, y, x)
                            status = EXITED
                            mode = DIFFUSED_ACROSS
                    sdx = sdy
                if status == EXITED:
                    if tracing:
                        _record(trace, trace_n, steps, t, x, h_acc, EV_EXIT)
                    break
                if tracing:
                    _record(trace, trace_n, steps, t, x, h_acc, EV_STEP)
                if t >= horizon_tol:
                    status = HORIZON
                    if tracing:
                        _record(trace, trace_n, steps, t, x, h_acc, EV_HORIZON)
                    break
            if steps >= max_steps:
                status = NONEXIT
                break

        for j in range(d):
            pos_out[i, j] = x[j]
        time_out[i] = t
        jumps_out[i] = jumps
        mode_out[i] = mode
        flag_out[i] = bflag
        steps_out[i] = steps
        status_out[i] = status
        integral_out[i] = integral
        hazard_out[i] = h_total
        first_jump_out[i] = first_jump
