"""Compiled inner loops: bridge normals and the per-path integrator.

Everything here is scalar code compiled with numba; the public modules
wrap it.  Keeping the bridge-normal generator in one compiled function
means that :func:`stochflock.paths.refine` and the integrator's dyadic
substeps see bit-identical Brownian values.
"""

from __future__ import annotations

import math

import numba
import numpy as np

LMAX = 52
FULL = 1 << LMAX

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

STATUS_OK = 0
STATUS_COLLIDED = 1
STATUS_NONFINITE = 2

jit = numba.njit(cache=True)


@jit
def _mix(z):
    # splitmix64 finalizer
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@jit
def _float_bits(t):
    buf = np.empty(1, np.float64)
    buf[0] = t
    return buf.view(np.uint64)[0]


@jit
def ndtri(p):
    """Inverse standard normal CDF (Wichura's AS241, as in the stdlib)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e+3 * r +
                     3.3430575583588128105e+4) * r +
                     6.7265770927008700853e+4) * r +
                     4.5921953931549871457e+4) * r +
                     1.3731693765509461125e+4) * r +
                     1.9715909503065514427e+3) * r +
                     1.3314166789178437745e+2) * r +
                     3.3871328727963666080e+0) * q
        den = (((((((5.2264952788528545610e+3 * r +
                     2.8729085735721942674e+4) * r +
                     3.9307895800092710610e+4) * r +
                     2.1213794301586595867e+4) * r +
                     5.3941960214247511077e+3) * r +
                     6.8718700749205790830e+2) * r +
                     4.2313330701600911252e+1) * r +
                     1.0)
        return num / den
    r = p if q <= 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.7454501427834140764e-4 * r +
                     2.2723844989269184583e-2) * r +
                     2.4178072517745061177e-1) * r +
                     1.2704582524523683826e+0) * r +
                     3.6478483247632045605e+0) * r +
                     5.7694972214606914055e+0) * r +
                     4.6303378461565452959e+0) * r +
                     1.4234371107496835773e+0)
        den = (((((((1.0507500716444168432e-9 * r +
                     5.4759380849953449460e-4) * r +
                     1.5198666563616457197e-2) * r +
                     1.4810397642748007459e-1) * r +
                     6.8976733498510000455e-1) * r +
                     1.6763848301838038494e+0) * r +
                     2.0531916266377588219e+0) * r +
                     1.0)
    else:
        r = r - 5.0
        num = (((((((2.0103343992922881327e-7 * r +
                     2.7115555687434875782e-5) * r +
                     1.2426609473880784386e-3) * r +
                     2.6532189526576123093e-2) * r +
                     2.9656057182850489123e-1) * r +
                     1.7848265399172913358e+0) * r +
                     5.4637849111641143699e+0) * r +
                     6.6579046435011037772e+0)
        den = (((((((2.0442631033899397856e-15 * r +
                     1.4215117583164458887e-7) * r +
                     1.8463183175100546818e-5) * r +
                     7.8686913114561325910e-4) * r +
                     1.4875361290850614853e-2) * r +
                     1.3692988092273580531e-1) * r +
                     5.9983220655588793769e-1) * r +
                     1.0)
    x = num / den
    return -x if q < 0.0 else x


@jit
def bridge_z(seed, t0, t1, parts, k):
    h = np.uint64(0)
    h = _mix(h ^ (np.uint64(seed) + _GOLDEN))
    h = _mix(h ^ (_float_bits(t0) + _GOLDEN))
    h = _mix(h ^ (_float_bits(t1) + _GOLDEN))
    h = _mix(h ^ (np.uint64(parts) + _GOLDEN))
    h = _mix(h ^ (np.uint64(k) + _GOLDEN))
    u = (np.float64(h >> _S11) + 0.5) * 1.1102230246251565e-16  # 2^-53
    return ndtri(u)


@jit
def bridge_z_array(seed, t0, t1, parts, k):
    out = np.empty(seed.shape[0])
    for i in range(seed.shape[0]):
        out[i] = bridge_z(seed[i], t0[i], t1[i], parts[i], k[i])
    return out


@jit
def hash_pair(a, b):
    h = _mix(np.uint64(0) ^ (np.uint64(a) + _GOLDEN))
    return _mix(h ^ (np.uint64(b) + _GOLDEN))


@jit
def _counter_bits(seed, stream, k):
    h = _mix(np.uint64(0) ^ (np.uint64(seed) + _GOLDEN))
    h = _mix(h ^ (np.uint64(stream) + _GOLDEN))
    return _mix(h ^ (np.uint64(k) + _GOLDEN))


@jit
def counter_uniform(seed, stream, k):
    """Uniform on (0, 1) at position k of stream ``stream`` of ``seed``."""
    return (np.float64(_counter_bits(seed, stream, k) >> _S11) + 0.5) * 1.1102230246251565e-16


@jit
def counter_normal(seed, stream, k):
    return ndtri(counter_uniform(seed, stream, k))


@jit
def uniforms_batch(seeds, stream, start, count):
    out = np.empty((seeds.shape[0], count))
    for p in range(seeds.shape[0]):
        for k in range(count):
            out[p, k] = counter_uniform(seeds[p], stream, start + k)
    return out


@jit
def normals_batch(seeds, stream, start, count):
    out = np.empty((seeds.shape[0], count))
    for p in range(seeds.shape[0]):
        for k in range(count):
            out[p, k] = counter_normal(seeds[p], stream, start + k)
    return out


@jit
def bridge_value(t0, w0, t1, w1, s, z):
    span = t1 - t0
    mean = w0 + (s - t0) / span * (w1 - w0)
    var = (s - t0) * (t1 - s) / span
    if var < 0.0:
        var = 0.0
    return mean + math.sqrt(var) * z


@jit
def _trailing_zeros(pos):
    c = 0
    while pos & 1 == 0:
        pos >>= 1
        c += 1
    return c


@jit
def dyadic_node(seed, a, b, wa, wb, pos):
    """(t, W) at position ``pos`` (units 2^-LMAX of [a, b]) by midpoint bridges."""
    if pos >= FULL:
        return b, wb
    if pos == 0:
        return a, wa
    depth = LMAX - _trailing_zeros(pos)
    lo_t, hi_t, lo_w, hi_w = a, b, wa, wb
    for lev in range(1, depth + 1):
        mid_t = lo_t + (hi_t - lo_t) * 1 / 2
        z = bridge_z(seed, lo_t, hi_t, 2, 1)
        mid_w = bridge_value(lo_t, lo_w, hi_t, hi_w, mid_t, z)
        if lev == depth:
            return mid_t, mid_w
        if (pos >> (LMAX - lev)) & 1:
            lo_t, lo_w = mid_t, mid_w
        else:
            hi_t, hi_w = mid_t, mid_w
    return b, wb


# ---------------------------------------------------------------------------
# model pieces


@jit
def psi(code, a, shift, r):
    if code == 0:
        val = r ** (-a)
    elif code == 1:
        val = (1.0 + r * r) ** (-a / 2)
    elif code == 2:
        val = abs(math.log1p(r)) ** (-a)
    else:
        val = a
    return val + shift


@jit
def intensity(code, d0, gamma, t):
    if code == 0:
        return d0
    return d0 * (1.0 + t) ** (-gamma)


@jit
def lp(y, p):
    n, d = y.shape
    acc = 0.0
    for i in range(n):
        s = 0.0
        for k in range(d):
            s += y[i, k] * y[i, k]
        e = math.sqrt(s)
        if math.isinf(p):
            if e > acc:
                acc = e
        elif p == 2.0:
            acc += e * e
        else:
            acc += e ** p
    if math.isinf(p):
        return acc
    if p == 2.0:
        return math.sqrt(acc)
    return acc ** (1.0 / p)


@jit
def pair_distances(x, r):
    """Fill r[i, j] with |x_i - x_j|; return (min over i < j, i, j)."""
    n, d = x.shape
    best = np.inf
    bi = -1
    bj = -1
    for i in range(n):
        r[i, i] = 0.0
        for j in range(i + 1, n):
            s = 0.0
            for k in range(d):
                diff = x[j, k] - x[i, k]
                s += diff * diff
            rij = math.sqrt(s)
            r[i, j] = rij
            r[j, i] = rij
            if rij < best:
                best, bi, bj = rij, i, j
    return best, bi, bj


@jit
def drift_into(r, v, kcode, ka, kshift, lam, cut, out, rows):
    """Cutoff drift from distances ``r`` into ``out``; returns the stiffness bound."""
    n, d = v.shape
    for i in range(n):
        rows[i] = 0.0
        for k in range(d):
            out[i, k] = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            w = psi(kcode, ka, kshift, max(r[i, j], cut))
            for k in range(d):
                f = w * (v[j, k] - v[i, k])
                out[i, k] += f
                out[j, k] -= f
            rows[i] += abs(w)
            rows[j] += abs(w)
    c = lam / n
    top = 0.0
    for i in range(n):
        top = max(top, rows[i])
        for k in range(d):
            out[i, k] *= c
    return c * top


@jit
def _record(slot, x, v, md, t, w, m, xsup, vint, plist, o_xn, o_vn, o_xs, o_vi,
            o_md, o_xsum, o_vsum, o_w, o_m, o_t, keep, o_x, o_v):
    n, d = x.shape
    for q in range(plist.shape[0]):
        xn = lp(x, plist[q])
        o_xn[slot, q] = xn
        o_vn[slot, q] = lp(v, plist[q])
        o_xs[slot, q] = max(xsup[q], xn)
        o_vi[slot, q] = vint[q]
    o_md[slot] = md
    sx = 0.0
    sv = 0.0
    for k in range(d):
        ax = 0.0
        av = 0.0
        for i in range(n):
            ax += x[i, k]
            av += v[i, k]
        sx += ax * ax
        sv += av * av
    o_xsum[slot] = math.sqrt(sx)
    o_vsum[slot] = math.sqrt(sv)
    o_w[slot] = w
    o_m[slot] = m
    o_t[slot] = t
    if keep:
        o_x[slot] = x
        o_v[slot] = v


@jit
def run_path(x, v, seed, grid, slot, kcode, ka, kshift, lam, ncode, nd0, ngam,
             dt_min, c_cfl, c_stiff, cutoffs, plist,
             o_xn, o_vn, o_xs, o_vi, o_md, o_xsum, o_vsum, o_w, o_m, o_t,
             keep, o_x, o_v, level_times):
    """Integrate one path in place; returns (status, time, i, j, substeps).

    Base increments are counter normals of stream 0; the k-th base step
    uses counter k.
    """
    n, d = x.shape
    n_lev = cutoffs.shape[0]
    thr = cutoffs[n_lev - 1]
    npl = plist.shape[0]
    xsup = np.zeros(npl)
    vint = np.zeros(npl)
    b = np.empty((n, d))
    r = np.empty((n, n))
    rows = np.empty(n)
    t = 0.0
    w = 0.0
    m = 0.0
    status = STATUS_OK
    tc = np.nan
    ci = -1
    cj = -1
    nsub = 0
    lvl = 0
    nsteps = grid.shape[0] - 1
    md, pi, pj = pair_distances(x, r)
    if slot[0] >= 0:
        _record(slot[0], x, v, md, t, w, m, xsup, vint, plist, o_xn, o_vn, o_xs,
                o_vi, o_md, o_xsum, o_vsum, o_w, o_m, o_t, keep, o_x, o_v)
    j = 0
    while j < nsteps:
        a = grid[j]
        bnd = grid[j + 1]
        h = bnd - a
        wa = w
        wb = w + math.sqrt(h) * counter_normal(seed, 0, j)
        cap = int(math.floor(math.log2(h / dt_min)))
        cap = min(max(cap, 1), LMAX)
        pos = 0
        while pos < FULL:
            md, pi, pj = pair_distances(x, r)
            while lvl < n_lev and md <= cutoffs[lvl]:
                level_times[lvl] = t
                lvl += 1
            for q in range(npl):
                xsup[q] = max(xsup[q], lp(x, plist[q]))
            if md < thr:
                status = STATUS_COLLIDED
                tc, ci, cj = t, pi, pj
                break
            cut = cutoffs[min(lvl, n_lev - 1)]
            stiff = drift_into(r, v, kcode, ka, kshift, lam, cut, b, rows)
            vn2 = 0.0
            for i in range(n):
                for k in range(d):
                    vn2 += v[i, k] * v[i, k]
            dt_eff = h
            if n > 1:
                dt_eff = min(dt_eff, c_cfl * md / (1.0 + math.sqrt(vn2)))
            if stiff > 0.0:
                dt_eff = min(dt_eff, c_stiff / stiff)
            if pos == 0 and dt_eff >= h:
                lev = 0
            else:
                lev = cap
                if dt_eff > 0.0:
                    lev = min(max(int(math.ceil(math.log2(h / dt_eff))), 1), cap)
                if pos > 0:
                    lev = max(lev, LMAX - _trailing_zeros(pos))
            new = pos + (1 << (LMAX - lev))
            if lev == 0:
                tn, wn = bnd, wb
            else:
                tn, wn = dyadic_node(seed, a, bnd, wa, wb, new)
            dt = tn - t
            dw = wn - w
            dcoef = intensity(ncode, nd0, ngam, t)
            for q in range(npl):
                vint[q] += lp(v, plist[q]) * dt
            finite = True
            for i in range(n):
                for k in range(d):
                    vi = v[i, k]
                    x[i, k] = x[i, k] + vi * dt
                    v[i, k] = vi + b[i, k] * dt + dcoef * vi * dw
                    if not (math.isfinite(x[i, k]) and math.isfinite(v[i, k])):
                        finite = False
            if not finite:
                return STATUS_NONFINITE, t, -1, -1, nsub
            m += dcoef * dw
            w = wn
            t = tn
            pos = new
            if lev > 0:
                nsub += 1
        if status == STATUS_COLLIDED:
            break
        j += 1
        if slot[j] >= 0:
            md = pair_distances(x, r)[0]
            _record(slot[j], x, v, md, t, w, m, xsup, vint, plist, o_xn, o_vn, o_xs,
                    o_vi, o_md, o_xsum, o_vsum, o_w, o_m, o_t, keep, o_x, o_v)
    if status == STATUS_OK:
        md, pi, pj = pair_distances(x, r)
        while lvl < n_lev and md <= cutoffs[lvl]:
            level_times[lvl] = t
            lvl += 1
        if md < thr:
            status = STATUS_COLLIDED
            tc, ci, cj = t, pi, pj
    else:
        for jj in range(j + 1, nsteps + 1):
            if slot[jj] >= 0:
                _record(slot[jj], x, v, md, t, w, m, xsup, vint, plist, o_xn, o_vn,
                        o_xs, o_vi, o_md, o_xsum, o_vsum, o_w, o_m, o_t, keep,
                        o_x, o_v)
    return status, tc, ci, cj, nsub


@jit
def run_batch(x, v, seeds, grid, slot, kcode, ka, kshift, lam, ncode, nd0, ngam,
              dt_min, c_cfl, c_stiff, cutoffs, plist,
              o_xn, o_vn, o_xs, o_vi, o_md, o_xsum, o_vsum, o_w, o_m, o_t,
              keep, o_x, o_v, level_times, status, coll_time, pairs, nsub):
    """Run :func:`run_path` for every path; stops at the first non-finite path."""
    for p in range(seeds.shape[0]):
        st, tc, ci, cj, ns = run_path(
            x[p], v[p], seeds[p], grid, slot, kcode, ka, kshift, lam, ncode, nd0,
            ngam, dt_min, c_cfl, c_stiff, cutoffs, plist, o_xn[p], o_vn[p], o_xs[p],
            o_vi[p], o_md[p], o_xsum[p], o_vsum[p], o_w[p], o_m[p], o_t[p], keep,
            o_x[p], o_v[p], level_times[p])
        status[p] = st
        coll_time[p] = tc
        pairs[p, 0] = ci
        pairs[p, 1] = cj
        nsub[p] = ns
        if st == STATUS_NONFINITE:
            return p
    return -1
