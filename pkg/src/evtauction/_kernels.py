"""Compiled integrands for the self-normalized limit densities.

Every density in the package is a one-dimensional integral over a location
or scale nuisance. Each integral is written as the integral of exp(L(t)) over
the whole real line, after a smooth change of variable that removes the
endpoints. The driver finds the mode of L by damped Newton steps, then applies a
trapezoid rule in u, where t = mode + 2 sd sinh(u) and sd is the curvature
scale at the mode, marching outward until the integrand is negligible.
The mapped integrands are analytic and decay at both ends, so the rule
converges geometrically in the step size.

Conventions: ``w`` is an augmented sorted point (0, z_1, ..., z_N, 1) of
length n; ``k`` is the Gamma order of the underlying exponential sums
(2 for second-price, 1 for the first-order law); ``r`` is the GEV shape.
All results are logarithms.
"""
import math

import numba as nb
import numpy as np

XI_ZERO = 1e-6
NEG_INF = -np.inf
# log-integrand drop at which the trapezoid sum stops
DROP = 36.0
MAX_STEPS = 2000


@nb.njit(cache=True)
def _softplus(t):
    # log(1 + e^t)
    if t > 30.0:
        return t + math.log1p(math.exp(-t))
    return math.log1p(math.exp(t))


@nb.njit(cache=True)
def _sigmoid_pair(t):
    # (sigma(t), 1 - sigma(t)) without cancellation
    if t >= 0:
        e = math.exp(-t)
        return 1.0 / (1.0 + e), e / (1.0 + e)
    e = math.exp(t)
    return e / (1.0 + e), 1.0 / (1.0 + e)


# ---------------------------------------------------------------------------
# kind 0: marginal of the self-normalized vector with s-weight s**p S**(-a)
#   integral over s of s^p prod (1 + r s w_i)^(-k/r - 1) S(s)^(-a)
#   S(s) = sum (1 + r s w_i)^(-1/r)
# kind 1: joint density of (c / R, Z~) in the log of the largest T
#   params q0 = R
# kind 2: joint density of ((pi - Z_(1)) / R, Z~) in the scale R
#   params q0 = y, q1 = A = 1 + r pi, q2 = R_lo, q3 = R_hi
# ---------------------------------------------------------------------------


@nb.njit(cache=True)
def _L_marginal(t, w, r, k, p, a):
    n = w.size
    if r >= XI_ZERO:
        s = math.exp(t)
        sl = 0.0
        S = 0.0
        for i in range(n):
            lq = math.log1p(r * s * w[i])
            sl += lq
            S += math.exp(-lq / r)
        return (p + 1.0) * t + (-k / r - 1.0) * sl - a * math.log(S)
    if r > -XI_ZERO:
        s = math.exp(t)
        sw = 0.0
        S = 0.0
        for i in range(n):
            sw += w[i]
            S += math.exp(-s * w[i])
        return (p + 1.0) * t - k * s * sw - a * math.log(S)
    # r < 0: s = b * sigma(t), b = -1/r, 1 + r s w = (1 - w) + w (1 - sigma)
    b = -1.0 / r
    sg, sm = _sigmoid_pair(t)
    logs = math.log(b) - _softplus(-t)
    logj = math.log(b) - _softplus(-t) - _softplus(t)
    sl = 0.0
    S = 0.0
    for i in range(n):
        q = (1.0 - w[i]) + w[i] * sm
        if q <= 0.0:
            return NEG_INF
        lq = math.log(q)
        sl += lq
        S += math.exp(-lq / r)
    return p * logs + logj + (-k / r - 1.0) * sl - a * math.log(S)


@nb.njit(cache=True)
def _L_ymu(t, w, r, k, R):
    n = w.size
    if r >= XI_ZERO:
        v = t
        tot = -r * v
        erv = r * R * math.exp(r * v)
        for i in range(n):
            lT = v - math.log1p(erv * w[i]) / r
            tot += (k + r) * lT - math.exp(lT)
        return tot
    if r > -XI_ZERO:
        v = t
        tot = 0.0
        for i in range(n):
            lT = v - R * w[i]
            tot += k * lT - math.exp(lT)
        return tot
    # v = v0 + softplus(t): exponential approach to the endpoint v0 on the
    # left, linear growth on the right
    ar = -r
    v0 = math.log(ar * R) / ar
    sp = _softplus(t)
    v = v0 + sp
    em = math.expm1(-ar * sp)
    tot = -r * v - _softplus(-t)
    for i in range(n):
        q = (1.0 - w[i]) - w[i] * em
        if q <= 0.0:
            return NEG_INF
        lT = v + math.log(q) / ar
        tot += (k + r) * lT - math.exp(lT)
    return tot


@nb.njit(cache=True)
def _L_ypi(t, w, r, k, y, A, rlo, rhi, pi_, mode):
    n = w.size
    if mode == 3:
        # y > 0 and r >= 0: integrate over v = log T of the minimum,
        # v = v_min + softplus(t), where v_min corresponds to R = 0
        sp = _softplus(t)
        lsig = -_softplus(-t)
        if r < XI_ZERO:
            R = sp / y
            if R <= 0.0:
                return NEG_INF
            v = -pi_ + sp
            tot = (n - 1.0) * math.log(R) - math.log(y) + lsig
            for i in range(n):
                lT = v - R * w[i]
                tot += k * lT - math.exp(lT)
            return tot
        base0 = A * math.exp(-r * sp)
        R = -A * math.expm1(-r * sp) / (r * y)
        if R <= 0.0:
            return NEG_INF
        tot = (n - 1.0) * math.log(R) + math.log(base0 / y) + lsig
        for i in range(n):
            lT = -math.log(base0 + r * R * w[i]) / r
            tot += (k + r) * lT - math.exp(lT)
        return tot
    if abs(r) < XI_ZERO:
        R = math.exp(t)
        tot = (n - 1.0) * t + t
        for i in range(n):
            lT = -pi_ - R * (w[i] - y)
            tot += k * lT - math.exp(lT)
        return tot
    if math.isinf(rhi):
        d = math.exp(t)
        dc = np.inf
        logj = t
    else:
        sg, sm = _sigmoid_pair(t)
        width = rhi - rlo
        d = width * sg
        dc = width * sm
        logj = math.log(width) - _softplus(-t) - _softplus(t)
    R = rlo + d
    if R <= 0.0:
        return NEG_INF
    tot = (n - 1.0) * math.log(R) + logj
    for i in range(n):
        g = r * (w[i] - y)
        if g < 0.0:
            base = max(A + g * rhi, 0.0) - g * dc
        elif g > 0.0:
            base = max(A + g * rlo, 0.0) + g * d
        else:
            base = A
        if base <= 0.0:
            return NEG_INF
        lT = -math.log(base) / r
        tot += (k + r) * lT - math.exp(lT)
    return tot


@nb.njit(cache=True)
def _L(kind, t, w, r, k, q0, q1, q2, q3, q4, q5):
    if kind == 0:
        return _L_marginal(t, w, r, k, q0, q1)
    if kind == 1:
        return _L_ymu(t, w, r, k, q0)
    return _L_ypi(t, w, r, k, q0, q1, q2, q3, q4, q5)


@nb.njit(cache=True)
def _integrate(kind, w, r, k, q0, q1, q2, q3, q4, q5, t0, step):
    """log of the integral of exp(L(t)) over the real line."""
    t = t0
    L0 = _L(kind, t, w, r, k, q0, q1, q2, q3, q4, q5)
    # find a finite starting value
    if not math.isfinite(L0):
        found = False
        for j in range(1, 80):
            for sgn in (1.0, -1.0):
                tt = t0 + sgn * 0.5 * j
                LL = _L(kind, tt, w, r, k, q0, q1, q2, q3, q4, q5)
                if math.isfinite(LL):
                    t = tt
                    L0 = LL
                    found = True
                    break
            if found:
                break
        if not found:
            return NEG_INF
    # coarse walk uphill in steps of 2 so Newton starts near the mode
    for sgn in (1.0, -1.0):
        moved = False
        for _ in range(60):
            Ln = _L(kind, t + 2.0 * sgn, w, r, k, q0, q1, q2, q3, q4, q5)
            if math.isfinite(Ln) and Ln > L0:
                t += 2.0 * sgn
                L0 = Ln
                moved = True
            else:
                break
        if moved:
            break
    # damped Newton ascent on L with central differences
    dh = 1e-4
    curv = -1.0
    for it in range(100):
        Lp = _L(kind, t + dh, w, r, k, q0, q1, q2, q3, q4, q5)
        Lm = _L(kind, t - dh, w, r, k, q0, q1, q2, q3, q4, q5)
        if not (math.isfinite(Lp) and math.isfinite(Lm)):
            # sitting at the edge of the numerical domain: nudge inward
            dt = 0.5 if math.isfinite(Lp) else -0.5
            curv = -1.0
        else:
            g = (Lp - Lm) / (2.0 * dh)
            curv = (Lp - 2.0 * L0 + Lm) / (dh * dh)
            if curv < 0.0:
                dt = -g / curv
            else:
                dt = 2.0 if g > 0 else -2.0
            if dt > 4.0:
                dt = 4.0
            elif dt < -4.0:
                dt = -4.0
        # backtrack until L does not decrease
        accepted = False
        for _ in range(30):
            Ln = _L(kind, t + dt, w, r, k, q0, q1, q2, q3, q4, q5)
            if math.isfinite(Ln) and Ln >= L0 - 1e-10:
                accepted = True
                break
            dt *= 0.5
        if not accepted:
            break
        t += dt
        L0 = Ln
        if abs(dt) < 1e-4:
            break
    # refresh curvature at the mode for the step size
    Lp = _L(kind, t + dh, w, r, k, q0, q1, q2, q3, q4, q5)
    Lm = _L(kind, t - dh, w, r, k, q0, q1, q2, q3, q4, q5)
    if math.isfinite(Lp) and math.isfinite(Lm):
        curv = (Lp - 2.0 * L0 + Lm) / (dh * dh)
    if curv < -1e-12:
        sd = 1.0 / math.sqrt(-curv)
    else:
        sd = 1.0
    # trapezoid in u with t = mode + c sinh(u): fine spacing at the peak,
    # geometrically growing spacing in the exponential tails
    c = 2.0 * sd
    Lmax = L0
    total = 1.0
    for sgn in (1.0, -1.0):
        j = 1
        while j < MAX_STEPS:
            u = sgn * j * step
            Lj = _L(kind, t + c * math.sinh(u), w, r, k, q0, q1, q2, q3, q4, q5)
            if not math.isfinite(Lj):
                break
            if Lj > Lmax:
                # found a higher point: rescale the running sum
                total = total * math.exp(Lmax - Lj)
                Lmax = Lj
            total += math.exp(Lj - Lmax) * math.cosh(u)
            if Lj < Lmax - DROP and j > 2:
                break
            j += 1
    return Lmax + math.log(step * c * total)


@nb.njit(cache=True)
def _lfact(n):
    return math.lgamma(n + 1.0)


@nb.njit(cache=True)
def log_marginal_point(w, r, k, j, step):
    """log of the self-normalized density (j = 0) or of kappa * density (j = 1).

    Includes the n! Gamma(nk - r j) / Gamma(k)^n prefactor.
    """
    n = w.size
    N = n - 2
    a = n * k - r * j
    if a <= 0.0:
        return np.inf
    # start near s = 1
    t0 = 0.0
    if r <= -XI_ZERO and -1.0 / r > 1.0:
        t0 = -math.log(-1.0 / r - 1.0)
    val = _integrate(0, w, r, k, N + j, a, 0.0, 0.0, 0.0, 0, t0, step)
    return val + _lfact(n) + math.lgamma(a) - n * math.lgamma(k)


@nb.njit(cache=True)
def log_ymu_point(y, w, r, k, c, step):
    """log joint density of Y = c / (Z_(n) - Z_(1)) and the normalized point."""
    if y <= 0.0:
        return NEG_INF
    n = w.size
    R = c / y
    t0 = math.log(k + math.log(n)) if r > -XI_ZERO else 0.0
    if r <= -XI_ZERO:
        # v = v0 + e^t with v = log of the largest T
        gap = math.log(k + math.log(n)) - math.log(-r * R) / (-r)
        t0 = math.log(math.expm1(gap)) if gap > 1e-3 else -7.0
    val = _integrate(1, w, r, k, R, 0.0, 0.0, 0.0, 0.0, 0, t0, step)
    return val + _lfact(n) + (n - 1.0) * math.log(c) - n * math.log(y) - n * math.lgamma(k)


@nb.njit(cache=True)
def ypi_bounds(y, w, r, A):
    """Range (R_lo, R_hi) of the scale keeping all 1 + r Z_i positive."""
    rlo = 0.0
    rhi = np.inf
    for i in range(w.size):
        g = r * (w[i] - y)
        if g > 0.0:
            if A < 0.0:
                cand = -A / g
                if cand > rlo:
                    rlo = cand
        elif g < 0.0:
            if A <= 0.0:
                return 1.0, 0.0
            cand = A / (-g)
            if cand < rhi:
                rhi = cand
        else:
            if A <= 0.0:
                return 1.0, 0.0
    return rlo, rhi


@nb.njit(cache=True)
def log_ypi_point(y, w, r, k, pi_, step):
    """log joint density of Y = (pi - Z_(1)) / (Z_(n) - Z_(1)) and the point."""
    n = w.size
    pref = _lfact(n) - n * math.lgamma(k)
    A = 1.0 + r * pi_
    if r > -XI_ZERO and y > 0.0:
        if r >= XI_ZERO and A <= 0.0:
            return NEG_INF
        # start where R is about one (or half the admissible range)
        if r < XI_ZERO:
            sp = y
        else:
            rg = min(1.0, 0.5 * A / (r * y))
            sp = -math.log1p(-r * y * rg / A) / r
        t0 = math.log(math.expm1(sp)) if sp < 30.0 else sp
        val = _integrate(2, w, r, k, y, A, 0.0, np.inf, pi_, 3, t0, step)
        return val + pref
    if abs(r) < XI_ZERO:
        val = _integrate(2, w, r, k, y, 0.0, 0.0, np.inf, pi_, 0, 0.0, step)
        return val + pref
    rlo, rhi = ypi_bounds(y, w, r, A)
    if not rlo < rhi:
        return NEG_INF
    # start where the range R is about one
    if math.isinf(rhi):
        t0 = 0.0 if rlo < 0.5 else math.log(rlo)
    elif rlo < 1.0 < rhi:
        t0 = math.log((1.0 - rlo) / (rhi - 1.0))
    else:
        t0 = 0.0
    val = _integrate(2, w, r, k, y, A, rlo, rhi, pi_, 0, t0, step)
    return val + pref


# ---------------------------------------------------------------------------
# batch drivers
# ---------------------------------------------------------------------------


@nb.njit(cache=True)
def log_marginal_batch(W, shapes, k, j, step):
    B = W.shape[0]
    K = shapes.size
    out = np.empty((B, K))
    for b in range(B):
        w = W[b]
        for m in range(K):
            out[b, m] = log_marginal_point(w, shapes[m], k, j, step)
    return out


@nb.njit(cache=True)
def log_ymu_batch(W, ys, shapes, cvals, k, step):
    B = W.shape[0]
    K = shapes.size
    out = np.empty((B, K))
    for b in range(B):
        w = W[b]
        for m in range(K):
            out[b, m] = log_ymu_point(ys[b], w, shapes[m], k, cvals[m], step)
    return out


@nb.njit(cache=True)
def log_ypi_batch(W, ys, shapes, pivals, k, step):
    B = W.shape[0]
    K = shapes.size
    out = np.empty((B, K))
    for b in range(B):
        w = W[b]
        for m in range(K):
            out[b, m] = log_ypi_point(ys[b], w, shapes[m], k, pivals[m], step)
    return out
