"""Compiled inner loops.

Atom arrays ``x`` (positions, finite, descending) and ``w`` (weights) are
passed explicitly so the kernels stay free of Python objects.
"""
import math

import numpy as np
from numba import njit

PI = math.pi


@njit(cache=True, inline="always")
def _nadd(s, c, v):
    # Neumaier compensated add; returns (sum, compensation)
    tt = s + v
    if abs(s) >= abs(v):
        c += (s - tt) + v
    else:
        c += (v - tt) + s
    return tt, c


@njit(cache=True, nogil=True)
def cauchy_sum(x, w, zr, zi, p):
    """sum_k w_k / (x_k - z)^(p+1), compensated. Returns (re, im, pole)."""
    sr = 0.0
    cr = 0.0
    si = 0.0
    ci = 0.0
    for k in range(x.shape[0]):
        dr = x[k] - zr
        di = -zi
        if abs(dr) < 1e-300 and abs(di) < 1e-300:
            return 0.0, 0.0, True
        d = complex(dr, di)
        q = d
        for _ in range(p):
            q = q * d
        term = w[k] / q
        sr, cr = _nadd(sr, cr, term.real)
        si, ci = _nadd(si, ci, term.imag)
    return sr + cr, si + ci, False


@njit(cache=True, nogil=True)
def lorentz(x, w, u, s):
    """G = sum w/((u-x)^2+s) with dG/ds and dG/du."""
    g = 0.0
    cg = 0.0
    gs = 0.0
    gu = 0.0
    for k in range(x.shape[0]):
        d = u - x[k]
        q = d * d + s
        if q == 0.0:
            return np.inf, -np.inf, 0.0
        iq = 1.0 / q
        g, cg = _nadd(g, cg, w[k] * iq)
        gs -= w[k] * iq * iq
        gu -= 2.0 * w[k] * d * iq * iq
    return g + cg, gs, gu


@njit(cache=True, nogil=True)
def boundary_height(x, w, t, u, vtol):
    """Smallest v >= 0 with sum w/((u-x)^2+v^2) <= 1/t."""
    invt = 1.0 / t
    g0, gs0, _ = lorentz(x, w, u, 0.0)
    if g0 <= invt:
        return 0.0
    mass = 0.0
    for k in range(w.shape[0]):
        mass += w[k]
    s_lo = 0.0
    s_hi = mass * t
    if np.isfinite(g0):
        s = 0.0
    else:
        s = 1e-30 * s_hi
    # h(s) = 1/G(s) - t is concave increasing; Newton from the left is monotone
    for _ in range(300):
        g, gs, _gu = lorentz(x, w, u, s)
        if not np.isfinite(g):
            s_lo = s
            s = max(2.0 * s, 1e-300)
            continue
        h = 1.0 / g - t
        if h < 0.0:
            s_lo = s
        else:
            s_hi = s
        hp = -gs / (g * g)
        if hp > 0.0:
            s_new = s - h / hp
        else:
            s_new = 0.5 * (s_lo + s_hi)
        if not (s_new > s_lo and s_new < s_hi):
            s_new = 0.5 * (s_lo + s_hi)
        if abs(math.sqrt(s_new) - math.sqrt(s)) <= vtol:
            return math.sqrt(s_new)
        if s_hi - s_lo <= 0.0:
            return math.sqrt(s_new)
        s = s_new
    return math.sqrt(s)


@njit(cache=True, nogil=True)
def boundary_point(x, w, t, u, vtol):
    """(v, Y, m_re, m_im): boundary height, Re M(u+iv) and m0(u+iv)."""
    v = boundary_height(x, w, t, u, vtol)
    mr, mi, pole = cauchy_sum(x, w, u, v, 0)
    if pole:
        return v, np.nan, np.nan, np.nan
    if v == 0.0:
        mi = 0.0
    return v, u - t * mr, mr, mi


@njit(cache=True, nogil=True)
def log_potential_im(x, w, u, v):
    """Im sum w log(x - (u+iv)) on the principal branch, v >= 0."""
    s = 0.0
    c = 0.0
    for k in range(x.shape[0]):
        d = x[k] - u
        if v == 0.0:
            a = -PI if d < 0.0 else 0.0
        else:
            a = math.atan2(-v, d)
        s, c = _nadd(s, c, w[k] * a)
    return s + c


@njit(cache=True, nogil=True)
def mass_above(x, w, t, u, vtol):
    """mu_t([Y(u), inf)) via the log-potential along the boundary."""
    v, y, mr, mi = boundary_point(x, w, t, u, vtol)
    mass = 0.0
    for k in range(w.shape[0]):
        mass += w[k]
    phi = log_potential_im(x, w, u, v)
    val = mass + (phi + t * mr * mi) / PI
    if val < 0.0:
        val = 0.0
    if val > mass:
        val = mass
    return val


@njit(cache=True, nogil=True)
def _target(mode, x, w, t, u, vtol):
    if mode == 0:
        return boundary_point(x, w, t, u, vtol)[1]
    return -mass_above(x, w, t, u, vtol)


@njit(cache=True, nogil=True)
def solve_increasing(mode, x, w, t, target, ulo, uhi, vtol, utol):
    """Root of f(u) = target for increasing f on [ulo, uhi] (Illinois)."""
    flo = _target(mode, x, w, t, ulo, vtol) - target
    fhi = _target(mode, x, w, t, uhi, vtol) - target
    if flo >= 0.0:
        return ulo
    if fhi <= 0.0:
        return uhi
    a, b, fa, fb = ulo, uhi, flo, fhi
    side = 0
    for _ in range(200):
        if b - a <= utol:
            break
        c = (a * fb - b * fa) / (fb - fa)
        # keep the regula falsi point away from stagnation
        lo = a + 0.01 * (b - a)
        hi = b - 0.01 * (b - a)
        if not (c > lo and c < hi):
            c = 0.5 * (a + b)
        fc = _target(mode, x, w, t, c, vtol) - target
        if fc == 0.0:
            return c
        if fc < 0.0:
            a, fa = c, fc
            if side == -1:
                fb *= 0.5
            side = -1
        else:
            b, fb = c, fc
            if side == 1:
                fa *= 0.5
            side = 1
    return 0.5 * (a + b)


@njit(cache=True, nogil=True)
def solve_batch(mode, x, w, t, targets, ulo, uhi, vtol, utol):
    out = np.empty(targets.shape[0])
    for i in range(targets.shape[0]):
        out[i] = solve_increasing(mode, x, w, t, targets[i], ulo[i], uhi[i], vtol, utol)
    return out


@njit(cache=True, nogil=True)
def boundary_table(x, w, t, us, vtol):
    n = us.shape[0]
    v = np.empty(n)
    y = np.empty(n)
    f = np.empty(n)
    for i in range(n):
        vi, yi, mr, mi = boundary_point(x, w, t, us[i], vtol)
        v[i] = vi
        y[i] = yi
        f[i] = mass_above(x, w, t, us[i], vtol)
    return v, y, f


@njit(cache=True, nogil=True)
def subordinate(x, w, t, zr, zi, tol, stages):
    """Solve w - t m0(w) = z for w in Lambda_t by damped Newton with
    continuation in Im z. Returns (w_re, w_im, ok)."""
    mass = 0.0
    xmax = 0.0
    for k in range(x.shape[0]):
        mass += w[k]
        xmax = max(xmax, abs(x[k]))
    top = max(10.0 * zi, math.sqrt(mass * t) + xmax + abs(zr) + 1.0)
    nst = stages
    if zi > 0.0:
        nst = max(stages, int(math.ceil(stages * math.log10(top / zi))))
    mr, mi, _ = cauchy_sum(x, w, zr, top, 0)
    wc = complex(zr + t * mr, top + t * mi)
    ok = True
    for st in range(nst + 1):
        lev = top * (zi / top) ** (st / nst) if zi > 0.0 else top * (1e-300 / top) ** (st / nst)
        if st == nst:
            lev = zi
        target = complex(zr, lev)
        stol = tol if st == nst else 1e-8 * (1.0 + abs(target))
        conv = False
        for _ in range(200):
            mr, mi, pole = cauchy_sum(x, w, wc.real, wc.imag, 0)
            if pole:
                return wc.real, wc.imag, False
            F = wc - t * complex(mr, mi) - target
            if abs(F) <= stol:
                conv = True
                break
            dr, di, _ = cauchy_sum(x, w, wc.real, wc.imag, 1)
            J = 1.0 - t * complex(dr, di)
            step = F / J
            lam = 1.0
            accepted = False
            for _k in range(60):
                wn = wc - lam * step
                if wn.imag > 0.0:
                    g, _gs, _gu = lorentz(x, w, wn.real, wn.imag * wn.imag)
                    if g * t < 1.0:
                        nr, ni, npole = cauchy_sum(x, w, wn.real, wn.imag, 0)
                        if not npole:
                            Fn = wn - t * complex(nr, ni) - target
                            if abs(Fn) < abs(F):
                                accepted = True
                                break
                lam *= 0.5
            if not accepted:
                break
            wc = wn
        if not conv and st == nst:
            ok = False
    return wc.real, wc.imag, ok


# ---------------------------------------------------------------- particles


@njit(cache=True, nogil=True)
def drift(x, n_total):
    """(1/n) sum_{j != i} 1/(x_i - x_j) over finite particles."""
    m = x.shape[0]
    d = np.zeros(m)
    for i in range(m):
        for j in range(i + 1, m):
            r = 1.0 / (x[i] - x[j])
            d[i] += r
            d[j] -= r
    return d / n_total


@njit(cache=True, nogil=True)
def _drift_hess(x, n_total, d, hd, off):
    m = x.shape[0]
    for i in range(m):
        d[i] = 0.0
        hd[i] = 0.0
    for i in range(m):
        xi = x[i]
        for j in range(i + 1, m):
            r = 1.0 / (xi - x[j])
            r2 = r * r
            d[i] += r
            d[j] -= r
            hd[i] += r2
            hd[j] += r2
    inv = 1.0 / n_total
    for i in range(m):
        d[i] *= inv
        hd[i] *= inv
    for i in range(m - 1):
        g = x[i] - x[i + 1]
        off[i] = -inv / (g * g)


@njit(cache=True, nogil=True)
def _merit(x, y, h, n_total):
    m = x.shape[0]
    s = 0.0
    for i in range(m):
        s += (x[i] - y[i]) ** 2 / (2.0 * h)
    e = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            e += math.log(x[i] - x[j])
    return s - e / n_total


@njit(cache=True, nogil=True)
def implicit_solve(lam, y, h, n_total, tol, maxit, dense_after=12):
    """Solve x - h*drift(x) = y inside the ordering chamber of lam.

    x minimises |x-y|^2/(2h) - (1/n) sum_{i<j} log(x_i-x_j), a strictly
    convex problem on the chamber; Newton with the nearest-neighbour part of
    the Hessian as preconditioner. Returns (x, converged, iterations).
    """
    m = lam.shape[0]
    x = lam.copy()
    if m == 0:
        return x, True, 0
    if m > 1:
        # start from the best dilation x = c + k (lam - c): along that ray the
        # energy is quadratic in k minus P log k, minimised in closed form
        c = 0.0
        for i in range(m):
            c += lam[i]
        c /= m
        qa = 0.0
        qb = 0.0
        for i in range(m):
            di = lam[i] - c
            qa += di * di
            qb += di * (y[i] - c)
        P = m * (m - 1) / (2.0 * n_total)
        k = (qb + math.sqrt(qb * qb + 4.0 * qa * h * P)) / (2.0 * qa)
        if k > 1.0:
            for i in range(m):
                x[i] = c + k * (lam[i] - c)
    d = np.empty(m)
    hd = np.empty(m)
    off = np.empty(max(m - 1, 1))
    F = np.empty(m)
    cp = np.empty(m)
    dp = np.empty(m)
    delta = np.empty(m)
    xn = np.empty(m)
    _drift_hess(x, n_total, d, hd, off)
    for i in range(m):
        F[i] = x[i] - y[i] - h * d[i]
    for it in range(maxit):
        res = 0.0
        for i in range(m):
            res = max(res, abs(F[i]))
        if res <= tol:
            return x, True, it
        if it >= dense_after and m > 1:
            # full Hessian once the banded preconditioner has stalled
            H = np.empty((m, m))
            inv = h / n_total
            for i in range(m):
                H[i, i] = 1.0 + h * hd[i]
                for j in range(i + 1, m):
                    g = x[i] - x[j]
                    H[i, j] = -inv / (g * g)
                    H[j, i] = H[i, j]
            sol = np.linalg.solve(H, -F)
            for i in range(m):
                delta[i] = sol[i]
        elif m == 1:
            delta[0] = -F[0] / (1.0 + h * hd[0])
        else:
            # Thomas solve (I + h L~) delta = -F
            b0 = 1.0 + h * hd[0]
            cp[0] = h * off[0] / b0
            dp[0] = -F[0] / b0
            for i in range(1, m):
                a = h * off[i - 1]
                b = 1.0 + h * hd[i] - a * cp[i - 1]
                if i < m - 1:
                    cp[i] = h * off[i] / b
                dp[i] = (-F[i] - a * dp[i - 1]) / b
            delta[m - 1] = dp[m - 1]
            for i in range(m - 2, -1, -1):
                delta[i] = dp[i] - cp[i] * delta[i + 1]
        # largest step keeping every gap above a tenth of its current value
        alpha = 1.0
        for i in range(m - 1):
            g = x[i] - x[i + 1]
            dg = delta[i] - delta[i + 1]
            if dg < 0.0 and g + alpha * dg < 0.1 * g:
                alpha = 0.9 * g / (-dg)
        res2 = 0.0
        for i in range(m):
            res2 += F[i] * F[i]
        accepted = False
        phi0 = 0.0
        slope = 0.0
        have_phi = False
        for _ls in range(60):
            for i in range(m):
                xn[i] = x[i] + alpha * delta[i]
            _drift_hess(xn, n_total, d, hd, off)
            r2 = 0.0
            for i in range(m):
                fi = xn[i] - y[i] - h * d[i]
                r2 += fi * fi
            if r2 < res2:
                accepted = True
                break
            # residual did not drop: fall back to Armijo on the convex merit
            if not have_phi:
                phi0 = _merit(x, y, h, n_total)
                slope = 0.0
                for i in range(m):
                    slope += F[i] * delta[i] / h
                have_phi = True
            if _merit(xn, y, h, n_total) <= phi0 + 1e-4 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            return x, False, it
        for i in range(m):
            x[i] = xn[i]
            F[i] = x[i] - y[i] - h * d[i]
    res = 0.0
    for i in range(m):
        res = max(res, abs(F[i]))
    return x, res <= tol, maxit


@njit(cache=True, nogil=True)
def explicit_ok(x, disp, frac):
    """Every displacement at most frac times the particle's adjacent gaps."""
    m = x.shape[0]
    for i in range(m):
        g = np.inf
        if i > 0:
            g = min(g, x[i - 1] - x[i])
        if i < m - 1:
            g = min(g, x[i] - x[i + 1])
        if abs(disp[i]) > frac * g:
            return False
    return True


@njit(cache=True, nogil=True, fastmath=True)
def far_drift(x, n_total, band):
    """Drift from particles more than ``band`` ranks away; each pair is
    visited once and contributes with opposite signs."""
    m = x.shape[0]
    d = np.zeros(m)
    for i in range(m):
        xi = x[i]
        s = 0.0
        for j in range(i + band + 1, m):
            r = 1.0 / (xi - x[j])
            s += r
            d[j] -= r
        d[i] += s
    for i in range(m):
        d[i] /= n_total
    return d


@njit(cache=True, nogil=True)
def _band_residual(x, y, h, inv, band, F):
    m = x.shape[0]
    for i in range(m):
        F[i] = x[i] - y[i]
    for i in range(m):
        for k in range(1, band + 1):
            j = i + k
            if j >= m:
                break
            r = h * inv / (x[i] - x[j])
            F[i] -= r
            F[j] += r
    best = 0.0
    for i in range(m):
        best = max(best, abs(F[i]))
    return best


@njit(cache=True, nogil=True)
def _band_merit(x, y, h, inv, band):
    m = x.shape[0]
    s = 0.0
    for i in range(m):
        s += (x[i] - y[i]) ** 2 / (2.0 * h)
    e = 0.0
    for i in range(m):
        for k in range(1, band + 1):
            j = i + k
            if j >= m:
                break
            e += math.log(x[i] - x[j])
    return s - e * inv


@njit(cache=True, nogil=True)
def local_solve(lam, y, h, n_total, band, tol, maxit):
    """Solve x - h*N(x) = y where N is the drift from the ``band`` nearest
    ranks on each side. x minimises the strictly convex energy
    |x-y|^2/(2h) - (1/n) sum_{0<j-i<=band} log(x_i-x_j) on the ordering
    chamber; Newton with the exact banded Hessian (banded Cholesky)."""
    m = lam.shape[0]
    x = lam.copy()
    if m <= 1:
        for i in range(m):
            x[i] = y[i]
        return x, True, 0
    band = min(band, m - 1)
    inv = 1.0 / n_total
    # start from the explicit predictor when it keeps every gap above half
    # its old size; otherwise from lam, which is always in the chamber
    pred = y.copy()
    for i in range(m):
        for k in range(1, band + 1):
            jj = i + k
            if jj >= m:
                break
            r = h * inv / (lam[i] - lam[jj])
            pred[i] += r
            pred[jj] -= r
    good = True
    for i in range(m - 1):
        if pred[i] - pred[i + 1] < 0.5 * (lam[i] - lam[i + 1]):
            good = False
            break
    if good:
        for i in range(m):
            x[i] = pred[i]
    F = np.empty(m)
    Ft = np.empty(m)
    H = np.zeros((m, band + 1))  # H[i, k] = Hess[i, i-k]
    delta = np.empty(m)
    xn = np.empty(m)
    res = _band_residual(x, y, h, inv, band, F)
    for it in range(maxit):
        if res <= tol:
            return x, True, it
        for i in range(m):
            H[i, 0] = 1.0
            for k in range(1, band + 1):
                H[i, k] = 0.0
        for i in range(m):
            for k in range(1, band + 1):
                j = i + k
                if j >= m:
                    break
                g = x[i] - x[j]
                q = h * inv / (g * g)
                H[i, 0] += q
                H[j, 0] += q
                H[j, k] -= q
        # banded Cholesky in place: H = L L^T with L[i, k] = L_{i, i-k}
        for i in range(m):
            for k in range(min(i, band), 0, -1):
                j = i - k
                acc = H[i, k]
                for l in range(k + 1, band + 1):
                    if l - k > band or j - (l - k) < 0:
                        break
                    acc -= H[i, l] * H[j, l - k]
                H[i, k] = acc / H[j, 0]
            acc = H[i, 0]
            for l in range(1, min(i, band) + 1):
                acc -= H[i, l] * H[i, l]
            H[i, 0] = math.sqrt(acc)
        for i in range(m):
            acc = -F[i]
            for k in range(1, min(i, band) + 1):
                acc -= H[i, k] * delta[i - k]
            delta[i] = acc / H[i, 0]
        for i in range(m - 1, -1, -1):
            acc = delta[i]
            for k in range(1, band + 1):
                j = i + k
                if j >= m:
                    break
                acc -= H[j, k] * delta[j]
            delta[i] = acc / H[i, 0]
        alpha = 1.0
        for i in range(m - 1):
            g = x[i] - x[i + 1]
            dg = delta[i] - delta[i + 1]
            if dg < 0.0 and g + alpha * dg < 0.1 * g:
                alpha = 0.9 * g / (-dg)
        for i in range(m):
            xn[i] = x[i] + alpha * delta[i]
        rn = _band_residual(xn, y, h, inv, band, Ft)
        if rn >= res:
            # Armijo on the convex energy
            phi0 = _band_merit(x, y, h, inv, band)
            slope = 0.0
            for i in range(m):
                slope += F[i] * delta[i] / h
            for _ls in range(60):
                if _band_merit(xn, y, h, inv, band) <= phi0 + 1e-4 * alpha * slope:
                    break
                alpha *= 0.5
                for i in range(m):
                    xn[i] = x[i] + alpha * delta[i]
            rn = _band_residual(xn, y, h, inv, band, Ft)
        for i in range(m):
            x[i] = xn[i]
            F[i] = Ft[i]
        res = rn
    return x, res <= tol, maxit


@njit(cache=True, nogil=True)
def far_stiffness(x, h, n_total, band):
    """max_i h / (n (x_i - x_{i+band+1})^2): stiffness of the explicit part."""
    m = x.shape[0]
    worst = 0.0
    for i in range(m - band - 1):
        g = x[i] - x[i + band + 1]
        worst = max(worst, h / (n_total * g * g))
    return worst


@njit(cache=True, nogil=True)
def split_step(lam, dw, h, n_total, band, tol, maxit):
    """Far-field drift explicit, nearest ``band`` ranks implicit."""
    m = lam.shape[0]
    far = far_drift(lam, n_total, band)
    y = np.empty(m)
    for i in range(m):
        y[i] = lam[i] + dw[i] + h * far[i]
    x, ok, _ = local_solve(lam, y, h, n_total, band, tol, maxit)
    return x, ok
