"""Compiled forward-sensitivity RK4 kernel.

Integrates, per initial state, the closed loop with smoothed saturation
together with S = dx/dtheta, the running loss int |x|^2 and its gradient
int 2 x^T S. Using the same RK4 stages for state and sensitivity makes the
gradient exact for the discretized flow.

Parameter order inside theta is A_c, B_c, C_c, D_c, E_c, each row-major.
"""

import math

import numba
import numpy as np


@numba.njit(cache=True)
def _field(Ap, Bp, Cp, Ac, Bc, Cc, Dc, Ec, zeta, x, S, f, dS):
    n = Ap.shape[0]
    m = Bp.shape[1]
    l = Cp.shape[0]  # noqa: E741
    nc = Ac.shape[0]
    p = S.shape[1]
    y = np.zeros(l)
    u = np.zeros(m)
    s = np.zeros(m)
    ds = np.zeros(m)
    for i in range(l):
        acc = 0.0
        for j in range(n):
            acc += Cp[i, j] * x[j]
        y[i] = acc
    for i in range(m):
        acc = 0.0
        for j in range(l):
            acc += Dc[i, j] * y[j]
        for j in range(nc):
            acc += Cc[i, j] * x[n + j]
        u[i] = acc
        a = math.sqrt(zeta + (acc + 1.0) ** 2)
        b = math.sqrt(zeta + (acc - 1.0) ** 2)
        s[i] = 0.5 * (a - b)
        ds[i] = 0.5 * ((acc + 1.0) / a - (acc - 1.0) / b)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += Ap[i, j] * x[j]
        for k in range(m):
            acc += Bp[i, k] * s[k]
        f[i] = acc
    for i in range(nc):
        acc = 0.0
        for j in range(nc):
            acc += Ac[i, j] * x[n + j]
        for j in range(l):
            acc += Bc[i, j] * y[j]
        for k in range(m):
            acc += Ec[i, k] * (s[k] - u[k])
        f[n + i] = acc

    oB = nc * nc
    oC = oB + nc * l
    oD = oC + m * nc
    oE = oD + m * l
    # dy/dtheta = C_p S_p
    dy = np.zeros((l, p))
    for j in range(l):
        for q in range(p):
            acc = 0.0
            for r in range(n):
                acc += Cp[j, r] * S[r, q]
            dy[j, q] = acc
    # du/dtheta = D_c dy + C_c S_c + explicit dependence on C_c, D_c
    du = np.zeros((m, p))
    for i in range(m):
        for q in range(p):
            acc = 0.0
            for j in range(l):
                acc += Dc[i, j] * dy[j, q]
            for j in range(nc):
                acc += Cc[i, j] * S[n + j, q]
            du[i, q] = acc
        for j in range(nc):
            du[i, oC + i * nc + j] += x[n + j]
        for j in range(l):
            du[i, oD + i * l + j] += y[j]
    for i in range(n):
        for q in range(p):
            acc = 0.0
            for r in range(n):
                acc += Ap[i, r] * S[r, q]
            for k in range(m):
                acc += Bp[i, k] * ds[k] * du[k, q]
            dS[i, q] = acc
    for i in range(nc):
        for q in range(p):
            acc = 0.0
            for r in range(nc):
                acc += Ac[i, r] * S[n + r, q]
            for j in range(l):
                acc += Bc[i, j] * dy[j, q]
            for k in range(m):
                acc += Ec[i, k] * (ds[k] - 1.0) * du[k, q]
            dS[n + i, q] = acc
        for j in range(nc):
            dS[n + i, i * nc + j] += x[n + j]
        for j in range(l):
            dS[n + i, oB + i * l + j] += y[j]
        for k in range(m):
            dS[n + i, oE + i * m + k] += s[k] - u[k]


@numba.njit(cache=True)
def loss_and_gradient_batch(Ap, Bp, Cp, Ac, Bc, Cc, Dc, Ec, zeta, X0, steps, limit):
    """Per-trajectory loss and gradient.

    Returns ``(L, G, bad, t_bad)``; ``bad`` is the index of the first
    diverging trajectory (-1 if none) and ``t_bad`` its blow-up time.
    """
    J, N = X0.shape
    nc = Ac.shape[0]
    m = Bp.shape[1]
    l = Cp.shape[0]  # noqa: E741
    p = nc * nc + nc * l + m * nc + m * l + nc * m
    L = np.zeros(J)
    G = np.zeros((J, p))
    x = np.zeros(N)
    S = np.zeros((N, p))
    xs = np.zeros(N)
    Ss = np.zeros((N, p))
    k = np.zeros((4, N))
    K = np.zeros((4, N, p))
    weight = np.array([1.0, 2.0, 2.0, 1.0])
    node = np.array([0.0, 0.5, 0.5, 1.0])
    for j in range(J):
        x[:] = X0[j]
        S[:, :] = 0.0
        t = 0.0
        for h in steps:
            for st in range(4):
                c = node[st] * h
                for a in range(N):
                    if st == 0:
                        xs[a] = x[a]
                    else:
                        xs[a] = x[a] + c * k[st - 1, a]
                    for q in range(p):
                        if st == 0:
                            Ss[a, q] = S[a, q]
                        else:
                            Ss[a, q] = S[a, q] + c * K[st - 1, a, q]
                _field(Ap, Bp, Cp, Ac, Bc, Cc, Dc, Ec, zeta, xs, Ss, k[st], K[st])
                w = weight[st] * h / 6.0
                q2 = 0.0
                for a in range(N):
                    q2 += xs[a] * xs[a]
                L[j] += w * q2
                for q in range(p):
                    acc = 0.0
                    for a in range(N):
                        acc += xs[a] * Ss[a, q]
                    G[j, q] += 2.0 * w * acc
            ok = True
            for a in range(N):
                x[a] += h / 6.0 * (k[0, a] + 2.0 * k[1, a] + 2.0 * k[2, a] + k[3, a])
                if not (abs(x[a]) <= limit):
                    ok = False
                for q in range(p):
                    S[a, q] += h / 6.0 * (K[0, a, q] + 2.0 * K[1, a, q] + 2.0 * K[2, a, q] + K[3, a, q])
            t += h
            if not ok:
                return L, G, j, t
    return L, G, -1, 0.0
