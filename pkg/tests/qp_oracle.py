"""Dense primal active-set reference solver for strictly convex QPs.

Independent of the package solver: it works on the unscaled problem with
dense linear algebra, starts from a supplied feasible point and follows the
textbook primal active-set iteration (equality-constrained subproblems on a
working set, blocking-constraint step lengths, multiplier-sign tests).
"""
import numpy as np
import scipy.sparse as sp

from drvpp.qp import QpProblem

INF = 1e19


def _rows(p: QpProblem):
    """Split ``l <= Ax <= u`` into equalities ``E x = e`` and ``G x <= h``."""
    A = p.A.toarray() if sp.issparse(p.A) else np.asarray(p.A)
    eq = np.abs(p.u - p.l) <= 1e-12 * np.maximum(1.0, np.abs(p.l))
    E, e = A[eq], p.l[eq]
    G, h, origin, sign = [], [], [], []
    for i in np.flatnonzero(~eq):
        if p.u[i] < INF:
            G.append(A[i]); h.append(p.u[i]); origin.append(i); sign.append(1.0)
        if p.l[i] > -INF:
            G.append(-A[i]); h.append(-p.l[i]); origin.append(i); sign.append(-1.0)
    G = np.array(G).reshape(-1, A.shape[1])
    return E, e, np.flatnonzero(eq), G, np.array(h), np.array(origin, int), np.array(sign)


def active_set_solve(p: QpProblem, x_feasible, max_iter=1000, tol=1e-11):
    """Return ``(x, y)`` with ``y`` in the sign convention ``Px + q + A'y = 0``."""
    P = p.P.toarray()
    q = p.q
    n = q.size
    E, e, eq_idx, G, h, origin, sign = _rows(p)
    x = np.array(x_feasible, dtype=float)
    W = [i for i in range(G.shape[0]) if abs(G[i] @ x - h[i]) <= 1e-12 * max(1.0, abs(h[i]))]
    # keep the initial working set linearly independent together with E
    keep = []
    for i in W:
        M = np.vstack([E, G[keep + [i]]])
        if np.linalg.matrix_rank(M) == M.shape[0]:
            keep.append(i)
    W = keep
    for _ in range(max_iter):
        C = np.vstack([E, G[W]]) if W else E
        k = C.shape[0]
        g = P @ x + q
        K = np.block([[P, C.T], [C, np.zeros((k, k))]])
        sol = np.linalg.solve(K, np.concatenate([-g, np.zeros(k)]))
        step, lam = sol[:n], sol[n:]
        if np.max(np.abs(step), initial=0.0) <= tol * max(1.0, np.max(np.abs(x))):
            lam_in = lam[E.shape[0]:]
            if lam_in.size == 0 or lam_in.min() >= -tol:
                y = np.zeros(p.m)
                y[eq_idx] = lam[:E.shape[0]]
                for j, i in enumerate(W):
                    y[origin[i]] += sign[i] * lam_in[j]
                return x, y
            W.pop(int(np.argmin(lam_in)))
            continue
        alpha, block = 1.0, None
        Gs = G @ step
        for i in range(G.shape[0]):
            if i in W or Gs[i] <= 1e-14:
                continue
            a = (h[i] - G[i] @ x) / Gs[i]
            if a < alpha:
                alpha, block = max(a, 0.0), i
        x = x + alpha * step
        if block is not None:
            W.append(block)
    raise RuntimeError("active-set oracle did not converge")


def random_feasible_qp(rng, n=None, m=None):
    """Random strictly convex QP with a known feasible point.

    Rows are a mix of equalities, one-sided and two-sided inequalities; the
    equality rows are kept fewer than ``n`` so the problem stays feasible.
    """
    n = int(rng.integers(2, 31)) if n is None else n
    m = int(rng.integers(0, 61)) if m is None else m
    M = rng.normal(size=(n, n))
    P = M @ M.T / n + 0.1 * np.eye(n)
    q = rng.normal(size=n) * 3.0
    A = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    Ax0 = A @ x0
    kinds = rng.choice(["eq", "lo", "hi", "box"], size=m, p=[0.1, 0.3, 0.3, 0.3])
    n_eq = 0
    l = np.full(m, -np.inf)
    u = np.full(m, np.inf)
    for i, kind in enumerate(kinds):
        if kind == "eq" and n_eq < n // 2:
            l[i] = u[i] = Ax0[i]
            n_eq += 1
            continue
        gap_lo, gap_hi = rng.uniform(0.0, 1.0, 2)
        if kind in ("lo", "box", "eq"):
            l[i] = Ax0[i] - gap_lo
        if kind in ("hi", "box"):
            u[i] = Ax0[i] + gap_hi
    return QpProblem(sp.csc_matrix(P), q, sp.csc_matrix(A), l, u), x0


def self_check(p: QpProblem, x, y, tol=1e-8):
    """KKT certificate of the oracle output: stationarity, feasibility, signs, complementarity."""
    Ax = p.A @ x
    stat = np.max(np.abs(p.P @ x + p.q + p.A.T @ y), initial=0.0)
    feas = np.max(np.maximum(p.l - Ax, 0) + np.maximum(Ax - p.u, 0), initial=0.0)
    at_u = np.abs(Ax - p.u) <= 1e-9 * np.maximum(1, np.abs(p.u))
    at_l = np.abs(Ax - p.l) <= 1e-9 * np.maximum(1, np.abs(p.l))
    bad_pos = (y > tol) & ~at_u
    bad_neg = (y < -tol) & ~at_l
    return stat <= tol and feas <= tol and not bad_pos.any() and not bad_neg.any()
