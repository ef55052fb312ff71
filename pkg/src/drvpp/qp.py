"""Operator-splitting (ADMM) solver for convex quadratic programs.

Solves::

    minimize    1/2 x'Px + q'x
    subject to  l <= Ax <= u

with ``P`` symmetric positive semidefinite.  The iteration splits on the
indicator of the box ``[l, u]`` (the OSQP scheme): one quasi-definite KKT
factorization per step size, over-relaxation, Ruiz equilibration, adaptive
step size and primal/dual infeasibility certificates.  Once the iterates
are close, a polishing step (primal active-set iterations on the reduced
equality KKT system) brings the residuals down to the absolute tolerances
requested by the MPC layer.  A polished point is accepted only if it passes
feasibility, stationarity and complementarity checks.

The solver object is stateful only through its warm start (last solution and
step size); distinct instances may be used concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog

from .errors import SolverError

__all__ = ["QpProblem", "QpSolution", "QpSolver", "solve", "kkt_residuals", "complementarity_residual"]

INF = 1e20
SOLVED = "solved"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"

RHO_MIN, RHO_MAX = 1e-6, 1e6
RHO_EQ_FACTOR = 1e3
SCALE_MIN, SCALE_MAX = 1e-4, 1e4
POLISH_START = 1e-2


@dataclass(frozen=True)
class QpProblem:
    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    l: np.ndarray
    u: np.ndarray
    names: tuple | None = None

    def __post_init__(self):
        P = sp.csc_matrix(self.P, dtype=float)
        q = np.asarray(self.q, dtype=float).ravel()
        n = q.size
        A = sp.csc_matrix(self.A, dtype=float) if self.A is not None else sp.csc_matrix((0, n))
        l = np.asarray(self.l, dtype=float).ravel()
        u = np.asarray(self.u, dtype=float).ravel()
        m = A.shape[0]
        if P.shape != (n, n):
            raise ValueError(f"P must be {n}x{n}, got {P.shape}")
        if A.shape[1] != n or l.size != m or u.size != m:
            raise ValueError(f"inconsistent constraint shapes A{A.shape}, l({l.size}), u({u.size})")
        if np.any(l > u):
            i = int(np.argmax(l > u))
            raise ValueError(f"l > u in constraint row {i}: {l[i]} > {u[i]}")
        asym = abs(P - P.T).max() if P.nnz else 0.0
        if asym > 1e-9 * max(1.0, abs(P).max() if P.nnz else 1.0):
            raise ValueError(f"P is not symmetric (max asymmetry {asym:.3g})")
        if self.names is not None and len(self.names) != n:
            raise ValueError("names must label every variable")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "l", np.maximum(l, -INF))
        object.__setattr__(self, "u", np.minimum(u, INF))

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: str
    primal_residual: float
    dual_residual: float
    objective: float
    iterations: int = 0
    polished: bool = False
    rho: float = 0.1
    certificate: str | None = None
    info: dict = field(default_factory=dict)

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


def kkt_residuals(p: QpProblem, x, y):
    """``(||Ax - proj_[l,u](Ax)||_inf, ||Px + q + A'y||_inf)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    Ax = p.A @ x
    r_p = float(np.max(np.abs(Ax - np.clip(Ax, p.l, p.u)), initial=0.0))
    r_d = float(np.max(np.abs(p.P @ x + p.q + p.A.T @ y), initial=0.0))
    return r_p, r_d


def complementarity_residual(p: QpProblem, x, y) -> float:
    """``max_i min(|y_i|, gap_i)`` where ``gap_i`` is the distance of ``A_i x``
    to the bound selected by the sign of ``y_i`` (upper for ``y_i > 0``).

    Zero exactly when every nonzero multiplier sits on an attained bound of
    the matching side; together with :func:`kkt_residuals` it certifies
    optimality of a convex QP.
    """
    y = np.asarray(y, dtype=float)
    Ax = p.A @ np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore"):
        gap = np.where(y > 0, np.abs(p.u - Ax), np.where(y < 0, np.abs(Ax - p.l), 0.0))
    return float(np.max(np.minimum(np.abs(y), gap), initial=0.0))


def _inf_norm_cols(M: sp.csc_matrix) -> np.ndarray:
    if M.shape[0] == 0 or M.nnz == 0:
        return np.zeros(M.shape[1])
    return np.asarray(abs(M).max(axis=0).todense()).ravel()


def _inf_norm_rows(M: sp.csc_matrix) -> np.ndarray:
    if M.shape[1] == 0 or M.nnz == 0:
        return np.zeros(M.shape[0])
    return np.asarray(abs(M).max(axis=1).todense()).ravel()


def _limit(v):
    v = np.where(v < SCALE_MIN, 1.0, v)
    return np.minimum(v, SCALE_MAX)


@dataclass
class _Scaling:
    D: np.ndarray
    E: np.ndarray
    c: float


def _ruiz(P, q, A, iters):
    n, m = P.shape[0], A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    c = 1.0
    Ps, qs, As = P.copy(), q.copy(), A.copy()
    for _ in range(iters):
        d = 1.0 / np.sqrt(_limit(np.maximum(_inf_norm_cols(Ps), _inf_norm_cols(As))))
        e = 1.0 / np.sqrt(_limit(_inf_norm_rows(As))) if m else E
        Dm, Em = sp.diags(d), sp.diags(e)
        Ps = (Dm @ Ps @ Dm).tocsc()
        As = (Em @ As @ Dm).tocsc() if m else As
        qs = d * qs
        D *= d
        if m:
            E *= e
        # cost scaling
        p_norm = _inf_norm_cols(Ps).mean() if n else 0.0
        g = 1.0 / _limit(np.array([max(p_norm, np.max(np.abs(qs), initial=0.0))]))[0]
        Ps = (g * Ps).tocsc()
        qs = g * qs
        c *= g
    return _Scaling(D, E, c), Ps, qs, As


class QpSolver:
    """ADMM QP solver with warm start.

    Parameters
    ----------
    eps_prim, eps_dual : absolute tolerances on the unscaled KKT residuals.
    max_iter : iteration cap.
    rho, sigma, alpha : step size, proximal regularization, over-relaxation.
    polish : run the active-set polish during the iteration and after ADMM
        convergence; the ADMM point is kept when no polished point certifies.
    polish_passes, polish_every : pass budget per polish attempt, and the
        iteration spacing of attempts while the relative residual is small.
    """

    def __init__(self, eps_prim=1e-6, eps_dual=1e-6, max_iter=50_000, rho=0.1, sigma=1e-6,
                 alpha=1.6, scaling_iter=10, check_every=25, adaptive_rho=True,
                 adaptive_rho_every=100, polish=True, polish_delta=1e-7, polish_refine=8,
                 polish_passes=300, polish_every=200,
                 eps_infeasible=1e-6, warm_start=True):
        self.eps_prim = eps_prim
        self.eps_dual = eps_dual
        self.max_iter = int(max_iter)
        self.rho0 = rho
        self.sigma = sigma
        self.alpha = alpha
        self.scaling_iter = scaling_iter
        self.check_every = check_every
        self.adaptive_rho = adaptive_rho
        self.adaptive_rho_every = adaptive_rho_every
        self.polish = polish
        self.polish_delta = polish_delta
        self.polish_refine = polish_refine
        self.polish_passes = polish_passes
        self.polish_every = polish_every
        self.eps_infeasible = eps_infeasible
        self.warm_start = warm_start
        self._last = None
        self._rho = rho

    def reset(self):
        self._last = None
        self._rho = self.rho0

    # -- internals --------------------------------------------------------

    def _rho_vec(self, rho, l, u):
        r = np.full(l.size, rho)
        free = (l <= -INF) & (u >= INF)
        eq = (u - l) < 1e-12 * np.maximum(1.0, np.abs(l)) if l.size else np.zeros(0, bool)
        r[free] = RHO_MIN
        r[eq] = min(RHO_EQ_FACTOR * rho, RHO_MAX)
        return r

    def _factor(self, Ps, As, rho_vec):
        n = Ps.shape[0]
        K = sp.bmat([[Ps + self.sigma * sp.eye(n), As.T],
                     [As, sp.diags(-1.0 / rho_vec) if rho_vec.size else None]], format="csc")
        return spla.splu(K, permc_spec="COLAMD")

    def _polish(self, p, sc, Ps, qs, As, ls, us, x, z, y):
        """Solve the equality KKT system on a guessed active set.

        The guess comes from the ADMM iterate; rows the reduced solution
        violates are added and the system re-solved.  On primal-degenerate
        problems the multipliers of the reduced system are not unique, so a
        sign-consistent multiplier vector is recovered with a bounded
        L1 fit of the stationarity condition.  Returns ``None``
        unless the result satisfies the tolerances with correct signs.
        """
        eq = (us - ls) < 1e-12 * np.maximum(1.0, np.abs(ls))
        low = eq | ((z - ls) < -y)
        up = ~low & ((us - z) < y)
        res = self._polish_from(p, sc, Ps, qs, As, ls, us, eq, low, up, x, y)
        if res is not None:
            return res
        # weakly active rows (multiplier ~ 0) are missed by the sign test;
        # retry counting every row within the current primal residual of a bound
        gap = max(10.0 * float(np.max(np.abs(As @ x - z), initial=0.0)), 1e-9)
        low2 = low | ((z - ls) <= gap)
        up2 = up | (~low2 & ((us - z) <= gap))
        if np.array_equal(low2, low) and np.array_equal(up2, up):
            return None
        return self._polish_from(p, sc, Ps, qs, As, ls, us, eq, low2, up2, x, y)

    def _certified(self, p, x, y):
        rp, rd = kkt_residuals(p, x, y)
        rc = complementarity_residual(p, x, y)
        return rp <= self.eps_prim and rd <= self.eps_dual and rc <= max(self.eps_prim, self.eps_dual)

    def _polish_from(self, p, sc, Ps, qs, As, ls, us, eq, low, up, x, y):
        """Primal active-set iterations started at the ADMM iterate.

        Each pass solves the reduced KKT system on the working set and moves
        toward its solution until the first inactive row blocks (that row
        joins the set).  An unblocked step with a wrongly signed multiplier
        releases the worst row.  If that cycles or runs out of passes, the
        last candidate gets a sign-consistent multiplier fit instead, which
        covers primal-degenerate vertices.
        """
        low, up = low.copy(), up.copy()
        tol_p, tol_d = self.eps_prim, self.eps_dual
        xc, yc = x.copy(), np.where(low | up, y, 0.0)
        seen = set()
        candidate = None
        for _ in range(self.polish_passes):
            key = (np.packbits(low).tobytes(), np.packbits(up).tobytes(), candidate is None)
            if key in seen:
                break
            seen.add(key)
            act = np.flatnonzero(low | up)
            res = self._reduced_kkt(Ps, qs, As, act, np.where(low, ls, us)[act], xc, yc)
            if res is None:
                break
            xs, ys_act = res
            # ratio test against the inactive rows, tolerating the start's own infeasibility
            d = xs - xc
            Axc, Ad = As @ xc, As @ d
            inactive = ~(low | up)
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                a_up = np.where(inactive & (Ad > 0) & (us < INF),
                                (np.maximum(us, Axc) - Axc) / Ad, np.inf)
                a_lo = np.where(inactive & (Ad < 0) & (ls > -INF),
                                (np.minimum(ls, Axc) - Axc) / Ad, np.inf)
            ratio = np.minimum(a_up, a_lo)
            alpha = float(np.min(ratio, initial=np.inf))
            if alpha < 1.0:
                xc = xc + alpha * d
                i = int(np.argmin(ratio))
                if a_up[i] <= a_lo[i]:
                    up[i] = True
                else:
                    low[i] = True
                yc = np.zeros_like(yc)
                yc[act] = ys_act
                continue
            xc = xs
            yc = np.zeros_like(yc)
            yc[act] = ys_act
            xu = sc.D * xs
            Axu = p.A @ xu
            viol = np.where(inactive, np.maximum(p.l - Axu, Axu - p.u), 0.0)
            if np.max(viol, initial=0.0) > tol_p:
                i = int(np.argmax(viol * sc.E))
                if Axu[i] < p.l[i]:
                    low[i] = True
                else:
                    up[i] = True
                continue
            yu = np.zeros(p.m)
            yu[act] = sc.E[act] * ys_act / sc.c
            wrong = np.where(low & ~eq, yu, 0.0) - np.where(up & ~eq, yu, 0.0)
            if np.max(wrong, initial=0.0) > tol_d:
                candidate = (xu, act, low.copy(), up.copy())
                i = int(np.argmax(wrong / sc.E))
                low[i] = up[i] = False
                continue
            if self._certified(p, xu, yu):
                return xu, yu
            break
        if candidate is None:
            return None
        # primal-degenerate vertex: the multipliers are not unique; fit them
        # on the rows the candidate actually attains
        xu = candidate[0]
        Axu = p.A @ xu
        low = eq | (np.abs(Axu - p.l) <= tol_p)
        up = ~low & (np.abs(p.u - Axu) <= tol_p)
        act = np.flatnonzero(low | up)
        yu = self._signed_multipliers(p, xu, act, low, up, eq)
        if yu is None:
            return None
        return (xu, yu) if self._certified(p, xu, yu) else None

    def _reduced_kkt(self, Ps, qs, As, act, b, x0, y0):
        """Refined solve of the reduced KKT system.

        Iterative refinement against the regularized factorization is a
        proximal-point iteration, so starting it from the ADMM iterate
        ``(x0, y0)`` returns the solution nearest to it when the reduced
        system is singular (LP-like directions with no curvature).
        """
        n, k = Ps.shape[0], act.size
        Ar = As[act]
        delta = self.polish_delta
        K0 = sp.bmat([[Ps, Ar.T], [Ar, None]], format="csc") if k else Ps.tocsc()
        reg = sp.block_diag([delta * sp.eye(n), -delta * sp.eye(k)] if k else [delta * sp.eye(n)])
        try:
            lu = spla.splu((K0 + reg).tocsc(), permc_spec="COLAMD")
        except RuntimeError:
            return None
        rhs = np.concatenate([-qs, b])
        sol = np.concatenate([x0, y0[act]])
        for _ in range(self.polish_refine):
            r = rhs - K0 @ sol
            if np.max(np.abs(r), initial=0.0) < 1e-14:
                break
            sol = sol + lu.solve(r)
        if not np.all(np.isfinite(sol)):
            return None
        return sol[:n], sol[n:]

    @staticmethod
    def _signed_multipliers(p, xu, act, low, up, eq):
        """Multipliers ``y`` on the active rows with ``y <= 0`` at lower and
        ``y >= 0`` at upper bounds that satisfy ``Px + q + A'y = 0``.

        Posed as the sparse LP ``min |r|_1 s.t. A_act' y + r = -(Px + q)``.
        Returns ``None`` when no sign-consistent fit exists.
        """
        g = p.P @ xu + p.q
        M = p.A[act].T.tocsc()
        n, k = M.shape
        lo = np.where(eq[act] | low[act], -np.inf, 0.0)
        hi = np.where(eq[act] | ~low[act], np.inf, 0.0)
        eye = sp.eye(n, format="csc")
        res = linprog(np.concatenate([np.zeros(k), np.ones(2 * n)]),
                      A_eq=sp.hstack([M, eye, -eye], format="csc"), b_eq=-g,
                      bounds=list(zip(lo, hi)) + [(0, None)] * (2 * n), method="highs",
                      options={"primal_feasibility_tolerance": 1e-10,
                               "dual_feasibility_tolerance": 1e-10})
        if res.status != 0:
            return None
        yu = np.zeros(p.m)
        yu[act] = res.x[:k]
        return yu

    def _unscale(self, sc, x, y, z):
        return sc.D * x, sc.E * y / sc.c, z / sc.E if z.size else z

    # -- public -----------------------------------------------------------

    def solve(self, p: QpProblem, x0=None, y0=None) -> QpSolution:
        n, m = p.n, p.m
        sc, Ps, qs, As = _ruiz(p.P, p.q, p.A, self.scaling_iter)
        ls = np.where(p.l <= -INF, -INF, p.l * sc.E)
        us = np.where(p.u >= INF, INF, p.u * sc.E)

        if x0 is None and y0 is None and self.warm_start and self._last is not None:
            lx, ly = self._last
            if lx.size == n and ly.size == m:
                x0, y0 = lx, ly
        x = np.zeros(n) if x0 is None else np.asarray(x0, float) / sc.D
        y = np.zeros(m) if y0 is None else np.asarray(y0, float) * sc.c / sc.E
        z = np.clip(As @ x, ls, us)

        rho = self._rho if self.warm_start else self.rho0
        rho_vec = self._rho_vec(rho, ls, us)
        lu = self._factor(Ps, As, rho_vec)
        alpha, sigma = self.alpha, self.sigma
        polish_tier = 1e-3
        last_polish = 0
        best = None
        polished = False
        status = MAX_ITER
        certificate = None
        n_refactor = 0
        it = 0
        x_prev, y_prev = x, y

        def residuals(x, y, z):
            xu, yu, zu = self._unscale(sc, x, y, z)
            r_p = float(np.max(np.abs(p.A @ xu - zu), initial=0.0))
            r_d = float(np.max(np.abs(p.P @ xu + p.q + p.A.T @ yu), initial=0.0))
            return r_p, r_d, xu, yu

        result = None
        for it in range(1, self.max_iter + 1):
            x_prev, y_prev = x, y
            rhs = np.concatenate([sigma * x - qs, z - y / rho_vec])
            sol = lu.solve(rhs)
            xt = sol[:n]
            zt = z + (sol[n:] - y) / rho_vec
            x = alpha * xt + (1.0 - alpha) * x
            zr = alpha * zt + (1.0 - alpha) * z
            z = np.clip(zr + y / rho_vec, ls, us)
            y = y + rho_vec * (zr - z)

            if it % self.check_every and it != self.max_iter:
                continue

            r_p, r_d, xu, yu = residuals(x, y, z)
            score = max(r_p / self.eps_prim, r_d / self.eps_dual)
            if best is None or score < best[0]:
                best = (score, x.copy(), y.copy(), z.copy())
            if r_p <= self.eps_prim and r_d <= self.eps_dual:
                status = SOLVED
                break

            # relative progress gates the (comparatively costly) polish attempts
            Axu = p.A @ xu
            zu = z / sc.E
            rel_p = r_p / max(np.max(np.abs(Axu), initial=0.0), np.max(np.abs(zu), initial=0.0), 1e-12)
            rel_d = r_d / max(np.max(np.abs(p.P @ xu), initial=0.0),
                              np.max(np.abs(p.A.T @ yu), initial=0.0),
                              np.max(np.abs(p.q), initial=0.0), 1e-12)
            rel = max(rel_p, rel_d)
            if self.polish and (rel <= polish_tier or
                                (rel <= POLISH_START and it - last_polish >= self.polish_every)):
                last_polish = it
                res = self._polish(p, sc, Ps, qs, As, ls, us, x, z, y)
                polish_tier = min(polish_tier, rel) * 0.1
                if res is not None and self._certified(p, *res):
                    result = res
                    polished = True
                    status = SOLVED
                    break

            if self._infeasibility(p, sc, Ps, qs, As, ls, us, x - x_prev, y - y_prev):
                status = INFEASIBLE
                certificate = self._cert
                break

            if self.adaptive_rho and it % self.adaptive_rho_every == 0:
                new_rho = self._rho_estimate(rho, Ps, qs, As, x, y, z)
                if new_rho > 5 * rho or new_rho < rho / 5:
                    rho = new_rho
                    rho_vec = self._rho_vec(rho, ls, us)
                    lu = self._factor(Ps, As, rho_vec)
                    n_refactor += 1

        if result is None:
            if status == MAX_ITER and best is not None:
                _, x, y, z = best
            xu, yu, _ = self._unscale(sc, x, y, z)
        else:
            xu, yu = result
        r_p, r_d = kkt_residuals(p, xu, yu)
        if status in (SOLVED, MAX_ITER) and self.polish and not polished:
            res = self._polish(p, sc, Ps, qs, As, ls, us, x, z, y)
            if res is not None and self._certified(p, *res):
                xu, yu = res
                r_p, r_d = kkt_residuals(p, xu, yu)
                status, polished = SOLVED, True
        if status == SOLVED:
            self._last = (xu.copy(), yu.copy())
            self._rho = rho
        return QpSolution(x=xu, y=yu, status=status, primal_residual=r_p, dual_residual=r_d,
                          objective=p.objective(xu), iterations=it, polished=polished, rho=rho,
                          certificate=certificate, info={"refactorizations": n_refactor})

    def _rho_estimate(self, rho, Ps, qs, As, x, y, z):
        Ax = As @ x
        Px = Ps @ x
        Aty = As.T @ y
        rp = np.max(np.abs(Ax - z), initial=0.0) / max(np.max(np.abs(Ax), initial=0.0),
                                                        np.max(np.abs(z), initial=0.0), 1e-12)
        rd = np.max(np.abs(Px + qs + Aty), initial=0.0) / max(
            np.max(np.abs(Px), initial=0.0), np.max(np.abs(Aty), initial=0.0),
            np.max(np.abs(qs), initial=0.0), 1e-12)
        est = rho * np.sqrt(rp / max(rd, 1e-12))
        return float(np.clip(est, RHO_MIN, RHO_MAX))

    def _infeasibility(self, p, sc, Ps, qs, As, ls, us, dx, dy):
        eps = self.eps_infeasible
        self._cert = None
        # primal: A'dy ~ 0 and u'dy+ + l'dy- < 0
        dyn = np.max(np.abs(sc.E * dy), initial=0.0)
        if dyn > eps:
            pos, neg = np.maximum(dy, 0.0), np.minimum(dy, 0.0)
            if not (np.any(pos[us >= INF] > 0) or np.any(neg[ls <= -INF] < 0)):
                Atdy = np.max(np.abs(sc.D * (As.T @ dy)), initial=0.0)
                supp = float(np.where(us >= INF, 0.0, us) @ pos + np.where(ls <= -INF, 0.0, ls) @ neg)
                if Atdy <= eps * dyn and supp <= -eps * dyn:
                    self._cert = "primal"
                    return True
        # dual: P dx ~ 0, q'dx < 0 and A dx in the recession cone of [l, u]
        dxn = np.max(np.abs(sc.D * dx), initial=0.0)
        if dxn > eps:
            Pdx = np.max(np.abs((Ps @ dx) / sc.D), initial=0.0)
            if Pdx <= eps * sc.c * dxn and float(qs @ dx) <= -eps * sc.c * dxn:
                Adx = (As @ dx) / sc.E
                tol = eps * dxn
                fin_u, fin_l = us < INF, ls > -INF
                ok = (~fin_u | (Adx <= tol)) & (~fin_l | (Adx >= -tol))
                if np.all(ok):
                    self._cert = "dual"
                    return True
        return False


def solve(p: QpProblem, tol_primal: float = 1e-6, tol_dual: float = 1e-6,
          max_iter: int = 50_000, **kwargs) -> QpSolution:
    """Solve ``p`` with a fresh solver instance (no warm start)."""
    return QpSolver(eps_prim=tol_primal, eps_dual=tol_dual, max_iter=max_iter,
                    warm_start=False, **kwargs).solve(p)


def solve_or_raise(solver: QpSolver, p: QpProblem, **kwargs) -> QpSolution:
    sol = solver.solve(p, **kwargs)
    if not sol.solved:
        worst = ""
        if p.names is not None and sol.x.size:
            worst = f"; largest |x| at {p.names[int(np.argmax(np.abs(sol.x)))]}"
        raise SolverError(f"QP not solved: status={sol.status}"
                          f"{' (' + sol.certificate + ' certificate)' if sol.certificate else ''}, "
                          f"r_prim={sol.primal_residual:.3g}, r_dual={sol.dual_residual:.3g}, "
                          f"iterations={sol.iterations}{worst}", solution=sol)
    return sol
