"""Smooth NLP solver: minimize f(z) s.t. h(z) = 0, g(z) <= 0, lb <= z <= ub.

The method is an SQP iteration on the slack-augmented barrier problem:
inequalities are converted to g(z) + s = 0 with s >= 0, bounds and slacks
enter through a logarithmic barrier, and each iteration solves the Newton
(quadratic-model) KKT system with a damped-BFGS Lagrangian Hessian. Steps
are globalized by an l1-merit line search with a fraction-to-boundary rule
and one second-order correction. This is the "slack-augmented barrier"
variant of the inequality handling, chosen over an active-set QP because
every subproblem then reduces to a single symmetric linear solve.

The implementation is deterministic: identical inputs produce identical
iterates, so repeated solves are bit-reproducible.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

_KAPPA_SIGMA = 1.0e10  # dual clipping factor relative to mu/(slack)
_S_MAX = 100.0  # scaling threshold in the optimality error


class SolveStatus(enum.Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class NlpProblem:
    """Problem description with deterministic, smooth evaluators.

    eq/ineq evaluators return 1-D residual arrays; the Jacobian evaluators
    may return dense arrays or scipy.sparse matrices. Bounds may contain
    +-inf; strict inequality lb < ub is required componentwise.
    """

    n: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    eq: Optional[Callable] = None
    eq_jac: Optional[Callable] = None
    ineq: Optional[Callable] = None
    ineq_jac: Optional[Callable] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    name: str = ""

    def bounds(self):
        lb = np.full(self.n, -np.inf) if self.lb is None else np.asarray(self.lb, float)
        ub = np.full(self.n, np.inf) if self.ub is None else np.asarray(self.ub, float)
        if lb.shape != (self.n,) or ub.shape != (self.n,):
            raise ValueError("bounds must match the problem dimension")
        if not np.all(lb < ub):
            raise ValueError("bounds must satisfy lb < ub componentwise")
        return lb, ub


@dataclass
class SolveOptions:
    max_iterations: int = 500
    kkt_tolerance: float = 1.0e-6
    constraint_tolerance: float = 1.0e-6
    mu_init: float = 1.0e-1
    log: Optional[Callable[[dict], None]] = None


@dataclass
class SolveResult:
    z: np.ndarray
    status: SolveStatus
    iterations: int
    kkt_residual: float
    constraint_violation: float
    objective: float
    lam_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lam_ineq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    slack: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def converged(self) -> bool:
        return self.status is SolveStatus.CONVERGED


def _as_linop(J):
    """Normalize a Jacobian to something supporting @ and .T @."""
    if J is None:
        return None
    if sp.issparse(J):
        return J.tocsr()
    return np.asarray(J, dtype=float)


def _jt_sigma_j(J, sigma: np.ndarray) -> np.ndarray:
    """Dense J^T diag(sigma) J."""
    if sp.issparse(J):
        return (J.multiply(sigma[:, None]).T @ J).toarray()
    return J.T @ (sigma[:, None] * J)


class _Evals:
    """Values of f, h, g at one point (gradients fetched separately)."""

    __slots__ = ("f", "h", "g")

    def __init__(self, problem: NlpProblem, z: np.ndarray):
        self.f = float(problem.objective(z))
        self.h = np.asarray(problem.eq(z), float) if problem.eq else np.zeros(0)
        self.g = np.asarray(problem.ineq(z), float) if problem.ineq else np.zeros(0)

    @property
    def finite(self) -> bool:
        return (
            np.isfinite(self.f)
            and bool(np.all(np.isfinite(self.h)))
            and bool(np.all(np.isfinite(self.g)))
        )


class _BarrierSolver:
    def __init__(self, problem: NlpProblem, z0: np.ndarray, opts: SolveOptions,
                 lam_eq0=None, lam_ineq0=None):
        self.p = problem
        self.opts = opts
        self.lb, self.ub = problem.bounds()
        self.has_lb = np.isfinite(self.lb)
        self.has_ub = np.isfinite(self.ub)
        self.mu = max(float(opts.mu_init), 1.0e-9)

        z = np.asarray(z0, dtype=float).copy()
        if z.shape != (problem.n,):
            raise ValueError("z_init must have the problem dimension")
        # push the start strictly inside the box
        kappa = min(1.0e-2, self.mu)
        rng = np.where(
            self.has_lb & self.has_ub, self.ub - self.lb, 1.0 + np.abs(np.where(self.has_lb, self.lb, self.ub))
        )
        push = kappa * np.minimum(1.0, rng)
        lo = np.where(self.has_lb, self.lb + push, -np.inf)
        hi = np.where(self.has_ub, self.ub - push, np.inf)
        self.z = np.clip(z, lo, hi)

        ev = _Evals(problem, self.z)
        if not ev.finite:
            raise FloatingPointError("evaluators returned non-finite values at the start point")
        self.ev = ev
        self.mI = ev.g.size
        self.mE = ev.h.size
        self.s = np.maximum(-ev.g, max(1.0e-9, min(1.0e-2, self.mu)))
        self.lam = (
            np.asarray(lam_eq0, float).copy()
            if lam_eq0 is not None and np.size(lam_eq0) == self.mE
            else np.zeros(self.mE)
        )
        if lam_ineq0 is not None and np.size(lam_ineq0) == self.mI:
            self.nu = np.maximum(np.asarray(lam_ineq0, float), 1.0e-8)
        else:
            self.nu = self.mu / self.s
        self.zl = np.where(self.has_lb, self.mu / np.maximum(self.z - self.lb, 1e-12), 0.0)
        self.zu = np.where(self.has_ub, self.mu / np.maximum(self.ub - self.z, 1e-12), 0.0)

        self.W = np.eye(problem.n)
        self.grad = np.asarray(problem.gradient(self.z), float)
        self.JE = _as_linop(problem.eq_jac(self.z)) if problem.eq_jac else None
        self.JI = _as_linop(problem.ineq_jac(self.z)) if problem.ineq_jac else None
        self.delta_w = 0.0
        self.fail_streak = 0
        self.iterations = 0

    # ---- residuals and error measures -------------------------------

    def _dual_residual(self) -> np.ndarray:
        r = self.grad.copy()
        if self.mE:
            r += self.JE.T @ self.lam
        if self.mI:
            r += self.JI.T @ self.nu
        r -= self.zl
        r += self.zu
        return r

    def _error(self, mu: float) -> float:
        n_mult = self.mE + self.mI + int(self.has_lb.sum()) + int(self.has_ub.sum())
        mult_sum = (
            np.abs(self.lam).sum()
            + np.abs(self.nu).sum()
            + self.zl[self.has_lb].sum()
            + self.zu[self.has_ub].sum()
        )
        sd = max(_S_MAX, mult_sum / max(1, n_mult)) / _S_MAX
        n_c = self.mI + int(self.has_lb.sum()) + int(self.has_ub.sum())
        sc_sum = np.abs(self.nu).sum() + self.zl[self.has_lb].sum() + self.zu[self.has_ub].sum()
        sc = max(_S_MAX, sc_sum / max(1, n_c)) / _S_MAX

        parts = [np.max(np.abs(self._dual_residual()), initial=0.0) / sd]
        if self.mE:
            parts.append(np.max(np.abs(self.ev.h)))
        if self.mI:
            parts.append(np.max(np.abs(self.ev.g + self.s)))
            parts.append(np.max(np.abs(self.s * self.nu - mu)) / sc)
        if self.has_lb.any():
            parts.append(
                np.max(np.abs((self.z - self.lb)[self.has_lb] * self.zl[self.has_lb] - mu)) / sc
            )
        if self.has_ub.any():
            parts.append(
                np.max(np.abs((self.ub - self.z)[self.has_ub] * self.zu[self.has_ub] - mu)) / sc
            )
        return float(max(parts))

    def _violation(self) -> float:
        v = 0.0
        if self.mE:
            v = max(v, float(np.max(np.abs(self.ev.h))))
        if self.mI:
            v = max(v, float(np.max(self.ev.g, initial=0.0)))
        return v

    def _theta(self, ev: _Evals, s: np.ndarray) -> float:
        t = 0.0
        if self.mE:
            t += float(np.abs(ev.h).sum())
        if self.mI:
            t += float(np.abs(ev.g + s).sum())
        return t

    def _barrier_value(self, ev: _Evals, z: np.ndarray, s: np.ndarray) -> float:
        val = ev.f
        if self.mI:
            val -= self.mu * float(np.log(s).sum())
        if self.has_lb.any():
            val -= self.mu * float(np.log((z - self.lb)[self.has_lb]).sum())
        if self.has_ub.any():
            val -= self.mu * float(np.log((self.ub - z)[self.has_ub]).sum())
        return val

    # ---- linear algebra ---------------------------------------------

    def _factor(self, sigma_s: np.ndarray):
        """Cholesky of the condensed Hessian, escalating regularization."""
        H = self.W.copy()
        diag = np.zeros(self.p.n)
        diag[self.has_lb] += (self.zl / np.maximum(self.z - self.lb, 1e-300))[self.has_lb]
        diag[self.has_ub] += (self.zu / np.maximum(self.ub - self.z, 1e-300))[self.has_ub]
        H[np.diag_indices_from(H)] += diag
        if self.mI:
            H += _jt_sigma_j(self.JI, sigma_s)
        delta = self.delta_w
        for _ in range(40):
            try:
                Hreg = H if delta == 0.0 else H + delta * np.eye(self.p.n)
                cho = scipy.linalg.cho_factor(Hreg, lower=True, check_finite=False)
                self.delta_w = 0.0 if delta == 0.0 else max(delta / 3.0, 0.0)
                return cho
            except scipy.linalg.LinAlgError:
                delta = max(delta * 10.0, 1.0e-8)
        raise FloatingPointError("condensed Hessian could not be regularized")

    def _kkt_solve(self, cho, r1: np.ndarray, rE: np.ndarray):
        """Solve [H JE^T; JE 0] (dz, lam_plus) = (r1, -rE) by Schur complement."""
        solve = lambda b: scipy.linalg.cho_solve(cho, b, check_finite=False)
        if self.mE == 0:
            return solve(r1), np.zeros(0)
        JE = self.JE
        JEd = JE.toarray() if sp.issparse(JE) else JE
        X = solve(JEd.T)
        S = JEd @ X
        rhs = JEd @ solve(r1) + rE
        delta_c = 0.0
        for _ in range(20):
            try:
                Sreg = S if delta_c == 0.0 else S + delta_c * np.eye(self.mE)
                cS = scipy.linalg.cho_factor(Sreg, lower=True, check_finite=False)
                lam_plus = scipy.linalg.cho_solve(cS, rhs, check_finite=False)
                dz = solve(r1 - JEd.T @ lam_plus)
                return dz, lam_plus
            except scipy.linalg.LinAlgError:
                delta_c = max(delta_c * 100.0, 1.0e-12)
        raise FloatingPointError("equality constraint block is numerically singular")

    # ---- step computation -------------------------------------------

    def _fraction_to_boundary(self, z, dz, s, ds, tau: float) -> float:
        alpha = 1.0
        if self.mI:
            neg = ds < 0.0
            if neg.any():
                alpha = min(alpha, float(np.min(-tau * s[neg] / ds[neg])))
        if self.has_lb.any():
            m = self.has_lb & (dz < 0.0)
            if m.any():
                alpha = min(alpha, float(np.min(-tau * (z - self.lb)[m] / dz[m])))
        if self.has_ub.any():
            m = self.has_ub & (dz > 0.0)
            if m.any():
                alpha = min(alpha, float(np.min(tau * (self.ub - z)[m] / dz[m])))
        return min(alpha, 1.0)

    def _dual_fraction(self, v, dv, tau: float) -> float:
        alpha = 1.0
        neg = dv < 0.0
        if neg.any():
            alpha = min(alpha, float(np.min(-tau * v[neg] / dv[neg])))
        return min(alpha, 1.0)

    def _barrier_grad_dot(self, dz: np.ndarray, ds: np.ndarray) -> float:
        d = float(self.grad @ dz)
        if self.mI:
            d -= self.mu * float((ds / self.s).sum())
        if self.has_lb.any():
            d -= self.mu * float((dz[self.has_lb] / (self.z - self.lb)[self.has_lb]).sum())
        if self.has_ub.any():
            d += self.mu * float((dz[self.has_ub] / (self.ub - self.z)[self.has_ub]).sum())
        return d

    def _refresh_derivatives(self):
        self.grad = np.asarray(self.p.gradient(self.z), float)
        self.JE = _as_linop(self.p.eq_jac(self.z)) if self.p.eq_jac else None
        self.JI = _as_linop(self.p.ineq_jac(self.z)) if self.p.ineq_jac else None

    def run(self) -> SolveResult:
        opts = self.opts
        mu_min = opts.kkt_tolerance / 11.0
        status = SolveStatus.MAX_ITER
        while self.iterations < opts.max_iterations:
            e0 = self._error(0.0)
            viol = self._violation()
            if e0 <= opts.kkt_tolerance and viol <= opts.constraint_tolerance:
                status = SolveStatus.CONVERGED
                break
            # barrier subproblem converged -> tighten mu without stepping
            if self._error(self.mu) <= 10.0 * self.mu and self.mu > mu_min:
                self.mu = max(mu_min, min(0.2 * self.mu, self.mu ** 1.5))
                self.fail_streak = 0
                continue

            self.iterations += 1
            try:
                accepted = self._iterate()
            except FloatingPointError:
                status = SolveStatus.NUMERICAL_FAILURE
                break
            if not accepted:
                self.fail_streak += 1
                if self.fail_streak == 1:
                    self.W = np.eye(self.p.n)  # curvature garbage is the usual suspect
                elif self.fail_streak == 2:
                    self.delta_w = max(self.delta_w, 1.0e-4)
                else:
                    status = (
                        SolveStatus.INFEASIBLE
                        if self._violation() > max(100.0 * opts.constraint_tolerance, 1e-8)
                        else SolveStatus.NUMERICAL_FAILURE
                    )
                    break
            else:
                self.fail_streak = 0

        viol = self._violation()
        return SolveResult(
            z=self.z.copy(),
            status=status,
            iterations=self.iterations,
            kkt_residual=self._error(0.0),
            constraint_violation=viol,
            objective=self.ev.f,
            lam_eq=self.lam.copy(),
            lam_ineq=self.nu.copy(),
            slack=self.s.copy(),
        )

    def _iterate(self) -> bool:
        mu, z, s = self.mu, self.z, self.s
        rI = self.ev.g + s if self.mI else np.zeros(0)
        sigma_s = self.nu / s if self.mI else np.zeros(0)

        r1 = -self.grad.copy()
        if self.mI:
            r1 -= self.JI.T @ (mu / s + sigma_s * rI)
        if self.has_lb.any():
            r1[self.has_lb] += mu / (z - self.lb)[self.has_lb]
        if self.has_ub.any():
            r1[self.has_ub] -= mu / (self.ub - z)[self.has_ub]

        cho = self._factor(sigma_s)
        dz, lam_plus = self._kkt_solve(cho, r1, self.ev.h)
        if not np.all(np.isfinite(dz)):
            raise FloatingPointError("non-finite search direction")
        ds = -rI - (self.JI @ dz) if self.mI else np.zeros(0)
        dnu = mu / s - self.nu - sigma_s * ds if self.mI else np.zeros(0)

        tau = max(0.99, 1.0 - mu)
        alpha_max = self._fraction_to_boundary(z, dz, s, ds, tau)

        # l1 merit: barrier objective + rho * (|h|_1 + |g + s|_1)
        theta0 = self._theta(self.ev, s)
        dbar = self._barrier_grad_dot(dz, ds)
        quad = 0.5 * float(dz @ (self.W @ dz))
        rho = 0.0
        if theta0 > 1e-14:
            rho = (dbar + max(quad, 0.0)) / (0.5 * theta0)
            rho = max(rho, 0.0) + 1.0e-4
            dual_floor = max(
                np.max(np.abs(lam_plus), initial=0.0),
                np.max(np.abs(self.nu + dnu), initial=0.0),
            )
            rho = max(rho, 1.1 * dual_floor)
        D = dbar - rho * theta0
        phi0 = self._barrier_value(self.ev, z, s) + rho * theta0

        alpha = alpha_max
        accepted = False
        tried_soc = False
        while alpha >= 1.0e-11:
            z_t = z + alpha * dz
            s_t = s + alpha * ds
            ev_t = _Evals(self.p, z_t)
            if ev_t.finite:
                phi_t = self._barrier_value(ev_t, z_t, s_t) + rho * self._theta(ev_t, s_t)
                if phi_t <= phi0 + 1.0e-4 * alpha * min(D, 0.0):
                    accepted = True
                    break
                if not tried_soc and alpha == alpha_max and self.mE:
                    # one second-order correction against constraint curvature
                    tried_soc = True
                    h_soc = alpha * self.ev.h + ev_t.h
                    dz_c, lam_c = self._kkt_solve(cho, r1, h_soc)
                    ds_c = -rI - (self.JI @ dz_c) if self.mI else np.zeros(0)
                    a_c = self._fraction_to_boundary(z, dz_c, s, ds_c, tau)
                    z_c = z + a_c * dz_c
                    s_c = s + a_c * ds_c
                    ev_c = _Evals(self.p, z_c)
                    if ev_c.finite:
                        phi_c = self._barrier_value(ev_c, z_c, s_c) + rho * self._theta(ev_c, s_c)
                        if phi_c <= phi0 + 1.0e-4 * a_c * min(D, 0.0):
                            z_t, s_t, ev_t, alpha = z_c, s_c, ev_c, a_c
                            dz, ds = dz_c, ds_c
                            lam_plus = lam_c
                            dnu = mu / s - self.nu - sigma_s * ds if self.mI else np.zeros(0)
                            accepted = True
                            break
            alpha *= 0.5

        if self.opts.log is not None:
            self.opts.log(
                {
                    "iter": self.iterations,
                    "mu": mu,
                    "objective": self.ev.f,
                    "violation": self._violation(),
                    "merit": phi0,
                    "step_norm": float(np.linalg.norm(alpha * dz)) if accepted else 0.0,
                    "alpha": alpha if accepted else 0.0,
                    "accepted": accepted,
                }
            )
        if not accepted:
            return False

        alpha_dual = self._dual_fraction(self.nu, dnu, tau) if self.mI else 1.0
        old_z = self.z
        old_grad = self.grad
        old_JE, old_JI = self.JE, self.JI

        self.z, self.s, self.ev = z_t, s_t, ev_t
        self.lam = self.lam + alpha * (lam_plus - self.lam)
        if self.mI:
            self.nu = np.maximum(self.nu + alpha_dual * dnu, 1.0e-14)
        # bound dual updates from linearized complementarity, kappa-sigma safeguarded
        if self.has_lb.any():
            dzl = np.where(
                self.has_lb,
                mu / np.maximum(old_z - self.lb, 1e-300) - self.zl
                - self.zl / np.maximum(old_z - self.lb, 1e-300) * (self.z - old_z),
                0.0,
            )
            a_l = self._dual_fraction(self.zl[self.has_lb], dzl[self.has_lb], tau)
            self.zl = np.where(self.has_lb, self.zl + a_l * dzl, 0.0)
            gap = np.maximum(self.z - self.lb, 1e-300)
            self.zl = np.where(
                self.has_lb,
                np.clip(self.zl, mu / (_KAPPA_SIGMA * gap), _KAPPA_SIGMA * mu / gap),
                0.0,
            )
        if self.has_ub.any():
            dzu = np.where(
                self.has_ub,
                mu / np.maximum(self.ub - old_z, 1e-300) - self.zu
                + self.zu / np.maximum(self.ub - old_z, 1e-300) * (self.z - old_z),
                0.0,
            )
            a_u = self._dual_fraction(self.zu[self.has_ub], dzu[self.has_ub], tau)
            self.zu = np.where(self.has_ub, self.zu + a_u * dzu, 0.0)
            gap = np.maximum(self.ub - self.z, 1e-300)
            self.zu = np.where(
                self.has_ub,
                np.clip(self.zu, mu / (_KAPPA_SIGMA * gap), _KAPPA_SIGMA * mu / gap),
                0.0,
            )

        self._refresh_derivatives()
        if not np.all(np.isfinite(self.grad)):
            raise FloatingPointError("non-finite gradient after step")

        # damped BFGS update of the Lagrangian Hessian approximation
        sk = self.z - old_z
        if float(np.linalg.norm(sk)) > 1.0e-13 * (1.0 + float(np.linalg.norm(self.z))):
            def lag_grad(grad, JE, JI):
                r = grad.copy()
                if self.mE:
                    r += JE.T @ self.lam
                if self.mI:
                    r += JI.T @ self.nu
                return r

            yk = lag_grad(self.grad, self.JE, self.JI) - lag_grad(old_grad, old_JE, old_JI)
            Ws = self.W @ sk
            sWs = float(sk @ Ws)
            sy = float(sk @ yk)
            if sWs > 1.0e-16:
                if sy < 0.2 * sWs:
                    theta = 0.8 * sWs / (sWs - sy)
                    yk = theta * yk + (1.0 - theta) * Ws
                    sy = float(sk @ yk)
                if sy > 1.0e-12:
                    self.W = self.W - np.outer(Ws, Ws) / sWs + np.outer(yk, yk) / sy
                    self.W = 0.5 * (self.W + self.W.T)
        return True


def solve(
    problem: NlpProblem,
    z_init: np.ndarray,
    opts: SolveOptions | None = None,
    lam_eq0: np.ndarray | None = None,
    lam_ineq0: np.ndarray | None = None,
) -> SolveResult:
    """Solve the NLP from z_init (projected into the bound interior).

    Warm starts pass the previous optimum as z_init, its multipliers via
    lam_eq0/lam_ineq0, and a small opts.mu_init.
    """
    opts = opts or SolveOptions()
    try:
        solver = _BarrierSolver(problem, z_init, opts, lam_eq0, lam_ineq0)
    except FloatingPointError:
        return SolveResult(
            z=np.asarray(z_init, float).copy(),
            status=SolveStatus.NUMERICAL_FAILURE,
            iterations=0,
            kkt_residual=np.inf,
            constraint_violation=np.inf,
            objective=np.nan,
        )
    try:
        return solver.run()
    except FloatingPointError:
        return SolveResult(
            z=solver.z.copy(),
            status=SolveStatus.NUMERICAL_FAILURE,
            iterations=solver.iterations,
            kkt_residual=np.inf,
            constraint_violation=solver._violation(),
            objective=solver.ev.f,
        )


def check_gradients(problem: NlpProblem, z: np.ndarray, h: float = 1.0e-5) -> float:
    """Worst relative error of supplied derivatives vs central differences.

    z must be strictly inside the bounds so that both offset points remain
    evaluable. The error is normalized per block (objective gradient, each
    Jacobian) by max(1, largest supplied entry).
    """
    z = np.asarray(z, dtype=float)
    n = problem.n

    def central(fun, m):
        out = np.zeros((m, n))
        for i in range(n):
            zp, zm = z.copy(), z.copy()
            zp[i] += h
            zm[i] -= h
            out[:, i] = (np.atleast_1d(fun(zp)) - np.atleast_1d(fun(zm))) / (2.0 * h)
        return out

    worst = 0.0
    g_an = np.asarray(problem.gradient(z), float)
    g_fd = central(lambda zz: problem.objective(zz), 1)[0]
    worst = max(worst, float(np.max(np.abs(g_fd - g_an))) / max(1.0, float(np.max(np.abs(g_an)))))

    for fun, jac in ((problem.eq, problem.eq_jac), (problem.ineq, problem.ineq_jac)):
        if fun is None or jac is None:
            continue
        J = jac(z)
        Jd = J.toarray() if sp.issparse(J) else np.asarray(J, float)
        if Jd.size == 0:
            continue
        J_fd = central(fun, Jd.shape[0])
        worst = max(
            worst, float(np.max(np.abs(J_fd - Jd))) / max(1.0, float(np.max(np.abs(Jd))))
        )
    return worst
