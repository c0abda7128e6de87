"""Normal-theory maximum likelihood fitting of covariance-structure models.

The discrepancy minimized is

    F(theta) = ln|Sigma| + tr(S Sigma^-1) - ln|S| - p
               + (m - mu)' Sigma^-1 (m - mu)

with chi-square statistic (N - 1) * F at the minimum. The optimizer is a
quasi-Newton BFGS iteration with a backtracking line search; variance
parameters are transformed to log scale so they stay positive, and the
analytic gradient is used unless finite differences are requested.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy import stats

from ..errors import (
    ConvergenceError,
    IdentificationError,
    ModelSpecError,
    NotPositiveDefiniteError,
)
from .model import CompiledModel, CovarianceModel, independence_model
from .moments import SampleMoments

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Evaluation cache

class _Eval:
    """Matrices shared by the discrepancy, gradient and information code."""

    def __init__(self, comp: CompiledModel, theta: np.ndarray):
        A, P, nu = comp.matrices(theta)
        m = comp.m
        p = comp.p
        try:
            T = np.linalg.solve(np.eye(m) - A, np.eye(m))
        except np.linalg.LinAlgError as exc:
            raise ModelSpecError("(I - A) is singular: cyclic or degenerate model") from exc
        omega = T @ P @ T.T
        self.P = P
        self.T = T
        self.E = T[:p, :]              # total effects onto observed rows
        self.omega_obs = omega[:p, :]  # observed rows of T P T'
        self.sigma = omega[:p, :p]
        self.s_vec = T @ nu
        self.mu = self.s_vec[:p]

    def chol(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("model-implied covariance is not positive definite") from exc


def _as_theta(comp: CompiledModel, theta) -> np.ndarray:
    if isinstance(theta, dict):
        return comp.pack(theta)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (comp.q,):
        raise ModelSpecError(f"theta has shape {theta.shape}, expected ({comp.q},)")
    return theta


def implied_moments(model: CovarianceModel, theta) -> tuple[np.ndarray, np.ndarray]:
    """Model-implied covariance matrix and mean vector of the observed variables."""
    comp = model.compile()
    ev = _Eval(comp, _as_theta(comp, theta))
    return ev.sigma, ev.mu


def ml_discrepancy(moments: SampleMoments, model: CovarianceModel, theta) -> float:
    comp = model.compile()
    _check_alignment(comp, moments)
    return _discrepancy(comp, moments, _as_theta(comp, theta))


def _discrepancy(comp: CompiledModel, moments: SampleMoments, theta: np.ndarray) -> float:
    ev = _Eval(comp, theta)
    L = ev.chol()
    p = comp.p
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    sinv_s = cho_solve((L, True), moments.S)
    d = moments.mean - ev.mu
    quad = float(d @ cho_solve((L, True), d))
    return logdet + float(np.trace(sinv_s)) - moments.logdet_S - p + quad


def discrepancy_gradient(moments: SampleMoments, model: CovarianceModel, theta) -> np.ndarray:
    """Analytic gradient of the discrepancy on the original parameter scale."""
    comp = model.compile()
    _check_alignment(comp, moments)
    theta = _as_theta(comp, theta)
    ev = _Eval(comp, theta)
    L = ev.chol()
    d = moments.mean - ev.mu
    resid = ev.sigma - moments.S - np.outer(d, d)
    W = cho_solve((L, True), cho_solve((L, True), resid).T)
    u = cho_solve((L, True), d)

    E = ev.E
    M1 = E.T @ W @ ev.omega_obs    # path part, covariance term
    M2 = E.T @ W @ E               # residual-covariance part
    v1 = E.T @ u
    s = ev.s_vec

    g = np.zeros(comp.q)
    if comp.path_k.size:
        contrib = comp.path_m * (
            2.0 * M1[comp.path_i, comp.path_j]
            - 2.0 * v1[comp.path_i] * s[comp.path_j]
        )
        np.add.at(g, comp.path_k, contrib)
    if comp.cov_k.size:
        factor = np.where(comp.cov_i == comp.cov_j, 1.0, 2.0)
        np.add.at(g, comp.cov_k, comp.cov_m * factor * M2[comp.cov_i, comp.cov_j])
    if comp.mean_k.size:
        np.add.at(g, comp.mean_k, comp.mean_m * (-2.0) * v1[comp.mean_i])
    return g


def _moment_derivatives(comp: CompiledModel, ev: _Eval) -> tuple[np.ndarray, np.ndarray]:
    """d(Sigma)/d(theta_k) and d(mu)/d(theta_k) stacked over parameters."""
    p, q = comp.p, comp.q
    dS = np.zeros((q, p, p))
    dmu = np.zeros((q, p))
    E, omp, s = ev.E, ev.omega_obs, ev.s_vec
    for k, i, j, mult in zip(comp.path_k, comp.path_i, comp.path_j, comp.path_m):
        block = np.outer(E[:, i], omp[:, j])
        dS[k] += mult * (block + block.T)
        dmu[k] += mult * E[:, i] * s[j]
    for k, i, j, mult in zip(comp.cov_k, comp.cov_i, comp.cov_j, comp.cov_m):
        block = np.outer(E[:, i], E[:, j])
        dS[k] += mult * block if i == j else mult * (block + block.T)
    for k, i, mult in zip(comp.mean_k, comp.mean_i, comp.mean_m):
        dmu[k] += mult * E[:, i]
    return dS, dmu


def information_matrix(model: CovarianceModel, theta) -> np.ndarray:
    """Expected Hessian of the discrepancy at ``theta`` (original scale).

    H[j,k] = tr(Sigma^-1 dSigma_j Sigma^-1 dSigma_k) + 2 dmu_j' Sigma^-1 dmu_k.
    """
    comp = model.compile()
    theta = _as_theta(comp, theta)
    ev = _Eval(comp, theta)
    L = ev.chol()
    dS, dmu = _moment_derivatives(comp, ev)
    q, p = comp.q, comp.p
    VK = np.empty((q, p * p))
    for k in range(q):
        half = solve_triangular(L, dS[k], lower=True)
        VK[k] = solve_triangular(L, half.T, lower=True).ravel()
    VU = solve_triangular(L, dmu.T, lower=True).T
    return VK @ VK.T + 2.0 * VU @ VU.T


def numerical_gradient(func: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (func(xp) - func(xm)) / (2.0 * step)
    return g


# ---------------------------------------------------------------------------
# Start values

def start_values(model: CovarianceModel, moments: SampleMoments) -> dict[str, float]:
    """Moment-matched starts: least squares per equation, residual-based
    variances, observed moments for the exogenous block."""
    comp = model.compile()
    _check_alignment(comp, moments)
    S, mbar = moments.S, moments.mean
    obs_idx = {v: i for i, v in enumerate(model.observed)}
    endog = set(comp.observed_endogenous)

    ls_coef: dict[str, dict[str, float]] = {}
    ls_resid: dict[str, float] = {}
    ls_intercept: dict[str, float] = {}
    latent_children: dict[str, list[str]] = {}
    for dst, parent_list in comp.parents.items():
        for src, _ in parent_list:
            if src in model.latent and dst in obs_idx:
                latent_children.setdefault(src, []).append(dst)
        if dst not in obs_idx:
            continue
        y = obs_idx[dst]
        parents_obs = [src for src, _ in parent_list if src in obs_idx]
        if parents_obs:
            pidx = [obs_idx[s] for s in parents_obs]
            spp = S[np.ix_(pidx, pidx)] + 1e-10 * np.eye(len(pidx))
            spy = S[pidx, y]
            try:
                b = np.linalg.solve(spp, spy)
            except np.linalg.LinAlgError:
                b, *_ = np.linalg.lstsq(spp, spy, rcond=None)
            resid = float(S[y, y] - b @ spy)
            ls_coef[dst] = dict(zip(parents_obs, b.tolist()))
            ls_intercept[dst] = float(mbar[y] - b @ mbar[pidx])
        else:
            resid = float(S[y, y])
            ls_coef[dst] = {}
            ls_intercept[dst] = float(mbar[y])
        ls_resid[dst] = max(resid, 0.05 * float(S[y, y]), 1e-8)

    has_latent_parent = {
        dst: any(src in model.latent for src, _ in parent_list)
        for dst, parent_list in comp.parents.items()
    }

    def target(kind, key) -> float | None:
        if kind == "path":
            dst, src = key
            coef = ls_coef.get(dst)
            if coef is not None and src in coef:
                return coef[src]
            return None
        if kind == "cov":
            a, b = key
            if a == b:
                if a in model.latent:
                    children = latent_children.get(a)
                    if not children:
                        return None
                    return max(float(np.mean([0.3 * ls_resid.get(c, 1.0) for c in children])), 1e-6)
                if a in endog:
                    share = 0.6 if has_latent_parent.get(a) else 1.0
                    return share * ls_resid.get(a, float(S[obs_idx[a], obs_idx[a]]))
                return float(S[obs_idx[a], obs_idx[a]])
            if a in obs_idx and b in obs_idx and a not in endog and b not in endog:
                return float(S[obs_idx[a], obs_idx[b]])
            return 0.0
        v = key
        if v in model.latent:
            return 0.0
        if v in endog:
            return ls_intercept.get(v, float(mbar[obs_idx[v]]))
        return float(mbar[obs_idx[v]])

    pnum = {pid: k for k, pid in enumerate(comp.param_names)}
    rows, rhs = [], []
    for kind, key, (const, terms) in model.entries():
        if not terms:
            continue
        t = target(kind, key)
        if t is None:
            continue
        row = np.zeros(comp.q)
        for pid, mult in terms:
            row[pnum[pid]] += mult
        rows.append(row)
        rhs.append(t - const)
    theta = np.zeros(comp.q)
    touched = np.zeros(comp.q, dtype=bool)
    if rows:
        design = np.vstack(rows)
        theta, *_ = np.linalg.lstsq(design, np.array(rhs), rcond=None)
        touched = np.abs(design).sum(axis=0) > 0

    mean_var = float(np.mean(np.diag(S))) if comp.p else 1.0
    for k, pid in enumerate(comp.param_names):
        if comp.is_variance[k]:
            if not touched[k] or theta[k] <= 1e-8:
                theta[k] = max(0.1 * mean_var, 1e-4)
        elif not touched[k]:
            kinds = {kind for kind, _, _ in model.param_locations()[pid]}
            theta[k] = 0.1 if kinds == {"path"} else 0.0
    return comp.unpack(theta)


# ---------------------------------------------------------------------------
# BFGS with backtracking

@dataclass
class _OptResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    n_iter: int
    converged: bool
    message: str
    n_feval: int


def _minimize_bfgs(
    f_only: Callable[[np.ndarray], float],
    f_grad: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    *,
    gtol: float = 1e-8,
    max_iter: int = 500,
    hinv0: np.ndarray | None = None,
    metric: Callable[[np.ndarray, float], np.ndarray | None] | None = None,
) -> _OptResult:
    """Quasi-Newton minimization with Armijo backtracking.

    The BFGS recursion maintains a fallback inverse Hessian that is robust far
    from the optimum.  When ``metric`` is given it proposes a damped
    inverse-information step first; its damping ``lam`` self-tunes on step
    outcomes (full steps shrink it, short or failed steps grow it), so the
    iteration turns into an undamped scoring/Newton step near the optimum
    where plain rank-two updates converge too slowly on 100+-parameter,
    badly unit-scaled problems.
    """
    n = x0.size
    eye = np.eye(n)
    x = x0.copy()
    f = f_only(x)
    n_feval = 1
    if not math.isfinite(f):
        raise NotPositiveDefiniteError("discrepancy is not finite at the start values")
    g = f_grad(x)
    hinv = hinv0.copy() if hinv0 is not None else eye.copy()
    lam = 1e-3
    n_iter = 0
    converged = False
    message = "iteration limit reached"
    f_trail = deque(maxlen=11)  # floor detection window

    while n_iter < max_iter:
        gnorm = float(np.max(np.abs(g)))
        if gnorm < gtol:
            converged, message = True, "gradient tolerance reached"
            break
        # The raw gradient norm is scale-dependent: on badly unit-scaled
        # data (year-valued means next to 0.01-scale variances) its
        # roundoff floor sits orders of magnitude above gtol.  The Newton
        # decrement g' H^-1 g is invariant under linear reparametrization
        # and measures the remaining decrease in units of the discrepancy
        # itself, so it is tested against the same tolerance.
        if metric is not None and gnorm < 1e-2:
            m0 = metric(x, 1e-7)
            if m0 is not None:
                dec = float(g @ (m0 @ g))
                if 0.0 <= dec < gtol:
                    converged, message = True, "scaled decrement below tolerance"
                    break
        # Backstop for metric-less runs: a full window of accepted steps
        # without measurable decrease while the gradient is already small.
        if (
            len(f_trail) == f_trail.maxlen
            and f_trail[0] - f <= 1e-13 * max(1.0, abs(f))
            and gnorm < math.sqrt(gtol)
        ):
            converged, message = True, "function floor reached"
            break
        n_iter += 1

        alpha = fn = None
        if metric is not None:
            m = metric(x, lam)
            if m is not None:
                d = -m @ g
                gd = float(g @ d)
                # Newton-decrement gate: scoring steps are trusted only once
                # the predicted decrease is modest (local regime); far from
                # the optimum they can leap into a different basin.
                if math.isfinite(gd) and -2.0 < gd < 0.0:
                    alpha, fn, evals = _backtrack(f_only, x, f, d, gd, max_halvings=25)
                    n_feval += evals
                    if alpha is not None and not fn < f:
                        # Accepted but made no measurable progress; let the
                        # quasi-Newton direction have a go instead.
                        alpha = fn = None
                    if alpha is None:
                        lam = min(lam * 30.0, 1e3)
                    else:
                        lam = max(lam / 5.0, 1e-11) if alpha >= 0.5 else min(lam * 2.0, 1e3)
        if alpha is None:
            d = -hinv @ g
            gd = float(g @ d)
            if not math.isfinite(gd) or gd >= 0.0:
                hinv, d = eye.copy(), -g
                gd = float(g @ d)
            alpha, fn, evals = _backtrack(f_only, x, f, d, gd)
            n_feval += evals
            if alpha is None:
                # Retry once along steepest descent before giving up.
                hinv, d = eye.copy(), -g
                gd = float(g @ d)
                alpha, fn, evals = _backtrack(f_only, x, f, d, gd)
                n_feval += evals
            if alpha is None:
                if gnorm < math.sqrt(gtol):
                    converged, message = True, "function floor reached"
                else:
                    message = "line search failed"
                break
        s = alpha * d
        x_new = x + s
        g_new = f_grad(x_new)
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            rho = 1.0 / sy
            hy = hinv @ y
            hinv += (rho * rho * float(y @ hy) + rho) * np.outer(s, s)
            hinv -= rho * (np.outer(s, hy) + np.outer(hy, s))
        x, f, g = x_new, fn, g_new
        f_trail.append(f)
    else:
        if float(np.max(np.abs(g))) < gtol:
            converged, message = True, "gradient tolerance reached"
    return _OptResult(x, f, g, n_iter, converged, message, n_feval)


def _backtrack(f_only, x, f, d, gd, c1: float = 1e-4, shrink: float = 0.5, max_halvings: int = 53):
    alpha = 1.0
    evals = 0
    for _ in range(max_halvings):
        fn = f_only(x + alpha * d)
        evals += 1
        if math.isfinite(fn) and fn <= f + c1 * alpha * gd:
            return alpha, fn, evals
        alpha *= shrink
    return None, None, evals


# ---------------------------------------------------------------------------
# Fit driver

@dataclass
class FitOptions:
    max_iter: int = 500
    gtol: float = 1e-8
    init_hessian: str = "fisher"  # "fisher" or "identity"
    use_analytic_gradient: bool = True
    compute_baseline: bool = True
    raise_on_nonconvergence: bool = True
    start: dict[str, float] | None = None


@dataclass
class Estimate:
    value: float
    se: float
    z: float | None
    p_value: float | None


@dataclass
class FitResult:
    param_names: list[str]
    theta: np.ndarray
    se: np.ndarray
    f_min: float
    chi_square: float
    df: int
    p_value: float | None
    n: int
    q: int
    aic: float
    srmr: float | None
    rmsea: float | None
    cfi: float | None
    tli: float | None
    baseline_chi_square: float | None
    baseline_df: int | None
    r_squared: dict[str, float]
    converged: bool
    n_iterations: int
    gradient_norm: float
    message: str
    sigma_hat: np.ndarray
    mu_hat: np.ndarray
    moments: SampleMoments
    model: CovarianceModel
    metadata: dict = field(default_factory=dict)

    @property
    def estimates(self) -> dict[str, Estimate]:
        out = {}
        for name, value, se in zip(self.param_names, self.theta, self.se):
            if se > 0:
                z = float(value / se)
                p = 2.0 * float(stats.norm.sf(abs(z)))
            else:
                z, p = None, None
            out[name] = Estimate(float(value), float(se), z, p)
        return out

    def __getitem__(self, name: str) -> Estimate:
        return self.estimates[name]

    def to_dict(self) -> dict:
        est = self.estimates
        return {
            "parameters": [
                {
                    "id": name,
                    "estimate": est[name].value,
                    "se": est[name].se,
                    "z": est[name].z,
                    "p": est[name].p_value,
                }
                for name in self.param_names
            ],
            "fit": {
                "f_min": self.f_min,
                "chi_square": self.chi_square,
                "df": self.df,
                "p_value": self.p_value,
                "aic": self.aic,
                "srmr": self.srmr,
                "rmsea": self.rmsea,
                "cfi": self.cfi,
                "tli": self.tli,
                "baseline_chi_square": self.baseline_chi_square,
                "baseline_df": self.baseline_df,
                "n": self.n,
                "q": self.q,
                "r_squared": self.r_squared,
            },
            "convergence": {
                "converged": self.converged,
                "iterations": self.n_iterations,
                "gradient_norm": self.gradient_norm,
                "message": self.message,
            },
            "metadata": self.metadata,
        }


def _check_alignment(comp: CompiledModel, moments: SampleMoments) -> None:
    if moments.p != comp.p:
        raise ModelSpecError(f"moments have {moments.p} variables, model has {comp.p}")
    if moments.var_names is not None and tuple(moments.var_names) != tuple(comp.model.observed):
        raise ModelSpecError("moment variable names do not match the model's observed variables")


def fit(model: CovarianceModel, moments: SampleMoments, options: FitOptions | None = None) -> FitResult:
    """Minimize the ML discrepancy and assemble estimates, tests and indices.

    Raises :class:`ConvergenceError` (carrying the best-so-far result) when
    the optimizer stops without reaching the gradient tolerance, unless
    ``options.raise_on_nonconvergence`` is off.
    """
    options = options or FitOptions()
    comp = model.compile()
    _check_alignment(comp, moments)
    p = comp.p
    n_moments = p * (p + 3) // 2
    if comp.q > n_moments:
        raise ModelSpecError(f"{comp.q} free parameters exceed the {n_moments} available moments")
    moments.logdet_S  # validate S early

    theta0 = comp.pack(options.start) if options.start else comp.pack(start_values(model, moments))
    theta0 = _ensure_feasible(comp, moments, theta0)

    isvar = comp.is_variance
    if np.any(theta0[isvar] <= 0.0):
        raise ModelSpecError("variance parameters need positive start values")

    def to_theta(x: np.ndarray) -> np.ndarray:
        theta = x.copy()
        # clip keeps wild trial steps finite; converged values sit far inside
        theta[isvar] = np.exp(np.clip(x[isvar], -45.0, 45.0))
        return theta

    def f_only(x: np.ndarray) -> float:
        try:
            value = _discrepancy(comp, moments, to_theta(x))
        except (NotPositiveDefiniteError, ModelSpecError, FloatingPointError,
                ValueError, np.linalg.LinAlgError):
            return math.inf
        return value if math.isfinite(value) else math.inf

    def f_grad(x: np.ndarray) -> np.ndarray:
        theta = to_theta(x)
        if options.use_analytic_gradient:
            g = discrepancy_gradient(moments, model, theta)
        else:
            g = numerical_gradient(lambda t: _discrepancy(comp, moments, t), theta)
        g = g.copy()
        g[isvar] *= theta[isvar]
        return g

    x0 = theta0.copy()
    x0[isvar] = np.log(theta0[isvar])

    hinv0 = None
    metric = None
    if options.init_hessian == "fisher":
        hinv0 = _fisher_hinv(model, comp, theta0, isvar)

        cache: dict = {"key": None, "parts": None}

        def metric(x: np.ndarray, lam: float) -> np.ndarray | None:
            key = x.tobytes()
            if cache["key"] != key:
                cache["key"] = key
                cache["parts"] = _scoring_parts(model, comp, to_theta(x), isvar)
            return _scoring_hinv(cache["parts"], lam)

    opt = _minimize_bfgs(
        f_only,
        f_grad,
        x0,
        gtol=options.gtol,
        max_iter=options.max_iter,
        hinv0=hinv0,
        metric=metric,
    )
    theta_hat = to_theta(opt.x)
    result = _assemble_result(model, comp, moments, theta_hat, opt, options)
    if not opt.converged and options.raise_on_nonconvergence:
        raise ConvergenceError(
            f"no convergence after {opt.n_iter} iterations ({opt.message}); "
            f"gradient norm {result.gradient_norm:.3e}",
            result=result,
        )
    return result


def _fisher_hinv(model, comp, theta0, isvar) -> np.ndarray | None:
    try:
        H = information_matrix(model, theta0)
    except (NotPositiveDefiniteError, ModelSpecError, ValueError,
            FloatingPointError, np.linalg.LinAlgError):
        return None
    jac = np.where(isvar, theta0, 1.0)
    Hx = H * np.outer(jac, jac)
    Hx = Hx + 1e-8 * np.eye(comp.q) * max(1.0, float(np.trace(Hx)) / comp.q)
    try:
        return np.linalg.inv(Hx)
    except np.linalg.LinAlgError:
        return None


def _scoring_parts(model, comp, theta, isvar) -> tuple[np.ndarray, np.ndarray] | None:
    """Expected information in optimizer coordinates, rescaled to unit diagonal.

    Returns the rescaled matrix and the scale vector, or None when the
    information cannot be evaluated.  Chain rule for the log-variance
    coordinates is the same diagonal Jacobian used for the gradient.
    """
    try:
        H = information_matrix(model, theta)
    except (NotPositiveDefiniteError, ModelSpecError, ValueError,
            FloatingPointError, np.linalg.LinAlgError):
        return None
    jac = np.where(isvar, theta, 1.0)
    Hx = H * np.outer(jac, jac)
    d = np.sqrt(np.abs(np.diag(Hx)))
    d[d <= 1e-12] = 1.0
    return Hx / np.outer(d, d), d


def _scoring_hinv(parts, lam: float) -> np.ndarray | None:
    """Damped inverse of the rescaled information, mapped back to raw scale.

    The damping acts on the unit-diagonal matrix so it is uniform across
    parameters regardless of their units.
    """
    if parts is None:
        return None
    Hn, d = parts
    try:
        inv = np.linalg.inv(Hn + lam * np.eye(Hn.shape[0]))
    except np.linalg.LinAlgError:
        return None
    return inv / np.outer(d, d)


def _ensure_feasible(comp, moments, theta0: np.ndarray) -> np.ndarray:
    def finite(t):
        try:
            return math.isfinite(_discrepancy(comp, moments, t))
        except (NotPositiveDefiniteError, ModelSpecError):
            return False

    if finite(theta0):
        return theta0
    # Zero the free covariances, keep variances.
    t1 = theta0.copy()
    for k in set(comp.cov_k.tolist()):
        if not comp.is_variance[k]:
            t1[k] = 0.0
    if finite(t1):
        logger.debug("start values adjusted: free covariances zeroed")
        return t1
    # Last resort: observed variances everywhere, zero paths.
    t2 = t1.copy()
    mean_var = float(np.mean(np.diag(moments.S)))
    t2[comp.is_variance] = mean_var
    for k in set(comp.path_k.tolist()):
        t2[k] = 0.0
    if finite(t2):
        logger.debug("start values adjusted: fallback diagonal start")
        return t2
    raise NotPositiveDefiniteError("could not find a feasible start")


def _assemble_result(model, comp, moments, theta_hat, opt, options) -> FitResult:
    ev = _Eval(comp, theta_hat)
    p = comp.p
    n = moments.n
    q = comp.q
    df = p * (p + 3) // 2 - q
    chi_square = max((n - 1) * opt.f, 0.0)
    p_value = float(stats.chi2.sf(chi_square, df)) if df > 0 else None
    aic = chi_square + 2.0 * q

    se = np.full(q, np.nan)
    identified = True
    try:
        H = information_matrix(model, theta_hat)
        # Judge rank deficiency on the unit-scaled information so that raw
        # variable units (years vs. proportions) cannot masquerade as it.
        d = np.sqrt(np.diag(H))
        if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
            raise np.linalg.LinAlgError("a parameter carries no information")
        H_unit = H / np.outer(d, d)
        cond = np.linalg.cond(H_unit)
        if not np.isfinite(cond) or cond > 1e10:
            identified = False
        else:
            diag = np.diag(np.linalg.inv(H_unit)) / d**2 * (2.0 / (n - 1))
            if np.any(diag < -1e-8):
                raise np.linalg.LinAlgError("negative variance estimate")
            se = np.sqrt(np.maximum(diag, 0.0))
    except np.linalg.LinAlgError:
        identified = False
    if not identified:
        raise IdentificationError(
            "expected information matrix is rank deficient; the model is not identified"
        )

    # Per-equation variance explained.
    P_hat = comp.matrices(theta_hat)[1]
    obs_idx = {v: i for i, v in enumerate(model.observed)}
    r_squared = {}
    for v in comp.observed_endogenous:
        i = obs_idx[v]
        implied = float(ev.sigma[i, i])
        if implied > 0:
            r_squared[v] = 1.0 - float(P_hat[i, i]) / implied

    from .indices import _cfi, _rmsea, _srmr, _tli  # local import to avoid a cycle

    srmr = _srmr(ev.sigma, ev.mu, moments.S, moments.mean)
    rmsea = _rmsea(chi_square, df, n) if df > 0 else None
    baseline_chi2 = baseline_df = None
    cfi = tli = None
    if options.compute_baseline:
        base = fit(
            independence_model(model.observed),
            moments,
            FitOptions(
                compute_baseline=False,
                gtol=options.gtol,
                max_iter=options.max_iter,
                raise_on_nonconvergence=False,
            ),
        )
        baseline_chi2, baseline_df = base.chi_square, base.df
        cfi = _cfi(chi_square, df, baseline_chi2, baseline_df)
        tli = _tli(chi_square, df, baseline_chi2, baseline_df) if df > 0 else None

    return FitResult(
        param_names=list(comp.param_names),
        theta=theta_hat,
        se=se,
        f_min=opt.f,
        chi_square=chi_square,
        df=df,
        p_value=p_value,
        n=n,
        q=q,
        aic=aic,
        srmr=srmr,
        rmsea=rmsea,
        cfi=cfi,
        tli=tli,
        baseline_chi_square=baseline_chi2,
        baseline_df=baseline_df,
        r_squared=r_squared,
        converged=opt.converged,
        n_iterations=opt.n_iter,
        gradient_norm=float(np.max(np.abs(opt.grad))),
        message=opt.message,
        sigma_hat=ev.sigma,
        mu_hat=ev.mu,
        moments=moments,
        model=model,
        metadata={
            "chi_square_scaling": "(N-1)*F",
            "se_method": "expected information, scaled 2/(N-1)",
            "sandwich_se": False,
            "moments_provenance": moments.provenance,
            "optimizer": "BFGS with backtracking line search",
        },
    )
