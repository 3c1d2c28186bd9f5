"""Misspecified Cramer-Rao machinery for Gaussian observation models.

Two flavours of observation model are supported:

* real, with a full covariance ``Sigma`` (the position-domain model, whose
  "observations" are the channel-domain delay/Doppler parameters), and
* circularly-symmetric complex, with covariance ``noise_var * I`` (the uplink
  channel-estimation model).

Everything here is model-agnostic; callers pass the means, the mismatched
Jacobian and Hessian, and a vector of characteristic parameter scales used to
nondimensionalize the optimizer and the matrix inversions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg

log = logging.getLogger(__name__)


class NonFiniteError(FloatingPointError):
    pass


class SingularFimError(np.linalg.LinAlgError):
    pass


# ---------------------------------------------------------------- optimizer


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    converged: bool
    n_iter: int
    grad_norm: float
    message: str = ""


def minimize_backtracking(
    fun_grad: Callable,
    x0,
    c1: float = 1e-4,
    shrink: float = 0.5,
    max_iter: int = 5000,
    grad_tol: float = 1e-10,
    init_step: float = 1.0,
    precond: Callable | None = None,
    min_step: float = 1e-30,
) -> OptimResult:
    """Descent with Armijo backtracking.

    Each iteration moves along ``d = -P g`` where ``P`` is the identity unless
    ``precond(x)`` supplies a positive-definite matrix. A step ``t`` is accepted
    once ``f(x + t d) <= f(x) + c1 t g.d``; the next trial step starts at twice
    the last accepted one (capped at ``init_step``).

    Stops when ``|g| <= grad_tol (1 + |f|)``. When backtracking can no longer
    produce a decrease the run ends; it counts as converged if the predicted
    decrease ``-g.d`` is already at round-off level relative to ``f``.
    """
    x = np.array(x0, dtype=float)
    f, g = fun_grad(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteError(f"objective not finite at initial point: f={f}")
    t_prev = init_step
    for it in range(max_iter + 1):
        gn = float(np.linalg.norm(g))
        if gn <= grad_tol * (1.0 + abs(f)):
            return OptimResult(x, f, True, it, gn, "gradient tolerance")
        if it == max_iter:
            break
        d = -g if precond is None else -(precond(x) @ g)
        slope = float(g @ d)
        if not slope < 0:
            # Preconditioner lost definiteness; fall back to the gradient.
            d, slope = -g, -gn * gn
        t = min(init_step, 2.0 * t_prev)
        while True:
            x_new = x + t * d
            f_new, g_new = fun_grad(x_new)
            if np.isfinite(f_new) and f_new <= f + c1 * t * slope:
                break
            t *= shrink
            if t < min_step:
                ok = -slope <= 1e-9 * (1.0 + abs(f))
                return OptimResult(x, f, ok, it, gn, "line search stalled")
        if not np.all(np.isfinite(g_new)):
            raise NonFiniteError(f"gradient not finite at iteration {it}")
        if f_new == f and -slope <= 1e-9 * (1.0 + abs(f)):
            return OptimResult(x_new, f_new, True, it + 1, float(np.linalg.norm(g_new)), "no further decrease")
        x, f, g, t_prev = x_new, f_new, g_new, t
    return OptimResult(x, f, False, max_iter, float(np.linalg.norm(g)), "max_iter reached")


# ---------------------------------------------------------------- models


@dataclass
class GaussianModelPair:
    """True vs. mismatched mean of a Gaussian observation.

    Exactly one of ``covariance`` (real observations) or ``noise_var`` (complex
    observations with covariance ``noise_var * I``) must be given.
    ``mismatched_hessian`` returns an array of shape (obs, P, P).
    """

    true_params: np.ndarray
    true_mean: Callable
    mismatched_mean: Callable
    mismatched_jacobian: Callable
    mismatched_hessian: Callable
    covariance: np.ndarray | None = None
    noise_var: float | None = None
    scales: np.ndarray | None = None

    def __post_init__(self):
        self.true_params = np.asarray(self.true_params, dtype=float)
        p = self.true_params.size
        if (self.covariance is None) == (self.noise_var is None):
            raise ValueError("give exactly one of covariance or noise_var")
        if self.covariance is not None:
            cov = np.asarray(self.covariance, dtype=float)
            if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
                raise ValueError("covariance must be square")
            if not np.allclose(cov, cov.T, rtol=1e-10, atol=0.0):
                raise ValueError("covariance must be symmetric")
            try:
                self._chol = linalg.cho_factor(cov)
            except linalg.LinAlgError as exc:
                raise ValueError("covariance must be positive definite") from exc
            self.covariance = cov
        elif not self.noise_var > 0:
            raise ValueError("noise_var must be positive")
        self.scales = np.ones(p) if self.scales is None else np.asarray(self.scales, dtype=float)
        if self.scales.shape != (p,) or np.any(self.scales <= 0):
            raise ValueError("scales must be positive, one per parameter")
        self._y = self.true_mean(self.true_params)

    @property
    def is_complex(self) -> bool:
        return self.noise_var is not None

    def weight(self, v):
        """Apply the inverse covariance to ``v`` (vector or matrix)."""
        if self.is_complex:
            return v / self.noise_var
        return linalg.cho_solve(self._chol, v)

    def residual(self, params):
        return self._y - self.mismatched_mean(params)

    def inner(self, a, b):
        """Real inner product <a, C^-1 b> matching the likelihood metric (factor 2 for complex)."""
        if self.is_complex:
            return 2.0 * np.real(np.conj(a).T @ b) / self.noise_var
        return a.T @ linalg.cho_solve(self._chol, b)

    def kl(self, params):
        """Mismatch objective; proportional to the KL divergence up to a constant."""
        e = self.residual(params)
        return float(0.5 * self.inner(e, e))

    def fim(self, params):
        F = self.mismatched_jacobian(params)
        return _sym(self.inner(F, F))


def _sym(m):
    return 0.5 * (m + m.T)


# ---------------------------------------------------------------- bounds


def pseudo_true(model: GaussianModelPair, opts: dict | None = None, preconditioned: bool = True) -> OptimResult:
    """KL-minimizing parameter of the mismatched model, started at the truth.

    The search runs in coordinates divided by ``model.scales``. With
    ``preconditioned`` the descent direction is scaled by the inverse
    Gauss-Newton matrix (the mismatched FIM), which makes the step
    insensitive to the very different curvatures of mixed-unit parameters.
    """
    opts = dict(opts or {})
    D = model.scales
    theta0 = model.true_params

    def fg(x):
        th = x * D
        e = model.residual(th)
        F = model.mismatched_jacobian(th) * D
        f = 0.5 * model.inner(e, e)
        g = -model.inner(F, e)
        return float(f), np.asarray(g, dtype=float)

    precond = None
    if preconditioned:

        def precond(x):
            F = model.mismatched_jacobian(x * D) * D
            G = _sym(model.inner(F, F))
            return np.linalg.pinv(G, hermitian=True)

    res = minimize_backtracking(fg, theta0 / D, precond=precond, **opts)
    res.x = res.x * D
    if not res.converged:
        log.warning("pseudo-true search did not converge: %s (|g|=%.3e)", res.message, res.grad_norm)
    return res


def generalized_fims(model: GaussianModelPair, theta_tilde):
    """Generalized FIMs ``A`` (expected Hessian) and ``B`` (expected score outer product)."""
    th = np.asarray(theta_tilde, dtype=float)
    e = model.residual(th)
    F = model.mismatched_jacobian(th)
    H = model.mismatched_hessian(th)
    FF = _sym(model.inner(F, F))
    if model.is_complex:
        We = e / model.noise_var
        curv = 2.0 * np.real(np.einsum("kij,k->ij", np.conj(H), We))
        score = 2.0 * np.real(np.conj(F).T @ We)
    else:
        We = model.weight(e)
        curv = np.einsum("kij,k->ij", H, We)
        score = F.T @ We
    A = _sym(curv) - FF
    B = FF + np.outer(score, score)
    return A, B


@dataclass
class MismatchBound:
    true_params: np.ndarray
    pseudo_true: np.ndarray
    A: np.ndarray
    B: np.ndarray
    mcrb: np.ndarray
    bias_outer: np.ndarray
    lbm: np.ndarray
    converged: bool
    kl_value: float

    @property
    def bias(self) -> np.ndarray:
        return self.pseudo_true - self.true_params


def mcrb_from_fims(A, B, scales=None):
    """``A^-1 B A^-1`` computed in scaled coordinates."""
    p = A.shape[0]
    D = np.ones(p) if scales is None else np.asarray(scales, dtype=float)
    As = A * np.outer(D, D)
    Bs = B * np.outer(D, D)
    if not np.all(np.isfinite(As)) or np.linalg.cond(As) > 1e14:
        raise SingularFimError("generalized FIM A is singular; MCRB undefined")
    Ai = np.linalg.inv(As)
    M = _sym(Ai @ Bs @ Ai.T)
    return M * np.outer(D, D)


def mismatch_bound(model: GaussianModelPair, opts: dict | None = None, preconditioned: bool = True) -> MismatchBound:
    res = pseudo_true(model, opts, preconditioned)
    A, B = generalized_fims(model, res.x)
    mcrb = mcrb_from_fims(A, B, model.scales)
    delta = model.true_params - res.x
    bias_outer = np.outer(delta, delta)
    return MismatchBound(
        true_params=model.true_params.copy(),
        pseudo_true=res.x,
        A=A,
        B=B,
        mcrb=mcrb,
        bias_outer=bias_outer,
        lbm=mcrb + bias_outer,
        converged=res.converged,
        kl_value=res.fun,
    )


def crb(model: GaussianModelPair, params=None):
    """Classical bound ``J^-1`` of the mismatched model evaluated at ``params`` (default: truth)."""
    th = model.true_params if params is None else np.asarray(params, dtype=float)
    J = model.fim(th)
    return mcrb_from_fims(J, J, model.scales)
