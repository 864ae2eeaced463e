"""General-form Tikhonov regularization and regularization-parameter selection.

Solves min ||A x - b||^2 + lam^2 ||L x||^2 for complex A and b with a real
finite-difference penalty L, and picks lam by generalized cross-validation,
the normalized cumulative periodogram, or against a known truth.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_triangular

from .constants import LAMBDA_FLOOR


class RegularizationError(ValueError):
    pass


def penalty_matrix(kind: str, n: int) -> np.ndarray:
    """Identity, first-difference (x_k - x_{k-1}) or second-difference stencil."""
    if kind == "I":
        return np.eye(n)
    if kind == "D1":
        if n < 2:
            raise RegularizationError("D1 needs at least 2 unknowns")
        return np.eye(n)[1:] - np.eye(n)[:-1]
    if kind == "D2":
        if n < 3:
            raise RegularizationError("D2 needs at least 3 unknowns")
        I = np.eye(n)
        return I[2:] - 2 * I[1:-1] + I[:-2]
    raise RegularizationError(f"unknown penalty {kind!r}; use I, D1 or D2")


@dataclass
class RegularizedProblem:
    """b = A x + noise, with penalty ``L`` (a matrix or one of 'I', 'D1', 'D2')."""

    operator: np.ndarray
    data: np.ndarray
    penalty: object = "D2"
    reg_weight: float = 0.0

    def __post_init__(self):
        self.operator = np.atleast_2d(np.asarray(self.operator))
        self.data = np.asarray(self.data)
        m, n = self.operator.shape
        if self.data.shape[0] != m:
            raise RegularizationError(f"data length {self.data.shape[0]} != operator rows {m}")
        if isinstance(self.penalty, str):
            self.penalty = penalty_matrix(self.penalty, n)
        self.penalty = np.atleast_2d(np.asarray(self.penalty, dtype=float))
        if self.penalty.shape[1] != n:
            raise RegularizationError("penalty columns must match the unknowns")
        if self.reg_weight < 0:
            raise RegularizationError("reg_weight must be non-negative")

    @property
    def L(self) -> np.ndarray:
        return self.penalty


def tikhonov_solve(problem: RegularizedProblem, rcond=1e-13):
    """Pseudoinverse solution of the stacked system [A; lam L] x = [b; 0].

    Returns ``(x, flags)``; ``flags`` contains ``"rank-deficient"`` when the
    stacked operator loses rank and the minimum-norm solution is returned.
    """
    A, L, lam = problem.operator, problem.L, problem.reg_weight
    b = problem.data
    stacked = np.vstack([A, lam * L])
    rhs = np.concatenate([b, np.zeros((L.shape[0],) + b.shape[1:], dtype=b.dtype)])
    U, s, Vh = np.linalg.svd(stacked, full_matrices=False)
    keep = s > rcond * s[0] if s.size else s.astype(bool)
    flags = []
    if not np.all(keep) or s.size < A.shape[1]:
        flags.append("rank-deficient")
    coef = (U[:, keep].conj().T @ rhs) / (s[keep] if rhs.ndim == 1 else s[keep, None])
    return Vh[keep].conj().T @ coef, flags


class TikhonovFactorization:
    """Reusable factorization giving x(lam), residuals and GCV terms cheaply.

    With the QR factorization [A; L] = [Q_A; Q_L] R and the SVD
    Q_A = U diag(c) W^H, the regularized solution is
    x(lam) = R^-1 W diag(c / (c^2 + lam^2 (1 - c^2))) U^H b.
    Requires [A; L] to have full column rank.
    """

    def __init__(self, A, L):
        A = np.atleast_2d(np.asarray(A))
        L = np.atleast_2d(np.asarray(L, dtype=float))
        m, n = A.shape
        Q, R = np.linalg.qr(np.vstack([A, L.astype(A.dtype)]))
        diag = np.abs(np.diag(R))
        if diag.min() <= 1e-12 * diag.max():
            raise RegularizationError("[A; L] is rank deficient")
        U, c, Wh = np.linalg.svd(Q[:m], full_matrices=False)
        self.A, self.L, self.R = A, L, R
        self.U, self.c, self.W = U, np.clip(c, 0.0, 1.0), Wh.conj().T
        self.m = m

    def _filter(self, lam):
        c = self.c
        return c / (c ** 2 + lam ** 2 * (1.0 - c ** 2))

    def _complement(self, lam):
        """1 - c * filter, evaluated without cancellation."""
        c2 = self.c ** 2
        t = lam ** 2 * (1.0 - c2)
        return t / (c2 + t)

    def project(self, b):
        return self.U.conj().T @ b

    def solve(self, b, lam, beta=None):
        beta = self.project(b) if beta is None else beta
        d = self._filter(lam)
        y = self.W @ ((d if beta.ndim == 1 else d[:, None]) * beta)
        return solve_triangular(self.R, y)

    def outside_norm2(self, b, beta=None):
        """Part of ||b||^2 outside the range of U (zero when U is square)."""
        if self.U.shape[1] == self.m:
            return 0.0
        beta = self.project(b) if beta is None else beta
        return float(np.linalg.norm(b - self.U @ beta) ** 2)

    def residual_norm2(self, b, lam, beta=None, outside=None):
        beta = self.project(b) if beta is None else beta
        outside = self.outside_norm2(b, beta) if outside is None else outside
        return float(np.sum(self._complement(lam) ** 2 * np.abs(beta) ** 2) + outside)

    def trace_complement(self, lam):
        """trace(I - A A_lam^#)."""
        return float(np.sum(self._complement(lam)) + (self.m - self.c.size))

    def residual(self, b, lam):
        return b - self.A @ self.solve(b, lam)


def _factorization(problem_or_fact):
    if isinstance(problem_or_fact, TikhonovFactorization):
        return problem_or_fact
    return TikhonovFactorization(problem_or_fact.operator, problem_or_fact.L)


def gcv_score(problem, lam, data=None, fact=None):
    """||A x_lam - b||^2 / trace(I - A A_lam^#)^2; +inf for a vanishing denominator."""
    fact = fact or _factorization(problem)
    b = problem.data if data is None else data
    denom = fact.trace_complement(lam)
    if denom <= 0:
        return np.inf
    return fact.residual_norm2(b, lam) / denom ** 2


def cumulative_periodogram_distance(r) -> float:
    """2-norm distance between the residual's cumulative periodogram and a straight line."""
    r = np.asarray(r, dtype=float)
    p = np.abs(np.fft.rfft(r)[1:]) ** 2
    if p.size == 0 or p.sum() == 0:
        return 0.0
    c = np.cumsum(p) / p.sum()
    line = np.arange(1, p.size + 1) / p.size
    return float(np.linalg.norm(c - line))


def ncp_score(problem, lam, data=None, fact=None):
    """Whiteness distance of the residual, summed over real and imaginary channels."""
    fact = fact or _factorization(problem)
    b = problem.data if data is None else data
    if b.shape[0] < 8:
        raise RegularizationError("NCP needs at least 8 residual points")
    r = fact.residual(b, lam)
    score = cumulative_periodogram_distance(r.real)
    if np.iscomplexobj(r):
        score += cumulative_periodogram_distance(r.imag)
    return score


# --- 1-D downhill simplex ------------------------------------------------------

@dataclass
class SimplexResult:
    x: float
    fun: float
    n_iter: int
    converged: bool


def nelder_mead_1d(fun: Callable[[float], float], x0: float, step: float = 1.0,
                   lower: float = -np.inf, upper: float = np.inf, rtol: float = 1e-3,
                   max_iter: int = 100, reflect: float = 1.0, expand: float = 2.0,
                   contract: float = 0.5, shrink: float = 0.5) -> SimplexResult:
    """Downhill simplex on a scalar variable clipped to [lower, upper].

    Stops when the simplex width falls below rtol * max(1, |x_best|). On
    non-convergence the best point seen is returned with ``converged=False``.
    """
    def f(x):
        return fun(float(np.clip(x, lower, upper)))

    x = np.array([x0, x0 + step], dtype=float)
    fx = np.array([f(x[0]), f(x[1])])
    it = 0
    converged = False
    while it < max_iter:
        order = np.argsort(fx)
        x, fx = x[order], fx[order]
        if abs(x[1] - x[0]) <= rtol * max(1.0, abs(x[0])):
            converged = True
            break
        if np.clip(x[0], lower, upper) == np.clip(x[1], lower, upper):
            converged = True
            break
        it += 1
        best, worst = x[0], x[1]
        xr = best + reflect * (best - worst)
        fr = f(xr)
        if fr < fx[0]:
            xe = best + expand * (best - worst)
            fe = f(xe)
            x[1], fx[1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < fx[1]:
            x[1], fx[1] = xr, fr
        else:
            xc = best + contract * (worst - best)
            fc = f(xc)
            if fc < fx[1]:
                x[1], fx[1] = xc, fc
            else:
                x[1] = best + shrink * (worst - best)
                fx[1] = f(x[1])
    k = int(np.argmin(fx))
    return SimplexResult(float(np.clip(x[k], lower, upper)), float(fx[k]), it, converged)


@dataclass
class SelectorConfig:
    """Regularization-parameter selection settings (search runs over log lam)."""

    method: str = "gcv"
    lambda_floor: float = LAMBDA_FLOOR
    lambda_max: float = 1e3
    initial: float = 1.0
    step: float = 1.0
    rtol: float = 1e-3
    max_iter: int = 100
    fixed_lambda: Optional[float] = None
    coefficients: dict = field(default_factory=lambda: {"reflect": 1.0, "expand": 2.0,
                                                          "contract": 0.5, "shrink": 0.5})

    def __post_init__(self):
        self.method = self.method.lower()
        if self.method in ("oracle", "exact"):
            self.method = "exact-oracle"
        if self.method not in ("exact-oracle", "gcv", "ncp", "fixed"):
            raise RegularizationError(f"unknown selector {self.method!r}")
        if self.method == "fixed" and self.fixed_lambda is None:
            raise RegularizationError("fixed selector needs fixed_lambda")
        if not self.lambda_floor > 0:
            raise RegularizationError("lambda_floor must be positive")


@dataclass
class Selection:
    lam: float
    score: float
    converged: bool
    n_iter: int
    method: str


def minimize_log_lambda(score: Callable[[float], float], cfg: SelectorConfig) -> Selection:
    res = nelder_mead_1d(lambda u: score(float(np.exp(u))), np.log(cfg.initial), cfg.step,
                         np.log(cfg.lambda_floor), np.log(cfg.lambda_max), cfg.rtol,
                         cfg.max_iter, **cfg.coefficients)
    # snap to the bounds exactly rather than through exp(log(.)) rounding
    if res.x <= np.log(cfg.lambda_floor):
        lam = cfg.lambda_floor
    elif res.x >= np.log(cfg.lambda_max):
        lam = cfg.lambda_max
    else:
        lam = max(float(np.exp(res.x)), cfg.lambda_floor)
    if not res.converged:
        warnings.warn(f"{cfg.method} lambda search did not converge; returning best seen")
    return Selection(lam, res.fun, res.converged, res.n_iter, cfg.method)


def select_lambda(problem, cfg: SelectorConfig, truth=None, window=None,
                  fact=None, data=None) -> Selection:
    """Choose lam for ``problem`` by ``cfg.method``.

    ``truth`` (and optionally an index ``window``) is required by the
    exact-oracle method, which minimizes the true squared error.
    """
    if cfg.method == "fixed":
        lam = max(cfg.fixed_lambda, cfg.lambda_floor)
        return Selection(lam, np.nan, True, 0, "fixed")
    fact = fact or _factorization(problem)
    b = problem.data if data is None else data
    if cfg.method == "gcv":
        score = lambda lam: gcv_score(problem, lam, b, fact)
    elif cfg.method == "ncp":
        score = lambda lam: ncp_score(problem, lam, b, fact)
    else:
        if truth is None:
            raise RegularizationError("exact-oracle selection needs the true solution")
        sel = slice(None) if window is None else window
        beta = fact.project(b)
        score = lambda lam: float(np.sum(np.abs(fact.solve(b, lam, beta)[sel] - truth[sel]) ** 2))
    return minimize_log_lambda(score, cfg)
