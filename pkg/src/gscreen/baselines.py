"""Comparison methods: lasso path by coordinate descent and univariate
penalized screening (screening with singleton candidates only)."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .model import ArwParams, DesignData, TuningParams, build_gram
from .selector import Prepared, SelectionResult, graphlet_screening, iterative_gs


@dataclass
class LassoPath:
    lambdas: np.ndarray
    coefs: np.ndarray  # (n_lambdas, p)
    converged: np.ndarray
    sweeps: np.ndarray

    @property
    def supports(self) -> list[np.ndarray]:
        return [np.flatnonzero(b) for b in self.coefs]


def default_lambda_grid(ytilde: np.ndarray, n_lambdas: int = 100, ratio: float = 1e-3) -> np.ndarray:
    """Log-spaced grid from ``max |X'Y|`` down to ``ratio`` times that."""
    lam_max = float(np.max(np.abs(ytilde)))
    if lam_max == 0:
        return np.zeros(1)
    return np.geomspace(lam_max, ratio * lam_max, n_lambdas)


@numba.njit(cache=True)
def _sweep(G, c, beta, grad, lam, coords):
    """One pass over ``coords``; ``grad = c - G beta`` is kept current."""
    max_change = 0.0
    for j in coords:
        gjj = G[j, j]
        old = beta[j]
        z = grad[j] + gjj * old
        if z > lam:
            new = (z - lam) / gjj
        elif z < -lam:
            new = (z + lam) / gjj
        else:
            new = 0.0
        d = new - old
        if d != 0.0:
            beta[j] = new
            for i in range(G.shape[0]):
                grad[i] -= G[i, j] * d
            ad = abs(d)
            if ad > max_change:
                max_change = ad
    return max_change


@numba.njit(cache=True)
def _cd_path(G, c, lambdas, tol, max_sweeps, truth, margin):
    """Warm-started path. With ``margin >= 0`` the path stops once the count
    of nonzero coordinates where ``truth`` is zero exceeds the best full
    sign-Hamming distance seen so far by ``margin``."""
    p = G.shape[0]
    L = lambdas.shape[0]
    coefs = np.zeros((L, p))
    converged = np.zeros(L, dtype=np.bool_)
    sweeps = np.zeros(L, dtype=np.int64)
    beta = np.zeros(p)
    grad = c.copy()
    all_coords = np.arange(p)
    best = p + 1
    n_done = L
    for k in range(L):
        lam = lambdas[k]
        n_sweeps = 0
        ok = False
        while n_sweeps < max_sweeps:
            change = _sweep(G, c, beta, grad, lam, all_coords)
            n_sweeps += 1
            if change < tol:
                ok = True
                break
            active = np.flatnonzero(beta)
            # iterate on the active set until it settles, then re-check all
            while n_sweeps < max_sweeps:
                change = _sweep(G, c, beta, grad, lam, active)
                n_sweeps += 1
                if change < tol:
                    break
        coefs[k] = beta
        converged[k] = ok
        sweeps[k] = n_sweeps
        if margin >= 0:
            ham = 0
            fp = 0
            for j in range(p):
                sj = 0
                if beta[j] > 0:
                    sj = 1
                elif beta[j] < 0:
                    sj = -1
                if sj != truth[j]:
                    ham += 1
                    if truth[j] == 0:
                        fp += 1
            if ham < best:
                best = ham
            if fp > best + margin:
                n_done = k + 1
                break
    return coefs[:n_done], converged[:n_done], sweeps[:n_done]


def lasso_cd(design_or_gram, lambda_grid=None, tol: float = 1e-7, max_sweeps: int = 10_000,
             ytilde: np.ndarray | None = None, truth: np.ndarray | None = None,
             stop_margin: int = 10) -> LassoPath:
    """Lasso path for ``0.5 ||Y - X b||^2 + lambda ||b||_1`` with warm starts.

    Accepts a ``DesignData`` or a precomputed Gram matrix together with
    ``ytilde = X'Y``. Each coordinate update soft-thresholds the partial
    correlation and divides by ``G_jj``. A lambda is converged when a full
    sweep moves no coefficient by ``tol`` or more.

    When ``truth`` is given the path is cut short once the false positives
    alone exceed the best sign-Hamming distance so far by ``stop_margin``;
    the returned path then covers only the fitted prefix of the grid.
    """
    if isinstance(design_or_gram, DesignData):
        G = build_gram(design_or_gram)
        c = design_or_gram.X.T @ design_or_gram.Y
    else:
        G = np.asarray(design_or_gram, dtype=float)
        if ytilde is None:
            raise ValueError("ytilde is required with a Gram matrix")
        c = np.asarray(ytilde, dtype=float)
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(c)
    lambdas = np.asarray(lambda_grid, dtype=float)
    if np.any(lambdas < 0) or np.any(np.diff(lambdas) > 0):
        raise ValueError("lambda grid must be non-negative and descending")
    if truth is None:
        truth_sign = np.zeros(len(c), dtype=np.int64)
        margin = -1
    else:
        truth_sign = np.sign(np.asarray(truth)).astype(np.int64)
        margin = int(stop_margin)
    coefs, converged, sweeps = _cd_path(np.ascontiguousarray(G), c, lambdas, tol, max_sweeps,
                                        truth_sign, margin)
    return LassoPath(lambdas=lambdas[: len(coefs)], coefs=coefs, converged=converged,
                     sweeps=sweeps)


def kkt_residual(G: np.ndarray, ytilde: np.ndarray, beta: np.ndarray, lam: float) -> float:
    """Largest violation of the lasso optimality conditions."""
    grad = ytilde - G @ beta
    active = beta != 0
    r_act = np.abs(grad[active] - lam * np.sign(beta[active]))
    r_zero = np.maximum(np.abs(grad[~active]) - lam, 0.0)
    return float(max(r_act.max(initial=0.0), r_zero.max(initial=0.0)))


def sign_hamming(beta_hat: np.ndarray, beta: np.ndarray) -> int:
    return int(np.count_nonzero(np.sign(beta_hat) != np.sign(beta)))


def lasso_best_hamming(design_or_gram, beta_true, lambda_grid=None, *,
                       ytilde: np.ndarray | None = None,
                       tol: float = 1e-7, max_sweeps: int = 10_000,
                       full_path: bool = False, stop_margin: int = 10) -> tuple[int, float]:
    """Smallest sign-Hamming distance to ``beta_true`` along the lasso path.

    ``beta_true`` may be an array or any object with a ``beta`` attribute.
    Returns ``(distance, lambda)``; ties go to the largest lambda. Unless
    ``full_path`` is set, fitting stops once false positives exceed the best
    distance so far by ``stop_margin``, since smaller lambdas then mostly add
    variables.
    """
    beta = np.asarray(getattr(beta_true, "beta", beta_true), dtype=float)
    path = lasso_cd(design_or_gram, lambda_grid, tol, max_sweeps, ytilde=ytilde,
                    truth=None if full_path else beta, stop_margin=stop_margin)
    truth = np.sign(beta)
    errs = np.count_nonzero(np.sign(path.coefs) != truth[None, :], axis=1)
    k = int(np.argmin(errs))
    return int(errs[k]), float(path.lambdas[k])


def ups(design: DesignData, params: ArwParams | None = None, tuning: TuningParams | None = None,
        *, iterative: bool = False, max_iter: int | None = None, init: str = "refit",
        init_threshold: float | None = None, adjust: str = "refit", scope: str = "weak",
        prepared: Prepared | None = None) -> SelectionResult:
    """Univariate penalized screening: the graphlet pipeline with ``m0 = 1``."""
    if tuning is None:
        if params is None:
            raise ValueError("need params or tuning")
        tuning = TuningParams(vartheta=params.vartheta, r=params.r, p=design.p,
                              sigma=design.sigma, m0=1)
    else:
        tuning = tuning.with_(m0=1)
    if iterative:
        return iterative_gs(design, tuning=tuning, max_iter=max_iter, init=init,
                            init_threshold=init_threshold, adjust=adjust, scope=scope,
                            prepared=prepared)
    return graphlet_screening(design, tuning=tuning, prepared=prepared)
