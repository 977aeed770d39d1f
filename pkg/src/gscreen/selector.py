"""Graphlet screening: sequential chi-square screening over small connected
subgraphs of the GOSD, followed by L0-penalized cleaning on each component
of the retained set."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .exponents import omega_min, schur_complement
from .graphs import Gosd, build_gosd, components_of, enumerate_connected_subgraphs
from .model import (
    ArwParams,
    DesignData,
    RegularizedGram,
    TuningParams,
    build_gram,
    regularize_gram,
    threshold_block,
)

RANK_TOL = 1e-8
TIE_TOL = 1e-9


class RankDeficientError(ValueError):
    """Columns of a candidate block are (numerically) linearly dependent."""


class SasViolation(RuntimeError):
    """A component of the retained set is larger than the cleaning cap."""


@dataclass(frozen=True)
class TestRecord:
    I0: tuple[int, ...]
    D: tuple[int, ...]
    F: tuple[int, ...]
    T: float
    t: float
    accepted: bool


@dataclass
class ScreenState:
    retained: tuple[int, ...]
    trace: list[TestRecord] = field(default_factory=list)
    n_tests: int = 0
    n_rank_deficient: int = 0


@dataclass
class SelectionResult:
    beta_hat: np.ndarray
    selected: np.ndarray
    retained: tuple[int, ...]
    components: list[tuple[int, ...]]
    diagnostics: dict
    trace: list[TestRecord] | None = None


def default_tuning(params: ArwParams, sigma: float = 1.0, **overrides) -> TuningParams:
    """Tuning with ``u = sigma sqrt(2 vartheta log p)`` and ``v = tau_p``."""
    return TuningParams(vartheta=params.vartheta, r=params.r, p=params.p, sigma=sigma, **overrides)


# ------------------------------------------------------------ statistics


def _proj_norm2_qr(A: np.ndarray, y: np.ndarray) -> float:
    if A.shape[1] == 0:
        return 0.0
    Q, R, _ = linalg.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d[-1] <= RANK_TOL * d[0]:
        raise RankDeficientError("restricted column block is rank deficient")
    c = Q.T @ y
    return float(c @ c)


def chi2_statistic(design: DesignData, I0, F) -> float:
    """``||P_I0 Y||^2 - ||P_F Y||^2`` from pivoted QR of the column blocks."""
    I0 = list(I0)
    F = list(F)
    if not set(F) <= set(I0):
        raise ValueError("F must be a subset of I0")
    if design.Y is None:
        raise ValueError("design has no response")
    full = _proj_norm2_qr(design.X[:, I0], design.Y)
    part = _proj_norm2_qr(design.X[:, F], design.Y)
    return max(full - part, 0.0)


def _quad_inv(M: np.ndarray, y: np.ndarray) -> float:
    """``y' M^{-1} y`` through Cholesky, with a relative pivot check."""
    if M.shape[0] == 0:
        return 0.0
    if M.shape[0] == 1:
        if M[0, 0] <= RANK_TOL:
            raise RankDeficientError("zero column")
        return float(y[0] * y[0] / M[0, 0])
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise RankDeficientError("Gram block not positive definite") from None
    d = np.diag(L)
    # diag(L)^2 plays the role of squared QR pivots
    if d.min() ** 2 <= RANK_TOL * d.max() ** 2:
        raise RankDeficientError("Gram block nearly singular")
    z = linalg.solve_triangular(L, y, lower=True)
    return float(z @ z)


def gram_chi2(G_block: np.ndarray, y_block: np.ndarray, f_pos) -> float:
    """The same statistic in Gram form: ``y' G^{-1} y - y_F' G_FF^{-1} y_F``."""
    f_pos = list(f_pos)
    full = _quad_inv(G_block, y_block)
    part = _quad_inv(G_block[np.ix_(f_pos, f_pos)], y_block[f_pos]) if f_pos else 0.0
    return max(full - part, 0.0)


def omega_plugin(M, D, F) -> float:
    """Constrained minimum of the Schur-complement quadratic form of ``D`` given ``F``."""
    D = list(D)
    if not D:
        raise ValueError("D must be non-empty")
    S = schur_complement(np.asarray(M, dtype=float), D, F)
    if len(D) == 1:
        if S[0, 0] <= 0:
            raise ValueError("Schur complement not positive")
        return float(S[0, 0])
    return omega_min(S)[0]


def select_q(omega: float, card_D: int, params=None, rule: str = "max", q0: float = 0.25,
             *, vartheta: float | None = None, r: float | None = None,
             multiplier: float = 1.0, q_fixed: float | None = None) -> float:
    """Screening constant ``q`` for a test with ``|D| = card_D``.

    ``params`` may be an ``ArwParams`` or ``TuningParams``; explicit
    ``vartheta`` and ``r`` take precedence. The ``"max"`` rule returns the
    upper end of the admissible interval and ``"conservative"`` the simpler
    endpoint; outside both branch conditions ``q0`` is used. The rule value
    is scaled by ``multiplier`` and floored at ``q0``.
    """
    if params is not None:
        vartheta = params.vartheta if vartheta is None else vartheta
        r = params.r if r is None else r
    if vartheta is None or r is None:
        raise ValueError("vartheta and r are required")
    if not omega > 0:
        raise ValueError("omega must be positive")
    if card_D < 1:
        raise ValueError("card_D must be >= 1")
    if rule == "fixed":
        if q_fixed is None:
            raise ValueError("fixed rule needs q_fixed")
        return max(q0, multiplier * q_fixed)
    wr = omega * r
    ratio = wr / vartheta
    d = card_D
    q = None
    if d % 2 == 1 and ratio > d + math.sqrt(d * d - 1):
        if rule == "max":
            inner = (vartheta + wr) ** 2 / (4 * wr) - (d + 1) * vartheta / 2
            q = (math.sqrt(wr) - math.sqrt(max(inner, 0.0))) ** 2
        elif rule == "conservative":
            q = (wr + vartheta) ** 2 / (4 * wr)
        else:
            raise ValueError(f"unknown q rule {rule!r}")
    elif d % 2 == 0 and ratio >= 2 * d:
        if rule == "max":
            q = (math.sqrt(wr) - math.sqrt(max(wr / 4 - d * vartheta / 2, 0.0))) ** 2
        elif rule == "conservative":
            q = wr / 4
        else:
            raise ValueError(f"unknown q rule {rule!r}")
    elif rule not in ("max", "conservative"):
        raise ValueError(f"unknown q rule {rule!r}")
    if q is None:
        return q0
    return max(q0, multiplier * q)


# ------------------------------------------------------------ pipeline


@dataclass
class Prepared:
    """Quantities shared by every method run on one data set."""

    G: np.ndarray
    ytilde: np.ndarray
    reg: RegularizedGram
    gosd: Gosd
    _subs: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.G.shape[0]

    def subgraphs(self, m0: int, cap: int = 10**8) -> list[tuple[int, ...]]:
        if m0 not in self._subs:
            self._subs[m0] = enumerate_connected_subgraphs(self.gosd, m0, cap)
        return self._subs[m0]


def prepare(design: DesignData, delta: float) -> Prepared:
    if design.Y is None:
        raise ValueError("design has no response")
    G = build_gram(design)
    reg = regularize_gram(G, delta)
    return Prepared(G=G, ytilde=design.X.T @ design.Y, reg=reg, gosd=build_gosd(reg))


def _adjusted(prep: Prepared, beta_prev, Gb) -> callable:
    """Return ``idx -> X'(Y - X b + X_idx b_idx)`` restricted to ``idx``."""
    yt = prep.ytilde
    if beta_prev is None:
        return lambda idx: yt[idx]
    G = prep.G

    def f(idx):
        return yt[idx] - Gb[idx] + G[np.ix_(idx, idx)] @ beta_prev[idx]

    return f


def _screen(prep: Prepared, subs, tuning: TuningParams, beta_prev=None,
            record_trace: bool = False) -> ScreenState:
    G = prep.G
    delta = prep.reg.delta
    Gb = None if beta_prev is None else G @ beta_prev
    ystat = _adjusted(prep, beta_prev, Gb)
    scale = 2 * tuning.sigma**2 * tuning.log_p
    in_u = np.zeros(prep.p, dtype=bool)
    state = ScreenState(retained=())
    q_cache: dict = {}
    omega_cache: dict = {}
    floor = scale * tuning.q0
    for I0 in subs:
        mask = in_u[list(I0)]
        if mask.all():
            continue
        idx = np.array(I0)
        d_pos = np.flatnonzero(~mask)
        f_pos = np.flatnonzero(mask)
        G_block = G[np.ix_(idx, idx)] if len(I0) > 1 else G[idx[:, None], idx]
        y_block = ystat(idx)
        state.n_tests += 1
        try:
            T = gram_chi2(G_block, y_block, f_pos)
        except RankDeficientError:
            state.n_rank_deficient += 1
            continue
        if T <= floor and not record_trace:
            continue  # q >= q0, so this test cannot pass
        omega_block = threshold_block(G_block, delta)
        okey = (omega_block.round(12).tobytes(), d_pos.tobytes())
        omega = omega_cache.get(okey)
        if omega is None:
            try:
                omega = omega_plugin(omega_block, d_pos, f_pos)
            except ValueError:
                state.n_rank_deficient += 1
                continue
            omega_cache[okey] = omega
        key = (round(omega, 12), len(d_pos))
        q = q_cache.get(key)
        if q is None:
            q = select_q(omega, len(d_pos), vartheta=tuning.vartheta, r=tuning.r,
                         rule=tuning.q_rule, q0=tuning.q0, multiplier=tuning.q_multiplier,
                         q_fixed=tuning.q_fixed)
            q_cache[key] = q
        t = scale * q
        accepted = T > t
        if accepted:
            in_u[idx[d_pos]] = True
        if record_trace:
            state.trace.append(TestRecord(
                I0=tuple(I0), D=tuple(int(i) for i in idx[d_pos]),
                F=tuple(int(i) for i in idx[f_pos]), T=T, t=t, accepted=bool(accepted),
            ))
    state.retained = tuple(int(i) for i in np.flatnonzero(in_u))
    return state


def clamped_fit(M_SS: np.ndarray, y_S: np.ndarray, v: float) -> np.ndarray:
    """Restricted least-squares coefficients with every magnitude at least ``v``.

    Coordinates whose unconstrained value falls below ``v`` in magnitude are
    fixed at ``sign * v`` and the rest re-solved; this repeats until all free
    coordinates are feasible.
    """
    k = len(y_S)
    xi = np.linalg.solve(M_SS, y_S) if k > 1 else y_S / M_SS[0, 0]
    fixed = np.zeros(k, dtype=bool)
    for _ in range(k):
        small = ~fixed & (np.abs(xi) < v)
        if not small.any():
            break
        sgn = np.where(xi[small] >= 0, 1.0, -1.0)
        xi[small] = sgn * v
        fixed |= small
        free = ~fixed
        if not free.any():
            break
        rhs = y_S[free] - M_SS[np.ix_(free, fixed)] @ xi[fixed]
        xi[free] = np.linalg.solve(M_SS[np.ix_(free, free)], rhs)
    return xi


def clean_component(M: np.ndarray, y: np.ndarray, u: float, v: float) -> tuple[np.ndarray, float]:
    """Minimize the cleaning functional over supports of one component.

    ``Q(xi) = 0.5 (y - M xi)' M^{-1} (y - M xi) + 0.5 u^2 ||xi||_0``, which for
    ``xi`` supported on ``S`` equals
    ``0.5 y' M^{-1} y - xi_S' y_S + 0.5 xi_S' M_SS xi_S + 0.5 u^2 |S|``.
    Supports are visited by size, then lexicographically, and a later one
    replaces the incumbent only if it is better by more than ``1e-9``.
    """
    k = len(y)
    const = 0.5 * _quad_inv(M, y)
    best_q = const
    best = np.zeros(k)
    for size in range(1, k + 1):
        for S in itertools.combinations(range(k), size):
            S = list(S)
            M_SS = M[np.ix_(S, S)]
            xi = clamped_fit(M_SS, y[S].copy(), v)
            q = const - xi @ y[S] + 0.5 * xi @ M_SS @ xi + 0.5 * u * u * size
            if q < best_q - TIE_TOL:
                best_q = q
                best = np.zeros(k)
                best[S] = xi
    return best, float(best_q)


def _clean(prep: Prepared, retained, tuning: TuningParams, beta_prev=None):
    G = prep.G
    Gb = None if beta_prev is None else G @ beta_prev
    ystat = _adjusted(prep, beta_prev, Gb)
    comps = components_of(prep.gosd, retained)
    beta = np.zeros(prep.p)
    objectives = []
    dropped = []
    u, v = tuning.u_gs, tuning.v_gs
    for comp in comps:
        if len(comp) > tuning.component_cap:
            raise SasViolation(
                f"component of size {len(comp)} exceeds component_cap={tuning.component_cap}"
            )
        idx = np.array(comp)
        M = G[np.ix_(idx, idx)]
        try:
            xi, qval = clean_component(M, ystat(idx), u, v)
        except (RankDeficientError, linalg.LinAlgError, np.linalg.LinAlgError):
            warnings.warn(f"singular Gram block on component {comp}; dropped", RuntimeWarning)
            dropped.append(comp)
            objectives.append(float("nan"))
            continue
        beta[idx] = xi
        objectives.append(qval)
    return beta, comps, objectives, dropped


def _run_once(prep: Prepared, tuning: TuningParams, beta_prev=None, record_trace=False):
    subs = prep.subgraphs(tuning.m0, tuning.subgraph_cap)
    state = _screen(prep, subs, tuning, beta_prev, record_trace)
    beta, comps, objectives, dropped = _clean(prep, state.retained, tuning, beta_prev)
    diagnostics = {
        "n_subgraphs": len(subs),
        "n_tests": state.n_tests,
        "n_rank_deficient": state.n_rank_deficient,
        "n_retained": len(state.retained),
        "max_component": max((len(c) for c in comps), default=0),
        "component_objectives": objectives,
        "dropped_components": [list(c) for c in dropped],
        "gosd_max_degree": prep.gosd.K,
        "delta": prep.reg.delta,
    }
    return SelectionResult(
        beta_hat=beta,
        selected=np.flatnonzero(beta),
        retained=state.retained,
        components=comps,
        diagnostics=diagnostics,
        trace=state.trace if record_trace else None,
    )


def _resolve(design, params, tuning) -> TuningParams:
    if tuning is None:
        if params is None:
            raise ValueError("need params or tuning")
        tuning = default_tuning(params, design.sigma)
    if tuning.p != design.p:
        raise ValueError(f"tuning.p={tuning.p} but design has p={design.p}")
    return tuning


def gs_step(design: DesignData, reg: RegularizedGram, subs, tuning: TuningParams,
            params: ArwParams | None = None, record_trace: bool = False) -> ScreenState:
    """Screening pass over ``subs`` in order; returns the retained set and trace."""
    G = build_gram(design)
    prep = Prepared(G=G, ytilde=design.X.T @ design.Y, reg=reg, gosd=build_gosd(reg))
    return _screen(prep, subs, tuning, None, record_trace)


def gc_step(design: DesignData, state: ScreenState, gosd: Gosd,
            tuning: TuningParams) -> SelectionResult:
    """Cleaning pass on each GOSD component of ``state.retained``."""
    G = build_gram(design)
    reg = regularize_gram(G, tuning.delta_value)
    prep = Prepared(G=G, ytilde=design.X.T @ design.Y, reg=reg, gosd=gosd)
    beta, comps, objectives, dropped = _clean(prep, state.retained, tuning)
    return SelectionResult(
        beta_hat=beta,
        selected=np.flatnonzero(beta),
        retained=state.retained,
        components=comps,
        diagnostics={
            "max_component": max((len(c) for c in comps), default=0),
            "component_objectives": objectives,
            "dropped_components": [list(c) for c in dropped],
        },
    )


def graphlet_screening(design: DesignData, params: ArwParams | None = None,
                       tuning: TuningParams | None = None, *, prepared: Prepared | None = None,
                       record_trace: bool = False) -> SelectionResult:
    """Gram, GOSD, candidate subgraphs, screening then cleaning."""
    tuning = _resolve(design, params, tuning)
    prep = prepared if prepared is not None else prepare(design, tuning.delta_value)
    res = _run_once(prep, tuning, None, record_trace)
    res.diagnostics["iterations"] = 1
    return res


INIT_RULES = ("refit", "hard", "sign", "zero")
ADJUST_RULES = ("refit", "retained", "estimate")
SCOPES = ("weak", "outside")
KEEP_FACTOR = 0.5


def refit_on(G: np.ndarray, ytilde: np.ndarray, support) -> np.ndarray:
    """Least-squares coefficients on ``support`` (zero elsewhere), from the Gram form."""
    support = np.asarray(support, dtype=int)
    b = np.zeros(G.shape[0])
    if support.size == 0:
        return b
    Gs = G[np.ix_(support, support)]
    try:
        b[support] = linalg.solve(Gs, ytilde[support], assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        b[support] = linalg.lstsq(Gs, ytilde[support])[0]
    return b


def next_adjustment(prep: Prepared, res: SelectionResult, rule: str, v: float) -> np.ndarray:
    """Coefficient vector used to adjust the next pass.

    ``"refit"``: least squares on the selected set plus every retained
    coordinate whose refit over the whole retained set reaches ``v/2``.
    ``"retained"``: least squares on the retained set. ``"estimate"``: the
    cleaned estimate itself.
    """
    if rule == "estimate":
        return res.beta_hat.copy()
    b_u = refit_on(prep.G, prep.ytilde, res.retained)
    if rule == "retained":
        return b_u
    if rule != "refit":
        raise ValueError(f"adjust must be one of {ADJUST_RULES}")
    keep = np.union1d(res.selected, np.flatnonzero(np.abs(b_u) >= KEEP_FACTOR * v))
    return refit_on(prep.G, prep.ytilde, keep)


def weak_adjusted(prep: Prepared, b: np.ndarray) -> Prepared:
    """Copy of ``prep`` with ``X'Y`` replaced by ``X'Y - (G - Omega_delta) b``.

    Only the contribution through Gram entries below the GOSD threshold is
    removed; strongly correlated neighbours are left to the screening graph.
    """
    weak = prep.G @ b - prep.reg.matrix @ b
    return replace(prep, ytilde=prep.ytilde - weak)


def initial_estimate(ytilde: np.ndarray, threshold: float, rule: str = "refit",
                     G: np.ndarray | None = None) -> np.ndarray:
    """Starting point for the iterative wrapper.

    All rules start from the support ``{|Ytilde| >= threshold}``. ``"sign"``
    returns ``sgn(Ytilde)`` there, ``"hard"`` keeps ``Ytilde``, ``"refit"``
    uses least squares on that support (needs ``G``) and ``"zero"`` returns 0.
    """
    keep = np.abs(ytilde) >= threshold
    if rule == "sign":
        return np.sign(ytilde) * keep
    if rule == "hard":
        return ytilde * keep
    if rule == "refit":
        if G is None:
            raise ValueError("refit rule needs the Gram matrix")
        return refit_on(G, ytilde, np.flatnonzero(keep))
    if rule == "zero":
        return np.zeros_like(ytilde)
    raise ValueError(f"init rule must be one of {INIT_RULES}")


def iterative_gs(design: DesignData, params: ArwParams | None = None,
                 tuning: TuningParams | None = None, max_iter: int | None = None, *,
                 init: str | np.ndarray = "refit", init_threshold: float | None = None,
                 adjust: str = "refit", scope: str = "weak",
                 prepared: Prepared | None = None) -> SelectionResult:
    """Repeat screening and cleaning on responses adjusted by a previous fit ``b``.

    With ``scope="weak"`` every pass works on ``X'Y - (G - Omega_delta) b``,
    which cancels interference carried by Gram entries below the GOSD
    threshold. With ``scope="outside"`` a candidate set ``I0`` is tested on
    ``X'(Y - X b + X_I0 b_I0)`` restricted to ``I0``, which cancels every
    coefficient outside ``I0``. The first ``b`` comes from ``init``, later ones
    from ``next_adjustment``. Stops after ``max_iter`` passes or once the
    selected support repeats.
    """
    tuning = _resolve(design, params, tuning)
    max_iter = tuning.max_iterations if max_iter is None else max_iter
    if not 1 <= max_iter <= 5:
        raise ValueError("max_iter must lie in 1..5")
    if adjust not in ADJUST_RULES:
        raise ValueError(f"adjust must be one of {ADJUST_RULES}")
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    prep = prepared if prepared is not None else prepare(design, tuning.delta_value)
    if isinstance(init, str):
        thr = tuning.v_gs if init_threshold is None else init_threshold
        b = initial_estimate(prep.ytilde, thr, init, prep.G)
    else:
        b = np.asarray(init, dtype=float)
    prev_support = None
    res = None
    for it in range(1, max_iter + 1):
        if not np.any(b):
            res = _run_once(prep, tuning)
        elif scope == "weak":
            res = _run_once(weak_adjusted(prep, b), tuning)
        else:
            res = _run_once(prep, tuning, b)
        support = tuple(res.selected.tolist())
        res.diagnostics["iterations"] = it
        if support == prev_support:
            break
        prev_support = support
        b = next_adjustment(prep, res, adjust, tuning.v_gs)
    return res
