"""Simulation generators and the replication runner for the experiment suite."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, sparse

from . import __version__
from .baselines import lasso_best_hamming
from .model import DesignData, TuningParams, r_from_tau
from .selector import graphlet_screening, iterative_gs, prepare

SIGNAL_LAWS = ("equal", "mixture", "block2", "block4")
OMEGA_KINDS = ("identity", "block2", "block4", "tridiag_block", "pentadiag", "random_sparse")


# ------------------------------------------------------------ Omega


def _block4_matrix() -> np.ndarray:
    A = np.eye(4)
    for i, j in itertools.product(range(1, 5), repeat=2):
        if abs(i - j) == 1:
            A[i - 1, j - 1] = 0.4 * np.sign(6 - i - j)
        elif abs(i - j) >= 2:
            A[i - 1, j - 1] = 0.05 * np.sign(5.5 - i - j)
    return A


def _banded(p: int, diagonals: dict[int, np.ndarray]) -> np.ndarray:
    M = np.eye(p)
    for k, pattern in diagonals.items():
        vals = np.resize(pattern, p - k)
        M[np.arange(p - k), np.arange(k, p)] = vals
        M[np.arange(k, p), np.arange(p - k)] = vals
    return M


def _random_sparse(p: int, K: int, A: float, rng: np.random.Generator) -> np.ndarray:
    # symmetric random pattern at density K/p, like sprandsym
    dens = K / p
    upper = sparse.random(p, p, density=dens, random_state=rng,
                          data_rvs=rng.standard_normal, format="coo")
    W = np.zeros((p, p))
    keep = upper.row < upper.col
    W[upper.row[keep], upper.col[keep]] = upper.data[keep]
    W = W + W.T
    # trim symmetrically until every row has at most K nonzeros
    counts = np.count_nonzero(W, axis=1)
    for i in rng.permutation(p):
        while counts[i] > K:
            nz = np.flatnonzero(W[i])
            j = nz[np.argmax(counts[nz])]
            W[i, j] = W[j, i] = 0.0
            counts[i] -= 1
            counts[j] -= 1
    absW = np.abs(W)
    rs = absW.sum(axis=1)
    denom = np.maximum(rs[:, None], rs[None, :])
    with np.errstate(invalid="ignore", divide="ignore"):
        W = np.where(W != 0, W / denom, 0.0)
    W *= A
    np.fill_diagonal(W, 1.0)
    return W


def gen_omega(kind: str, p: int, rng: np.random.Generator | None = None, **params) -> np.ndarray:
    """Correlation matrix of a named family.

    Args:
        kind: ``identity``, ``block2`` (``h0``; block signs alternate),
            ``block4``, ``tridiag_block``, ``pentadiag`` or ``random_sparse``
            (``K``, ``A``; needs ``rng``).
        p: dimension.
    """
    if kind == "identity":
        return np.eye(p)
    if kind == "block2":
        if p % 2:
            raise ValueError("block2 needs even p")
        h0 = params.get("h0", 0.7)
        M = np.eye(p)
        for b in range(p // 2):
            s = 1.0 if b % 2 == 0 else -1.0
            M[2 * b, 2 * b + 1] = M[2 * b + 1, 2 * b] = s * h0
        return M
    if kind == "block4":
        if p % 4:
            raise ValueError("block4 needs p divisible by 4")
        return linalg.block_diag(*([_block4_matrix()] * (p // 4)))
    if kind == "tridiag_block":
        return _banded(p, {1: np.array([0.4, 0.4, -0.4])})
    if kind == "pentadiag":
        return _banded(p, {1: np.array([0.4, 0.4, -0.4]), 2: np.array([0.05, -0.05])})
    if kind == "random_sparse":
        if rng is None:
            raise ValueError("random_sparse needs an rng")
        K = int(params.get("K", 3))
        A = float(params.get("A", 0.7))
        for _ in range(100):
            M = _random_sparse(p, K, A, rng)
            try:
                np.linalg.cholesky(M)
                return M
            except np.linalg.LinAlgError:
                continue
        raise RuntimeError("random_sparse: no positive definite draw in 100 attempts")
    raise ValueError(f"unknown Omega kind {kind!r}")


# ------------------------------------------------------------ signals


@dataclass
class SignalSpec:
    beta: np.ndarray
    law: str
    tau: float

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.beta)


def _magnitudes(k: int, tau: float, rng: np.random.Generator, law: str) -> np.ndarray:
    if law == "equal":
        return np.full(k, tau)
    # 0.8 point mass at tau, 0.2 tau (1 + V/6) with V chi-square(1)
    v = rng.standard_normal(k) ** 2
    spread = rng.random(k) < 0.2
    return np.where(spread, tau * (1 + v / 6), tau)


def _rand_signs(k, rng):
    return rng.choice(np.array([-1.0, 1.0]), size=k)


def _block_counts(n_blocks: int, fracs) -> list[int]:
    counts = [int(round(f * n_blocks)) for f in fracs]
    if sum(counts) > n_blocks:
        raise ValueError("block fractions exceed one")
    return counts


BLOCK4_MULTI = [c for k in (2, 3, 4) for c in itertools.combinations(range(4), k)]


def gen_signal(law: str, eps_p: float, tau_p: float, p: int, rng: np.random.Generator,
               eta: float = 0.0) -> SignalSpec:
    """Draw ``beta = b * mu``.

    ``equal`` puts ``tau_p`` on a Bernoulli(eps_p) support; ``mixture`` draws
    random signs and magnitudes from the point-mass/chi-square mixture;
    ``block2`` and ``block4`` choose whole blocks with the stated fractions
    (controlled by ``eta``) and mixture magnitudes.
    """
    if law not in SIGNAL_LAWS:
        raise ValueError(f"law must be one of {SIGNAL_LAWS}")
    if not 0 <= eta <= 1:
        raise ValueError("eta must lie in [0, 1]")
    if not 0 <= eps_p <= 1:
        raise ValueError("eps_p must lie in [0, 1]")
    beta = np.zeros(p)
    if law in ("equal", "mixture"):
        idx = np.flatnonzero(rng.random(p) < eps_p)
        mag = _magnitudes(len(idx), tau_p, rng, law)
        signs = np.ones(len(idx)) if law == "equal" else _rand_signs(len(idx), rng)
        beta[idx] = signs * mag
        return SignalSpec(beta, law, tau_p)
    size = 2 if law == "block2" else 4
    if p % size:
        raise ValueError(f"{law} needs p divisible by {size}")
    nb = p // size
    one, multi = _block_counts(nb, [size * (1 - eta) * eps_p, size * eta * eps_p])
    order = rng.permutation(nb)
    positions = []
    for b in order[:one]:
        positions.append(size * b + rng.integers(size))
    for b in order[one:one + multi]:
        if size == 2:
            positions.extend([2 * b, 2 * b + 1])
        else:
            pattern = BLOCK4_MULTI[rng.integers(len(BLOCK4_MULTI))]
            positions.extend(4 * b + i for i in pattern)
    positions = np.array(sorted(positions), dtype=int)
    beta[positions] = _rand_signs(len(positions), rng) * _magnitudes(len(positions), tau_p, rng,
                                                                     "mixture")
    return SignalSpec(beta, law, tau_p)


# ------------------------------------------------------------ design and noise


def _sym_sqrt(omega: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(omega)
    if w.min() <= 0:
        raise ValueError("Omega is not positive definite")
    R = (V * np.sqrt(w)) @ V.T
    return 0.5 * (R + R.T)


def _chol_factor(omega: np.ndarray):
    try:
        L = np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        raise ValueError("Omega is not positive definite") from None
    nnz = np.count_nonzero(L)
    if nnz < 0.1 * L.size:
        return sparse.csc_matrix(L)
    return L


_FACTOR_CACHE: dict = {}


def _cached(key, fn, omega):
    if key[1] is None:
        return fn(omega)
    if key not in _FACTOR_CACHE:
        if len(_FACTOR_CACHE) > 8:
            _FACTOR_CACHE.clear()
        _FACTOR_CACHE[key] = fn(omega)
    return _FACTOR_CACHE[key]


def gen_design(mode: str, omega: np.ndarray, n: int | None, rng: np.random.Generator | None,
               cache_key=None) -> np.ndarray:
    """Design matrix: ``random`` rows are N(0, Omega/n); ``fixed`` is the symmetric root of Omega."""
    p = omega.shape[0]
    if mode == "fixed":
        return _cached(("sqrt", cache_key), _sym_sqrt, omega).copy()
    if mode != "random":
        raise ValueError("mode must be 'random' or 'fixed'")
    if n is None or n < 2:
        raise ValueError("random design needs n >= 2")
    L = _cached(("chol", cache_key), _chol_factor, omega)
    Z = rng.standard_normal((n, p))
    if sparse.issparse(L):
        X = (L @ Z.T).T
    else:
        X = Z @ L.T
    return np.asarray(X) / math.sqrt(n)


def gen_noise(kind: str, n: int, rng: np.random.Generator, df: float | None = None) -> np.ndarray:
    """Unit-variance noise: ``gaussian`` or ``scaled_t`` with ``df >= 3``."""
    if kind == "gaussian":
        return rng.standard_normal(n)
    if kind == "scaled_t":
        if df is None or df < 3:
            raise ValueError("scaled_t needs df >= 3")
        return rng.standard_t(df, n) / math.sqrt(df / (df - 2))
    raise ValueError(f"unknown noise kind {kind!r}")


@dataclass
class Observed:
    """What a method sees, plus the truth to score against."""

    design: DesignData
    beta: np.ndarray
    visible: np.ndarray


def apply_misspecification(kind: str | None, X: np.ndarray, beta: np.ndarray, z: np.ndarray,
                           eta: float, rng: np.random.Generator) -> Observed:
    """Build the observed problem under a misspecification scenario.

    ``missing``: each true predictor is dropped with probability ``eta``; the
    response comes from the full model and methods see ``X[:, R]`` with
    ``R`` the kept true predictors plus all nulls. ``nonlinear``: a fraction
    ``eta`` of true predictors enter through ``sgn(x) x^2`` or ``exp(sqrt(n) x)``,
    centred and scaled to variance ``1/n``; methods see the linear design.
    ``None`` gives the plain linear model.
    """
    if not 0 <= eta <= 1:
        raise ValueError("eta must lie in [0, 1]")
    n, p = X.shape
    if kind is None:
        return Observed(DesignData(X, X @ beta + z), beta, np.arange(p))
    S = np.flatnonzero(beta)
    if kind == "missing":
        dropped = S[rng.random(len(S)) < eta]
        keep = np.setdiff1d(np.arange(p), dropped)
        Y = X @ beta + z
        return Observed(DesignData(X[:, keep], Y), beta[keep], keep)
    if kind == "nonlinear":
        S_nl = S[rng.random(len(S)) < eta]
        S_nl = rng.permutation(S_nl)
        half = len(S_nl) // 2
        S1, S2 = S_nl[:half], S_nl[half:]
        F = X.copy()
        for js, f in ((S1, lambda x: np.sign(x) * x**2), (S2, lambda x: np.exp(math.sqrt(n) * x))):
            for j in js:
                col = f(X[:, j])
                col = col - col.mean()
                sd = col.std()
                F[:, j] = col / (sd * math.sqrt(n)) if sd > 0 else 0.0
        Y = F @ beta + z
        return Observed(DesignData(X, Y), beta, np.arange(p))
    raise ValueError(f"unknown misspecification {kind!r}")


def hamming(beta_hat, beta) -> tuple[int, float]:
    """Sign-mismatch count and its ratio to the number of signals.

    With no signals the ratio is the distance itself.
    """
    beta_hat = np.asarray(beta_hat)
    beta = np.asarray(beta)
    if beta_hat.shape != beta.shape:
        raise ValueError("length mismatch")
    d = int(np.count_nonzero(np.sign(beta_hat) != np.sign(beta)))
    s = int(np.count_nonzero(beta))
    return d, (d / s if s else float(d))


# ------------------------------------------------------------ configs


@dataclass
class Setting:
    vartheta: float
    tau: float
    signal_law: str = "mixture"
    eta: float = 0.0
    noise: str = "gaussian"
    df: float | None = None
    misspec: str | None = None
    misspec_eta: float = 0.0
    r: float | None = None

    def label(self) -> dict:
        out = {"theta": self.vartheta, "tau": round(self.tau, 6)}
        if self.r is not None:
            out["r"] = self.r
        if self.signal_law in ("block2", "block4") or self.eta:
            out["eta"] = self.eta
        if self.noise != "gaussian":
            out["df"] = self.df
        if self.misspec:
            out["misspec_eta"] = self.misspec_eta
        out["law"] = self.signal_law
        return out


@dataclass
class MethodSpec:
    name: str
    method: str  # gs | ups | lasso
    q_multiplier: float = 1.0
    vartheta_factor: float = 1.0
    r_factor: float = 1.0


@dataclass
class ExperimentConfig:
    experiment: str
    p: int
    design: str
    omega_kind: str
    settings: list[Setting]
    methods: list[MethodSpec]
    kappa: float = 0.975
    omega_params: dict = field(default_factory=dict)
    reps: int = 40
    seed: int = 0
    m0: int = 3
    max_iter: int | None = None
    omega_draws: int | None = None
    init: str = "refit"
    adjust: str = "refit"
    scope: str = "weak"
    q_rule: str = "max"
    q0: float = 0.25
    notes: str = ""

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.design not in ("random", "fixed"):
            raise ValueError("design must be random or fixed")
        if self.omega_kind not in OMEGA_KINDS:
            raise ValueError(f"unknown Omega kind {self.omega_kind!r}")
        for s in self.settings:
            if not 0 < s.vartheta < 1:
                raise ValueError("vartheta out of range")
            if s.signal_law not in SIGNAL_LAWS:
                raise ValueError(f"unknown signal law {s.signal_law!r}")
        for m in self.methods:
            if m.method not in ("gs", "ups", "lasso"):
                raise ValueError(f"unknown method {m.method!r}")
        if self.omega_draws is not None and self.reps % self.omega_draws:
            raise ValueError("reps must be a multiple of omega_draws")

    @property
    def n(self) -> int:
        return self.p if self.design == "fixed" else int(round(self.p ** self.kappa))

    @property
    def iterations(self) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return 1 if self.design == "fixed" else 5

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["settings"] = [Setting(**s) for s in d["settings"]]
        d["methods"] = [MethodSpec(**m) for m in d["methods"]]
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


EXPERIMENT_IDS = ("1", "2a", "2b", "3", "4a", "4b", "4c", "5a", "5b", "5c", "5d", "6a", "6b", "6c")
Q_MULTIPLIERS = (0.7, 0.8, 0.9, 1.0, 1.1, 1.2)
THETA_FACTORS = (0.85, 0.925, 1.0, 1.075, 1.15, 1.225)
R_FACTORS = (0.8, 0.9, 1.0, 1.1, 1.2, 1.3)
DF_GRID = (3, 4, 5, 6, 7, 8, 9, 10, 30, 50)
ETA_2A = (0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.1, 0.2)


def _tau(r, p):
    return math.sqrt(2 * r * math.log(p))


def _three():
    return [MethodSpec("gs", "gs"), MethodSpec("ups", "ups"), MethodSpec("lasso", "lasso")]


def experiment_config(exp_id: str, reduced: bool = False, p: int | None = None,
                      reps: int | None = None, seed: int = 0, **overrides) -> ExperimentConfig:
    """Preset for an experiment id; ``reduced`` uses ``p = 2000`` and 20 reps."""
    if exp_id not in EXPERIMENT_IDS:
        raise ValueError(f"unknown experiment id {exp_id!r}")
    P = p or (2000 if reduced else 5000)
    R = reps or (20 if reduced else 40)
    two = [MethodSpec("gs", "gs"), MethodSpec("lasso", "lasso")]
    c: dict
    if exp_id == "1":
        c = dict(design="fixed", omega_kind="block2", omega_params={"h0": 0.7},
                 settings=[Setting(t, tau) for t in (0.25, 0.4, 0.55) for tau in (6, 7, 8, 9, 10)],
                 methods=_three())
    elif exp_id in ("2a", "2b"):
        law = "block2" if exp_id == "2a" else "block4"
        kind = "block2" if exp_id == "2a" else "block4"
        c = dict(design="random", omega_kind=kind, omega_params={"h0": 0.5} if kind == "block2" else {},
                 settings=[Setting(0.35, _tau(3, P), law, eta=e, r=3.0) for e in ETA_2A],
                 methods=_three(),
                 notes="block4 multi-signal blocks uniform over the union of the 11 position patterns")
    elif exp_id == "3":
        c = dict(design="random", omega_kind="tridiag_block",
                 settings=[Setting(t, tau, law) for law in ("equal", "mixture")
                           for t in (0.35, 0.5) for tau in (6, 8, 10)],
                 methods=two)
    elif exp_id in ("4a", "4b", "4c"):
        kind = {"4a": "block2", "4b": "pentadiag", "4c": "random_sparse"}[exp_id]
        params = {"4a": {"h0": 0.5}, "4b": {}, "4c": {"K": 3, "A": 0.7}}[exp_id]
        c = dict(design="random", omega_kind=kind, omega_params=params,
                 settings=[Setting(0.35, tau) for tau in range(6, 13)], methods=two,
                 omega_draws=5 if exp_id == "4c" else None)
        if exp_id == "4c" and R % 5:
            R = 5 * max(1, round(R / 5))
    elif exp_id in ("5a", "5b", "5c"):
        settings = [Setting(t, _tau(r, P), r=r) for t in (0.35, 0.6) for r in (1.5, 3.0)]
        if exp_id == "5a":
            methods = [MethodSpec(f"gs_q{m}", "gs", q_multiplier=m) for m in Q_MULTIPLIERS]
        elif exp_id == "5b":
            methods = [MethodSpec(f"gs_theta{f}", "gs", vartheta_factor=f) for f in THETA_FACTORS]
        else:
            methods = [MethodSpec(f"gs_r{f}", "gs", r_factor=f) for f in R_FACTORS]
        c = dict(design="fixed", omega_kind="pentadiag", settings=settings, methods=methods)
    elif exp_id == "5d":
        c = dict(design="random", omega_kind="pentadiag",
                 settings=[Setting(t, _tau(2.0, P), r=2.0) for t in (0.35, 0.6)],
                 methods=[MethodSpec(f"gs_theta{f}", "gs", vartheta_factor=f) for f in THETA_FACTORS]
                 + [MethodSpec(f"gs_r{f}", "gs", r_factor=f) for f in R_FACTORS])
    else:
        base = Setting(0.35, _tau(3.0, P), r=3.0)
        if exp_id == "6a":
            settings = [Setting(**{**asdict(base), "noise": "scaled_t", "df": float(d)})
                        for d in DF_GRID]
        elif exp_id == "6b":
            settings = [Setting(**{**asdict(base), "misspec": "missing", "misspec_eta": 0.02 * k})
                        for k in range(11)]
        else:
            settings = [Setting(**{**asdict(base), "misspec": "nonlinear", "misspec_eta": 0.05 * k})
                        for k in range(9)]
        c = dict(design="random", omega_kind="pentadiag", settings=settings, methods=_three())
    c.update(overrides)
    return ExperimentConfig(experiment=exp_id, p=P, reps=R, seed=seed, **c)


# ------------------------------------------------------------ running


def rep_rng(seed: int, setting_idx: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(setting_idx, rep)))


def _omega_for(config: ExperimentConfig, rep: int):
    draw = None
    rng = None
    if config.omega_kind == "random_sparse":
        per = config.reps // (config.omega_draws or config.reps)
        draw = rep // per
        rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(2**20, draw)))
    key = (config.omega_kind, json.dumps(config.omega_params, sort_keys=True), config.p,
           config.seed if draw is not None else None, draw)
    return _omega_cached(key, rng), key


_OMEGA_CACHE: dict = {}


def _omega_cached(key, rng):
    if key not in _OMEGA_CACHE:
        if len(_OMEGA_CACHE) > 8:
            _OMEGA_CACHE.clear()
        kind, params, p = key[0], json.loads(key[1]), key[2]
        _OMEGA_CACHE[key] = gen_omega(kind, p, rng=rng, **params)
    return _OMEGA_CACHE[key]


def simulate(config: ExperimentConfig, setting_idx: int, rep: int) -> tuple[Observed, SignalSpec]:
    """Data for one replication, fully determined by ``(seed, setting_idx, rep)``."""
    s = config.settings[setting_idx]
    omega, key = _omega_for(config, rep)
    rng = rep_rng(config.seed, setting_idx, rep)
    p = config.p
    signal = gen_signal(s.signal_law, p ** (-s.vartheta), s.tau, p, rng, eta=s.eta)
    X = gen_design(config.design, omega, config.n, rng, cache_key=key)
    z = gen_noise(s.noise, X.shape[0], rng, s.df)
    obs = apply_misspecification(s.misspec, X, signal.beta, z, s.misspec_eta, rng)
    return obs, signal


def _tuning_for(config, s: Setting, m: MethodSpec, p: int) -> TuningParams:
    r = r_from_tau(s.tau, p)
    return TuningParams(
        vartheta=min(s.vartheta * m.vartheta_factor, 0.999),
        r=r * m.r_factor,
        p=p,
        m0=1 if m.method == "ups" else config.m0,
        q_rule=config.q_rule,
        q0=config.q0,
        q_multiplier=m.q_multiplier,
        max_iterations=config.iterations,
    )


def run_rep(config: ExperimentConfig, setting_idx: int, rep: int) -> list[dict]:
    """Run every configured method on one replication's data."""
    s = config.settings[setting_idx]
    obs, _ = simulate(config, setting_idx, rep)
    design = obs.design
    beta = obs.beta
    rows = []
    prep = None
    for m in config.methods:
        row = {"setting": setting_idx, "rep": rep, "method": m.name, **s.label(),
               "n_signals": int(np.count_nonzero(beta))}
        t0 = time.perf_counter()
        try:
            if m.method == "lasso":
                if prep is None:
                    prep = prepare(design, 1.0 / math.log(design.p))
                d, lam = lasso_best_hamming(prep.G, beta, ytilde=prep.ytilde)
                row.update(hamming=d, ratio=d / row["n_signals"] if row["n_signals"] else float(d),
                           lambda_star=lam)
            else:
                tuning = _tuning_for(config, s, m, design.p)
                if prep is None or prep.reg.delta != tuning.delta_value:
                    prep = prepare(design, tuning.delta_value)
                if config.iterations > 1:
                    res = iterative_gs(design, tuning=tuning, init=config.init,
                                       adjust=config.adjust, scope=config.scope,
                                       prepared=prep)
                else:
                    res = graphlet_screening(design, tuning=tuning, prepared=prep)
                d, ratio = hamming(res.beta_hat, beta)
                S = np.flatnonzero(beta)
                missed = np.setdiff1d(S, np.array(res.retained, dtype=int)).size
                row.update(hamming=d, ratio=ratio,
                           screen_miss=missed / len(S) if len(S) else 0.0,
                           max_component=res.diagnostics["max_component"],
                           iterations=res.diagnostics["iterations"])
            row["error"] = ""
        except Exception as exc:  # recorded, not dropped
            row.update(hamming=float("nan"), ratio=float("nan"), error=f"{type(exc).__name__}: {exc}")
        row["seconds"] = time.perf_counter() - t0
        rows.append(row)
    return rows


@dataclass
class HammingReport:
    config: dict
    seed: int
    config_hash: str
    rows: list[dict]
    summary: list[dict]


def summarize(rows: list[dict], methods: list[str]) -> list[dict]:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["setting"], r["method"]), []).append(r)
    out = []
    for (si, mname), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], methods.index(kv[0][1]))):
        ok = [r for r in rs if not r["error"]]
        h = np.array([r["hamming"] for r in ok], dtype=float)
        q = np.array([r["ratio"] for r in ok], dtype=float)
        row = {k: v for k, v in rs[0].items()
               if k not in ("rep", "hamming", "ratio", "n_signals", "error", "seconds",
                            "screen_miss", "max_component", "iterations", "lambda_star")}
        row.update(
            reps=len(rs), failed=len(rs) - len(ok),
            mean_hamming=float(h.mean()) if h.size else float("nan"),
            sd_hamming=float(h.std(ddof=1)) if h.size > 1 else 0.0,
            mean_ratio=float(q.mean()) if q.size else float("nan"),
            sd_ratio=float(q.std(ddof=1)) if q.size > 1 else 0.0,
        )
        if ok and "screen_miss" in ok[0]:
            row["mean_screen_miss"] = float(np.mean([r["screen_miss"] for r in ok]))
            row["max_component"] = int(max(r["max_component"] for r in ok))
        out.append(row)
    return out


def _run_rep_star(args):
    return run_rep(*args)


def run_experiment(config: ExperimentConfig, workers: int = 1, progress=None) -> HammingReport:
    """All replications of every setting; methods share data within a replication."""
    tasks = [(config, si, rep) for si in range(len(config.settings)) for rep in range(config.reps)]
    rows: list[dict] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for i, rs in enumerate(ex.map(_run_rep_star, tasks, chunksize=1)):
                rows.extend(rs)
                if progress:
                    progress(i + 1, len(tasks))
    else:
        for i, t in enumerate(tasks):
            rows.extend(run_rep(*t))
            if progress:
                progress(i + 1, len(tasks))
    methods = [m.name for m in config.methods]
    return HammingReport(config=config.to_dict(), seed=config.seed,
                         config_hash=config.config_hash(), rows=rows,
                         summary=summarize(rows, methods))


def header_line(config_hash: str, seed) -> str:
    return f"# gscreen {__version__} config={config_hash} seed={seed}"


def _write_csv(path: Path, rows: list[dict], header: str) -> None:
    keys: list[str] = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def write_report(report: HammingReport, outdir) -> dict:
    """Write ``summary.csv``, ``reps.csv`` (long format) and ``summary.json``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    head = header_line(report.config_hash, report.seed)
    paths = {"summary": outdir / "summary.csv", "reps": outdir / "reps.csv",
             "json": outdir / "summary.json"}
    _write_csv(paths["summary"], report.summary, head)
    _write_csv(paths["reps"], report.rows, head)
    with open(paths["json"], "w") as fh:
        json.dump({"version": __version__, "config_hash": report.config_hash,
                   "seed": report.seed, "config": report.config, "summary": report.summary},
                  fh, indent=2, default=str)
    return paths
