"""Rate exponents: constrained quadratic minima, per-coordinate exponents,
closed forms for the two-by-two block design, phase boundaries and the
sufficient conditions under which screening attains the optimal rate."""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .graphs import Gosd

OMEGA_MAX_K = 8


@dataclass(frozen=True)
class ExponentReport:
    method: str
    vartheta: float
    r: float
    h0: float | None
    value: float
    branch: str
    terms: dict = field(default_factory=dict)


def _check_pd(M: np.ndarray) -> None:
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise ValueError("matrix is not positive definite") from None


def omega_min(M) -> tuple[float, np.ndarray]:
    """Exact minimum of ``x' M x`` subject to ``|x_i| >= 1`` for every ``i``.

    Within a sign orthant the problem is a convex QP in ``eta = S x >= 1``.
    Its minimizer has some set ``A`` of coordinates at the bound and the
    rest solving the reduced normal equations, so enumerating every
    orthant and every active set and keeping feasible candidates is exact.
    The first sign is fixed to ``+`` by the symmetry ``x -> -x``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    k = M.shape[0]
    if M.shape != (k, k):
        raise ValueError("M must be square")
    if k > OMEGA_MAX_K:
        raise ValueError(f"exact solver supports k <= {OMEGA_MAX_K}, got {k}")
    M = 0.5 * (M + M.T)
    _check_pd(M)
    if k == 1:
        return float(M[0, 0]), np.ones(1)

    best_val = math.inf
    best_x = None
    splits = _active_splits(k)
    for tail in itertools.product((1.0, -1.0), repeat=k - 1):
        s = np.array((1.0,) + tail)
        Mt = M * np.outer(s, s)
        for A, free in splits:
            eta = np.ones(k)
            if free.size:
                rhs = -Mt[np.ix_(free, A)].sum(axis=1)
                eta_f = np.linalg.solve(Mt[np.ix_(free, free)], rhs)
                if np.any(eta_f < 1.0 - 1e-12):
                    continue
                eta[free] = eta_f
            val = float(eta @ Mt @ eta)
            if val < best_val - 1e-15:
                best_val = val
                best_x = s * eta
    return best_val, best_x


@functools.lru_cache(maxsize=None)
def _active_splits(k: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Every non-empty active set with its complement."""
    out = []
    for size in range(1, k + 1):
        for A in itertools.combinations(range(k), size):
            free = np.array([i for i in range(k) if i not in A], dtype=np.intp)
            out.append((np.array(A, dtype=np.intp), free))
    return tuple(out)


def schur_complement(M, D, F) -> np.ndarray:
    """``M_DD - M_DF M_FF^{-1} M_FD``; returns ``M_DD`` when ``F`` is empty."""
    M = np.asarray(M, dtype=float)
    D = list(D)
    F = list(F)
    if set(D) & set(F):
        raise ValueError("D and F must be disjoint")
    MDD = M[np.ix_(D, D)]
    if not F:
        return MDD.copy()
    MFF = M[np.ix_(F, F)]
    MDF = M[np.ix_(D, F)]
    try:
        c, low = linalg.cho_factor(MFF)
    except linalg.LinAlgError:
        raise ValueError("M_FF is singular or indefinite") from None
    S = MDD - MDF @ linalg.cho_solve((c, low), MDF.T)
    return 0.5 * (S + S.T)


def rho_from_omega(vartheta: float, r: float, omega: float, card_D: int, card_F: int) -> float:
    """Exponent of a (D, F) pair given its omega value."""
    base = (card_D + 2 * card_F) * vartheta / 2
    wr = omega * r
    if card_D % 2 == 0:
        return base + wr / 4
    return base + vartheta / 2 + 0.25 * max(math.sqrt(wr) - vartheta / math.sqrt(wr), 0.0) ** 2


def rho_df(vartheta: float, r: float, M, D, F) -> float:
    D = list(D)
    F = list(F)
    if not D:
        raise ValueError("D must be non-empty")
    omega, _ = omega_min(schur_complement(M, D, F))
    return rho_from_omega(vartheta, r, omega, len(D), len(F))


def _dense_block(M, idx) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.intp)
    if hasattr(M, "tocsr"):
        return M.tocsr()[idx][:, idx].toarray()
    return np.asarray(M)[np.ix_(idx, idx)]


def connected_sets_containing(g: Gosd, j: int, max_size: int) -> list[tuple[int, ...]]:
    """Connected vertex sets that contain ``j`` with at most ``max_size`` vertices."""
    level = {frozenset([j])}
    found = set(level)
    for _ in range(max_size - 1):
        nxt = set()
        for s in level:
            for v in s:
                for u in g.adjacency[v]:
                    if u not in s:
                        t = s | {u}
                        if t not in found:
                            nxt.add(t)
        found |= nxt
        level = nxt
        if not level:
            break
    return sorted((tuple(sorted(s)) for s in found), key=lambda s: (len(s), s))


def rho_star_j(vartheta: float, r: float, M, gosd: Gosd, j: int, g: int,
               max_size: int = OMEGA_MAX_K) -> float:
    """Minimum of ``rho_df`` over (D, F) with ``j`` in ``D | F`` and ``D | F`` connected.

    The union is restricted to GOSD-connected sets of size at most
    ``min(g, max_size)``; pairs whose lower bound ``(|D| + 2|F|) vartheta / 2``
    already exceeds the running minimum are skipped.
    """
    if g < 1:
        raise ValueError("g must be >= 1")
    size = min(g, max_size)
    best = math.inf
    for V in connected_sets_containing(gosd, j, size):
        block = _dense_block(M, V)
        k = len(V)
        for mask in range(1, 2**k):
            D = [i for i in range(k) if mask >> i & 1]
            F = [i for i in range(k) if not mask >> i & 1]
            if (len(D) + 2 * len(F)) * vartheta / 2 >= best:
                continue
            best = min(best, rho_df(vartheta, r, block, D, F))
    return best


def lambda_k_star(M, k: int, gosd: Gosd | None = None, max_dense: int = 30) -> float:
    """Smallest eigenvalue over ``k x k`` principal submatrices.

    With ``gosd`` only GOSD-connected index sets are searched; otherwise all
    subsets are enumerated, which is refused beyond ``max_dense`` rows.
    """
    p = M.shape[0]
    if not 1 <= k <= p:
        raise ValueError("need 1 <= k <= dim(M)")
    if gosd is None:
        if p > max_dense:
            raise ValueError(
                f"brute force over all subsets refused for dim {p} > {max_dense}; pass gosd"
            )
        subsets = itertools.combinations(range(p), k)
    else:
        subsets = _connected_k_sets(gosd, k)
    best = math.inf
    for S in subsets:
        lam = np.linalg.eigvalsh(_dense_block(M, S))[0]
        best = min(best, float(lam))
    return best


def _connected_k_sets(g: Gosd, k: int):
    from .graphs import enumerate_connected_subgraphs

    return [s for s in enumerate_connected_subgraphs(g, k) if len(s) == k]


# ------------------------------------------------ two-by-two block design


def _check_block_args(vartheta, r, h0):
    if not 0 < vartheta < 1:
        raise ValueError("vartheta must lie in (0, 1)")
    if not r > vartheta:
        raise ValueError("r must exceed vartheta")
    if not abs(h0) < 1:
        raise ValueError("|h0| must be < 1")


def _report(method, vartheta, r, h0, terms) -> ExponentReport:
    branch = min(terms, key=terms.get)
    return ExponentReport(method, vartheta, r, h0, float(terms[branch]), branch, dict(terms))


def rho_gs_block(vartheta: float, r: float, h0: float) -> ExponentReport:
    """Screening exponent on the block design with off-diagonal ``h0``."""
    _check_block_args(vartheta, r, h0)
    h = abs(h0)
    w = 1 - h * h
    terms = {
        "single": (vartheta + r) ** 2 / (4 * r),
        "pair": vartheta + (1 - h) * r / 2,
        "one_of_pair": 2 * vartheta + max(w * r - vartheta, 0.0) ** 2 / (4 * w * r),
    }
    return _report("gs", vartheta, r, h0, terms)


def rho_ss_block(vartheta: float, r: float, h0: float) -> ExponentReport:
    """Subset-selection exponent on the block design."""
    _check_block_args(vartheta, r, h0)
    h = abs(h0)
    w = 1 - h * h
    if r / vartheta <= 2 / w:
        ss1 = 2 * vartheta
    else:
        ss1 = (2 * vartheta + w * r) ** 2 / (4 * w * r)
    if r / vartheta <= 2 / (1 - h):
        ss2 = 2 * vartheta
    else:
        ss2 = 2 * (math.sqrt(2 * (1 - h) * r) - math.sqrt((1 - h) * r - vartheta)) ** 2
    terms = {
        "single": (vartheta + r) ** 2 / (4 * r),
        "pair": vartheta + (1 - h) * r / 2,
        "ss1": ss1,
        "ss2": ss2,
    }
    return _report("ss", vartheta, r, h0, terms)


def _lasso3(vartheta, r, h):
    # rationalized so that h -> 0 is stable
    w = 1 - h * h
    a = w * math.sqrt(r)
    b = max(w * (1 - h) ** 2 * r - 4 * h * (1 - h) * vartheta, 0.0)
    root = (1 - h) * (w * r + 2 * vartheta) / (a + math.sqrt(b))
    return root**2


def _lasso4(vartheta, r, h):
    w = 1 - h * h
    a = (1 + h) * math.sqrt(r)
    b = max((1 - h) ** 2 * r - 4 * h * vartheta / w, 0.0)
    return vartheta + (1 - h) ** 3 * (1 + h) * (r + vartheta / w) ** 2 / (a + math.sqrt(b)) ** 2


def rho_lasso_block(vartheta: float, r: float, h0: float) -> ExponentReport:
    """Lasso exponent on the block design."""
    _check_block_args(vartheta, r, h0)
    h = abs(h0)
    l1 = 2 * vartheta if r / vartheta <= 2 / (1 - h) ** 2 else _lasso3(vartheta, r, h)
    l2 = 2 * vartheta if r / vartheta <= (1 + h) / (1 - h) ** 3 else _lasso4(vartheta, r, h)
    terms = {
        "single": (vartheta + r) ** 2 / (4 * r),
        "pair": vartheta + (1 - h) * r / (2 * (1 + math.sqrt(1 - h * h))),
        "lasso1": l1,
        "lasso2": l2,
    }
    return _report("lasso", vartheta, r, h0, terms)


BLOCK_RATES = {"gs": rho_gs_block, "ss": rho_ss_block, "lasso": rho_lasso_block}

TABLE1_COLUMNS = (
    (0.1, 11.0, 0.8), (0.3, 9.0, 0.8), (0.5, 4.0, 0.8), (0.1, 4.0, 0.4),
    (0.3, 4.0, 0.4), (0.5, 4.0, 0.4), (0.1, 3.0, 0.2), (0.3, 3.0, 0.2),
)


def table1() -> list[dict]:
    """Block-design exponents of the three methods at the eight reference triples."""
    rows = []
    for t, r, h in TABLE1_COLUMNS:
        row = {"theta": t, "r": r, "h0": h}
        for name, fn in BLOCK_RATES.items():
            rep = fn(t, r, h)
            row[f"rho_{name}"] = rep.value
            row[f"branch_{name}"] = rep.branch
        rows.append(row)
    return rows


def universal_exponent(vartheta: float, r: float) -> tuple[float, float]:
    """Per-signal exponent ``(r - vartheta)^2 / 4r`` (0 if ``r <= vartheta``)
    and total exponent ``(vartheta + r)^2 / 4r``."""
    if not 0 < vartheta < 1:
        raise ValueError("vartheta must lie in (0, 1)")
    if not r > 0:
        raise ValueError("r must be positive")
    per_signal = (r - vartheta) ** 2 / (4 * r) if r > vartheta else 0.0
    return per_signal, (vartheta + r) ** 2 / (4 * r)


def _edge_of_zero(f, outside, inside, iters=80):
    """Bisect for the edge of a set where ``f`` vanishes."""
    for _ in range(iters):
        mid = 0.5 * (outside + inside)
        if abs(f(mid)) < 1e-14:
            inside = mid
        else:
            outside = mid
    return inside


def phase_boundary(method: str, h0: float, vartheta_grid, r_max: float = 100.0,
                   n_scan: int = 4000, include_jumps: bool = False) -> list[tuple[float, float]]:
    """Solve ``rho(vartheta, r, h0) = 1`` in ``r`` on ``(vartheta, r_max]``.

    A log-spaced scan locates every sign change and each is refined with
    Brent's method. A sign change across a discontinuity is not a root; it
    is dropped unless ``include_jumps`` is set.
    """
    if method not in BLOCK_RATES:
        raise ValueError(f"unknown method {method!r}")
    fn = BLOCK_RATES[method]
    out = []
    for t in vartheta_grid:
        t = float(t)
        if not 0 < t < 1:
            raise ValueError("grid values must lie in (0, 1)")
        f = lambda r: fn(t, r, h0).value - 1.0
        lo = t * (1 + 1e-10)
        rs = np.geomspace(lo, r_max, n_scan)
        vals = np.array([f(x) for x in rs])
        zero = np.abs(vals) < 1e-14
        found = []
        i = 0
        while i < n_scan - 1:
            if zero[i]:
                # plateau where rho is identically 1: report its end points
                j = i
                while j + 1 < n_scan and zero[j + 1]:
                    j += 1
                start = rs[i] if i == 0 else _edge_of_zero(f, rs[i - 1], rs[i])
                end = rs[j] if j == n_scan - 1 else _edge_of_zero(f, rs[j + 1], rs[j])
                found.append(start)
                if end > start:
                    found.append(end)
                i = j + 1
                continue
            if not zero[i + 1] and vals[i] * vals[i + 1] < 0:
                root = optimize.brentq(f, rs[i], rs[i + 1], xtol=1e-13,
                                       rtol=4 * np.finfo(float).eps)
                if abs(f(root)) < 1e-8 or include_jumps:
                    found.append(root)
            i += 1
        if zero[-1] and (not found or found[-1] != rs[-1]):
            found.append(rs[-1])
        if not found:
            raise ValueError(f"no boundary root for vartheta={t} in ({t}, {r_max}]")
        out.extend((t, float(root)) for root in found)
    return out


# -------------------------------------------------- sufficient conditions


def _max_offdiag(M) -> float:
    A = np.abs(np.asarray(M.toarray() if hasattr(M, "toarray") else M, dtype=float))
    np.fill_diagonal(A, 0.0)
    return float(A.max()) if A.size else 0.0


def corollary_n(vartheta: float, r: float) -> int:
    """Integer ``N`` with ``2N - 1 <= (vartheta/r + r/vartheta)/2 < 2N + 1``."""
    tbar = (vartheta / r + r / vartheta) / 2
    return int(math.floor((tbar + 1) / 2))


def general_lambda_bounds(vartheta: float, r: float) -> dict:
    """Required lower bounds on ``lambda_k^*`` for ``k = 2..2N``."""
    s = r / vartheta
    tbar = (vartheta / r + r / vartheta) / 2
    N = corollary_n(vartheta, r)
    need: dict[int, float] = {}
    for k in range(2, 2 * N):
        vals = []
        for j in range(math.ceil((k + 1) / 2), min(k, N) + 1):
            c = tbar - 2 * j + 2
            vals.append((c + math.sqrt(max(c * c - 1, 0.0))) / ((2 * k - 2 * j + 1) * s))
        if vals:
            need[k] = max(need.get(k, -math.inf), max(vals))
    for k in range(2, 2 * N + 1):
        vals = [(tbar + 1 - 2 * j) / ((k - j) * s)
                for j in range(math.ceil(k / 2), min(k - 1, N) + 1)]
        if vals:
            need[k] = max(need.get(k, -math.inf), max(vals))
    return need


def check_corollary_conditions(M, vartheta: float, r: float, gosd: Gosd | None = None) -> dict:
    """Evaluate the three sufficient conditions for the optimal rate.

    Returns a dict keyed ``"entrywise_a"``, ``"entrywise_b"`` and ``"general"``,
    each with ``holds`` and the list of ``violated`` inequalities.
    """
    ratio = r / vartheta
    offmax = _max_offdiag(M)
    p = M.shape[0]

    def lam(k):
        if k > p:
            return math.inf
        return lambda_k_star(M, k, gosd=gosd)

    a = []
    if not 1 < ratio < 3 + 2 * math.sqrt(2):
        a.append("1 < r/theta < 3+2sqrt2")
    if offmax > 4 * math.sqrt(2) - 5:
        a.append("|Omega(i,j)| <= 4sqrt2-5")

    b = []
    if not 1 < ratio < 5 + 2 * math.sqrt(6):
        b.append("1 < r/theta < 5+2sqrt6")
    l3_need, l4_need = 2 * (5 - 2 * math.sqrt(6)), 5 - 2 * math.sqrt(6)
    if lam(3) < l3_need:
        b.append("lambda3* >= 2(5-2sqrt6)")
    if lam(4) < l4_need:
        b.append("lambda4* >= 5-2sqrt6")
    if offmax > 8 * math.sqrt(6) - 19:
        b.append("|Omega(i,j)| <= 8sqrt6-19")

    c = []
    needs = {}
    if ratio > 1:
        needs = general_lambda_bounds(vartheta, r)
        for k, bound in sorted(needs.items()):
            if lam(k) < bound:
                c.append(f"lambda{k}* >= {bound:.6g}")
    else:
        c.append("r/theta > 1")

    return {
        "N": corollary_n(vartheta, r) if ratio > 1 else None,
        "max_offdiag": offmax,
        "entrywise_a": {"holds": not a, "violated": a},
        "entrywise_b": {"holds": not b, "violated": b},
        "general": {"holds": not c, "violated": c, "lambda_bounds": needs},
    }
