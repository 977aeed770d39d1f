"""Regression data, calibrations and Gram-matrix utilities.

The linear model is ``Y = X beta + sigma z`` with column-normalized ``X``.
Signals are rare (probability ``eps_p = p**-vartheta``) and weak
(``tau_p = sigma * sqrt(2 r log p)``).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import sparse

GSX_MAGIC = b"GSX1"


@dataclass(frozen=True)
class DesignData:
    """Design matrix, response and noise level.

    ``Y`` may be ``None`` for a design produced by a generator before the
    response is simulated.
    """

    X: np.ndarray
    Y: np.ndarray | None = None
    sigma: float = 1.0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        n, p = X.shape
        if n < 2 or p < 2:
            raise ValueError(f"need n >= 2 and p >= 2, got n={n}, p={p}")
        object.__setattr__(self, "X", X)
        if self.Y is not None:
            Y = np.asarray(self.Y, dtype=float).reshape(-1)
            if Y.shape[0] != n:
                raise ValueError(f"X has {n} rows but Y has length {Y.shape[0]}")
            object.__setattr__(self, "Y", Y)
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def with_response(self, Y) -> "DesignData":
        return replace(self, Y=Y)

    def column_norms(self) -> np.ndarray:
        return np.sqrt(np.einsum("ij,ij->j", self.X, self.X))

    def check_normalization(self, tol_norm: float = 0.05) -> None:
        """Raise if some column norm falls outside ``[1 - tol, 1 + tol]``."""
        norms = self.column_norms()
        bad = np.flatnonzero(np.abs(norms - 1.0) > tol_norm)
        if bad.size:
            j = int(bad[0])
            raise ValueError(
                f"column {j} has norm {norms[j]:.4f}, outside 1 +/- {tol_norm}"
            )

    def normalized(self) -> "DesignData":
        """Copy with every column rescaled to unit Euclidean norm."""
        norms = self.column_norms()
        if np.any(norms == 0):
            raise ValueError("cannot normalize a zero column")
        return replace(self, X=self.X / norms)


@dataclass(frozen=True)
class ArwParams:
    """Rare/weak calibration: sparsity exponent, strength exponent and sizes."""

    vartheta: float
    r: float
    p: int
    a: float = 1.0
    kappa: float | None = None

    def __post_init__(self):
        if not 0 < self.vartheta < 1:
            raise ValueError("vartheta must lie in (0, 1)")
        if not self.r > 0:
            raise ValueError("r must be positive")
        if self.p < 2:
            raise ValueError("p must be at least 2")
        if self.a < 1:
            raise ValueError("a must be >= 1")
        if self.kappa is not None:
            if not 0 < self.kappa < 1:
                raise ValueError("kappa must lie in (0, 1)")
            if self.kappa <= 1 - self.vartheta:
                raise ValueError("kappa must exceed 1 - vartheta")

    @property
    def eps_p(self) -> float:
        return self.p ** (-self.vartheta)

    def tau_p(self, sigma: float = 1.0) -> float:
        return sigma * math.sqrt(2 * self.r * math.log(self.p))

    @property
    def n(self) -> int | None:
        return None if self.kappa is None else int(round(self.p ** self.kappa))


def derive_calibration(params: ArwParams, sigma: float = 1.0) -> tuple[float, float]:
    """Return ``(eps_p, tau_p)``."""
    return params.eps_p, params.tau_p(sigma)


def r_from_tau(tau: float, p: int, sigma: float = 1.0) -> float:
    """Invert ``tau = sigma sqrt(2 r log p)`` for ``r``."""
    return (tau / sigma) ** 2 / (2 * math.log(p))


def compute_g(m0: int, vartheta: float, r: float) -> int:
    """Smallest integer at least ``max(m0, (vartheta + r)^2 / (2 vartheta r))``."""
    if m0 < 1:
        raise ValueError("m0 must be >= 1")
    ratio = (vartheta + r) ** 2 / (2 * vartheta * r)
    # guard against ceil(2.0000000000000004)
    return max(int(m0), int(math.ceil(ratio - 1e-12)))


Q_RULES = ("max", "conservative", "fixed")


@dataclass(frozen=True)
class TuningParams:
    """Tuning constants for screening and cleaning.

    Args:
        vartheta, r: exponents assumed by the tuning. They may differ from the
            data-generating ones to study misspecified tuning.
        p: problem size, used for ``log p``.
        sigma: noise level.
        m0: largest candidate subgraph size in the screening pass.
        delta: GOSD threshold, ``1/log p`` when ``None``.
        q_rule: ``"max"``, ``"conservative"`` or ``"fixed"``.
        q0: floor applied to every screening constant.
        q_fixed: constant used by the ``"fixed"`` rule.
        q_multiplier: factor applied to the rule's endpoint before the floor.
        u, v: cleaning penalty and minimum magnitude. Default to
            ``sigma sqrt(2 vartheta log p)`` and ``tau_p``.
        max_iterations: passes of the iterative wrapper.
        component_cap: largest component the cleaning pass will enumerate.
        subgraph_cap: abort threshold for candidate enumeration.
    """

    vartheta: float
    r: float
    p: int
    sigma: float = 1.0
    m0: int = 3
    delta: float | None = None
    q_rule: str = "max"
    q0: float = 0.25
    q_fixed: float | None = None
    q_multiplier: float = 1.0
    u: float | None = None
    v: float | None = None
    max_iterations: int = 1
    component_cap: int = 20
    subgraph_cap: int = 10**8

    def __post_init__(self):
        if not 0 < self.vartheta < 1:
            raise ValueError("vartheta must lie in (0, 1)")
        if not self.r > 0:
            raise ValueError("r must be positive")
        if self.m0 < 1:
            raise ValueError("m0 must be >= 1")
        if self.q_rule not in Q_RULES:
            raise ValueError(f"q_rule must be one of {Q_RULES}")
        if self.q_rule == "fixed" and self.q_fixed is None:
            raise ValueError("q_rule='fixed' needs q_fixed")
        if not self.q0 > 0:
            raise ValueError("q0 must be positive")
        if self.delta is not None and not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.component_cap < 1:
            raise ValueError("component_cap must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def log_p(self) -> float:
        return math.log(self.p)

    @property
    def delta_value(self) -> float:
        return self.delta if self.delta is not None else 1.0 / self.log_p

    @property
    def u_gs(self) -> float:
        if self.u is not None:
            return self.u
        return self.sigma * math.sqrt(2 * self.vartheta * self.log_p)

    @property
    def v_gs(self) -> float:
        if self.v is not None:
            return self.v
        return self.sigma * math.sqrt(2 * self.r * self.log_p)

    def with_(self, **changes) -> "TuningParams":
        return replace(self, **changes)


def build_gram(design: DesignData) -> np.ndarray:
    """Gram matrix ``X'X`` with exact symmetry."""
    X = design.X
    G = X.T @ X
    return 0.5 * (G + G.T)


@dataclass(frozen=True)
class RegularizedGram:
    """Thresholded Gram matrix, kept sparse (CSR)."""

    delta: float
    matrix: sparse.csr_matrix = field(repr=False)

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    def submatrix(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.intp)
        return self.matrix[idx][:, idx].toarray()


def threshold_block(G_block: np.ndarray, delta: float) -> np.ndarray:
    """Apply the ``|G| >= delta`` rule to a dense principal block, keeping the diagonal."""
    out = np.where(np.abs(G_block) >= delta, G_block, 0.0)
    np.fill_diagonal(out, np.diag(G_block))
    return out


def regularize_gram(G: np.ndarray, delta: float) -> RegularizedGram:
    """Keep ``G(i, j)`` iff ``|G(i, j)| >= delta``; the diagonal is always kept."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    G = np.asarray(G, dtype=float)
    mask = np.abs(G) >= delta
    np.fill_diagonal(mask, True)
    rows, cols = np.nonzero(mask)
    M = sparse.csr_matrix((G[rows, cols], (rows, cols)), shape=G.shape)
    return RegularizedGram(delta=float(delta), matrix=M)


# ---------------------------------------------------------------- file I/O


def _numeric_rows(path: Path) -> list[list[float]]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = [t.strip() for t in s.split(",")]
            try:
                rows.append([float(t) for t in parts])
            except ValueError:
                if rows:
                    raise ValueError(f"{path}:{lineno}: non-numeric entry")
                continue  # header line
    if not rows:
        raise ValueError(f"{path}: no numeric rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError(f"{path}: ragged rows")
    return rows


def read_matrix_csv(path) -> np.ndarray:
    """Read a numeric CSV (optional header line, ``#`` comments ignored)."""
    return np.array(_numeric_rows(Path(path)), dtype=float)


def read_design_csv(path, sigma: float = 1.0) -> DesignData:
    """CSV with one sample per row and the response in the last column."""
    A = read_matrix_csv(path)
    if A.shape[1] < 3:
        raise ValueError("design CSV needs at least two predictors plus Y")
    return DesignData(X=A[:, :-1], Y=A[:, -1], sigma=sigma)


def write_design_csv(path, design: DesignData) -> None:
    if design.Y is None:
        raise ValueError("design has no response")
    A = np.column_stack([design.X, design.Y])
    header = ",".join([f"x{j + 1}" for j in range(design.p)] + ["y"])
    np.savetxt(path, A, delimiter=",", header=header, comments="", fmt="%.17g")


def write_design_binary(path, design: DesignData) -> None:
    """GSX1 layout: magic, ``n`` and ``p`` as little-endian u64, X column-major, then Y."""
    if design.Y is None:
        raise ValueError("design has no response")
    with open(path, "wb") as fh:
        fh.write(GSX_MAGIC)
        fh.write(struct.pack("<QQ", design.n, design.p))
        fh.write(np.asfortranarray(design.X).astype("<f8").tobytes(order="F"))
        fh.write(design.Y.astype("<f8").tobytes())


def read_design_binary(path, sigma: float = 1.0) -> DesignData:
    data = Path(path).read_bytes()
    if data[:4] != GSX_MAGIC:
        raise ValueError(f"{path}: bad magic, expected GSX1")
    if len(data) < 20:
        raise ValueError(f"{path}: truncated header")
    n, p = struct.unpack("<QQ", data[4:20])
    expected = 20 + 8 * n * (p + 1)
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    vals = np.frombuffer(data, dtype="<f8", offset=20)
    X = vals[: n * p].reshape((n, p), order="F").astype(float)
    Y = vals[n * p :].astype(float)
    return DesignData(X=X, Y=Y, sigma=sigma)


def read_design(path, sigma: float = 1.0) -> DesignData:
    """Dispatch on the file's magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == GSX_MAGIC:
        return read_design_binary(path, sigma)
    return read_design_csv(path, sigma)
