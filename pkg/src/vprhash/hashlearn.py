"""Hash function learning: supervised CCA + ITQ and random-hyperplane LSH.

Codes are read out as ``bit_j = 1`` iff ``((x - mean) @ W @ R)_j > 0``.
ITQ works internally with bipolar codes in {-1, +1}; a projection of
exactly zero maps to -1 (external bit 0).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .codes import BinaryCodeSet, pack

LSH = "lsh"
CCAITQ = "ccaitq"
METHOD_TAGS = {LSH: 0, CCAITQ: 1}
TAG_METHODS = {v: k for k, v in METHOD_TAGS.items()}

ITQ_ITERATIONS = 50
ORTHO_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class HashModel:
    """Learned hash: ``mean`` (d,), projection ``W`` (d, k), rotation ``R`` (k, k)."""

    method: str
    mean: np.ndarray
    W: np.ndarray
    R: np.ndarray
    loss_history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        if self.method not in METHOD_TAGS:
            raise ValueError(f"unknown method {self.method!r}")
        mean = np.asarray(self.mean, dtype=np.float64)
        W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        R = np.atleast_2d(np.asarray(self.R, dtype=np.float64))
        d, k = W.shape
        if k == 0:
            raise ValueError("empty code: k = 0")
        if k > d and self.method != LSH:
            raise ValueError(f"code length k={k} exceeds feature dimension d={d}")
        if mean.shape != (d,) or R.shape != (k, k):
            raise ValueError(f"inconsistent shapes: mean {mean.shape}, W {W.shape}, R {R.shape}")
        for name, arr in (("mean", mean), ("W", W), ("R", R)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
        if orthogonality_error(R) > ORTHO_TOL:
            raise ValueError("rotation R is not orthogonal")
        for name, arr in (("mean", mean), ("W", W), ("R", R)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def k(self) -> int:
        return self.W.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HashModel):
            return NotImplemented
        return (
            self.method == other.method
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.W, other.W)
            and np.array_equal(self.R, other.R)
        )


@dataclass(frozen=True)
class CcaFit:
    directions: np.ndarray
    correlations: np.ndarray


def orthogonality_error(R: np.ndarray) -> float:
    """``max |R^T R - I|``."""
    return float(np.max(np.abs(R.T @ R - np.eye(R.shape[1])))) if R.size else 0.0


def _as_array(X) -> np.ndarray:
    values = getattr(X, "values", X)
    return np.asarray(values, dtype=np.float64)


def _label_matrix(Y) -> sp.csr_matrix:
    mat = getattr(Y, "matrix", Y)
    return sp.csr_matrix(mat, dtype=np.float64)


def default_reg(X) -> float:
    """``1e-4 * trace(Cxx) / d`` for the centered feature covariance."""
    Xa = _as_array(X)
    return 1e-4 * float(Xa.var(axis=0).sum()) / Xa.shape[1]


def _cyy_solver(Y: sp.csr_matrix, y_mean: np.ndarray, reg: float):
    """Return ``f(B) = (Cyy + reg I)^{-1} B`` without forming Cyy densely.

    ``Cyy = Y^T Y / n - ybar ybar^T``: the sparse part is factorized once
    and the rank-one mean correction goes through Sherman-Morrison.
    """
    n, c = Y.shape
    A = (Y.T @ Y).tocsc() / n + reg * sp.identity(c, format="csc")
    lu = spla.splu(A)
    u = lu.solve(y_mean)
    denom = 1.0 - float(y_mean @ u)

    def solve(B: np.ndarray) -> np.ndarray:
        Z = lu.solve(np.asfortranarray(B))
        return Z + np.outer(u, y_mean @ Z) / denom

    return solve


def fit_cca(X, Y, k: int, reg: float | None = None) -> CcaFit:
    """Top-``k`` canonical directions of the features against the labels.

    Solves ``Cxy (Cyy + reg I)^{-1} Cyx w = rho^2 (Cxx + reg I) w`` as a
    symmetric-definite eigenproblem, with ``w^T (Cxx + reg I) w = 1``.
    When there are fewer label columns than feature dimensions the dual
    problem on the label side is solved instead and mapped back.
    """
    Xa = _as_array(X)
    Ys = _label_matrix(Y)
    n, d = Xa.shape
    c = Ys.shape[1]
    if Ys.shape[0] != n:
        raise ValueError(f"X has {n} rows but Y has {Ys.shape[0]}")
    if not 1 <= k <= min(d, c):
        raise ValueError(f"k={k} must lie in [1, min(d={d}, c={c})]")
    if not np.all(np.isfinite(Xa)):
        raise ValueError("non-finite features")
    if reg is None:
        reg = default_reg(Xa)
    if reg <= 0:
        raise ValueError("reg must be > 0")

    mu = Xa.mean(axis=0)
    Xc = Xa - mu
    y_mean = np.asarray(Ys.mean(axis=0)).ravel()
    Cxx = Xc.T @ Xc / n + reg * np.eye(d)
    # Yc^T Xc = Y^T Xc since Xc has zero column means
    Cyx = np.asarray(Ys.T @ Xc) / n

    try:
        if c >= d:
            M = Cyx.T @ _cyy_solver(Ys, y_mean, reg)(Cyx)
            M = (M + M.T) / 2
            evals, evecs = la.eigh(M, Cxx, subset_by_index=[d - k, d - 1])
            directions = evecs
        else:
            # label side: Cyx Cxx^{-1} Cxy v = rho^2 (Cyy + reg I) v, c x c
            Yd = Ys.toarray()
            Cyy = Yd.T @ Yd / n - np.outer(y_mean, y_mean) + reg * np.eye(c)
            Cxy_solved = la.cho_solve(la.cho_factor(Cxx), Cyx.T)
            My = Cyx @ Cxy_solved
            My = (My + My.T) / 2
            evals, V = la.eigh(My, Cyy, subset_by_index=[c - k, c - 1])
            rho = np.sqrt(np.clip(evals, 0.0, None))
            directions = Cxy_solved @ V / np.where(rho > 0, rho, 1.0)
    except (la.LinAlgError, RuntimeError) as exc:
        raise ValueError(f"ill-conditioned CCA system (try a larger reg): {exc}") from exc

    order = np.argsort(evals, kind="stable")[::-1]
    rho = np.sqrt(np.clip(evals[order], 0.0, 1.0))
    directions = directions[:, order]
    # fix column signs so results do not depend on the eigensolver's choice
    pivot = np.argmax(np.abs(directions), axis=0)
    signs = np.sign(directions[pivot, np.arange(k)])
    directions = directions * np.where(signs == 0, 1.0, signs)
    return CcaFit(directions, rho)


def random_rotation(k: int, seed: int) -> np.ndarray:
    """Haar-distributed orthogonal ``k x k`` matrix from a seed."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def _bipolar(Z: np.ndarray) -> np.ndarray:
    return np.where(Z > 0, 1.0, -1.0)


def procrustes(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Orthogonal ``R`` minimizing ``||B - A R||_F``."""
    U, _, Vt = np.linalg.svd(A.T @ B)
    return U @ Vt


def quantization_loss(V, R) -> float:
    """``||sgn(V R) - V R||_F`` with bipolar ``sgn`` (zero maps to -1)."""
    Z = np.asarray(V, dtype=np.float64) @ np.asarray(R, dtype=np.float64)
    return float(np.linalg.norm(_bipolar(Z) - Z))


def fit_itq(V, iterations: int = ITQ_ITERATIONS, seed: int = 0, init: np.ndarray | None = None):
    """Iterative quantization: rotate ``V`` to minimize binarization error.

    Alternates the optimal bipolar codes for fixed ``R`` with the
    orthogonal Procrustes rotation for fixed codes. Returns ``(R, losses)``
    where ``losses[t]`` is the loss after the ``t``-th rotation update and
    is non-increasing in ``t``.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[1] == 0:
        raise ValueError("V must be an n x k matrix with k >= 1")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not np.all(np.isfinite(V)):
        raise ValueError("non-finite entries in V")
    k = V.shape[1]
    R = random_rotation(k, seed) if init is None else np.array(init, dtype=np.float64)
    if R.shape != (k, k):
        raise ValueError(f"initial rotation must be {k}x{k}")
    B = _bipolar(V @ R)
    losses = []
    for _ in range(iterations):
        R = procrustes(V, B)
        Z = V @ R
        B = _bipolar(Z)
        losses.append(float(np.linalg.norm(B - Z)))
    return R, losses


def fit_ccaitq(
    X,
    Y,
    k: int,
    reg: float | None = None,
    iterations: int = ITQ_ITERATIONS,
    seed: int = 0,
) -> HashModel:
    """Supervised hash: CCA directions weighted by their correlations, then ITQ."""
    Xa = _as_array(X)
    fit = fit_cca(Xa, Y, k, reg)
    W = fit.directions * fit.correlations[None, :]
    mean = Xa.mean(axis=0)
    V = (Xa - mean) @ W
    R, losses = fit_itq(V, iterations, seed)
    return HashModel(CCAITQ, mean, W, R, tuple(losses))


def fit_lsh(d: int, k: int, seed: int = 0) -> HashModel:
    """Random-hyperplane LSH: Gaussian directions, no centering, no rotation."""
    if k < 1:
        raise ValueError("k must be >= 1")
    W = np.random.default_rng(seed).standard_normal((d, k))
    return HashModel(LSH, np.zeros(d), W, np.eye(k))


def project(model: HashModel, X) -> np.ndarray:
    Xa = _as_array(X)
    if Xa.ndim != 2 or Xa.shape[1] != model.d:
        raise ValueError(f"feature dimension {Xa.shape[-1]} does not match model d={model.d}")
    return ((Xa - model.mean) @ model.W) @ model.R


def encode(model: HashModel, X) -> BinaryCodeSet:
    return pack((project(model, X) > 0).astype(np.uint8))
