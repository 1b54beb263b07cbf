"""Low-rank plus diagonal precision factors and their O(d p^2) algebra.

The central object is a symmetric positive-definite matrix of the form
W W^T + diag(psi), held through its factors only. Every routine here works
on W and psi directly, so nothing in this module ever allocates a d x d
array. Dense reconstructions for small-dimension checks live in
``lrvga.dense`` and are meant for tests and baselines.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

# Floor applied to fitted diagonal entries. Keeps the factorization usable
# when an update would push a psi entry to zero or below.
PSI_FLOOR = 1e-12


class DivergenceError(RuntimeError):
    """A recursion produced non-finite or otherwise unusable state."""


def spd_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve A X = B for symmetric positive-definite A.

    Uses a Cholesky factorization; if that fails because A drifted away
    from positive definiteness through rounding, falls back to the
    pseudo-inverse and warns.
    """
    A = np.asarray(A, dtype=float)
    try:
        return cho_solve(cho_factor((A + A.T) / 2.0, lower=True), B)
    except np.linalg.LinAlgError:
        warnings.warn(
            "positive-definite solve failed, falling back to pseudo-inverse",
            RuntimeWarning,
            stacklevel=2,
        )
        return np.linalg.pinv(A) @ B


def star(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Row-wise dot products: diag(X @ Y.T) without the d x d product.

    X and Y must share a shape. For matrices this is
    sum_k X[:, k] * Y[:, k]; for vectors it reduces to the componentwise
    product.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape != Y.shape:
        raise ValueError(f"star needs matching shapes, got {X.shape} and {Y.shape}")
    if X.ndim == 1:
        return X * Y
    if X.ndim != 2:
        raise ValueError("star expects vectors or matrices")
    return np.einsum("ij,ij->i", X, Y)


@dataclass(frozen=True)
class FaPrecision:
    """Precision matrix W W^T + diag(psi) stored by its factors.

    Parameters
    ----------
    W : ndarray, shape (d, p)
        Factor loadings. A 1-d array is treated as a single column.
    psi : ndarray, shape (d,)
        Strictly positive diagonal entries.

    Notes
    -----
    Instances are frozen and their arrays are treated as read-only by
    convention; updates build new instances. The represented matrix is
    symmetric positive definite whenever the invariants hold, which is
    enforced at construction.
    """

    W: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        if W.ndim == 1:
            W = W[:, None]
        if W.ndim != 2:
            raise ValueError("W must be a d x p matrix")
        psi = np.asarray(self.psi, dtype=float).ravel()
        if psi.shape[0] != W.shape[0]:
            raise ValueError(
                f"psi has length {psi.shape[0]} but W has {W.shape[0]} rows"
            )
        if W.shape[1] > W.shape[0]:
            raise ValueError("rank p cannot exceed the dimension d")
        if W.shape[1] < 1:
            raise ValueError("W needs at least one column")
        if not np.all(np.isfinite(W)):
            raise ValueError("W contains non-finite entries")
        if not np.all(np.isfinite(psi)):
            raise ValueError("psi contains non-finite entries")
        if np.any(psi <= 0.0):
            raise ValueError("psi must be strictly positive")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "psi", psi)

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def p(self) -> int:
        return self.W.shape[1]


def latent_gram(fa: FaPrecision) -> np.ndarray:
    """The p x p Gram matrix M = I_p + W^T diag(psi)^-1 W.

    M is symmetric positive definite and M - I_p is positive semidefinite,
    since the second term is a Gram matrix.
    """
    M = np.eye(fa.p) + fa.W.T @ (fa.W / fa.psi[:, None])
    return (M + M.T) / 2.0


def woodbury_apply(fa: FaPrecision, v: np.ndarray) -> np.ndarray:
    """Apply the inverse of W W^T + diag(psi) to a vector or matrix.

    Implements the Woodbury identity
    (W W^T + Psi)^-1 v = Psi^-1 (v - W M^-1 (W^T Psi^-1 v)),
    costing O(d p^2 + p^3) with no d x d intermediate. ``v`` may be a
    (d,) vector or a (d, k) block of columns.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[0] != fa.d:
        raise ValueError(f"vector has length {v.shape[0]}, expected {fa.d}")
    if not np.all(np.isfinite(v)):
        raise ValueError("input contains non-finite entries")
    psi = fa.psi if v.ndim == 1 else fa.psi[:, None]
    u = v / psi
    z = spd_solve(latent_gram(fa), fa.W.T @ u)
    return (v - fa.W @ z) / psi


def precision_matvec(fa: FaPrecision, v: np.ndarray) -> np.ndarray:
    """Multiply W W^T + diag(psi) against a vector or column block."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != fa.d:
        raise ValueError(f"vector has length {v.shape[0]}, expected {fa.d}")
    psi = fa.psi if v.ndim == 1 else fa.psi[:, None]
    return fa.W @ (fa.W.T @ v) + psi * v


def log_det(fa: FaPrecision) -> float:
    """log det(W W^T + diag(psi)) via the matrix determinant lemma.

    Equals log det(M) + sum_i log psi_i, with M the latent Gram matrix.
    """
    sign, logdet_m = np.linalg.slogdet(latent_gram(fa))
    if sign <= 0:
        raise ValueError("latent Gram matrix lost positive definiteness")
    return float(logdet_m + np.sum(np.log(fa.psi)))


def inverse_diag(fa: FaPrecision) -> np.ndarray:
    """Diagonal of (W W^T + diag(psi))^-1 without forming the inverse."""
    psi_inv_w = fa.W / fa.psi[:, None]
    L = spd_solve(latent_gram(fa), psi_inv_w.T).T
    return 1.0 / fa.psi - star(L, psi_inv_w)


def trace_inverse(fa: FaPrecision) -> float:
    """Trace of the covariance (W W^T + diag(psi))^-1."""
    return float(np.sum(inverse_diag(fa)))


def init_isotropic_prior(
    d: int,
    p: int,
    sigma0: float,
    eps: float = 0.01,
    rng: np.random.Generator | int | None = None,
) -> FaPrecision:
    """Factored stand-in for the isotropic prior precision (1/sigma0^2) I_d.

    The diagonal takes (1 - eps) of the total weight uniformly and the
    remaining eps is spread over p random columns of equal norm
    sqrt(eps d / p) / sigma0, drawn isotropically. The split keeps the
    trace exact, Tr(W W^T + Psi) = d / sigma0^2, while keeping W away from
    zero: W = 0 is a stationary point of the fitting recursions, so a
    strictly positive eps is required for the factor part to move at all.

    Parameters
    ----------
    d, p : int
        Dimension and factor rank, with 1 <= p <= d.
    sigma0 : float
        Prior standard deviation, strictly positive.
    eps : float
        Fraction of the trace assigned to the factor part, in (0, 1).
    rng : numpy Generator, seed, or None
        Source of randomness for the column directions.
    """
    if not 1 <= p <= d:
        raise ValueError(f"need 1 <= p <= d, got p={p}, d={d}")
    if sigma0 <= 0:
        raise ValueError("sigma0 must be strictly positive")
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie strictly inside (0, 1)")
    rng = np.random.default_rng(rng)
    cols = rng.standard_normal((d, p))
    norms = np.linalg.norm(cols, axis=0)
    while np.any(norms == 0.0):  # pragma: no cover - probability zero
        cols = rng.standard_normal((d, p))
        norms = np.linalg.norm(cols, axis=0)
    W = cols * (np.sqrt(eps * d / p) / sigma0 / norms)
    psi = np.full(d, (1.0 - eps) / sigma0**2)
    return FaPrecision(W, psi)
