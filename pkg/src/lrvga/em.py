"""Fixed-point EM updates for W W^T + diag(psi) factorizations.

Three layers, all sharing one step kernel:

* ``em_fixed_point_step`` performs a single EM cycle toward the best
  factored fit of a symmetric target matrix S, touching S only through
  products with d x p blocks and its diagonal.
* ``recursive_em_update`` runs that cycle a fixed number of times against
  the implicit target alpha (W_prev W_prev^T + Psi_prev) + beta X X^T,
  which is how a streaming filter absorbs a new observation block.
* ``online_em_update`` is the stochastic-approximation variant that keeps
  running sufficient statistics instead of re-fitting per sample, with
  Polyak-Ruppert averaging over the second half of the stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .factor import (
    PSI_FLOOR,
    DivergenceError,
    FaPrecision,
    latent_gram,
    spd_solve,
    star,
)


@dataclass(frozen=True)
class RecursionWeights:
    """Blend weights for one streaming update: alpha on the carried state,
    beta on the incoming block."""

    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha < 0.0 or self.beta < 0.0:
            raise ValueError("weights must be non-negative")
        if self.alpha + self.beta <= 0.0:
            raise ValueError("at least one weight must be positive")


def covariance_mode_weights(t: int) -> RecursionWeights:
    """Moving-average weights for covariance tracking at step t >= 1.

    alpha = (t - 1) / t and beta = 1 / t, so the implicit target is the
    running mean of the outer products seen so far.
    """
    if t < 1:
        raise ValueError("step index starts at 1")
    return RecursionWeights((t - 1.0) / t, 1.0 / t)


def guess_s0_scale(batch: np.ndarray, d: int) -> float:
    """Scale guess sigma0 = sqrt(d / mean ||x||^2) from a leading batch.

    Chosen so the isotropic guess (1/sigma0^2) I_d has the same trace as
    the mean squared norm of the inputs. ``batch`` is an (m, d) array of
    rows.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if batch.shape[1] != d:
        raise ValueError(f"batch rows have length {batch.shape[1]}, expected {d}")
    mean_sq = float(np.mean(np.sum(batch * batch, axis=1)))
    if not np.isfinite(mean_sq) or mean_sq <= 0.0:
        raise ValueError("leading batch has no usable scale (zero or non-finite norms)")
    return float(np.sqrt(d / mean_sq))


class DenseSymmetric:
    """Adapter exposing a dense symmetric matrix as an EM target."""

    def __init__(self, S: np.ndarray):
        S = np.asarray(S, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError("S must be square")
        self.S = S

    def matmat(self, A: np.ndarray) -> np.ndarray:
        return self.S @ A

    def diag(self) -> np.ndarray:
        return np.diag(self.S).copy()


class LowRankPlusDiag:
    """Implicit target F F^T + diag(q), touched only through products.

    Used for the streaming target alpha (W W^T + Psi) + beta X X^T, which
    collapses to this form with F = [sqrt(alpha) W, sqrt(beta) X] and
    q = alpha psi.
    """

    def __init__(self, factors: np.ndarray, diag_part: np.ndarray):
        self.factors = factors
        self.diag_part = diag_part

    def matmat(self, A: np.ndarray) -> np.ndarray:
        out = self.factors @ (self.factors.T @ A)
        out += self.diag_part[:, None] * A
        return out

    def diag(self) -> np.ndarray:
        return star(self.factors, self.factors) + self.diag_part


class _BlendTarget:
    """Implicit target alpha (W_prev W_prev^T + Psi_prev) + beta X X^T.

    Products are taken block by block, so the carried factor is read in
    place rather than copied into a widened matrix; only the (cached)
    diagonal and the p-column product outputs are allocated.
    """

    def __init__(self, prev: FaPrecision, X: np.ndarray, alpha: float, beta: float):
        self.prev = prev
        self.X = X
        self.alpha = alpha
        self.beta = beta
        diag = np.zeros(prev.d)
        if alpha > 0.0:
            diag += star(prev.W, prev.W) + prev.psi
            diag *= alpha
        if beta > 0.0:
            diag += beta * star(X, X)
        self._diag = diag

    def matmat(self, A: np.ndarray) -> np.ndarray:
        out = np.zeros_like(A)
        if self.alpha > 0.0:
            W = self.prev.W
            out += W @ (W.T @ A)
            out += self.prev.psi[:, None] * A
            if self.alpha != 1.0:
                out *= self.alpha
        if self.beta > 0.0:
            out += self.beta * (self.X @ (self.X.T @ A))
        return out

    def diag(self) -> np.ndarray:
        return self._diag


def _as_target(S):
    if hasattr(S, "matmat") and hasattr(S, "diag"):
        return S
    return DenseSymmetric(S)


def em_fixed_point_step(fa: FaPrecision, S, psi_floor: float = PSI_FLOOR) -> FaPrecision:
    """One EM cycle toward the factored fit of a symmetric target S.

    With M = I_p + W^T Psi^-1 W the update reads

        W_new   = S Psi^-1 W (I_p + M^-1 W^T Psi^-1 S Psi^-1 W)^-1
        psi_new = diag(S - W_new M^-1 W^T Psi^-1 S)

    and the marginal likelihood of S under the factor model is
    non-decreasing across cycles. S may be a dense array or any object
    with ``matmat`` (product with a d x p block) and ``diag`` accessors;
    the step itself allocates only d x p scratch. Fitted diagonal entries
    below ``psi_floor`` are clamped to it.
    """
    S = _as_target(S)
    W, psi = fa.W, fa.psi
    psi_inv_w = W / psi[:, None]
    M = latent_gram(fa)
    G = S.matmat(psi_inv_w)  # S Psi^-1 W, d x p
    A = psi_inv_w.T @ G      # W^T Psi^-1 S Psi^-1 W, p x p
    B = np.eye(fa.p) + spd_solve(M, A)
    try:
        W_new = np.linalg.solve(B.T, G.T).T
    except np.linalg.LinAlgError:
        W_new = G @ np.linalg.pinv(B)
    wn_minv = spd_solve(M, W_new.T).T
    psi_new = S.diag() - star(wn_minv, G)
    if not (np.all(np.isfinite(W_new)) and np.all(np.isfinite(psi_new))):
        raise DivergenceError("EM step produced non-finite factors")
    psi_new = np.maximum(psi_new, psi_floor)
    return FaPrecision(W_new, psi_new)


def mle_fixed_point_step(fa: FaPrecision, S: np.ndarray, psi_floor: float = PSI_FLOOR) -> FaPrecision:
    """One cycle of the direct likelihood fixed-point equations (dense).

    W_new = S (W W^T + Psi)^-1 W, then psi_new = diag(S - W_new W_new^T).
    This map and the EM map share their fixed points, but they are
    different maps away from stationarity; this dense form exists as a
    cross-check and small-d oracle.
    """
    S = np.asarray(S, dtype=float)
    from .dense import fa_dense_matrix  # local import keeps factor/em free of dense code

    W_new = S @ np.linalg.solve(fa_dense_matrix(fa), fa.W)
    psi_new = np.diag(S - W_new @ W_new.T).copy()
    if not (np.all(np.isfinite(W_new)) and np.all(np.isfinite(psi_new))):
        raise DivergenceError("fixed-point step produced non-finite factors")
    psi_new = np.maximum(psi_new, psi_floor)
    return FaPrecision(W_new, psi_new)


def default_inner_loops(d: int) -> int:
    """Inner-loop count heuristic: 3 in moderate dimension, 1 at scale."""
    return 3 if d <= 1000 else 1


def recursive_em_update(
    prev: FaPrecision,
    X: np.ndarray,
    weights: RecursionWeights = RecursionWeights(1.0, 1.0),
    inner_loops: int = 3,
    psi_floor: float = PSI_FLOOR,
) -> FaPrecision:
    """Absorb a d x K observation block into the factored state.

    Runs ``inner_loops`` EM cycles against the implicit target
    alpha (W_prev W_prev^T + Psi_prev) + beta X X^T, warm-started at the
    carried state. The target is held in product form, so nothing
    quadratic in d is allocated. One to three loops are enough in
    practice; the loop count is fixed rather than adaptive so that cost
    per step is predictable.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != prev.d:
        raise ValueError(f"block has {X.shape[0]} rows, expected {prev.d}")
    if not np.all(np.isfinite(X)):
        raise ValueError("observation block contains non-finite entries")
    if inner_loops < 1:
        raise ValueError("inner_loops must be at least 1")

    target = _BlendTarget(prev, X, weights.alpha, weights.beta)
    fa = prev
    for _ in range(inner_loops):
        fa = em_fixed_point_step(fa, target, psi_floor=psi_floor)
    return fa


def online_em_gamma(t: int) -> float:
    """Stochastic-approximation step size, 1/t^0.6 with gamma(1) = 1."""
    if t < 1:
        raise ValueError("step index starts at 1")
    return float(t) ** -0.6


@dataclass
class OnlineEmState:
    """Running sufficient statistics for the online EM recursion.

    ``s1_diag`` tracks the diagonal of the second moment of the data,
    ``s2`` the latent-observed cross moment (p x d), ``s3`` the latent
    second moment (p x p). The last M-step iterate is kept so the
    Polyak-Ruppert accumulators (``averaged_W``, ``averaged_psi``) can
    fold it in.
    """

    s1_diag: np.ndarray
    s2: np.ndarray
    s3: np.ndarray
    step_index: int = 0
    last_W: np.ndarray | None = None
    last_psi: np.ndarray | None = None
    averaged_W: np.ndarray | None = None
    averaged_psi: np.ndarray | None = None
    averaged_count: int = 0

    @classmethod
    def zeros(cls, d: int, p: int) -> "OnlineEmState":
        if not 1 <= p <= d:
            raise ValueError(f"need 1 <= p <= d, got p={p}, d={d}")
        return cls(np.zeros(d), np.zeros((p, d)), np.zeros((p, p)))


def online_em_update(
    state: OnlineEmState,
    fa: FaPrecision,
    v: np.ndarray,
    gamma: float,
    psi_floor: float = PSI_FLOOR,
) -> tuple[OnlineEmState, FaPrecision]:
    """One stochastic EM step on a single observation v.

    E-step moments are taken at the current parameters: with
    m = M^-1 W^T Psi^-1 v,

        s1 <- (1 - gamma) s1 + gamma v * v          (diagonal only)
        s2 <- (1 - gamma) s2 + gamma m v^T
        s3 <- (1 - gamma) s3 + gamma (M^-1 + m m^T)

    and the M-step solves W = s2^T s3^-1 in p-space, then
    psi = s1 - diag(W s2). Everything is O(d p) per step. Returns the
    updated state and the refreshed factors.
    """
    v = np.asarray(v, dtype=float).ravel()
    if v.shape[0] != fa.d:
        raise ValueError(f"observation has length {v.shape[0]}, expected {fa.d}")
    if not np.all(np.isfinite(v)):
        raise ValueError("observation contains non-finite entries")
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")

    M = latent_gram(fa)
    m = spd_solve(M, fa.W.T @ (v / fa.psi))
    keep = 1.0 - gamma
    s1 = keep * state.s1_diag + gamma * (v * v)
    s2 = keep * state.s2 + gamma * np.outer(m, v)
    s3 = keep * state.s3 + gamma * (spd_solve(M, np.eye(fa.p)) + np.outer(m, m))

    try:
        W = np.linalg.solve((s3 + s3.T) / 2.0, s2).T
    except np.linalg.LinAlgError as exc:
        raise DivergenceError("singular latent second moment in online EM") from exc
    psi = s1 - star(W, s2.T)
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(psi))):
        raise DivergenceError("online EM produced non-finite factors")
    psi = np.maximum(psi, psi_floor)

    new_state = OnlineEmState(
        s1_diag=s1,
        s2=s2,
        s3=s3,
        step_index=state.step_index + 1,
        last_W=W,
        last_psi=psi,
        averaged_W=state.averaged_W,
        averaged_psi=state.averaged_psi,
        averaged_count=state.averaged_count,
    )
    return new_state, FaPrecision(W, psi)


def polyak_ruppert_average(state: OnlineEmState, t: int, n_total: int) -> FaPrecision:
    """Fold the latest iterate into the second-half running average.

    Averaging starts after the halfway point: with t_tilde = t - n_total // 2,
    the accumulators follow

        avg_t = ((t_tilde - 1) avg_{t-1} + iterate_t) / t_tilde

    so after the stream they hold the plain mean of the second-half
    iterates. Must be called once per step, in order, with t > n_total // 2.
    """
    half = n_total // 2
    if t <= half:
        raise ValueError("averaging only starts after the first half of the stream")
    if state.last_W is None or state.last_psi is None:
        raise ValueError("no M-step iterate to average yet")
    t_tilde = t - half
    if t_tilde != state.averaged_count + 1:
        raise ValueError(
            f"averaging must fold each step exactly once in order; "
            f"expected t_tilde={state.averaged_count + 1}, got {t_tilde}"
        )
    if t_tilde == 1:
        state.averaged_W = state.last_W.copy()
        state.averaged_psi = state.last_psi.copy()
    else:
        w = 1.0 / t_tilde
        state.averaged_W = (1.0 - w) * state.averaged_W + w * state.last_W
        state.averaged_psi = (1.0 - w) * state.averaged_psi + w * state.last_psi
    state.averaged_count = t_tilde
    return FaPrecision(state.averaged_W.copy(), state.averaged_psi.copy())
