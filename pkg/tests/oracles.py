"""Independent dense reference implementations used across the test suite.

Everything here recomputes quantities from first principles with plain
dense linear algebra (and brute-force root bracketing for the scalar
systems), deliberately sharing no code paths with the package. Tests
compare package output against these, so keep this module boring and
obviously correct rather than fast.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq

BETA = math.sqrt(8.0 / math.pi)


def dense_precision(W: np.ndarray, psi: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    return W @ W.T + np.diag(np.asarray(psi, dtype=float))


def dense_covariance(W: np.ndarray, psi: np.ndarray) -> np.ndarray:
    return np.linalg.inv(dense_precision(W, psi))


def avg_loglik(W: np.ndarray, psi: np.ndarray, S: np.ndarray) -> float:
    """Gaussian average log-likelihood of a factored fit, constants dropped.

    For the model N(0, Sigma) with Sigma = W W^T + diag(psi) and sample
    second moment S, equals -(1/2) (trace(Sigma^-1 S) + log det Sigma).
    Larger is better; the fitting recursions should never decrease it.
    """
    sigma = dense_precision(W, psi)
    sign, logdet = np.linalg.slogdet(sigma)
    assert sign > 0
    return -0.5 * (np.trace(np.linalg.solve(sigma, S)) + logdet)


def sigmoid(t: float) -> float:
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def sigmoid_deriv(t: float) -> float:
    s = sigmoid(t)
    return s * (1.0 - s)


def _k_of_nu(nu: float) -> float:
    return BETA / math.sqrt(nu + BETA * BETA)


def _nu_given_a(a: float, nu0: float) -> float:
    """Solve nu = nu0 / (1 + s nu0) with s = k(nu) sigmoid'(k(nu) a)."""

    def g(nu: float) -> float:
        s = _k_of_nu(nu) * sigmoid_deriv(_k_of_nu(nu) * a)
        return nu0 / (1.0 + s * nu0) - nu

    if g(nu0) >= 0.0:
        return nu0
    return brentq(g, 0.0, nu0, xtol=1e-15, rtol=8.9e-16)


def solve_scalars_bisect(a0: float, nu0: float, y: float) -> tuple[float, float, float]:
    """Reference solution of the coupled scalar system by nested bracketing.

    Finds (a, nu) with a = a0 + nu0 (y - sigmoid(k a)) and
    nu = nu0 / (1 + k sigmoid'(k a) nu0), where k = beta / sqrt(nu + beta^2).
    Returns (a, nu, k). Completely independent of the package's Newton
    solver; relies only on the update magnitude being bounded by nu0.
    """
    if nu0 <= 0.0:
        return a0, 0.0, 1.0

    def f(a: float) -> float:
        nu = _nu_given_a(a, nu0)
        return a0 + nu0 * (y - sigmoid(_k_of_nu(nu) * a)) - a

    lo = a0 - nu0 - 1.0
    hi = a0 + nu0 + 1.0
    a = brentq(f, lo, hi, xtol=1e-14, rtol=8.9e-16)
    nu = _nu_given_a(a, nu0)
    return a, nu, _k_of_nu(nu)


def dense_logistic_step(
    mu: np.ndarray, prec: np.ndarray, x: np.ndarray, y: float
) -> tuple[np.ndarray, np.ndarray]:
    """One implicit logistic update carried out in dense arithmetic.

    Same two moment equations as the package filter: the precision gains
    k sigmoid'(k a) x x^T and the mean moves along the previous covariance
    times x, scaled by the residual at the new mean. Scalar system solved
    by the bracketing oracle. Returns the new (mu, precision).
    """
    cov = np.linalg.inv(prec)
    a0 = float(x @ mu)
    nu0 = float(x @ cov @ x)
    a, nu, k = solve_scalars_bisect(a0, nu0, y)
    s = k * sigmoid_deriv(k * a)
    prec_new = prec + s * np.outer(x, x)
    mu_new = mu + cov @ x * (y - sigmoid(k * a))
    return mu_new, prec_new


def dense_implicit_logistic_vga(
    mu: np.ndarray,
    prec: np.ndarray,
    x: np.ndarray,
    y: float,
    iters: int = 500,
) -> tuple[np.ndarray, np.ndarray]:
    """Converged implicit Gaussian update with exact 1-d expectations.

    Solves the coupled pair

        P_new = P + E_q[sigmoid'(x.theta)] x x^T
        mu_new = mu + P_new^-1 x (y - E_q[sigmoid(x.theta)])

    where q is the NEW Gaussian, by fixed-point iteration. The
    expectations reduce to one-dimensional integrals over
    u = x.theta ~ N(x.mu_q, x^T P_q^-1 x), evaluated with Gauss-Hermite
    quadrature. No moment-matching shortcut anywhere, so this is the
    target that sampled schemes approach as the ensemble grows.
    """
    nodes, weights = np.polynomial.hermite_e.hermegauss(121)
    weights = weights / weights.sum()
    mu_cur, prec_cur = np.array(mu, dtype=float), np.array(prec, dtype=float)
    for _ in range(iters):
        cov = np.linalg.inv(prec_cur)
        a = float(x @ mu_cur)
        sd = math.sqrt(max(float(x @ cov @ x), 0.0))
        u = a + sd * nodes
        e_sig = float(weights @ (1.0 / (1.0 + np.exp(-u))))
        e_sig_p = float(weights @ (np.exp(-np.abs(u)) / (1.0 + np.exp(-np.abs(u))) ** 2))
        prec_new = prec + e_sig_p * np.outer(x, x)
        mu_new = mu + np.linalg.solve(prec_new, x) * (y - e_sig)
        if (
            np.max(np.abs(mu_new - mu_cur)) < 1e-14
            and np.max(np.abs(prec_new - prec_cur)) < 1e-14
        ):
            mu_cur, prec_cur = mu_new, prec_new
            break
        mu_cur, prec_cur = mu_new, prec_new
    return mu_cur, prec_cur


def exact_linear_posterior(
    X: np.ndarray, y: np.ndarray, sigma0: float
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form Gaussian posterior for unit-noise linear regression.

    Prior N(0, sigma0^2 I); returns (mean, precision).
    """
    d = X.shape[1]
    prec = np.eye(d) / sigma0**2 + X.T @ X
    mu = np.linalg.solve(prec, X.T @ y)
    return mu, prec


def em_reference_step(
    W: np.ndarray, psi: np.ndarray, S: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Textbook dense EM step for a factor-analysis fit of S.

    E-step moments under the current (W, psi), M-step in closed form:
    with Sigma = W W^T + diag(psi), G = Sigma^-1 W,
    E[z z^T] = I - W^T G + G^T S G and E[x z^T] = S G. The new loadings
    solve W E[z z^T] = E[x z^T] and the new diagonal is
    diag(S - W_new E[x z^T]^T).
    """
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    S = np.asarray(S, dtype=float)
    sigma = dense_precision(W, psi)
    G = np.linalg.solve(sigma, W)
    Ezz = np.eye(W.shape[1]) - W.T @ G + G.T @ S @ G
    Exz = S @ G
    W_new = np.linalg.solve(Ezz.T, Exz.T).T
    psi_new = np.diag(S - W_new @ Exz.T).copy()
    return W_new, np.maximum(psi_new, 1e-12)
