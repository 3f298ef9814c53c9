"""Dense linear-Gaussian conditioning primitives.

Three routes to the posterior and log marginal likelihood of the model

    x ~ N(m, C),    y | x ~ N(A x + a, Q),

all returning identical values but with different cost profiles:

* :func:`naive_inference` factorises the marginal over ``y`` directly,
  O(Dy^3 + Dy^2 Dx);
* :func:`low_rank_inference` applies the matrix inversion and determinant
  lemmas for diagonal ``Q``, O(Dx^3 + Dx^2 Dy);
* :func:`bottleneck_inference` handles observation matrices that factor
  through a low-dimensional intermediate ``z = H x + h``, exchanging the
  O(Dx^3) of the low-rank route for O(Dz^3).

Everything is covariance-form with upper-triangular Cholesky factors
(``U.T @ U`` reconstructs).  All functions are pure and thread-safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.linalg import LinAlgError
from scipy.linalg import cholesky as _scipy_cholesky
from scipy.linalg import solve_triangular

from .errors import CholeskyFailure, DimensionMismatch, NonDiagonalNoise

__all__ = [
    "Gaussian",
    "LinearGaussianConditional",
    "CholeskyFactor",
    "cholesky_upper",
    "naive_inference",
    "low_rank_inference",
    "bottleneck_inference",
    "kron",
    "symmetrize",
]

_LOG_2PI = math.log(2.0 * math.pi)


def symmetrize(C: np.ndarray) -> np.ndarray:
    return 0.5 * (C + C.T)


def _vector(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise DimensionMismatch(f"{name} must be a vector, got shape {v.shape}")
    return v


def _matrix(x, name: str) -> np.ndarray:
    m = np.asarray(x, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be a matrix, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class Gaussian:
    """Multivariate normal with explicit mean vector and covariance matrix."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _vector(self.mean, "mean")
        cov = _matrix(self.cov, "cov")
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise DimensionMismatch(
                f"covariance shape {cov.shape} does not match mean length {mean.shape[0]}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def validate(self, sym_rtol: float = 1e-12, eig_rtol: float = 1e-10) -> "Gaussian":
        """Check symmetry and near positive semidefiniteness; returns self.

        Intended for tests and entry points, not hot loops.
        """
        scale = max(1.0, float(np.abs(self.cov).max(initial=0.0)))
        if float(np.abs(self.cov - self.cov.T).max(initial=0.0)) > sym_rtol * scale:
            raise ValueError("covariance is not symmetric")
        if self.dim:
            eigs = np.linalg.eigvalsh(symmetrize(self.cov))
            if eigs[0] < -eig_rtol * max(eigs[-1], 1e-300):
                raise ValueError(f"covariance has negative eigenvalue {eigs[0]:.3e}")
        return self


@dataclass(frozen=True)
class LinearGaussianConditional:
    """The conditional ``y | x ~ N(A x + a, Q)``.

    ``Q`` is symmetric positive semidefinite.  The low-rank and bottleneck
    inference routes additionally require it to be diagonal with a strictly
    positive diagonal; the naive route accepts any ``Q`` making the marginal
    covariance of ``y`` positive definite.
    """

    A: np.ndarray
    a: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2:
            raise DimensionMismatch(f"A must be a matrix, got shape {A.shape}")
        a = _vector(self.a, "a")
        Q = _matrix(self.Q, "Q")
        dy = A.shape[0]
        if a.shape[0] != dy or Q.shape != (dy, dy):
            raise DimensionMismatch(
                f"inconsistent conditional: A {A.shape}, a {a.shape}, Q {Q.shape}"
            )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "Q", Q)

    @classmethod
    def with_diagonal_noise(cls, A, a, q) -> "LinearGaussianConditional":
        q = _vector(q, "q")
        return cls(np.asarray(A, dtype=float), a, np.diag(q))

    @property
    def out_dim(self) -> int:
        return self.A.shape[0]

    @property
    def in_dim(self) -> int:
        return self.A.shape[1]


def cholesky_upper(C: np.ndarray) -> np.ndarray:
    """Upper-triangular ``U`` with ``U.T @ U = C``.

    On failure retries once with ``1e-10 * trace(C)/n`` added to the diagonal,
    then raises :class:`CholeskyFailure`.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    try:
        return _scipy_cholesky(C, lower=False, check_finite=False)
    except LinAlgError:
        pass
    except ValueError as exc:  # scipy raises ValueError on NaN even unchecked
        raise CholeskyFailure(f"non-finite covariance: {exc}") from exc
    jitter = 1e-10 * float(np.trace(C)) / n
    try:
        return _scipy_cholesky(C + jitter * np.eye(n), lower=False, check_finite=False)
    except (LinAlgError, ValueError) as exc:
        raise CholeskyFailure(
            f"{n}x{n} matrix not positive definite (retried with jitter {jitter:.3e})"
        ) from exc


@dataclass(frozen=True)
class CholeskyFactor:
    """Upper-triangular factor ``U`` of a positive-definite matrix (``U.T @ U``)."""

    U: np.ndarray

    @classmethod
    def of(cls, C: np.ndarray) -> "CholeskyFactor":
        return cls(cholesky_upper(C))

    @property
    def dim(self) -> int:
        return self.U.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Return ``C^{-1} rhs`` via two triangular solves."""
        half = solve_triangular(self.U, rhs, trans="T", lower=False, check_finite=False)
        return solve_triangular(self.U, half, lower=False, check_finite=False)

    def half_solve(self, rhs: np.ndarray) -> np.ndarray:
        """Return ``U^{-T} rhs``."""
        return solve_triangular(self.U, rhs, trans="T", lower=False, check_finite=False)

    def logdet(self) -> float:
        """log-determinant of the factored matrix."""
        return 2.0 * float(np.sum(np.log(np.diag(self.U))))


def _check_obs(prior: Gaussian, obs: LinearGaussianConditional, y) -> np.ndarray:
    y = _vector(y, "y")
    if obs.in_dim != prior.dim:
        raise DimensionMismatch(
            f"observation matrix expects state dim {obs.in_dim}, prior has {prior.dim}"
        )
    if y.shape[0] != obs.out_dim:
        raise DimensionMismatch(
            f"y has length {y.shape[0]}, observation model emits {obs.out_dim}"
        )
    return y


def _diagonal(Q: np.ndarray) -> np.ndarray:
    q = np.diag(Q).copy()
    if np.any(Q != np.diag(q)):
        raise NonDiagonalNoise("observation noise covariance must be diagonal")
    return q


def naive_inference(
    prior: Gaussian, obs_model: LinearGaussianConditional, y
) -> tuple[Gaussian, float]:
    """Posterior ``p(x | y)`` and ``log p(y)`` by factorising the marginal of y.

    Nothing is assumed about ``Q`` beyond the marginal covariance of ``y``
    being positive definite.  Cost is dominated by the Dy x Dy factorisation.
    """
    y = _check_obs(prior, obs_model, y)
    if y.size == 0:
        return prior, 0.0
    A, a = obs_model.A, obs_model.a
    V = A @ prior.cov
    Cy = symmetrize(V @ A.T + obs_model.Q)
    U = cholesky_upper(Cy)
    B = solve_triangular(U, V, trans="T", lower=False, check_finite=False)
    alpha = solve_triangular(
        U, y - (A @ prior.mean + a), trans="T", lower=False, check_finite=False
    )
    logdet = 2.0 * float(np.sum(np.log(np.diag(U))))
    lml = -0.5 * (y.size * _LOG_2PI + logdet + float(alpha @ alpha))
    mean = prior.mean + B.T @ alpha
    cov = symmetrize(prior.cov - B.T @ B)
    return Gaussian(mean, cov), lml


def low_rank_inference(
    prior: Gaussian, obs_model: LinearGaussianConditional, y
) -> tuple[Gaussian, float]:
    """Same result as :func:`naive_inference` via the inversion/determinant lemmas.

    Requires strictly positive diagonal ``Q``; all O(Dy^3) work collapses to
    elementwise operations, leaving O(Dx^3 + Dx^2 Dy).
    """
    y = _check_obs(prior, obs_model, y)
    q = _diagonal(obs_model.Q)
    if y.size == 0:
        return prior, 0.0
    if np.any(q <= 0.0):
        raise CholeskyFailure("diagonal observation noise must be strictly positive")
    A, a = obs_model.A, obs_model.a
    dx, dy = prior.dim, y.size
    rq = np.sqrt(q)
    Ux = cholesky_upper(prior.cov)
    B = (Ux @ A.T) / rq  # Dx x Dy
    U = cholesky_upper(B @ B.T + np.eye(dx))
    G = solve_triangular(U, Ux, trans="T", lower=False, check_finite=False)
    cov = symmetrize(G.T @ G)
    delta = (y - (A @ prior.mean + a)) / rq
    beta = B @ delta
    w = solve_triangular(U, beta, trans="T", lower=False, check_finite=False)
    mean = prior.mean + G.T @ w
    # determinant lemma: log det(A C A' + Q) = 2 log det U + log det Q.
    logdet = 2.0 * float(np.sum(np.log(np.diag(U)))) + float(np.sum(np.log(q)))
    lml = -0.5 * (float(delta @ delta) - float(w @ w) + dy * _LOG_2PI + logdet)
    return Gaussian(mean, cov), lml


def bottleneck_inference(
    prior: Gaussian,
    H: np.ndarray,
    h: np.ndarray,
    obs_model: LinearGaussianConditional,
    y,
) -> tuple[Gaussian, float]:
    """Inference for the composed model ``z = H x + h``, ``y = B z + b + eps``.

    Marginalises to ``z``, runs :func:`low_rank_inference` there, then lifts the
    result back to ``x`` with a single smoothing-style correction.  Exchanges
    the O(Dx^3) of the low-rank route for O(Dz^3).
    """
    H = _matrix(H, "H")
    h = _vector(h, "h")
    if H.shape[1] != prior.dim or h.shape[0] != H.shape[0]:
        raise DimensionMismatch(
            f"bottleneck H {H.shape}, h {h.shape} inconsistent with state dim {prior.dim}"
        )
    if obs_model.in_dim != H.shape[0]:
        raise DimensionMismatch(
            f"observation matrix expects z dim {obs_model.in_dim}, bottleneck emits {H.shape[0]}"
        )
    y = _vector(y, "y")
    if y.shape[0] != obs_model.out_dim:
        raise DimensionMismatch(
            f"y has length {y.shape[0]}, observation model emits {obs_model.out_dim}"
        )
    if y.size == 0:
        return prior, 0.0
    mz = H @ prior.mean + h
    W = H @ prior.cov  # Dz x Dx
    Cz = symmetrize(W @ H.T)
    z_post, lml = low_rank_inference(Gaussian(mz, Cz), obs_model, y)
    # correction gain J = C H' Cz^{-1}, via two triangular solves
    Uz = cholesky_upper(Cz)
    half = solve_triangular(Uz, W, trans="T", lower=False, check_finite=False)
    J = solve_triangular(Uz, half, lower=False, check_finite=False).T  # Dx x Dz
    mean = prior.mean + J @ (z_post.mean - mz)
    cov = symmetrize(prior.cov + J @ (z_post.cov - Cz) @ J.T)
    return Gaussian(mean, cov), lml


def kron(A, B) -> np.ndarray:
    """Kronecker product: block (i, j) of the result is ``A[i, j] * B``."""
    return np.kron(np.asarray(A, dtype=float), np.asarray(B, dtype=float))
