"""Dense brute-force reference implementations.

Everything here is cubic in the number of points and deliberately written in
the most transparent form available: assemble the full covariance, factorise,
condition.  These routines are the ground truth that the structured
filtering-based routes are tested against; they must stay naive.

The pseudo-point routines enumerate the complete grid of pseudo-points --
every pseudo-input, at every pseudo-time, in every latent SDE dimension of
every kernel component -- ordered time-major, then component, then location,
then latent dimension (matching the state layout of the structured model).
The pseudo-input grams carry the same relative nugget as the structured
route; see :mod:`stgp.pseudopoint`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AlphaOutOfRange, DimensionMismatch
from .kernels import SumSeparableKernel, full_gram, spatial_gram
from .linalg import CholeskyFactor, cholesky_upper, symmetrize
from .pseudopoint import PseudoInputs, regularized_pseudo_gram

__all__ = [
    "DenseGpProblem",
    "exact_lml",
    "dense_saturated_bound",
    "dense_predictive",
    "dense_fitc_lml",
    "pseudo_gram",
    "cross_gram",
    "mvn_logpdf",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DenseGpProblem:
    """A regression data set paired with the kernel that generated it."""

    kernel: SumSeparableKernel
    X: np.ndarray
    t: np.ndarray
    y: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        t = np.atleast_1d(np.asarray(self.t, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        noise = np.atleast_1d(np.asarray(self.noise, dtype=float))
        if noise.size == 1:
            noise = np.full(y.shape[0], noise[0])
        if not (X.shape[0] == t.shape[0] == y.shape[0] == noise.shape[0]):
            raise DimensionMismatch("X, t, y and noise must have matching leading dimension")
        if np.any(noise <= 0.0):
            raise ValueError("noise variances must be positive")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "noise", noise)

    @property
    def n(self) -> int:
        return self.y.shape[0]


def mvn_logpdf(x: np.ndarray, cov: np.ndarray) -> float:
    """log N(x; 0, cov) by dense Cholesky."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size == 0:
        return 0.0
    U = cholesky_upper(symmetrize(cov))
    from scipy.linalg import solve_triangular

    alpha = solve_triangular(U, x, trans="T", lower=False, check_finite=False)
    logdet = 2.0 * float(np.sum(np.log(np.diag(U))))
    return -0.5 * (x.size * _LOG_2PI + logdet + float(alpha @ alpha))


def exact_lml(problem: DenseGpProblem) -> float:
    """log N(y; 0, C_f + S) over the full dense gram."""
    if problem.n == 0:
        return 0.0
    C = full_gram(problem.kernel, problem.X, problem.t) + np.diag(problem.noise)
    return mvn_logpdf(problem.y, C)


def _pseudo_columns(kernel: SumSeparableKernel, z: PseudoInputs):
    """Column index arrays, one per component, into the full pseudo-point grid."""
    M = z.n_inputs
    T = z.times.shape[0]
    dims = kernel.state_dims
    per_time = M * sum(dims)
    offsets = np.concatenate([[0], np.cumsum([M * D for D in dims])])
    columns = []
    for p, D in enumerate(dims):
        idx = np.empty(T * M * D, dtype=int)
        k = 0
        for t in range(T):
            base = t * per_time + offsets[p]
            for m in range(M):
                for d in range(D):
                    idx[k] = base + m * D + d
                    k += 1
        columns.append(idx)
    return columns, T * per_time


def pseudo_gram(kernel: SumSeparableKernel, z: PseudoInputs) -> np.ndarray:
    """Dense covariance over the complete pseudo-point grid (with nugget)."""
    columns, total = _pseudo_columns(kernel, z)
    T = z.times.shape[0]
    M = z.n_inputs
    C = np.zeros((total, total))
    for (sp, tk), idx in zip(kernel.components, columns):
        S = regularized_pseudo_gram(sp, z.locations)
        D = tk.state_dim
        SG = np.empty((T, T, D, D))
        for a in range(T):
            for b in range(T):
                SG[a, b] = tk.state_gram(float(z.times[a]), float(z.times[b]))
        block = np.einsum("mn,tsab->tmasnb", S, SG).reshape(T * M * D, T * M * D)
        C[np.ix_(idx, idx)] = block
    return symmetrize(C)


def cross_gram(kernel: SumSeparableKernel, z: PseudoInputs, X, t) -> np.ndarray:
    """Covariance between function-level points and the pseudo-point grid."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    t = np.atleast_1d(np.asarray(t, dtype=float))
    columns, total = _pseudo_columns(kernel, z)
    T = z.times.shape[0]
    M = z.n_inputs
    n = t.shape[0]
    C = np.zeros((n, total))
    unique, inverse = np.unique(t, return_inverse=True)
    for (sp, tk), idx in zip(kernel.components, columns):
        Sxz = spatial_gram(sp, X, z.locations)
        D = tk.state_dim
        U = np.empty((unique.shape[0], T, D))
        for a, ta in enumerate(unique):
            for b in range(T):
                U[a, b] = tk.state_gram(float(ta), float(z.times[b]))[0, :]
        block = np.einsum("im,itd->itmd", Sxz, U[inverse]).reshape(n, T * M * D)
        C[:, idx] = block
    return C


def _dtc_parts(problem: DenseGpProblem, z: PseudoInputs):
    C_u = pseudo_gram(problem.kernel, z)
    C_fu = cross_gram(problem.kernel, z, problem.X, problem.t)
    factor = CholeskyFactor.of(C_u)
    W = factor.solve(C_fu.T).T  # C_fu C_u^{-1}
    Qff = W @ C_fu.T
    return C_u, C_fu, factor, W, symmetrize(Qff)


def dense_saturated_bound(problem: DenseGpProblem, z: PseudoInputs) -> float:
    """Collapsed variational bound, assembled from explicit dense grams."""
    if problem.n == 0:
        return 0.0
    _, _, _, _, Qff = _dtc_parts(problem, z)
    first = mvn_logpdf(problem.y, Qff + np.diag(problem.noise))
    prior_diag = problem.kernel.variance_at_zero()
    trace = float(np.sum((prior_diag - np.diag(Qff)) / problem.noise))
    return first - 0.5 * trace


def dense_fitc_lml(problem: DenseGpProblem, z: PseudoInputs, alpha: float) -> float:
    """Marginal likelihood of the alpha-interpolated approximate model."""
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {alpha}")
    if problem.n == 0:
        return 0.0
    _, _, _, _, Qff = _dtc_parts(problem, z)
    prior_diag = problem.kernel.variance_at_zero()
    resid = prior_diag - np.diag(Qff)
    return mvn_logpdf(problem.y, Qff + np.diag(alpha * resid + problem.noise))


def dense_predictive(
    problem: DenseGpProblem, z: PseudoInputs, query_locations, query_times
) -> tuple[np.ndarray, np.ndarray]:
    """Optimal approximate posterior marginals at query points, densely.

    Uses the standard collapsed form: with K the pseudo-point gram and
    ``Sigma = K + C_uf S^{-1} C_fu``, the optimal posterior over the
    pseudo-points is N(K Sigma^{-1} C_uf S^{-1} y, K Sigma^{-1} K), and
    pushing it through the prior conditional gives mean
    ``C_*u Sigma^{-1} C_uf S^{-1} y`` and covariance
    ``C_** - C_*u K^{-1} C_u* + C_*u Sigma^{-1} C_u*``.
    """
    Xq = np.asarray(query_locations, dtype=float)
    if Xq.ndim == 1:
        Xq = Xq[:, None]
    tq = np.atleast_1d(np.asarray(query_times, dtype=float))
    C_u = pseudo_gram(problem.kernel, z)
    factor = CholeskyFactor.of(C_u)
    C_star = cross_gram(problem.kernel, z, Xq, tq)
    if problem.n:
        C_fu = cross_gram(problem.kernel, z, problem.X, problem.t)
        sigma = symmetrize(C_u + C_fu.T @ (C_fu / problem.noise[:, None]))
        rhs = C_fu.T @ (problem.y / problem.noise)
    else:
        sigma = C_u
        rhs = np.zeros(C_u.shape[0])
    sigma_factor = CholeskyFactor.of(sigma)
    mean = C_star @ sigma_factor.solve(rhs)
    prior_var = problem.kernel.variance_at_zero()
    nystrom = factor.solve(C_star.T)
    posterior = sigma_factor.solve(C_star.T)
    var = (
        prior_var
        - np.einsum("ij,ji->i", C_star, nystrom)
        + np.einsum("ij,ji->i", C_star, posterior)
    )
    return mean, var
