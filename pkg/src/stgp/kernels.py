"""Covariance functions: spatial, temporal with state-space form, and products.

The temporal family is the half-integer Matern kernels, each standardised to
unit variance and carried around together with its companion-form stochastic
differential equation.  Writing ``lam = sqrt(order) / lengthscale``, the drift
matrix has the single eigenvalue ``-lam`` with full multiplicity, so the
discrete transition ``exp(F dt)`` has a short closed form via the nilpotent
part ``N = F + lam I`` -- no general matrix exponential is needed.

A spatio-temporal kernel is a sum of separable (spatial x temporal) products;
one component is the plain separable case.  The product of a spatial kernel
with the *state* covariance of the temporal SDE (all latent dimensions, not
just the emitted one) is what links the dense and state-space views of the
same process; :func:`component_augmented_gram` evaluates it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NegativeTimestep

__all__ = [
    "ExponentiatedQuadratic",
    "TemporalMatern",
    "SumSeparableKernel",
    "separable",
    "spatial_gram",
    "sde_discretize",
    "temporal_cov",
    "full_gram",
    "component_augmented_gram",
]

_STATE_DIMS = {1: 1, 3: 2, 5: 3}

# Relative nugget added to pseudo-input grams before inversion.  It is part of
# the approximate model (a tiny independent noise on each pseudo-point), so
# every route -- structured or dense -- must apply it identically.
PSEUDO_NUGGET = 1e-8


@dataclass(frozen=True)
class ExponentiatedQuadratic:
    """``amplitude * exp(-||L x - L x'||^2 / 2)`` with ``L = diag(inverse_lengthscales)``.

    The raw parameters are the *inverse* lengthscales, matching how they are
    optimised; ``lengthscales`` is the derived convenience view.
    """

    inverse_lengthscales: np.ndarray
    amplitude: float = 1.0

    def __post_init__(self):
        ils = np.atleast_1d(np.asarray(self.inverse_lengthscales, dtype=float))
        if ils.ndim != 1 or np.any(ils <= 0.0):
            raise ValueError("inverse lengthscales must be a vector of positive reals")
        if self.amplitude <= 0.0:
            raise ValueError("amplitude must be positive")
        object.__setattr__(self, "inverse_lengthscales", ils)
        object.__setattr__(self, "amplitude", float(self.amplitude))

    @property
    def ndim(self) -> int:
        return self.inverse_lengthscales.shape[0]

    @property
    def lengthscales(self) -> np.ndarray:
        return 1.0 / self.inverse_lengthscales


def _as_points(X, ndim: int) -> np.ndarray:
    P = np.asarray(X, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.ndim != 2 or P.shape[1] != ndim:
        raise DimensionMismatch(
            f"spatial locations of dimension {ndim} expected, got shape {P.shape}"
        )
    return P


def spatial_gram(kernel: ExponentiatedQuadratic, X, X2=None) -> np.ndarray:
    """Cross-covariance matrix of the spatial kernel at two location sets."""
    P = _as_points(X, kernel.ndim)
    P2 = P if X2 is None else _as_points(X2, kernel.ndim)
    ils = kernel.inverse_lengthscales
    diff = P[:, None, :] * ils - P2[None, :, :] * ils
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    return kernel.amplitude * np.exp(-0.5 * sq)


@dataclass(frozen=True)
class TemporalMatern:
    """Unit-variance Matern-(order/2) kernel with its state-space representation.

    ``order`` is 1, 3 or 5; the latent state has dimension 1, 2 or 3 and the
    process value is the first state coordinate.
    """

    order: int
    lengthscale: float

    def __post_init__(self):
        if self.order not in _STATE_DIMS:
            raise ValueError(f"order must be one of {sorted(_STATE_DIMS)}, got {self.order}")
        if self.lengthscale <= 0.0:
            raise ValueError("lengthscale must be positive")
        object.__setattr__(self, "lengthscale", float(self.lengthscale))

    @property
    def state_dim(self) -> int:
        return _STATE_DIMS[self.order]

    @property
    def rate(self) -> float:
        """Decay rate of the companion-form drift, sqrt(order)/lengthscale."""
        return math.sqrt(self.order) / self.lengthscale

    @property
    def emission_row(self) -> np.ndarray:
        e = np.zeros(self.state_dim)
        e[0] = 1.0
        return e

    @property
    def stationary_cov(self) -> np.ndarray:
        lam = self.rate
        if self.order == 1:
            return np.array([[1.0]])
        if self.order == 3:
            return np.array([[1.0, 0.0], [0.0, lam * lam]])
        k = lam * lam / 3.0
        return np.array(
            [
                [1.0, 0.0, -k],
                [0.0, k, 0.0],
                [-k, 0.0, lam ** 4],
            ]
        )

    def transition(self, dt: float) -> np.ndarray:
        """Discrete transition ``exp(F dt)`` for nonnegative ``dt``."""
        if dt < 0.0:
            raise NegativeTimestep(f"dt must be nonnegative, got {dt}")
        lam = self.rate
        decay = math.exp(-lam * dt)
        if self.order == 1:
            return np.array([[decay]])
        if self.order == 3:
            N = np.array([[lam, 1.0], [-lam * lam, -lam]])
            return decay * (np.eye(2) + dt * N)
        N = np.array(
            [
                [lam, 1.0, 0.0],
                [0.0, lam, 1.0],
                [-lam ** 3, -3.0 * lam * lam, -2.0 * lam],
            ]
        )
        return decay * (np.eye(3) + dt * N + 0.5 * dt * dt * (N @ N))

    def noise(self, dt: float) -> np.ndarray:
        """Process noise over ``dt`` under stationary initialisation."""
        A = self.transition(dt)
        P = self.stationary_cov
        Q = P - A @ P @ A.T
        return 0.5 * (Q + Q.T)

    def covariance(self, dt: float) -> float:
        """Covariance of the emitted process at lag ``|dt|`` (unit variance)."""
        r = self.rate * abs(float(dt))
        if self.order == 1:
            return math.exp(-r)
        if self.order == 3:
            return (1.0 + r) * math.exp(-r)
        return (1.0 + r + r * r / 3.0) * math.exp(-r)

    def state_gram(self, t1: float, t2: float) -> np.ndarray:
        """Cross-covariance of the full latent state between two times.

        Entry (d, d') is ``cov(x_d(t1), x_d'(t2))``; reduces to
        :meth:`covariance` on the (0, 0) entry.
        """
        P = self.stationary_cov
        if t2 >= t1:
            return P @ self.transition(t2 - t1).T
        return self.transition(t1 - t2) @ P


def sde_discretize(kernel: TemporalMatern, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Transition and process-noise matrices of the temporal SDE over ``dt``."""
    return kernel.transition(dt), kernel.noise(dt)


def temporal_cov(kernel: TemporalMatern, dt: float) -> float:
    """Covariance of the emitted temporal process at lag ``dt``."""
    return kernel.covariance(dt)


def _temporal_gram(kernel: TemporalMatern, t, t2) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    t2 = np.atleast_1d(np.asarray(t2, dtype=float))
    r = kernel.rate * np.abs(t[:, None] - t2[None, :])
    if kernel.order == 1:
        return np.exp(-r)
    if kernel.order == 3:
        return (1.0 + r) * np.exp(-r)
    return (1.0 + r + r * r / 3.0) * np.exp(-r)


@dataclass(frozen=True)
class SumSeparableKernel:
    """Sum of independent separable (spatial x temporal) components."""

    components: tuple[tuple[ExponentiatedQuadratic, TemporalMatern], ...]

    def __post_init__(self):
        comps = tuple((s, t) for s, t in self.components)
        if not comps:
            raise ValueError("at least one (spatial, temporal) component is required")
        ndims = {s.ndim for s, _ in comps}
        if len(ndims) != 1:
            raise DimensionMismatch(f"components disagree on spatial dimension: {ndims}")
        object.__setattr__(self, "components", comps)

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def spatial_ndim(self) -> int:
        return self.components[0][0].ndim

    @property
    def state_dims(self) -> tuple[int, ...]:
        """Latent state dimension of each component's temporal SDE."""
        return tuple(t.state_dim for _, t in self.components)

    def variance_at_zero(self) -> float:
        """Prior variance of the summed process at any single input."""
        return float(sum(s.amplitude for s, _ in self.components))


def separable(spatial: ExponentiatedQuadratic, temporal: TemporalMatern) -> SumSeparableKernel:
    """Single-component convenience constructor."""
    return SumSeparableKernel(((spatial, temporal),))


def full_gram(kernel: SumSeparableKernel, X, t, X2=None, t2=None) -> np.ndarray:
    """Dense covariance of the summed process over (location, time) inputs.

    Quadratic in the number of points; used by the dense reference routines
    and tests, never on the fast path.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    X = _as_points(X, kernel.spatial_ndim)
    if X.shape[0] != t.shape[0]:
        raise DimensionMismatch(
            f"{X.shape[0]} locations vs {t.shape[0]} time stamps"
        )
    if X2 is None:
        X2, t2 = X, t
    else:
        X2 = _as_points(X2, kernel.spatial_ndim)
        t2 = np.atleast_1d(np.asarray(t2, dtype=float))
        if X2.shape[0] != t2.shape[0]:
            raise DimensionMismatch(
                f"{X2.shape[0]} locations vs {t2.shape[0]} time stamps"
            )
    G = np.zeros((X.shape[0], X2.shape[0]))
    for sp, tk in kernel.components:
        G += spatial_gram(sp, X, X2) * _temporal_gram(tk, t, t2)
    return G


def component_augmented_gram(
    spatial: ExponentiatedQuadratic,
    temporal: TemporalMatern,
    X1,
    t1,
    d1,
    X2,
    t2,
    d2,
) -> np.ndarray:
    """Covariance between latent-state points of one separable component.

    A point is (location ``x``, time ``t``, latent dimension ``d``); dimension
    0 is the observed process.  Grouping time with the latent dimension, the
    augmented process is itself separable: spatial kernel times the state
    cross-covariance of the temporal SDE.
    """
    t1 = np.atleast_1d(np.asarray(t1, dtype=float))
    t2 = np.atleast_1d(np.asarray(t2, dtype=float))
    d1 = np.atleast_1d(np.asarray(d1, dtype=int))
    d2 = np.atleast_1d(np.asarray(d2, dtype=int))
    S = spatial_gram(spatial, X1, X2)
    if S.shape != (t1.shape[0], t2.shape[0]) or d1.shape != t1.shape or d2.shape != t2.shape:
        raise DimensionMismatch("augmented points must align location, time and dimension")
    u1, i1 = np.unique(t1, return_inverse=True)
    u2, i2 = np.unique(t2, return_inverse=True)
    D = temporal.state_dim
    SG = np.empty((u1.shape[0], u2.shape[0], D, D))
    for a, ta in enumerate(u1):
        for b, tb in enumerate(u2):
            SG[a, b] = temporal.state_gram(ta, tb)
    G = SG[i1[:, None], i2[None, :], d1[:, None], d2[None, :]]
    return S * G
