"""Pseudo-point approximation of a spatio-temporal GP, run as a Kalman filter.

Spatial pseudo-inputs are shared across a set of pseudo-point times; every
observation must fall on one of those times (the spatial locations are
unconstrained).  Under a separable prior the observations at time t are
conditionally independent of all pseudo-points except those at time t, so the
projected observation model is block-diagonal in time: each block is

    y_t | ubar_t ~ N(B_t ubar_t, S_t),   B_t = C_{f_t u_t} C_u^{-1} H,

where H selects the emitted coordinate of each pseudo-point's latent SDE
state.  Together with the Markov prior over the pseudo-point states this is
an LGSSM, so the collapsed variational bound, its FITC-style relatives and
posterior predictions all reduce to filtering/smoothing passes that are
linear in the number of times.

A relative nugget (:data:`stgp.kernels.PSEUDO_NUGGET` times the amplitude) is
added to every pseudo-input gram before inversion.  This is part of the model
definition -- pseudo-points carry that much independent noise -- so the dense
reference implementations apply the identical regularisation and the two
routes agree to floating-point accuracy.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import block_diag

from .errors import (
    AlphaOutOfRange,
    CholeskyFailure,
    DimensionMismatch,
    NonIncreasingTimes,
    QueryTimeNotOnGrid,
    SingularConditioningSet,
    SingularPseudoGram,
    TimeAlignmentError,
)
from .kernels import (
    PSEUDO_NUGGET,
    SumSeparableKernel,
    full_gram,
    spatial_gram,
)
from .lgssm import Lgssm, TimeStep
from .linalg import CholeskyFactor, Gaussian, LinearGaussianConditional, kron

__all__ = [
    "PseudoInputs",
    "TimeGroupedData",
    "ApproximationFamily",
    "projection_matrices",
    "approximate_lgssm",
    "elbo",
    "predict",
    "modified_noise",
    "conditional_independence_residual",
]


@dataclass(frozen=True)
class PseudoInputs:
    """Spatial pseudo-input locations, shared across pseudo-point times."""

    locations: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        locs = np.asarray(self.locations, dtype=float)
        if locs.ndim == 1:
            locs = locs[:, None]
        if locs.ndim != 2 or locs.shape[0] == 0:
            raise DimensionMismatch("pseudo-input locations must be a nonempty point set")
        if np.unique(locs, axis=0).shape[0] != locs.shape[0]:
            raise SingularPseudoGram("pseudo-input locations must be pairwise distinct")
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        if times.size == 0:
            raise DimensionMismatch("at least one pseudo-point time is required")
        if np.any(np.diff(times) <= 0.0):
            raise NonIncreasingTimes("pseudo-point times must be strictly increasing")
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "times", times)

    @property
    def n_inputs(self) -> int:
        return self.locations.shape[0]


@dataclass(frozen=True)
class TimeGroupedData:
    """Observations bucketed by strictly increasing time stamps.

    Buckets may be empty.  Each bucket carries spatial locations, observed
    values and per-observation noise variances of equal length.
    """

    times: np.ndarray
    locations: tuple[np.ndarray, ...]
    values: tuple[np.ndarray, ...]
    noise_vars: tuple[np.ndarray, ...]

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        if times.size and np.any(np.diff(times) <= 0.0):
            raise NonIncreasingTimes("bucket times must be strictly increasing")
        locs, vals, noise = [], [], []
        for t in range(times.shape[0]):
            X = np.asarray(self.locations[t], dtype=float)
            if X.ndim == 1:
                X = X[:, None]
            v = np.atleast_1d(np.asarray(self.values[t], dtype=float))
            s = np.atleast_1d(np.asarray(self.noise_vars[t], dtype=float))
            if s.size == 1 and v.size != 1:
                s = np.full(v.shape[0], s[0])
            if X.shape[0] != v.shape[0] or s.shape[0] != v.shape[0]:
                raise DimensionMismatch(
                    f"bucket {t}: {X.shape[0]} locations, {v.shape[0]} values, "
                    f"{s.shape[0]} noise variances"
                )
            if np.any(s <= 0.0):
                raise ValueError(f"bucket {t}: noise variances must be positive")
            locs.append(X)
            vals.append(v)
            noise.append(s)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "locations", tuple(locs))
        object.__setattr__(self, "values", tuple(vals))
        object.__setattr__(self, "noise_vars", tuple(noise))

    @classmethod
    def from_points(cls, t, X, y, noise_var) -> "TimeGroupedData":
        """Bucket flat per-observation arrays by exact time equality."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.atleast_1d(np.asarray(y, dtype=float))
        noise = np.atleast_1d(np.asarray(noise_var, dtype=float))
        if noise.size == 1:
            noise = np.full(t.shape[0], noise[0])
        unique, inverse = np.unique(t, return_inverse=True)
        groups = [np.flatnonzero(inverse == i) for i in range(unique.shape[0])]
        return cls(
            times=unique,
            locations=tuple(X[g] for g in groups),
            values=tuple(y[g] for g in groups),
            noise_vars=tuple(noise[g] for g in groups),
        )

    @property
    def n_times(self) -> int:
        return self.times.shape[0]

    @property
    def n_obs(self) -> int:
        return int(sum(v.shape[0] for v in self.values))

    def with_noise(self, noise_var: float) -> "TimeGroupedData":
        """Replace every per-observation noise variance by a single value."""
        return replace(
            self,
            noise_vars=tuple(np.full(v.shape[0], float(noise_var)) for v in self.values),
        )


@dataclass(frozen=True)
class ApproximationFamily:
    """Interpolates the approximate observation model between the collapsed
    variational / deterministic-conditional model (alpha = 0) and the
    FITC-style model (alpha = 1)."""

    alpha: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {self.alpha}")
        object.__setattr__(self, "alpha", float(self.alpha))


@dataclass(frozen=True)
class _Projection:
    """Cached per-component pseudo grams and per-bucket projection weights."""

    factors: tuple[CholeskyFactor, ...]  # chol of nugget-regularised C_u per component
    cross: tuple[tuple[np.ndarray, ...], ...]  # [bucket][component] C_{f_t z}
    weights: tuple[tuple[np.ndarray, ...], ...]  # [bucket][component] C_{f_t z} C_u^{-1}


def regularized_pseudo_gram(spatial, z_locations: np.ndarray) -> np.ndarray:
    """Pseudo-input spatial gram with its defining relative nugget."""
    C = spatial_gram(spatial, z_locations)
    return C + (PSEUDO_NUGGET * spatial.amplitude) * np.eye(C.shape[0])


def _pseudo_factors(kernel: SumSeparableKernel, z: PseudoInputs) -> tuple[CholeskyFactor, ...]:
    factors = []
    for sp, _ in kernel.components:
        try:
            factors.append(CholeskyFactor.of(regularized_pseudo_gram(sp, z.locations)))
        except CholeskyFailure as exc:
            raise SingularPseudoGram(f"pseudo-input gram not invertible: {exc}") from exc
    return tuple(factors)


def _project(
    kernel: SumSeparableKernel, z: PseudoInputs, data: TimeGroupedData
) -> _Projection:
    factors = _pseudo_factors(kernel, z)
    cross, weights = [], []
    for X in data.locations:
        per_cross, per_w = [], []
        for (sp, _), factor in zip(kernel.components, factors):
            K = spatial_gram(sp, X, z.locations)
            per_cross.append(K)
            per_w.append(factor.solve(K.T).T if K.shape[0] else K)
        cross.append(tuple(per_cross))
        weights.append(tuple(per_w))
    return _Projection(factors=factors, cross=tuple(cross), weights=tuple(weights))


def projection_matrices(
    kernel: SumSeparableKernel, z: PseudoInputs, data: TimeGroupedData
) -> list[list[np.ndarray]]:
    """Per-time, per-component emission blocks mapping pseudo-point states to
    the prior conditional mean of the observations at that time."""
    proj = _project(kernel, z, data)
    out = []
    for per_w in proj.weights:
        out.append(
            [kron(W, tk.emission_row[None, :]) for W, (_, tk) in zip(per_w, kernel.components)]
        )
    return out


def _bucket_index(z: PseudoInputs, data: TimeGroupedData) -> np.ndarray:
    """Map each data bucket to its pseudo-time index (exact time equality)."""
    index = np.searchsorted(z.times, data.times)
    ok = (index < z.times.shape[0]) & (
        z.times[np.minimum(index, z.times.shape[0] - 1)] == data.times
    )
    if not np.all(ok):
        bad = data.times[~ok]
        raise TimeAlignmentError(
            f"observation times {bad.tolist()} do not coincide with any pseudo-point time"
        )
    return index


def _residual_diagonals(
    kernel: SumSeparableKernel, proj: _Projection, data: TimeGroupedData
) -> list[np.ndarray]:
    """Per-bucket diagonal of C_{f_t} - C_{f_t u_t} C_u^{-1} C_{u_t f_t}."""
    amp_total = kernel.variance_at_zero()

    def one(t: int) -> np.ndarray:
        n_t = data.values[t].shape[0]
        r = np.full(n_t, amp_total)
        for K, W in zip(proj.cross[t], proj.weights[t]):
            if n_t:
                r -= np.einsum("ij,ij->i", W, K)
        return r

    workers = int(os.environ.get("STGP_THREADS", "1") or "1")
    if workers > 1 and data.n_times > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, range(data.n_times)))
    return [one(t) for t in range(data.n_times)]


def modified_noise(
    kernel: SumSeparableKernel,
    z: PseudoInputs,
    data: TimeGroupedData,
    family: ApproximationFamily,
) -> list[np.ndarray]:
    """Per-time diagonal observation noise of the alpha-family model.

    alpha = 0 returns the data noise unchanged; alpha = 1 inflates it by the
    full conditional-variance residual, the FITC-style model.
    """
    if not isinstance(family, ApproximationFamily):
        family = ApproximationFamily(float(family))
    residuals = _residual_diagonals(kernel, _project(kernel, z, data), data)
    return [s + family.alpha * r for s, r in zip(data.noise_vars, residuals)]


def approximate_lgssm(
    kernel: SumSeparableKernel,
    z: PseudoInputs,
    data: TimeGroupedData,
    family: ApproximationFamily | None = None,
) -> Lgssm:
    """The LGSSM whose exact posterior is the optimal approximate posterior.

    Pseudo-point times without observations become predict-only steps.  With
    ``family`` given, the observation noise is inflated per
    :func:`modified_noise` before assembly.
    """
    proj = _project(kernel, z, data)
    index = _bucket_index(z, data)
    bucket_of = {int(i): t for t, i in enumerate(index)}
    comps = kernel.components
    M = z.n_inputs
    grams = [regularized_pseudo_gram(sp, z.locations) for sp, _ in comps]
    x0_cov = block_diag(*[kron(C, tk.stationary_cov) for C, (_, tk) in zip(grams, comps)])
    dim = x0_cov.shape[0]
    x0 = Gaussian(np.zeros(dim), x0_cov)
    H = block_diag(*[kron(np.eye(M), tk.emission_row[None, :]) for _, tk in comps])
    h = np.zeros(H.shape[0])
    if family is not None and family.alpha > 0.0:
        noise = modified_noise(kernel, z, data, family)
    else:
        noise = [s.copy() for s in data.noise_vars]

    eye = np.eye(M)
    transition_cache: dict[float, LinearGaussianConditional] = {}

    def transition_for(dt: float) -> LinearGaussianConditional:
        hit = transition_cache.get(dt)
        if hit is None:
            A = block_diag(*[kron(eye, tk.transition(dt)) for _, tk in comps])
            Q = block_diag(*[kron(C, tk.noise(dt)) for C, (_, tk) in zip(grams, comps)])
            hit = LinearGaussianConditional(A, np.zeros(dim), Q)
            transition_cache[dt] = hit
        return hit

    identity_step = LinearGaussianConditional(np.eye(dim), np.zeros(dim), np.zeros((dim, dim)))
    steps = []
    for i in range(z.times.shape[0]):
        transition = identity_step if i == 0 else transition_for(float(z.times[i] - z.times[i - 1]))
        t = bucket_of.get(i)
        if t is None:
            B = np.zeros((0, H.shape[0]))
            emission = LinearGaussianConditional.with_diagonal_noise(B, np.zeros(0), np.zeros(0))
            y_t = np.zeros(0)
        else:
            B = np.hstack(proj.weights[t])
            emission = LinearGaussianConditional.with_diagonal_noise(
                B, np.zeros(B.shape[0]), noise[t]
            )
            y_t = data.values[t]
        steps.append(
            TimeStep(
                transition=transition,
                emission=emission,
                y=y_t,
                bottleneck=(H, h),
                readout=H,
            )
        )
    return Lgssm(x0=x0, steps=tuple(steps))


def elbo(kernel: SumSeparableKernel, z: PseudoInputs, data: TimeGroupedData) -> float:
    """Collapsed variational lower bound on the exact log marginal likelihood.

    The first term is the filter log marginal likelihood of the approximate
    model; the correction is half the noise-weighted trace of the conditional
    covariance residual, accumulated per time and per component from kernel
    grams (independent of filter round-off).
    """
    proj = _project(kernel, z, data)
    model = approximate_lgssm(kernel, z, data)
    lml_term, _ = model.filter()
    residuals = _residual_diagonals(kernel, proj, data)
    trace_term = 0.0
    for r, s in zip(residuals, data.noise_vars):
        if r.size:
            trace_term += float(np.sum(r / s))
    return lml_term - 0.5 * trace_term


def predict(
    kernel: SumSeparableKernel,
    z: PseudoInputs,
    data: TimeGroupedData,
    query_locations,
    query_times,
) -> tuple[np.ndarray, np.ndarray]:
    """Approximate posterior marginals at query points.

    Query times must coincide exactly with pseudo-point times.  Returns the
    per-query mean and variance, ordered as given.
    """
    Xq = np.asarray(query_locations, dtype=float)
    if Xq.ndim == 1:
        Xq = Xq[:, None]
    tq = np.atleast_1d(np.asarray(query_times, dtype=float))
    if Xq.shape[0] != tq.shape[0]:
        raise DimensionMismatch(
            f"{Xq.shape[0]} query locations vs {tq.shape[0]} query times"
        )
    known = np.isin(tq, z.times)
    if not np.all(known):
        missing = sorted(set(tq[~known].tolist()))
        raise QueryTimeNotOnGrid(f"query times {missing} carry no pseudo-points")

    factors = _pseudo_factors(kernel, z)
    marginals = approximate_lgssm(kernel, z, data).smooth()
    time_index = {float(t): i for i, t in enumerate(z.times)}
    amp_total = kernel.variance_at_zero()

    mean = np.empty(tq.shape[0])
    var = np.empty(tq.shape[0])
    for t_val in np.unique(tq):
        rows = np.flatnonzero(tq == t_val)
        Xt = Xq[rows]
        state = marginals.states[time_index[float(t_val)]]
        W_blocks = []
        prior_var = np.full(rows.shape[0], amp_total)
        for (sp, tk), factor in zip(kernel.components, factors):
            K = spatial_gram(sp, Xt, z.locations)
            W = factor.solve(K.T).T
            prior_var -= np.einsum("ij,ij->i", W, K)
            W_blocks.append(kron(W, tk.emission_row[None, :]))
        Wfull = np.hstack(W_blocks)
        mean[rows] = Wfull @ state.mean
        var[rows] = prior_var + np.einsum("ij,jk,ik->i", Wfull, state.cov, Wfull)
    return mean, var


def conditional_independence_residual(
    kernel: SumSeparableKernel, X1, T1, X2, T2
) -> float:
    """Largest conditional cross-covariance entry between two space-time
    rectangles given the mixed rectangle.

    ``cov(f(X1, T1), f(X2, T2) | f(X2, T1))`` vanishes identically for a
    separable kernel; a sum of two or more separable components generically
    does not.  Test utility, evaluated densely.
    """
    X1 = np.asarray(X1, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    if X1.ndim == 1:
        X1 = X1[:, None]
    if X2.ndim == 1:
        X2 = X2[:, None]
    T1 = np.atleast_1d(np.asarray(T1, dtype=float))
    T2 = np.atleast_1d(np.asarray(T2, dtype=float))

    def rectangle(X, T):
        reps = np.repeat(X, T.shape[0], axis=0)
        times = np.tile(T, X.shape[0])
        return reps, times

    XL, tL = rectangle(X1, T1)
    XR, tR = rectangle(X2, T2)
    XC, tC = rectangle(X2, T1)
    if XL.shape[0] == 0 or XR.shape[0] == 0:
        return 0.0
    C_lr = full_gram(kernel, XL, tL, XR, tR)
    C_lc = full_gram(kernel, XL, tL, XC, tC)
    C_cr = full_gram(kernel, XC, tC, XR, tR)
    C_cc = full_gram(kernel, XC, tC)
    try:
        factor = CholeskyFactor.of(C_cc)
    except CholeskyFailure as exc:
        raise SingularConditioningSet(f"conditioning gram is singular: {exc}") from exc
    resid = C_lr - C_lc @ factor.solve(C_cr)
    return float(np.abs(resid).max(initial=0.0))
