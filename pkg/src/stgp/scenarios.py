"""Synthetic benchmark scenarios and pseudo-input placement.

Two data layouts exercised throughout the tests and the command line:

* ``irregular`` -- at each of T unit-spaced times, fresh spatial locations
  are drawn uniformly over an interval.  No grid structure at all, so exact
  draws come from the dense joint covariance; the size guard keeps that
  tractable.
* ``grid-missing`` -- one shared set of spatial locations observed at every
  time with a few dropped at random per time.  This is rectilinear, so draws
  come from the exact state-space form and scale linearly in T.

The default generating kernel is the benchmark one: exponentiated quadratic
over space (lengthscale 0.9, amplitude 0.92) times a Matern-3/2 over time
(lengthscale 1.2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import (
    ExponentiatedQuadratic,
    SumSeparableKernel,
    TemporalMatern,
    full_gram,
    separable,
)
from .linalg import cholesky_upper
from .statespace import RectilinearSpec, StateSpaceGp, build_lgssm

__all__ = [
    "benchmark_kernel",
    "SyntheticData",
    "make_irregular",
    "make_grid_missing",
    "kmeans",
    "DENSE_SAMPLE_LIMIT",
]

DENSE_SAMPLE_LIMIT = 6000


def benchmark_kernel() -> SumSeparableKernel:
    """The synthetic-benchmark prior: EQ(0.9, 0.92) x Matern-3/2(1.2)."""
    spatial = ExponentiatedQuadratic(np.array([1.0 / 0.9]), amplitude=0.92)
    temporal = TemporalMatern(order=3, lengthscale=1.2)
    return separable(spatial, temporal)


@dataclass(frozen=True)
class SyntheticData:
    """Flat per-observation arrays, ready for CSV emission or bucketing."""

    t: np.ndarray
    X: np.ndarray
    y: np.ndarray
    noise_var: np.ndarray


def make_irregular(
    T: int,
    n_per_time: int = 10,
    seed: int = 0,
    kernel: SumSeparableKernel | None = None,
    noise_var: float = 0.1,
    space: tuple[float, float] = (0.0, 10.0),
) -> SyntheticData:
    """Fresh uniform spatial locations at each unit-spaced time.

    Values are an exact joint draw from the prior, so the total number of
    points is capped at :data:`DENSE_SAMPLE_LIMIT`.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    total = T * n_per_time
    if total > DENSE_SAMPLE_LIMIT:
        raise ValueError(
            f"{total} points exceed the exact-draw limit of {DENSE_SAMPLE_LIMIT}; "
            "reduce T or the per-time count"
        )
    kernel = kernel or benchmark_kernel()
    rng = np.random.default_rng(seed)
    times = np.repeat(np.arange(1.0, T + 1.0), n_per_time)
    X = rng.uniform(space[0], space[1], size=(total, kernel.spatial_ndim))
    C = full_gram(kernel, X, times)
    f = cholesky_upper(C + 1e-12 * np.eye(total)).T @ rng.standard_normal(total)
    y = f + np.sqrt(noise_var) * rng.standard_normal(total)
    return SyntheticData(t=times, X=X, y=y, noise_var=np.full(total, noise_var))


def make_grid_missing(
    T: int,
    n_sites: int = 50,
    n_missing: int = 5,
    seed: int = 0,
    kernel: SumSeparableKernel | None = None,
    noise_var: float = 0.1,
    space: tuple[float, float] = (0.0, 10.0),
) -> SyntheticData:
    """Shared spatial grid with per-time random dropouts, drawn via the chain."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if not 0 <= n_missing < n_sites:
        raise ValueError("need 0 <= n_missing < n_sites")
    kernel = kernel or benchmark_kernel()
    rng = np.random.default_rng(seed)
    sites = rng.uniform(space[0], space[1], size=(n_sites, kernel.spatial_ndim))
    present = np.ones((T, n_sites), dtype=bool)
    for t in range(T):
        drop = rng.choice(n_sites, size=n_missing, replace=False)
        present[t, drop] = False
    spec = RectilinearSpec(times=np.arange(1.0, T + 1.0), locations=sites, present=present)
    n_t = n_sites - n_missing
    model = build_lgssm(
        StateSpaceGp(kernel),
        spec,
        [np.full(n_t, noise_var)] * T,
        [np.zeros(n_t)] * T,
    )
    _, draws = model.sample(seed)
    t_out, x_out, y_out = [], [], []
    for t in range(T):
        sel = np.flatnonzero(present[t])
        t_out.append(np.full(sel.shape[0], float(spec.times[t])))
        x_out.append(sites[sel])
        y_out.append(draws[t])
    t_flat = np.concatenate(t_out)
    return SyntheticData(
        t=t_flat,
        X=np.vstack(x_out),
        y=np.concatenate(y_out),
        noise_var=np.full(t_flat.shape[0], noise_var),
    )


def kmeans(points: np.ndarray, k: int, seed: int = 0, iters: int = 100) -> np.ndarray:
    """Lloyd's algorithm; assignment ties go to the lowest-index centre.

    Returns the distinct centres (possibly fewer than k if the data collapse).
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    n = P.shape[0]
    if k >= n:
        return np.unique(P, axis=0)
    rng = np.random.default_rng(seed)
    centers = P[rng.choice(n, size=k, replace=False)].copy()
    for _ in range(iters):
        d2 = ((P[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        moved = False
        for j in range(k):
            members = P[assign == j]
            if members.shape[0]:
                new = members.mean(axis=0)
                if not np.array_equal(new, centers[j]):
                    centers[j] = new
                    moved = True
        if not moved:
            break
    return np.unique(centers, axis=0)
