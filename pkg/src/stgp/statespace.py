"""Exact state-space form of a (sum-)separable GP on a rectilinear grid.

All observations share one set of spatial locations; each time step may mark
any subset of them missing.  The latent state at time t stacks, component by
component, the temporal SDE state at every grid location (location-major, SDE
dimension minor), giving transitions ``I_N (x) A_p(dt)`` with process noise
``C_p (x) Q_p(dt)`` where ``C_p`` is the spatial gram of component p over the
grid.  The chain starts from its stationary distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from .errors import DimensionMismatch, MaskLengthMismatch, NonIncreasingTimes
from .kernels import SumSeparableKernel, spatial_gram
from .lgssm import Lgssm, PosteriorMarginals, TimeStep
from .linalg import Gaussian, LinearGaussianConditional, kron

__all__ = ["RectilinearSpec", "StateSpaceGp", "build_lgssm", "lml", "posterior_grid_marginals"]


@dataclass(frozen=True)
class RectilinearSpec:
    """Shared spatial locations observed at strictly increasing times.

    ``present[t, i]`` says whether location i is observed at time t; omit it
    for a fully observed grid.
    """

    times: np.ndarray
    locations: np.ndarray
    present: np.ndarray | None = None

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        if times.ndim != 1 or times.size == 0:
            raise DimensionMismatch("times must be a nonempty vector")
        if np.any(np.diff(times) <= 0.0):
            raise NonIncreasingTimes("grid times must be strictly increasing")
        locs = np.asarray(self.locations, dtype=float)
        if locs.ndim == 1:
            locs = locs[:, None]
        present = self.present
        if present is None:
            present = np.ones((times.shape[0], locs.shape[0]), dtype=bool)
        else:
            present = np.asarray(present, dtype=bool)
            if present.shape != (times.shape[0], locs.shape[0]):
                raise MaskLengthMismatch(
                    f"mask shape {present.shape} does not match "
                    f"(T={times.shape[0]}, N={locs.shape[0]})"
                )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "present", present)

    @property
    def n_times(self) -> int:
        return self.times.shape[0]

    @property
    def n_sites(self) -> int:
        return self.locations.shape[0]


@dataclass(frozen=True)
class StateSpaceGp:
    """A sum-separable GP viewed through its exact grid state-space form."""

    kernel: SumSeparableKernel

    def state_dim(self, n_sites: int) -> int:
        return n_sites * sum(self.kernel.state_dims)

    def value_selector(self, n_sites: int) -> np.ndarray:
        """Rows mapping the stacked state to the N_T emitted function values."""
        blocks = [
            kron(np.eye(n_sites), tk.emission_row[None, :])
            for _, tk in self.kernel.components
        ]
        return np.hstack(blocks)


def _check_blocks(spec: RectilinearSpec, noise_vars, y) -> tuple[list[np.ndarray], list[np.ndarray]]:
    if len(noise_vars) != spec.n_times or len(y) != spec.n_times:
        raise DimensionMismatch(
            f"expected {spec.n_times} per-time noise and value blocks, "
            f"got {len(noise_vars)} and {len(y)}"
        )
    noise_out, y_out = [], []
    for t in range(spec.n_times):
        n_t = int(spec.present[t].sum())
        s = np.atleast_1d(np.asarray(noise_vars[t], dtype=float))
        if s.size == 1 and n_t != 1:
            s = np.full(n_t, s[0])
        v = np.atleast_1d(np.asarray(y[t], dtype=float))
        if s.shape[0] != n_t or v.shape[0] != n_t:
            raise DimensionMismatch(
                f"time {t}: {n_t} present locations but {v.shape[0]} values / "
                f"{s.shape[0]} noise variances"
            )
        if np.any(s <= 0.0):
            raise ValueError(f"time {t}: noise variances must be positive")
        noise_out.append(s)
        y_out.append(v)
    return noise_out, y_out


def build_lgssm(gp: StateSpaceGp, spec: RectilinearSpec, obs_noise, y) -> Lgssm:
    """Assemble the exact LGSSM for the grid data.

    ``obs_noise`` and ``y`` are per-time sequences aligned with the present
    entries of each mask row (a scalar noise is broadcast).
    """
    noise_blocks, y_blocks = _check_blocks(spec, obs_noise, y)
    comps = gp.kernel.components
    N = spec.n_sites
    grams = [spatial_gram(sp, spec.locations) for sp, _ in comps]
    x0_cov = block_diag(*[kron(C, tk.stationary_cov) for C, (_, tk) in zip(grams, comps)])
    dim = x0_cov.shape[0]
    x0 = Gaussian(np.zeros(dim), x0_cov)
    H_full = gp.value_selector(N)
    eye = np.eye(N)

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
    for t in range(spec.n_times):
        transition = identity_step if t == 0 else transition_for(float(spec.times[t] - spec.times[t - 1]))
        sel = np.flatnonzero(spec.present[t])
        B = eye[sel]
        emission = LinearGaussianConditional.with_diagonal_noise(
            B, np.zeros(sel.shape[0]), noise_blocks[t]
        )
        steps.append(
            TimeStep(
                transition=transition,
                emission=emission,
                y=y_blocks[t],
                bottleneck=(H_full, np.zeros(N)),
                readout=H_full,
            )
        )
    return Lgssm(x0=x0, steps=tuple(steps))


def lml(gp: StateSpaceGp, spec: RectilinearSpec, obs_noise, y) -> float:
    """Exact GP log marginal likelihood, linear in the number of times."""
    value, _ = build_lgssm(gp, spec, obs_noise, y).filter()
    return value


def posterior_grid_marginals(
    gp: StateSpaceGp, spec: RectilinearSpec, obs_noise, y
) -> PosteriorMarginals:
    """Smoothed marginals of the function values at every grid location.

    Masked-out locations are included; their marginals are the posterior at
    unobserved grid points.
    """
    return build_lgssm(gp, spec, obs_noise, y).smooth()
