"""Linear-Gaussian state-space models: filtering, smoothing, sampling.

A model is an initial state distribution plus an ordered list of time steps,
each carrying a transition conditional, an emission conditional and the
observed vector for that step (possibly empty, making it predict-only).
The first step's transition maps the initial state into step 1; builders that
want ``state_1 ~ x0`` exactly use an identity transition with zero noise.

Filtering is covariance-form; each measurement update is delegated to the
conditioning routines in :mod:`stgp.linalg`, choosing the bottleneck route
when the emission factors through a low-dimensional intermediate.  Symmetry
is maintained by explicit symmetrisation after every update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CholeskyFailure, DimensionMismatch
from .linalg import (
    CholeskyFactor,
    Gaussian,
    LinearGaussianConditional,
    bottleneck_inference,
    cholesky_upper,
    low_rank_inference,
    naive_inference,
    symmetrize,
)

__all__ = ["TimeStep", "Lgssm", "PosteriorMarginals"]

_METHODS = ("auto", "naive", "low_rank", "bottleneck")


@dataclass(frozen=True)
class TimeStep:
    """One step of the chain: transition into this step, emission, observation.

    ``bottleneck``, when present, is the pair (H, h) such that the emission's
    matrix acts on ``z = H x + h`` instead of on the state directly.
    ``readout`` optionally maps the state to the function values whose
    smoothed marginals are of interest (e.g. all grid locations, including
    unobserved ones).
    """

    transition: LinearGaussianConditional
    emission: LinearGaussianConditional
    y: np.ndarray
    bottleneck: tuple[np.ndarray, np.ndarray] | None = None
    readout: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if y.shape[0] != self.emission.out_dim:
            raise DimensionMismatch(
                f"step observes {y.shape[0]} values but emission emits {self.emission.out_dim}"
            )
        object.__setattr__(self, "y", y)

    @property
    def state_dim(self) -> int:
        return self.transition.out_dim

    def composed_emission(self) -> LinearGaussianConditional:
        """Emission expressed directly on the state (folds the bottleneck in)."""
        if self.bottleneck is None:
            return self.emission
        H, h = self.bottleneck
        return LinearGaussianConditional(
            self.emission.A @ H, self.emission.A @ h + self.emission.a, self.emission.Q
        )


@dataclass(frozen=True)
class PosteriorMarginals:
    """Per-step smoothed marginals over the state and, optionally, readouts."""

    states: tuple[Gaussian, ...]
    outputs: tuple[Gaussian | None, ...]


@dataclass(frozen=True)
class Lgssm:
    """Gauss-Markov chain with linear-Gaussian emissions.

    ``inference`` selects the per-step conditioning algorithm: ``"auto"``
    uses the bottleneck route whenever a step carries a factorisation and the
    low-rank route otherwise.
    """

    x0: Gaussian
    steps: tuple[TimeStep, ...] = field(default=())
    inference: str = "auto"

    def __post_init__(self):
        steps = tuple(self.steps)
        if self.inference not in _METHODS:
            raise ValueError(f"inference must be one of {_METHODS}")
        dim = self.x0.dim
        for i, step in enumerate(steps):
            if step.transition.in_dim != dim:
                raise DimensionMismatch(
                    f"step {i} transition expects input dim {step.transition.in_dim}, "
                    f"previous state has dim {dim}"
                )
            dim = step.state_dim
        object.__setattr__(self, "steps", steps)

    def _update(self, predicted: Gaussian, step: TimeStep) -> tuple[Gaussian, float]:
        if step.y.size == 0:
            return predicted, 0.0
        method = self.inference
        if method == "auto":
            method = "bottleneck" if step.bottleneck is not None else "low_rank"
        if method == "bottleneck":
            if step.bottleneck is None:
                raise ValueError("bottleneck inference requested but step has no factorisation")
            H, h = step.bottleneck
            return bottleneck_inference(predicted, H, h, step.emission, step.y)
        if method == "naive":
            return naive_inference(predicted, step.composed_emission(), step.y)
        return low_rank_inference(predicted, step.composed_emission(), step.y)

    def filter(self) -> tuple[float, list[Gaussian]]:
        """Forward pass: total log marginal likelihood and filtered marginals."""
        lml = 0.0
        filtered: list[Gaussian] = []
        state = self.x0
        for i, step in enumerate(self.steps):
            tr = step.transition
            mean = tr.A @ state.mean + tr.a
            cov = symmetrize(tr.A @ state.cov @ tr.A.T + tr.Q)
            try:
                state, contrib = self._update(Gaussian(mean, cov), step)
            except CholeskyFailure as exc:
                raise CholeskyFailure(f"filter update failed at step {i}: {exc}") from exc
            lml += contrib
            filtered.append(state)
        return lml, filtered

    def smooth(self) -> PosteriorMarginals:
        """Backward pass over the filtered marginals (fixed-interval smoothing)."""
        _, filtered = self.filter()
        T = len(self.steps)
        states: list[Gaussian] = [None] * T  # type: ignore[list-item]
        if T:
            states[T - 1] = filtered[T - 1]
        for t in range(T - 2, -1, -1):
            tr = self.steps[t + 1].transition
            f = filtered[t]
            mean_pred = tr.A @ f.mean + tr.a
            cov_pred = symmetrize(tr.A @ f.cov @ tr.A.T + tr.Q)
            W = tr.A @ f.cov
            try:
                factor = CholeskyFactor.of(cov_pred)
            except CholeskyFailure as exc:
                raise CholeskyFailure(f"smoother failed between steps {t} and {t + 1}: {exc}") from exc
            J = factor.solve(W).T  # f.cov @ A' @ cov_pred^{-1}
            nxt = states[t + 1]
            mean = f.mean + J @ (nxt.mean - mean_pred)
            cov = symmetrize(f.cov + J @ (nxt.cov - cov_pred) @ J.T)
            states[t] = Gaussian(mean, cov)
        outputs: list[Gaussian | None] = []
        for step, g in zip(self.steps, states):
            if step.readout is None:
                outputs.append(None)
            else:
                R = step.readout
                outputs.append(Gaussian(R @ g.mean, symmetrize(R @ g.cov @ R.T)))
        return PosteriorMarginals(states=tuple(states), outputs=tuple(outputs))

    def sample(self, seed: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """One ancestral draw of the state trajectory and its emissions.

        Deterministic for a given seed.  Draw order is: initial state, then
        per step the transition noise followed by the emission noise.
        """
        rng = np.random.default_rng(seed)
        x = self.x0.mean + _psd_factor(self.x0.cov) @ rng.standard_normal(self.x0.dim)
        states: list[np.ndarray] = []
        emissions: list[np.ndarray] = []
        for step in self.steps:
            tr = step.transition
            x = tr.A @ x + tr.a + _psd_factor(tr.Q) @ rng.standard_normal(tr.out_dim)
            em = step.composed_emission()
            y = em.A @ x + em.a + _psd_factor(em.Q) @ rng.standard_normal(em.out_dim)
            states.append(x)
            emissions.append(y)
        return states, emissions


def _psd_factor(C: np.ndarray) -> np.ndarray:
    """Some R with R @ R.T = C, tolerating singular C (zero noise, etc.)."""
    C = np.asarray(C, dtype=float)
    if C.size == 0 or not C.any():
        return np.zeros_like(C)
    try:
        return cholesky_upper(C).T
    except CholeskyFailure:
        w, V = np.linalg.eigh(symmetrize(C))
        return V * np.sqrt(np.clip(w, 0.0, None))
