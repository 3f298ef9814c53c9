"""Shared brute-force oracles and random instance generators for the tests.

Everything here is deliberately independent of the library's fast paths:
joint Gaussians are assembled explicitly and conditioned by Schur
complement, chains are unrolled into one big covariance matrix, and grams
are evaluated entry by entry where that matters.
"""

import math

import numpy as np

from stgp import (
    ExponentiatedQuadratic,
    Gaussian,
    LinearGaussianConditional,
    SumSeparableKernel,
    TemporalMatern,
)
from stgp.pseudopoint import PseudoInputs, TimeGroupedData

LOG_2PI = math.log(2.0 * math.pi)


def logpdf(x, mean, cov):
    """Dense log N(x; mean, cov) via slogdet/solve (no shared code path)."""
    x = np.atleast_1d(np.asarray(x, float))
    mean = np.atleast_1d(np.asarray(mean, float))
    cov = np.atleast_2d(np.asarray(cov, float))
    diff = x - mean
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0, "oracle got a non-PD covariance"
    return -0.5 * (x.size * LOG_2PI + logdet + diff @ np.linalg.solve(cov, diff))


def schur_conditioning(prior: Gaussian, obs: LinearGaussianConditional, y):
    """Posterior and lml from the explicit joint over (x, y)."""
    y = np.atleast_1d(np.asarray(y, float))
    my = obs.A @ prior.mean + obs.a
    Cxy = prior.cov @ obs.A.T
    Cy = obs.A @ prior.cov @ obs.A.T + obs.Q
    lml = logpdf(y, my, Cy)
    gain = np.linalg.solve(Cy, Cxy.T).T
    mean = prior.mean + gain @ (y - my)
    cov = prior.cov - gain @ Cxy.T
    return Gaussian(mean, 0.5 * (cov + cov.T)), float(lml)


def chain_state_joint(model):
    """Mean and full joint covariance over the stacked states of an LGSSM."""
    steps = model.steps
    T = len(steps)
    means = []
    covs = [[None] * T for _ in range(T)]
    m = model.x0.mean
    C = model.x0.cov
    marginals = []
    for step in steps:
        A, a, Q = step.transition.A, step.transition.a, step.transition.Q
        m = A @ m + a
        C = A @ C @ A.T + Q
        C = 0.5 * (C + C.T)
        means.append(m)
        marginals.append(C)
    for s in range(T):
        covs[s][s] = marginals[s]
        acc = marginals[s]
        for t in range(s + 1, T):
            acc = acc @ steps[t].transition.A.T
            covs[s][t] = acc
            covs[t][s] = acc.T
    mean = np.concatenate(means) if T else np.zeros(0)
    cov = np.block(covs) if T else np.zeros((0, 0))
    return mean, cov


def chain_emission_joint(model):
    """Mean/covariance of all stacked emissions plus the state-emission maps."""
    mean_x, cov_x = chain_state_joint(model)
    blocks = [step.composed_emission() for step in model.steps]
    A = _blockdiag([b.A for b in blocks])
    a = np.concatenate([b.a for b in blocks]) if blocks else np.zeros(0)
    Q = _blockdiag([b.Q for b in blocks])
    mean_y = A @ mean_x + a
    cov_y = A @ cov_x @ A.T + Q
    return mean_y, 0.5 * (cov_y + cov_y.T), (A, mean_x, cov_x)


def chain_lml_oracle(model):
    y = np.concatenate([step.y for step in model.steps])
    mean_y, cov_y, _ = chain_emission_joint(model)
    if y.size == 0:
        return 0.0
    return float(logpdf(y, mean_y, cov_y))


def chain_smoother_oracle(model):
    """Smoothed per-step state marginals by conditioning the dense joint."""
    y = np.concatenate([step.y for step in model.steps])
    mean_y, cov_y, (A, mean_x, cov_x) = chain_emission_joint(model)
    if y.size:
        gain = np.linalg.solve(cov_y, (cov_x @ A.T).T).T
        mean = mean_x + gain @ (y - mean_y)
        cov = cov_x - gain @ (cov_x @ A.T).T
    else:
        mean, cov = mean_x, cov_x
    cov = 0.5 * (cov + cov.T)
    out = []
    offset = 0
    for step in model.steps:
        d = step.state_dim
        sl = slice(offset, offset + d)
        out.append(Gaussian(mean[sl], cov[sl, sl]))
        offset += d
    return out


def _blockdiag(mats):
    if not mats:
        return np.zeros((0, 0))
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for m in mats:
        out[r : r + m.shape[0], c : c + m.shape[1]] = m
        r += m.shape[0]
        c += m.shape[1]
    return out


# ---------------------------------------------------------------------------
# random generators


def random_spd(rng, n, scale=1.0):
    A = rng.standard_normal((n, n))
    return scale * (A @ A.T + n * np.eye(n) * 0.2)


def random_prior(rng, n):
    return Gaussian(rng.standard_normal(n), random_spd(rng, n))


def random_diag_obs(rng, dx, dy):
    A = rng.standard_normal((dy, dx))
    a = rng.standard_normal(dy)
    q = rng.uniform(0.1, 2.0, dy)
    return LinearGaussianConditional.with_diagonal_noise(A, a, q)


def random_kernel(rng, n_components=None, spatial_dim=1):
    """Random sum-separable kernel with amplitudes summing to ~1."""
    P = int(n_components if n_components is not None else rng.integers(1, 3))
    weights = rng.uniform(0.3, 1.0, P)
    weights /= weights.sum()
    comps = []
    for p in range(P):
        ils = rng.uniform(0.4, 2.2, spatial_dim)
        spatial = ExponentiatedQuadratic(ils, amplitude=float(weights[p]))
        order = int(rng.choice([1, 3, 5]))
        temporal = TemporalMatern(order=order, lengthscale=float(rng.uniform(0.5, 2.0)))
        comps.append((spatial, temporal))
    return SumSeparableKernel(tuple(comps))


def random_grouped_data(rng, kernel, n_times=None, max_per_time=5, allow_empty=True):
    """Random observation buckets at well-separated sorted times in [0, 4].

    A minimum time separation keeps the dense pseudo-point gram of the
    reference implementations numerically resolvable (the structured route
    never assembles it and has no such sensitivity).
    """
    T = int(n_times if n_times is not None else rng.integers(2, 7))
    times = np.sort(rng.uniform(0.0, 4.0, T))
    while T > 1 and np.diff(times).min() < 0.25:
        times = np.sort(rng.uniform(0.0, 4.0, T))
    locs, vals, noise = [], [], []
    for _ in range(T):
        low = 0 if allow_empty else 1
        n_t = int(rng.integers(low, max_per_time + 1))
        locs.append(rng.uniform(0.0, 3.0, (n_t, kernel.spatial_ndim)))
        vals.append(rng.standard_normal(n_t))
        noise.append(rng.uniform(0.05, 0.5, n_t))
    if not allow_empty or all(v.size == 0 for v in vals):
        # guarantee at least one observation overall
        locs[0] = rng.uniform(0.0, 3.0, (2, kernel.spatial_ndim))
        vals[0] = rng.standard_normal(2)
        noise[0] = rng.uniform(0.05, 0.5, 2)
    return TimeGroupedData(times=times, locations=locs, values=vals, noise_vars=noise)


def random_pseudo(rng, kernel, data, m_tau=None):
    M = int(m_tau if m_tau is not None else rng.integers(1, 5))
    z = rng.uniform(0.0, 3.0, (M, kernel.spatial_ndim))
    while M > 1 and _min_pairwise(z) < 0.1:
        z = rng.uniform(0.0, 3.0, (M, kernel.spatial_ndim))
    return PseudoInputs(locations=z, times=data.times)


def _min_pairwise(z):
    d = np.linalg.norm(z[:, None, :] - z[None, :, :], axis=2)
    return d[np.triu_indices(z.shape[0], k=1)].min()


def flatten(data: TimeGroupedData):
    """Flat (t, X, y, noise) arrays for handing to the dense problems."""
    t = np.concatenate(
        [np.full(v.shape[0], data.times[i]) for i, v in enumerate(data.values)]
    ) if data.n_times else np.zeros(0)
    X = (
        np.vstack([X for X in data.locations])
        if data.n_times
        else np.zeros((0, 1))
    )
    y = np.concatenate(data.values) if data.n_times else np.zeros(0)
    s = np.concatenate(data.noise_vars) if data.n_times else np.zeros(0)
    return t, X, y, s
