import math
import time

import numpy as np
import pytest

from stgp import (
    CholeskyFailure,
    Gaussian,
    Lgssm,
    LinearGaussianConditional,
    TimeStep,
)
from helpers import (
    chain_lml_oracle,
    chain_smoother_oracle,
    chain_state_joint,
    random_diag_obs,
    random_spd,
)

LGC = LinearGaussianConditional


def identity_transition(dim):
    return LGC(np.eye(dim), np.zeros(dim), np.zeros((dim, dim)))


def empty_emission(dim):
    return LGC.with_diagonal_noise(np.zeros((0, dim)), np.zeros(0), np.zeros(0))


def random_model(rng, T=5, dim=4, obs_per_step=3, observe_all=True, readout=False):
    steps = []
    x0 = Gaussian(rng.standard_normal(dim), random_spd(rng, dim))
    for t in range(T):
        if t == 0:
            transition = identity_transition(dim)
        else:
            A = rng.standard_normal((dim, dim)) * 0.5
            transition = LGC(A, rng.standard_normal(dim), random_spd(rng, dim, 0.4))
        n_t = obs_per_step if (observe_all or rng.random() < 0.6) else 0
        if n_t:
            emission = random_diag_obs(rng, dim, n_t)
            y = rng.standard_normal(n_t)
        else:
            emission = empty_emission(dim)
            y = np.zeros(0)
        steps.append(
            TimeStep(
                transition=transition,
                emission=emission,
                y=y,
                readout=np.eye(dim)[:2] if readout else None,
            )
        )
    return Lgssm(x0=x0, steps=tuple(steps))


def test_single_step_no_observation():
    x0 = Gaussian(np.array([1.0, -2.0]), np.diag([0.5, 2.0]))
    model = Lgssm(
        x0=x0,
        steps=(TimeStep(identity_transition(2), empty_emission(2), np.zeros(0)),),
    )
    lml, filtered = model.filter()
    assert lml == 0.0
    assert np.allclose(filtered[0].mean, x0.mean)
    assert np.allclose(filtered[0].cov, x0.cov)


def test_scalar_random_walk_matches_conjugate_form():
    # x1 = x0 + w, w ~ N(0, q); y = x1 + e, e ~ N(0, s)
    q, s, y = 0.3, 0.2, 0.7
    x0 = Gaussian([0.0], [[1.0]])
    steps = (
        TimeStep(
            LGC([[1.0]], [0.0], [[q]]),
            LGC.with_diagonal_noise([[1.0]], [0.0], [s]),
            [y],
        ),
    )
    lml, filtered = Lgssm(x0=x0, steps=steps).filter()
    prior_var = 1.0 + q
    assert lml == pytest.approx(
        -0.5 * (math.log(2 * math.pi * (prior_var + s)) + y * y / (prior_var + s)),
        abs=1e-12,
    )
    post_var = 1.0 / (1.0 / prior_var + 1.0 / s)
    assert filtered[0].cov[0, 0] == pytest.approx(post_var, abs=1e-12)
    assert filtered[0].mean[0] == pytest.approx(post_var * y / s, abs=1e-12)


def test_filter_lml_matches_dense_joint_oracle():
    rng = np.random.default_rng(0)
    model = random_model(rng, T=5, dim=4)
    lml, _ = model.filter()
    assert lml == pytest.approx(chain_lml_oracle(model), abs=1e-9)


def test_filter_lml_oracle_agreement_many_models():
    rng = np.random.default_rng(1)
    for _ in range(100):
        T = int(rng.integers(1, 9))
        dim = int(rng.integers(1, 7))
        model = random_model(rng, T=T, dim=dim, obs_per_step=int(rng.integers(1, 4)),
                             observe_all=False)
        lml, _ = model.filter()
        assert lml == pytest.approx(chain_lml_oracle(model), abs=1e-8)


def test_smoother_matches_dense_conditioning():
    rng = np.random.default_rng(2)
    model = random_model(rng, T=5, dim=3)
    marginals = model.smooth()
    for got, want in zip(marginals.states, chain_smoother_oracle(model)):
        assert np.allclose(got.mean, want.mean, atol=1e-8)
        assert np.allclose(got.cov, want.cov, atol=1e-8)


def test_smoother_without_observations_returns_prior_marginals():
    rng = np.random.default_rng(3)
    model = random_model(rng, T=4, dim=3, obs_per_step=0, observe_all=True)
    # strip all observations
    steps = tuple(
        TimeStep(s.transition, empty_emission(3), np.zeros(0)) for s in model.steps
    )
    model = Lgssm(x0=model.x0, steps=steps)
    marginals = model.smooth()
    mean_joint, cov_joint = chain_state_joint(model)
    offset = 0
    for g in marginals.states:
        sl = slice(offset, offset + 3)
        assert np.allclose(g.mean, mean_joint[sl], atol=1e-10)
        assert np.allclose(g.cov, cov_joint[sl, sl], atol=1e-10)
        offset += 3


def test_final_smoothed_equals_final_filtered():
    rng = np.random.default_rng(4)
    model = random_model(rng, T=4, dim=3, observe_all=False)
    # observation only at the final step
    steps = list(model.steps)
    for t in range(3):
        steps[t] = TimeStep(steps[t].transition, empty_emission(3), np.zeros(0))
    model = Lgssm(x0=model.x0, steps=tuple(steps))
    _, filtered = model.filter()
    marginals = model.smooth()
    assert np.allclose(marginals.states[-1].mean, filtered[-1].mean, atol=1e-12)
    assert np.allclose(marginals.states[-1].cov, filtered[-1].cov, atol=1e-12)


def test_smoothing_only_shrinks_variances():
    rng = np.random.default_rng(5)
    model = random_model(rng, T=6, dim=3)
    _, filtered = model.filter()
    marginals = model.smooth()
    for t in range(len(model.steps) - 1):
        assert np.all(
            np.diag(marginals.states[t].cov) <= np.diag(filtered[t].cov) + 1e-10
        )


def test_lml_invariant_under_step_splitting():
    rng = np.random.default_rng(6)
    model = random_model(rng, T=4, dim=3, obs_per_step=4)
    lml, _ = model.filter()
    # split step 2's observations across two steps joined by an identity move
    steps = list(model.steps)
    target = steps[2]
    em = target.emission
    first = TimeStep(
        target.transition,
        LGC.with_diagonal_noise(em.A[:2], em.a[:2], np.diag(em.Q)[:2]),
        target.y[:2],
    )
    second = TimeStep(
        identity_transition(3),
        LGC.with_diagonal_noise(em.A[2:], em.a[2:], np.diag(em.Q)[2:]),
        target.y[2:],
    )
    split_model = Lgssm(x0=model.x0, steps=tuple(steps[:2] + [first, second] + steps[3:]))
    lml_split, _ = split_model.filter()
    assert lml_split == pytest.approx(lml, abs=1e-10)


def test_sampling_is_deterministic_and_respects_zero_noise():
    dim = 2
    A = np.array([[0.9, 0.1], [0.0, 0.8]])
    x0 = Gaussian(np.array([1.0, -1.0]), np.zeros((dim, dim)))
    steps = tuple(
        TimeStep(
            LGC(A, np.zeros(dim), np.zeros((dim, dim))),
            LGC(np.eye(dim), np.zeros(dim), np.zeros((dim, dim))),
            np.zeros(dim),
        )
        for _ in range(4)
    )
    model = Lgssm(x0=x0, steps=steps)
    states, emissions = model.sample(seed=11)
    expected = x0.mean.copy()
    for x, y in zip(states, emissions):
        expected = A @ expected
        assert np.allclose(x, expected, atol=1e-14)
        assert np.allclose(y, expected, atol=1e-14)
    states2, emissions2 = model.sample(seed=11)
    for a, b in zip(states + emissions, states2 + emissions2):
        assert np.array_equal(a, b)


def test_sampled_lag_covariance_matches_analytic():
    # scalar stationary AR(1): lag-1 covariance should be A * Pinf
    a, pinf = 0.75, 1.0
    q = pinf * (1 - a * a)
    x0 = Gaussian([0.0], [[pinf]])
    steps = (
        TimeStep(LGC([[a]], [0.0], [[q]]), empty_emission(1), np.zeros(0)),
    )
    model = Lgssm(x0=x0, steps=steps)
    draws = np.empty((20000, 2))
    for i in range(draws.shape[0]):
        # x0 draw is not returned; reconstruct from the same rng stream
        rng = np.random.default_rng(i)
        x0_draw = rng.standard_normal(1)[0] * math.sqrt(pinf)
        states, _ = model.sample(seed=i)
        draws[i] = (x0_draw, states[0][0])
    got = np.cov(draws.T)[0, 1]
    want = a * pinf
    # standard error of a bivariate-normal covariance estimate
    se = math.sqrt((pinf * pinf + want * want) / draws.shape[0])
    assert abs(got - want) <= 3 * se


def test_cholesky_failure_reports_step_index():
    x0 = Gaussian([0.0], [[0.0]])
    steps = (
        TimeStep(
            identity_transition(1),
            LGC.with_diagonal_noise([[1.0]], [0.0], [0.0]),
            [1.0],
        ),
    )
    with pytest.raises(CholeskyFailure, match="step 0"):
        Lgssm(x0=x0, steps=steps).filter()


def test_filter_runtime_linear_in_chain_length():
    rng = np.random.default_rng(7)

    def build(T):
        return random_model(rng, T=T, dim=4, obs_per_step=2)

    def best_time(model, repeats=3):
        out = []
        for _ in range(repeats):
            start = time.perf_counter()
            model.filter()
            out.append(time.perf_counter() - start)
        return min(out)

    short, long = build(512), build(1024)
    short.filter()  # warm-up
    ratio = best_time(long) / best_time(short)
    assert 1.6 <= ratio <= 2.6, f"doubling T changed runtime by {ratio:.2f}x"


def test_inference_method_flag_is_selectable():
    rng = np.random.default_rng(8)
    base = random_model(rng, T=4, dim=3, obs_per_step=2)
    reference, _ = base.filter()
    for method in ("naive", "low_rank"):
        lml, _ = Lgssm(x0=base.x0, steps=base.steps, inference=method).filter()
        assert lml == pytest.approx(reference, abs=1e-9)
    with pytest.raises(ValueError):
        Lgssm(x0=base.x0, steps=base.steps, inference="bogus")
