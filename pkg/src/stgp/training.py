"""Hyperparameter optimisation of the collapsed bound.

Parameters live in an unconstrained space: positive quantities through a log
transform, the observation noise variance through a logit rescaled to
[1e-2, 2] (reasonable once the data are standardised to unit variance), and
anything else through the identity.  The optimiser is a limited-memory
quasi-Newton loop with Armijo backtracking; gradients come from central
finite differences, which is entirely adequate for the handful of kernel
parameters involved and keeps the objective the single source of truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import StgpError
from .kernels import ExponentiatedQuadratic, SumSeparableKernel, TemporalMatern
from .pseudopoint import PseudoInputs, TimeGroupedData, elbo

__all__ = [
    "Transform",
    "ParameterVector",
    "KernelLayout",
    "initial_parameters",
    "build_model",
    "objective",
    "gradient",
    "finite_difference_gradient",
    "fit",
    "FitConfig",
    "FitResult",
]

_RAW_CLAMP = 30.0
_PENALTY = 1e12

# Default initialisations: inverse time scale, inverse space scale, amplitude
# per component, and the shared noise variance.
_SEPARABLE_INIT = {"time_scale": (1e-2,), "space_scale": (1.0,), "amplitude": (1.0,)}
_SUM_SEPARABLE_INIT = {
    "time_scale": (1e-3, 1e-1),
    "space_scale": (1.0, 5.0),
    "amplitude": (0.7, 0.3),
}
NOISE_BOUNDS = (1e-2, 2.0)
NOISE_INIT = 0.5


@dataclass(frozen=True)
class Transform:
    """Bijection between an unconstrained real and a constrained parameter."""

    kind: str  # "log" | "logit" | "identity"
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("log", "logit", "identity"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == "logit" and not self.hi > self.lo:
            raise ValueError("logit transform needs hi > lo")

    def constrain(self, raw: float) -> float:
        raw = float(np.clip(raw, -_RAW_CLAMP, _RAW_CLAMP))
        if self.kind == "log":
            return math.exp(raw)
        if self.kind == "logit":
            return self.lo + (self.hi - self.lo) / (1.0 + math.exp(-raw))
        return raw

    def unconstrain(self, value: float) -> float:
        if self.kind == "log":
            raw = math.log(value)
        elif self.kind == "logit":
            u = (value - self.lo) / (self.hi - self.lo)
            if not 0.0 < u < 1.0:
                raise ValueError(f"value {value} outside logit range ({self.lo}, {self.hi})")
            raw = math.log(u / (1.0 - u))
        else:
            raw = float(value)
        return float(np.clip(raw, -_RAW_CLAMP, _RAW_CLAMP))


@dataclass(frozen=True)
class ParameterVector:
    """Named unconstrained parameters with per-entry transforms."""

    names: tuple[str, ...]
    transforms: tuple[Transform, ...]
    raw: np.ndarray

    def __post_init__(self):
        raw = np.atleast_1d(np.asarray(self.raw, dtype=float))
        if not (len(self.names) == len(self.transforms) == raw.shape[0]):
            raise ValueError("names, transforms and raw values must have equal length")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "transforms", tuple(self.transforms))
        object.__setattr__(self, "raw", raw)

    @classmethod
    def from_values(cls, names, transforms, values) -> "ParameterVector":
        raw = np.array([tr.unconstrain(v) for tr, v in zip(transforms, values)])
        return cls(tuple(names), tuple(transforms), raw)

    @property
    def size(self) -> int:
        return self.raw.shape[0]

    def values(self) -> np.ndarray:
        return np.array([tr.constrain(r) for tr, r in zip(self.transforms, self.raw)])

    def value_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values()))

    def with_raw(self, raw: np.ndarray) -> "ParameterVector":
        return replace(self, raw=np.asarray(raw, dtype=float))


@dataclass(frozen=True)
class KernelLayout:
    """Shape of the kernel being fitted: one Matern order per component."""

    orders: tuple[int, ...]
    spatial_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "orders", tuple(int(o) for o in self.orders))
        if not self.orders:
            raise ValueError("at least one component is required")

    @property
    def n_components(self) -> int:
        return len(self.orders)


def initial_parameters(
    layout: KernelLayout, overrides: dict[str, float] | None = None
) -> ParameterVector:
    """Default starting point for :func:`fit`.

    Separable and two-component models get their own standard inits; further
    components reuse the last entry.  ``overrides`` replaces individual named
    values.
    """
    defaults = _SUM_SEPARABLE_INIT if layout.n_components > 1 else _SEPARABLE_INIT

    def pick(seq, p):
        return seq[min(p, len(seq) - 1)]

    names: list[str] = []
    transforms: list[Transform] = []
    values: list[float] = []
    for p in range(layout.n_components):
        names.append(f"c{p}.time_scale")
        transforms.append(Transform("log"))
        values.append(pick(defaults["time_scale"], p))
        for d in range(layout.spatial_dim):
            names.append(f"c{p}.space_scale.{d}")
            transforms.append(Transform("log"))
            values.append(pick(defaults["space_scale"], p))
        names.append(f"c{p}.amplitude")
        transforms.append(Transform("log"))
        values.append(pick(defaults["amplitude"], p))
    names.append("noise_var")
    transforms.append(Transform("logit", *NOISE_BOUNDS))
    values.append(NOISE_INIT)
    if overrides:
        value_map = dict(zip(names, values))
        for key, val in overrides.items():
            if key not in value_map:
                raise KeyError(f"unknown parameter {key!r}; known: {names}")
            value_map[key] = float(val)
        values = [value_map[n] for n in names]
    return ParameterVector.from_values(names, transforms, values)


def build_model(
    params: ParameterVector, layout: KernelLayout
) -> tuple[SumSeparableKernel, float]:
    """Kernel and noise variance encoded by a parameter vector.

    Scales are stored as inverse lengthscales; the temporal kernel's
    lengthscale is the reciprocal of its scale parameter.
    """
    vals = params.value_dict()
    components = []
    for p, order in enumerate(layout.orders):
        ils = np.array([vals[f"c{p}.space_scale.{d}"] for d in range(layout.spatial_dim)])
        spatial = ExponentiatedQuadratic(ils, amplitude=vals[f"c{p}.amplitude"])
        temporal = TemporalMatern(order=order, lengthscale=1.0 / vals[f"c{p}.time_scale"])
        components.append((spatial, temporal))
    return SumSeparableKernel(tuple(components)), float(vals["noise_var"])


def objective(
    params: ParameterVector,
    data: TimeGroupedData,
    pseudo: PseudoInputs,
    layout: KernelLayout,
) -> float:
    """Negative collapsed bound; inference failures become a large finite penalty."""
    try:
        kernel, noise_var = build_model(params, layout)
        return -elbo(kernel, pseudo, data.with_noise(noise_var))
    except (StgpError, FloatingPointError, ValueError):
        return _PENALTY


def finite_difference_gradient(fn, raw: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of ``fn`` with per-coordinate step ``step*(1+|x_i|)``."""
    raw = np.asarray(raw, dtype=float)
    g = np.empty_like(raw)
    for i in range(raw.shape[0]):
        h = step * (1.0 + abs(raw[i]))
        hi = raw.copy()
        lo = raw.copy()
        hi[i] += h
        lo[i] -= h
        g[i] = (fn(hi) - fn(lo)) / (2.0 * h)
    return g


def gradient(
    params: ParameterVector,
    data: TimeGroupedData,
    pseudo: PseudoInputs,
    layout: KernelLayout,
    step: float = 1e-5,
) -> np.ndarray:
    """Finite-difference gradient of :func:`objective` in the unconstrained space."""

    def fn(raw):
        return objective(params.with_raw(raw), data, pseudo, layout)

    return finite_difference_gradient(fn, params.raw, step=step)


@dataclass(frozen=True)
class FitConfig:
    memory: int = 50
    max_iters: int = 200
    grad_tol: float = 1e-6
    armijo_c: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 40
    fd_step: float = 1e-5


@dataclass(frozen=True)
class FitResult:
    params: ParameterVector
    trace: np.ndarray  # rows of (iteration, objective, gradient 2-norm)
    converged: bool
    message: str


def fit(
    data: TimeGroupedData,
    pseudo: PseudoInputs,
    init: ParameterVector,
    layout: KernelLayout,
    config: FitConfig = FitConfig(),
) -> FitResult:
    """Minimise the negative bound with limited-memory quasi-Newton steps.

    The accepted-step objective trace is non-increasing by construction.  On a
    failed line search the best parameters seen so far are returned with
    ``converged=False`` and a ``line search failure`` message.
    """

    def f(raw):
        return objective(init.with_raw(raw), data, pseudo, layout)

    def g(raw):
        return finite_difference_gradient(f, raw, step=config.fd_step)

    return _lbfgs(f, g, init, config)


def _lbfgs(f, g, init: ParameterVector, config: FitConfig) -> FitResult:
    x = init.raw.copy()
    fx = f(x)
    gx = g(x)
    trace = [(0, fx, float(np.linalg.norm(gx)))]
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    converged = False
    message = "max iterations reached"
    for it in range(1, config.max_iters + 1):
        if np.linalg.norm(gx) <= config.grad_tol:
            converged = True
            message = "gradient norm below tolerance"
            break
        d = -_two_loop(gx, s_hist, y_hist)
        slope = float(d @ gx)
        if not np.isfinite(slope) or slope >= 0.0:
            d = -gx
            slope = float(d @ gx)
        step = 1.0
        accepted = None
        for _ in range(config.max_backtracks + 1):
            candidate = x + step * d
            fc = f(candidate)
            if np.isfinite(fc) and fc <= fx + config.armijo_c * step * slope:
                accepted = (candidate, fc)
                break
            step *= config.shrink
        if accepted is None:
            message = "line search failure"
            break
        x_new, f_new = accepted
        g_new = g(x_new)
        s = x_new - x
        ydiff = g_new - gx
        if float(s @ ydiff) > 1e-12:
            s_hist.append(s)
            y_hist.append(ydiff)
            if len(s_hist) > config.memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x, fx, gx = x_new, f_new, g_new
        trace.append((it, fx, float(np.linalg.norm(gx))))
    else:
        if np.linalg.norm(gx) <= config.grad_tol:
            converged = True
            message = "gradient norm below tolerance"
    return FitResult(
        params=init.with_raw(x),
        trace=np.array(trace, dtype=float),
        converged=converged,
        message=message,
    )


def _two_loop(gx: np.ndarray, s_hist, y_hist) -> np.ndarray:
    """Standard two-loop recursion for the L-BFGS direction H g."""
    q = gx.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        alphas.append((a, rho, s, y))
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)
    for a, rho, s, y in reversed(alphas):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q
