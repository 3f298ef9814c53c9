"""Batch command line: synthesise, fit, predict, evaluate, benchmark.

Subcommands
-----------
``stgp synth``    write a synthetic dataset CSV for one of the two scenarios
``stgp fit``      optimise kernel/noise parameters on a dataset
``stgp predict``  posterior marginals at query points under fitted parameters
``stgp elbo``     evaluate the collapsed bound for a dataset
``stgp bench``    wall-time the structured bound against the dense reference

Datasets are CSV with header ``time,x1,...,xd,value,noise_var``; lines
starting with ``#`` are ignored.  Rows need not be sorted: ingestion buckets
rows by exact time equality (no tolerance) and sorts the buckets.  Values are
standardised to zero mean / unit variance at ingestion; the offsets are
stored in the parameter file so predictions are reported in original units.

Configuration files are UTF-8 ``key = value`` lines with dotted keys; every
key has a default, so an empty (or absent) config is valid.  Exit codes:
0 success, 1 inference failure, 2 data error, 3 query error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import scenarios
from .errors import QueryTimeNotOnGrid, StgpError
from .kernels import ExponentiatedQuadratic, SumSeparableKernel, TemporalMatern, separable
from .oracle import DenseGpProblem, exact_lml
from .pseudopoint import PseudoInputs, TimeGroupedData, elbo, predict
from .training import (
    FitConfig,
    KernelLayout,
    build_model,
    fit,
    initial_parameters,
)

_ORDERS = {"matern12": 1, "matern32": 3, "matern52": 5}
_ORDER_NAMES = {v: k for k, v in _ORDERS.items()}


class DataFormatError(Exception):
    """Malformed dataset, config or query input."""


# ---------------------------------------------------------------------------
# configuration


def parse_keyvalues(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DataFormatError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


@dataclass
class RunConfig:
    """Everything a run needs beyond the data itself."""

    orders: tuple[int, ...] = (3,)
    spatial_dim: int = 1
    init_overrides: dict[str, float] = field(default_factory=dict)
    m_tau: int = 20
    alpha: float = 0.0
    seed: int = 0
    fit_max_iters: int = 200
    fit_memory: int = 50
    fit_grad_tol: float = 1e-6
    synth_scenario: str = "irregular"
    synth_t: int = 100
    synth_n_per_time: int = 10
    synth_n_sites: int = 50
    synth_n_missing: int = 5
    synth_noise_var: float = 0.1
    synth_space: tuple[float, float] = (0.0, 10.0)
    synth_temporal: str = "matern32"
    synth_time_lengthscale: float = 1.2
    synth_space_lengthscale: float = 0.9
    synth_amplitude: float = 0.92
    bench_n_per_time: int = 10
    bench_threads: int = 1

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        cfg = cls()
        if path is None:
            return cfg
        raw = parse_keyvalues(path)
        count = int(raw.pop("kernel.count", "1"))
        orders = []
        for p in range(count):
            name = raw.pop(f"kernel.{p}.temporal", "matern32")
            if name not in _ORDERS:
                raise DataFormatError(f"kernel.{p}.temporal must be one of {sorted(_ORDERS)}")
            orders.append(_ORDERS[name])
        cfg.orders = tuple(orders)
        cfg.spatial_dim = int(raw.pop("kernel.spatial_dim", "1"))
        simple = {
            "pseudo.m_tau": ("m_tau", int),
            "pseudo.alpha": ("alpha", float),
            "seed": ("seed", int),
            "fit.max_iters": ("fit_max_iters", int),
            "fit.memory": ("fit_memory", int),
            "fit.grad_tol": ("fit_grad_tol", float),
            "synth.scenario": ("synth_scenario", str),
            "synth.t": ("synth_t", int),
            "synth.n_per_time": ("synth_n_per_time", int),
            "synth.n_sites": ("synth_n_sites", int),
            "synth.n_missing": ("synth_n_missing", int),
            "synth.noise_var": ("synth_noise_var", float),
            "synth.temporal": ("synth_temporal", str),
            "synth.time_lengthscale": ("synth_time_lengthscale", float),
            "synth.space_lengthscale": ("synth_space_lengthscale", float),
            "synth.amplitude": ("synth_amplitude", float),
            "bench.n_per_time": ("bench_n_per_time", int),
            "bench.threads": ("bench_threads", int),
        }
        for key, (attr, conv) in simple.items():
            if key in raw:
                setattr(cfg, attr, conv(raw.pop(key)))
        lo = float(raw.pop("synth.space_lo", cfg.synth_space[0]))
        hi = float(raw.pop("synth.space_hi", cfg.synth_space[1]))
        cfg.synth_space = (lo, hi)
        for key in list(raw):
            if key.startswith("init."):
                cfg.init_overrides[key[len("init."):]] = float(raw.pop(key))
        if raw:
            raise DataFormatError(f"unknown config keys: {sorted(raw)}")
        if cfg.m_tau < 1:
            raise DataFormatError("pseudo.m_tau must be at least 1")
        return cfg

    @property
    def layout(self) -> KernelLayout:
        return KernelLayout(orders=self.orders, spatial_dim=self.spatial_dim)

    def synth_kernel(self) -> SumSeparableKernel:
        if self.synth_temporal not in _ORDERS:
            raise DataFormatError(f"synth.temporal must be one of {sorted(_ORDERS)}")
        spatial = ExponentiatedQuadratic(
            np.full(self.spatial_dim, 1.0 / self.synth_space_lengthscale),
            amplitude=self.synth_amplitude,
        )
        temporal = TemporalMatern(
            order=_ORDERS[self.synth_temporal], lengthscale=self.synth_time_lengthscale
        )
        return separable(spatial, temporal)


# ---------------------------------------------------------------------------
# dataset and parameter file I/O


def write_dataset(path: str | Path, data: scenarios.SyntheticData, header_note: str) -> None:
    dim = data.X.shape[1]
    cols = ["time"] + [f"x{i + 1}" for i in range(dim)] + ["value", "noise_var"]
    lines = [f"# {header_note}", ",".join(cols)]
    for i in range(data.t.shape[0]):
        row = [repr(float(data.t[i]))]
        row += [repr(float(v)) for v in data.X[i]]
        row += [repr(float(data.y[i])), repr(float(data.noise_var[i]))]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_dataset(path: str | Path) -> scenarios.SyntheticData:
    """Parse a dataset CSV; raises :class:`DataFormatError` with the row number."""
    t, rows, values, noise = [], [], [], []
    header: list[str] | None = None
    dim = 0
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = [p.strip() for p in stripped.split(",")]
        if header is None:
            header = parts
            dim = len(header) - 3
            if dim < 1 or header[0] != "time" or header[-2:] != ["value", "noise_var"]:
                raise DataFormatError(
                    f"{path}:{lineno}: header must be time,x1..xd,value,noise_var"
                )
            continue
        if len(parts) != len(header):
            raise DataFormatError(
                f"{path}:{lineno}: expected {len(header)} fields, got {len(parts)}"
            )
        try:
            numbers = [float(p) for p in parts]
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
        t.append(numbers[0])
        rows.append(numbers[1 : 1 + dim])
        values.append(numbers[-2])
        noise.append(numbers[-1])
    if header is None:
        raise DataFormatError(f"{path}: empty dataset")
    return scenarios.SyntheticData(
        t=np.array(t),
        X=np.array(rows).reshape(len(rows), dim),
        y=np.array(values),
        noise_var=np.array(noise),
    )


def write_params(
    path: str | Path,
    layout: KernelLayout,
    values: dict[str, float],
    standardize: tuple[float, float],
    pseudo: PseudoInputs,
) -> None:
    lines = ["# fitted parameters"]
    lines.append(f"layout.count = {layout.n_components}")
    for p, order in enumerate(layout.orders):
        lines.append(f"layout.{p}.temporal = {_ORDER_NAMES[order]}")
    lines.append(f"layout.spatial_dim = {layout.spatial_dim}")
    for name, value in values.items():
        lines.append(f"param.{name} = {float(value)!r}")
    lines.append(f"standardize.mean = {float(standardize[0])!r}")
    lines.append(f"standardize.std = {float(standardize[1])!r}")
    for i, loc in enumerate(pseudo.locations):
        lines.append(f"pseudo.{i} = " + ",".join(repr(float(v)) for v in loc))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_params(path: str | Path):
    raw = parse_keyvalues(path)
    count = int(raw.pop("layout.count"))
    orders = tuple(_ORDERS[raw.pop(f"layout.{p}.temporal")] for p in range(count))
    layout = KernelLayout(orders=orders, spatial_dim=int(raw.pop("layout.spatial_dim")))
    values: dict[str, float] = {}
    pseudo_rows: dict[int, list[float]] = {}
    for key, val in raw.items():
        if key.startswith("param."):
            values[key[len("param."):]] = float(val)
        elif key.startswith("pseudo."):
            pseudo_rows[int(key[len("pseudo."):])] = [float(v) for v in val.split(",")]
        elif key in ("standardize.mean", "standardize.std"):
            values[key] = float(val)
        else:
            raise DataFormatError(f"{path}: unknown parameter key {key!r}")
    standardize = (values.pop("standardize.mean"), values.pop("standardize.std"))
    locations = np.array([pseudo_rows[i] for i in sorted(pseudo_rows)])
    return layout, values, standardize, locations


def model_from_values(layout: KernelLayout, values: dict[str, float]):
    """Kernel and noise variance directly from constrained values (no bounds)."""
    components = []
    for p, order in enumerate(layout.orders):
        ils = np.array(
            [values[f"c{p}.space_scale.{d}"] for d in range(layout.spatial_dim)]
        )
        spatial = ExponentiatedQuadratic(ils, amplitude=values[f"c{p}.amplitude"])
        temporal = TemporalMatern(order=order, lengthscale=1.0 / values[f"c{p}.time_scale"])
        components.append((spatial, temporal))
    return SumSeparableKernel(tuple(components)), float(values["noise_var"])


def standardize_values(y: np.ndarray) -> tuple[np.ndarray, float, float]:
    mu = float(y.mean()) if y.size else 0.0
    sd = float(y.std()) if y.size else 1.0
    if sd == 0.0:
        sd = 1.0
    return (y - mu) / sd, mu, sd


def _bucket(data: scenarios.SyntheticData, y: np.ndarray) -> TimeGroupedData:
    return TimeGroupedData.from_points(data.t, data.X, y, data.noise_var)


def _pseudo_for(data: TimeGroupedData, locations: np.ndarray) -> PseudoInputs:
    return PseudoInputs(locations=locations, times=data.times)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    scenario = args.scenario or cfg.synth_scenario
    T = args.T or cfg.synth_t
    n_per_time = args.n_per_time or cfg.synth_n_per_time
    kernel = cfg.synth_kernel()
    if scenario == "irregular":
        data = scenarios.make_irregular(
            T,
            n_per_time=n_per_time,
            seed=cfg.seed,
            kernel=kernel,
            noise_var=cfg.synth_noise_var,
            space=cfg.synth_space,
        )
    elif scenario == "grid-missing":
        data = scenarios.make_grid_missing(
            T,
            n_sites=cfg.synth_n_sites,
            n_missing=cfg.synth_n_missing,
            seed=cfg.seed,
            kernel=kernel,
            noise_var=cfg.synth_noise_var,
            space=cfg.synth_space,
        )
    else:
        raise DataFormatError(f"unknown scenario {scenario!r}")
    note = (
        f"scenario={scenario} T={T} n_per_time={n_per_time} m_tau={args.m_tau or cfg.m_tau} "
        f"seed={cfg.seed} noise_var={cfg.synth_noise_var}"
    )
    write_dataset(args.out, data, note)
    print(f"wrote {data.t.shape[0]} rows to {args.out}")
    return 0


def cmd_fit(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.m_tau is not None:
        cfg.m_tau = args.m_tau
    flat = read_dataset(args.data)
    y_std, mu, sd = standardize_values(flat.y)
    data = _bucket(flat, y_std)
    if args.init_params:
        # warm restart: reuse a previous fit's layout, values, offsets and
        # pseudo-inputs verbatim
        layout, values, (mu, sd), centers = read_params(args.init_params)
        y_std = (flat.y - mu) / sd
        data = _bucket(flat, y_std)
        init = initial_parameters(layout, values)
    else:
        layout = cfg.layout
        centers = scenarios.kmeans(np.vstack(data.locations), cfg.m_tau, seed=cfg.seed)
        init = initial_parameters(layout, cfg.init_overrides)
    pseudo = _pseudo_for(data, centers)
    result = fit(
        data,
        pseudo,
        init,
        layout,
        FitConfig(
            memory=cfg.fit_memory,
            max_iters=cfg.fit_max_iters,
            grad_tol=cfg.fit_grad_tol,
        ),
    )
    write_params(args.out, layout, result.params.value_dict(), (mu, sd), pseudo)
    trace_path = args.trace or (str(args.out) + ".trace.csv")
    lines = ["iter,objective,grad_norm"]
    for row in result.trace:
        lines.append(f"{int(row[0])},{float(row[1])!r},{float(row[2])!r}")
    Path(trace_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    status = "converged" if result.converged else result.message
    print(
        f"fit finished ({status}); final objective {result.trace[-1, 1]:.6f}; "
        f"params -> {args.out}, trace -> {trace_path}"
    )
    return 0


def read_queries(path: str | Path, dim: int) -> tuple[np.ndarray, np.ndarray]:
    times, rows = [], []
    header: list[str] | None = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = [p.strip() for p in stripped.split(",")]
        if header is None:
            header = parts
            if header[0] != "time" or len(header) != dim + 1:
                raise DataFormatError(f"{path}:{lineno}: header must be time,x1..x{dim}")
            continue
        if len(parts) != dim + 1:
            raise DataFormatError(f"{path}:{lineno}: expected {dim + 1} fields")
        try:
            numbers = [float(p) for p in parts]
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
        times.append(numbers[0])
        rows.append(numbers[1:])
    if header is None:
        raise DataFormatError(f"{path}: empty query file")
    return np.array(times), np.array(rows).reshape(len(rows), dim)


def cmd_predict(args) -> int:
    layout, values, (mu, sd), locations = read_params(args.params)
    kernel, noise_var = model_from_values(layout, values)
    flat = read_dataset(args.data)
    y_std = (flat.y - mu) / sd
    data = _bucket(flat, y_std).with_noise(noise_var)
    pseudo = _pseudo_for(data, locations)
    tq, Xq = read_queries(args.queries, layout.spatial_dim)
    cols = ["time"] + [f"x{i + 1}" for i in range(layout.spatial_dim)] + ["mean", "variance"]
    lines = [",".join(cols)]
    if tq.size:
        mean, var = predict(kernel, pseudo, data, Xq, tq)
        mean = mean * sd + mu
        var = var * sd * sd
        for i in range(tq.shape[0]):
            row = [repr(float(tq[i]))]
            row += [repr(float(v)) for v in Xq[i]]
            row += [repr(float(mean[i])), repr(float(var[i]))]
            lines.append(",".join(row))
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {tq.shape[0]} predictions to {args.out}")
    return 0


def cmd_elbo(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.m_tau is not None:
        cfg.m_tau = args.m_tau
    if args.seed is not None:
        cfg.seed = args.seed
    flat = read_dataset(args.data)
    y_std, mu, sd = standardize_values(flat.y)
    if args.params:
        layout, values, (mu, sd), locations = read_params(args.params)
        kernel, noise_var = model_from_values(layout, values)
        y_std = (flat.y - mu) / sd
        data = _bucket(flat, y_std).with_noise(noise_var)
        pseudo = _pseudo_for(data, locations)
    else:
        layout = cfg.layout
        kernel, noise_var = build_model(initial_parameters(layout, cfg.init_overrides), layout)
        data = _bucket(flat, y_std).with_noise(noise_var)
        centers = scenarios.kmeans(np.vstack(data.locations), cfg.m_tau, seed=cfg.seed)
        pseudo = _pseudo_for(data, centers)
    value = elbo(kernel, pseudo, data)
    per_point = value / max(data.n_obs, 1)
    print(f"elbo = {value!r} ({per_point!r} per observation, standardised scale)")
    if args.out:
        Path(args.out).write_text(
            json.dumps({"elbo": value, "n_obs": data.n_obs, "per_obs": per_point}) + "\n",
            encoding="utf-8",
        )
    return 0


def _thread_limit(n: int):
    if n < 1:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=n)
    except ImportError:  # pragma: no cover - threadpoolctl ships with scipy
        return contextlib.nullcontext()


ORACLE_POINT_LIMIT = 3000


def cmd_bench(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.m_tau is not None:
        cfg.m_tau = args.m_tau
    t_list = [int(v) for v in args.t_list.split(",")]
    methods = ("structured", "oracle") if args.method == "both" else (args.method,)
    kernel, noise_var = build_model(
        initial_parameters(cfg.layout, cfg.init_overrides), cfg.layout
    )
    rng = np.random.default_rng(cfg.seed)
    results = []
    with _thread_limit(cfg.bench_threads):
        for T in t_list:
            n = T * cfg.bench_n_per_time
            # values are irrelevant to wall time; draw them cheaply
            times = np.repeat(np.arange(1.0, T + 1.0), cfg.bench_n_per_time)
            X = rng.uniform(0.0, 10.0, size=(n, cfg.spatial_dim))
            y = rng.standard_normal(n)
            data = TimeGroupedData.from_points(times, X, y, noise_var)
            z_cols = np.linspace(0.0, 10.0, cfg.m_tau)
            z = PseudoInputs(
                locations=np.tile(z_cols[:, None], (1, cfg.spatial_dim)),
                times=data.times,
            )
            for method in methods:
                if method == "oracle":
                    if n > ORACLE_POINT_LIMIT:
                        raise DataFormatError(
                            f"oracle refuses {n} points (> {ORACLE_POINT_LIMIT}); "
                            "shrink the T list or per-time count"
                        )
                    problem = DenseGpProblem(kernel, X, times, y, noise_var)
                    task = lambda: exact_lml(problem)  # noqa: E731
                else:
                    task = lambda: elbo(kernel, z, data)  # noqa: E731
                task()  # warm-up, discarded
                elapsed = []
                for _ in range(args.repeats):
                    start = time.perf_counter()
                    task()
                    elapsed.append(time.perf_counter() - start)
                results.append(
                    {
                        "method": method,
                        "T": T,
                        "M_tau": cfg.m_tau,
                        "seconds": min(elapsed),
                    }
                )
                print(f"{method:10s} T={T:6d} {min(elapsed):.6f}s")
    payload = json.dumps(results, indent=2)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    else:
        print(payload)
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stgp",
        description="Spatio-temporal GP regression with pseudo-points and Kalman filtering",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key=value configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--scenario", choices=["irregular", "grid-missing"], default=None)
    p.add_argument("--T", type=int, default=None, help="number of time points")
    p.add_argument("--n-per-time", type=int, default=None, dest="n_per_time")
    p.add_argument("--m-tau", type=int, default=None, dest="m_tau",
                   help="recorded in the header comment for provenance")
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="fit kernel and noise parameters")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--m-tau", type=int, default=None, dest="m_tau")
    p.add_argument("--init-params", default=None, dest="init_params",
                   help="warm-restart from a previous parameter file")
    p.add_argument("--out", required=True, help="parameter file to write")
    p.add_argument("--trace", default=None, help="objective trace CSV (default <out>.trace.csv)")

    p = sub.add_parser("predict", help="posterior marginals at query points")
    common(p)
    p.add_argument("--params", required=True, help="parameter file from fit")
    p.add_argument("--data", required=True)
    p.add_argument("--queries", required=True, help="CSV with header time,x1..xd")
    p.add_argument("--out", required=True)

    p = sub.add_parser("elbo", help="evaluate the collapsed bound on a dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--params", default=None, help="optional parameter file from fit")
    p.add_argument("--m-tau", type=int, default=None, dest="m_tau")
    p.add_argument("--out", default=None, help="optional JSON output path")

    p = sub.add_parser("bench", help="time the structured bound vs the dense reference")
    common(p)
    p.add_argument("--t-list", required=True, help="comma-separated T values, e.g. 256,512,1024")
    p.add_argument("--method", choices=["structured", "oracle", "both"], default="both")
    p.add_argument("--m-tau", type=int, default=None, dest="m_tau")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", default=None, help="JSON output path (default: stdout)")

    return parser


_HANDLERS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "elbo": cmd_elbo,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except QueryTimeNotOnGrid as exc:
        print(f"query error: {exc}", file=sys.stderr)
        return 3
    except (DataFormatError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except StgpError as exc:
        print(f"inference failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
