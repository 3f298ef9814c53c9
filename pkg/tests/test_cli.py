import json

import numpy as np
import pytest

from stgp.cli import main, read_dataset, read_params, write_params
from stgp.pseudopoint import PseudoInputs, TimeGroupedData
from stgp.oracle import DenseGpProblem, dense_predictive
from stgp.training import KernelLayout, initial_parameters


def run(*argv):
    return main([str(a) for a in argv])


def test_synth_irregular_rows_and_range(tmp_path):
    out = tmp_path / "data.csv"
    assert run("synth", "--scenario", "irregular", "--T", 100, "--n-per-time", 10,
               "--seed", 3, "--out", out) == 0
    data = read_dataset(out)
    assert data.t.shape[0] == 1000
    assert data.X.min() >= 0.0 and data.X.max() <= 10.0
    assert np.unique(data.t).shape[0] == 100


def test_synth_grid_missing_row_count(tmp_path):
    out = tmp_path / "grid.csv"
    assert run("synth", "--scenario", "grid-missing", "--T", 100, "--seed", 1,
               "--out", out) == 0
    data = read_dataset(out)
    assert data.t.shape[0] == 4500  # (50 - 5) per time
    counts = np.unique(data.t, return_counts=True)[1]
    assert np.all(counts == 45)


def test_synth_deterministic_bytes(tmp_path):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    run("synth", "--scenario", "irregular", "--T", 12, "--seed", 7, "--out", a)
    run("synth", "--scenario", "irregular", "--T", 12, "--seed", 7, "--out", b)
    run("synth", "--scenario", "irregular", "--T", 12, "--seed", 8, "--out", c)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_fit_zero_iterations_keeps_init(tmp_path):
    data_path = tmp_path / "data.csv"
    run("synth", "--scenario", "irregular", "--T", 6, "--n-per-time", 4,
        "--seed", 0, "--out", data_path)
    cfg = tmp_path / "run.cfg"
    cfg.write_text("fit.max_iters = 0\npseudo.m_tau = 3\n")
    params_path = tmp_path / "params.txt"
    assert run("fit", "--config", cfg, "--data", data_path, "--out", params_path) == 0
    layout, values, _, locations = read_params(params_path)
    init = initial_parameters(layout).value_dict()
    for name, value in init.items():
        assert values[name] == pytest.approx(value, rel=1e-12)
    assert locations.shape[0] == 3
    trace = (tmp_path / "params.txt.trace.csv").read_text().strip().splitlines()
    assert trace[0] == "iter,objective,grad_norm"
    assert len(trace) == 2


def test_fit_malformed_row_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("time,x1,value,noise_var\n1.0,0.5,0.1,0.1\n2.0,oops,0.2,0.1\n")
    params_path = tmp_path / "params.txt"
    assert run("fit", "--data", bad, "--out", params_path) == 2
    err = capsys.readouterr().err
    assert ":3:" in err  # offending row number (line 3 of the file)


def test_predict_empty_queries_header_only(tmp_path):
    data_path = tmp_path / "data.csv"
    run("synth", "--scenario", "irregular", "--T", 4, "--n-per-time", 3,
        "--seed", 2, "--out", data_path)
    cfg = tmp_path / "run.cfg"
    cfg.write_text("fit.max_iters = 0\npseudo.m_tau = 2\n")
    params_path = tmp_path / "params.txt"
    run("fit", "--config", cfg, "--data", data_path, "--out", params_path)
    queries = tmp_path / "q.csv"
    queries.write_text("time,x1\n")
    out = tmp_path / "pred.csv"
    assert run("predict", "--params", params_path, "--data", data_path,
               "--queries", queries, "--out", out) == 0
    assert out.read_text().strip() == "time,x1,mean,variance"


def test_predict_off_grid_time_exits_3(tmp_path, capsys):
    data_path = tmp_path / "data.csv"
    run("synth", "--scenario", "irregular", "--T", 4, "--n-per-time", 3,
        "--seed", 2, "--out", data_path)
    cfg = tmp_path / "run.cfg"
    cfg.write_text("fit.max_iters = 0\npseudo.m_tau = 2\n")
    params_path = tmp_path / "params.txt"
    run("fit", "--config", cfg, "--data", data_path, "--out", params_path)
    queries = tmp_path / "q.csv"
    queries.write_text("time,x1\n99.5,1.0\n")
    out = tmp_path / "pred.csv"
    assert run("predict", "--params", params_path, "--data", data_path,
               "--queries", queries, "--out", out) == 3
    assert "99.5" in capsys.readouterr().err


def test_predict_recovers_training_point_at_tiny_noise(tmp_path):
    # hand-written dataset and parameter file with near-zero noise
    data_path = tmp_path / "data.csv"
    rows = ["time,x1,value,noise_var"]
    xs = [0.0, 1.0, 2.0, 3.0]
    ys = [0.3, -0.2, 0.5, 0.1]
    for x, y in zip(xs, ys):
        rows.append(f"1.0,{x},{y},0.1")
        rows.append(f"2.0,{x},{-y},0.1")
    data_path.write_text("\n".join(rows) + "\n")
    layout = KernelLayout(orders=(3,), spatial_dim=1)
    values = {
        "c0.time_scale": 1.0,
        "c0.space_scale.0": 1.0,
        "c0.amplitude": 1.0,
        "noise_var": 1e-9,
    }
    pseudo = PseudoInputs(locations=np.array(xs)[:, None], times=np.array([1.0, 2.0]))
    params_path = tmp_path / "params.txt"
    write_params(params_path, layout, values, (0.0, 1.0), pseudo)
    queries = tmp_path / "q.csv"
    queries.write_text("time,x1\n1.0,1.0\n")
    out = tmp_path / "pred.csv"
    assert run("predict", "--params", params_path, "--data", data_path,
               "--queries", queries, "--out", out) == 0
    line = out.read_text().strip().splitlines()[1].split(",")
    assert float(line[2]) == pytest.approx(-0.2, abs=1e-3)
    assert float(line[3]) < 1e-3


def test_predictions_match_dense_reference(tmp_path):
    data_path = tmp_path / "data.csv"
    run("synth", "--scenario", "irregular", "--T", 5, "--n-per-time", 4,
        "--seed", 4, "--out", data_path)
    cfg = tmp_path / "run.cfg"
    cfg.write_text("fit.max_iters = 0\npseudo.m_tau = 3\nseed = 4\n")
    params_path = tmp_path / "params.txt"
    run("fit", "--config", cfg, "--data", data_path, "--out", params_path)
    queries = tmp_path / "q.csv"
    queries.write_text("time,x1\n1.0,0.5\n3.0,7.5\n5.0,2.0\n")
    out = tmp_path / "pred.csv"
    assert run("predict", "--params", params_path, "--data", data_path,
               "--queries", queries, "--out", out) == 0

    layout, values, (mu, sd), locations = read_params(params_path)
    from stgp.cli import model_from_values

    kernel, noise_var = model_from_values(layout, values)
    flat = read_dataset(data_path)
    y_std = (flat.y - mu) / sd
    data = TimeGroupedData.from_points(flat.t, flat.X, y_std, noise_var)
    problem = DenseGpProblem(
        kernel, np.vstack(data.locations),
        np.concatenate([np.full(v.shape[0], data.times[i]) for i, v in enumerate(data.values)]),
        np.concatenate(data.values),
        np.concatenate(data.noise_vars),
    )
    z = PseudoInputs(locations=locations, times=data.times)
    tq = np.array([1.0, 3.0, 5.0])
    Xq = np.array([[0.5], [7.5], [2.0]])
    want_mean, want_var = dense_predictive(problem, z, Xq, tq)
    got = np.loadtxt(out, delimiter=",", skiprows=1)
    assert np.allclose(got[:, 2], want_mean * sd + mu, rtol=1e-7, atol=1e-9)
    assert np.allclose(got[:, 3], want_var * sd * sd, rtol=1e-7, atol=1e-9)


def test_elbo_command_reports_value(tmp_path, capsys):
    data_path = tmp_path / "data.csv"
    run("synth", "--scenario", "irregular", "--T", 5, "--n-per-time", 4,
        "--seed", 5, "--out", data_path)
    out = tmp_path / "elbo.json"
    assert run("elbo", "--data", data_path, "--m-tau", 3, "--out", out) == 0
    payload = json.loads(out.read_text())
    assert payload["n_obs"] == 20
    assert np.isfinite(payload["elbo"])
    assert "elbo" in capsys.readouterr().out


def test_bench_single_entry_and_guard(tmp_path, capsys):
    out = tmp_path / "bench.json"
    assert run("bench", "--t-list", "1", "--m-tau", 3, "--repeats", 1, "--out", out) == 0
    rows = json.loads(out.read_text())
    assert {r["method"] for r in rows} == {"structured", "oracle"}
    assert all(r["T"] == 1 for r in rows)
    # cubic guard: oracle refuses oversized problems
    assert run("bench", "--t-list", "400", "--method", "oracle", "--m-tau", 3,
               "--repeats", 1, "--out", out) == 2
    assert "oracle refuses" in capsys.readouterr().err


def test_round_trip_synth_fit_predict(tmp_path):
    data_path = tmp_path / "data.csv"
    run("synth", "--scenario", "grid-missing", "--T", 8, "--seed", 6, "--out", data_path)
    cfg = tmp_path / "run.cfg"
    cfg.write_text("fit.max_iters = 3\npseudo.m_tau = 5\n")
    params_path = tmp_path / "params.txt"
    assert run("fit", "--config", cfg, "--data", data_path, "--out", params_path) == 0
    queries = tmp_path / "q.csv"
    queries.write_text("time,x1\n1.0,5.0\n8.0,2.5\n")
    out = tmp_path / "pred.csv"
    assert run("predict", "--params", params_path, "--data", data_path,
               "--queries", queries, "--out", out) == 0
    got = np.loadtxt(out, delimiter=",", skiprows=1)
    assert got.shape == (2, 4)
    assert np.all(np.isfinite(got))
    assert np.all(got[:, 3] > 0)


def test_fit_warm_restart_from_params(tmp_path):
    data_path = tmp_path / "data.csv"
    run("synth", "--scenario", "irregular", "--T", 6, "--n-per-time", 4,
        "--seed", 9, "--out", data_path)
    cfg = tmp_path / "run.cfg"
    cfg.write_text("fit.max_iters = 2\npseudo.m_tau = 3\n")
    first = tmp_path / "params1.txt"
    run("fit", "--config", cfg, "--data", data_path, "--out", first)
    second = tmp_path / "params2.txt"
    assert run("fit", "--config", cfg, "--data", data_path,
               "--init-params", first, "--out", second) == 0
    # warm start resumes from the previous values and the same pseudo-inputs
    _, v1, std1, loc1 = read_params(first)
    _, v2, std2, loc2 = read_params(second)
    assert std1 == std2
    assert np.array_equal(loc1, loc2)
    trace2 = (tmp_path / "params2.txt.trace.csv").read_text().splitlines()[1]
    obj2_start = float(trace2.split(",")[1])
    trace1 = (tmp_path / "params1.txt.trace.csv").read_text().splitlines()[-1]
    obj1_end = float(trace1.split(",")[1])
    assert obj2_start == pytest.approx(obj1_end, rel=1e-9)


def test_round_trip_both_scenarios_at_scale(tmp_path):
    # synth -> fit -> predict completes on both layouts at T=200
    import time as _time

    start = _time.time()
    for scenario in ("irregular", "grid-missing"):
        data_path = tmp_path / f"{scenario}.csv"
        run("synth", "--scenario", scenario, "--T", 200, "--seed", 1,
            "--out", data_path)
        cfg = tmp_path / "run.cfg"
        cfg.write_text("fit.max_iters = 2\npseudo.m_tau = 10\n")
        params_path = tmp_path / f"{scenario}.params"
        assert run("fit", "--config", cfg, "--data", data_path,
                   "--out", params_path) == 0
        queries = tmp_path / "q.csv"
        queries.write_text("time,x1\n100.0,5.0\n200.0,1.0\n")
        out = tmp_path / f"{scenario}.pred"
        assert run("predict", "--params", params_path, "--data", data_path,
                   "--queries", queries, "--out", out) == 0
        got = np.loadtxt(out, delimiter=",", skiprows=1)
        assert np.all(np.isfinite(got))
    assert _time.time() - start < 300.0
