import csv
import json
import math

import numpy as np
import pytest

from oracles import newton_logistic
from underreport.cli import dumps_record, main, parse_tau_grid, read_table, InputError


@pytest.fixture
def sim_csv(tmp_path):
    path = tmp_path / "sim.csv"
    assert main(["simulate", "--n", "1500", "--d", "3", "--tau", "0.25", "--seed", "4", "--out", str(path)]) == 0
    return path


def _read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_simulate_writes_table_and_truth(sim_csv):
    rows = _read_rows(sim_csv)
    assert rows[0] == ["y", "a_obs", "x1", "x2", "x3"]
    assert len(rows) == 1501
    truth = json.loads(sim_csv.with_suffix(".truth.json").read_text())
    assert truth["truth"]["tau"] == [0.25]
    assert truth["truth"]["theta_a"] == 1.0
    assert "rd" in truth["truth"]


def test_simulate_is_byte_identical(tmp_path):
    args = ["simulate", "--n", "300", "--d", "2", "--tau", "0.3", "--seed", "9"]
    main(args + ["--out", str(tmp_path / "a.csv")])
    main(args + ["--out", str(tmp_path / "b.csv")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_simulate_truth_column_at_zero_tau(tmp_path):
    out = tmp_path / "t.csv"
    main(["simulate", "--n", "400", "--d", "2", "--tau", "0", "--emit-truth-column", "--out", str(out)])
    rows = _read_rows(out)
    header = rows[0]
    i, j = header.index("a_obs"), header.index("a_true")
    assert all(r[i] == r[j] for r in rows[1:])
    data = read_table(out)
    assert data.covariate_names == ("x1", "x2")


def test_simulate_masking_rate(tmp_path):
    out = tmp_path / "big.csv"
    main(["simulate", "--n", "100000", "--d", "2", "--tau", "0.25", "--emit-truth-column",
          "--seed", "1", "--out", str(out)])
    rows = np.array(_read_rows(out)[1:], dtype=float)
    a_obs, a_true = rows[:, 1], rows[:, -1]
    exposed = a_true.sum()
    rate = np.sum((a_true == 1) & (a_obs == 0)) / exposed
    assert abs(rate - 0.25) < 3 * math.sqrt(0.25 * 0.75 / exposed)


@pytest.mark.parametrize("flags", [["--tau", "1.0"], ["--tau", "0.2", "--phi-scale", "2"], ["--tau", "0.2", "--n", "0"]])
def test_simulate_bad_flags(tmp_path, flags):
    base = ["simulate", "--d", "2", "--out", str(tmp_path / "x.csv")]
    if "--n" not in flags:
        base += ["--n", "10"]
    assert main(base + flags) == 1


def test_fit_known_zero_is_plain_logistic(sim_csv, tmp_path):
    out = tmp_path / "rec.json"
    assert main(["fit", str(sim_csv), "--mode", "known-tau", "--tau", "0", "--out", str(out)]) == 0
    rec = json.loads(out.read_text())
    data = read_table(sim_csv)
    design = np.column_stack([np.ones(data.n), data.x, data.a_obs])
    expected = newton_logistic(design, data.y.astype(float))
    p = rec["params"]
    got = [p["theta_0"], p["theta_x1"], p["theta_x2"], p["theta_x3"], p["theta_a"]]
    np.testing.assert_allclose(got, expected, atol=1e-4)
    assert rec["fixed_tau"] == 0.0
    assert rec["estimands"]["or"] == pytest.approx(math.exp(p["theta_a"]))


def test_fit_record_floats_have_17_digits(sim_csv, tmp_path):
    out = tmp_path / "rec.json"
    main(["fit", str(sim_csv), "--restarts", "1", "--out", str(out)])
    text = out.read_text()
    rec = json.loads(text)
    ll = rec["log_likelihood"]
    assert format(ll, ".17g") in text
    assert json.loads(dumps_record(rec)) == rec


def test_fit_dual_without_second_report(sim_csv, capsys):
    assert main(["fit", str(sim_csv), "--mode", "dual"]) == 1
    assert "a_obs2" in capsys.readouterr().err


def test_fit_known_tau_requires_tau(sim_csv, capsys):
    assert main(["fit", str(sim_csv), "--mode", "known-tau"]) == 1
    assert "--tau" in capsys.readouterr().err


def test_fit_non_convergence_exit_code(sim_csv, tmp_path):
    out = tmp_path / "rec.json"
    assert main(["fit", str(sim_csv), "--max-iterations", "1", "--restarts", "1", "--out", str(out)]) == 2
    assert json.loads(out.read_text())["diagnostics"]["converged"] is False


def test_fit_standardize_records_scaling(sim_csv, tmp_path):
    out = tmp_path / "rec.json"
    main(["fit", str(sim_csv), "--mode", "known-tau", "--tau", "0.1", "--standardize", "--out", str(out)])
    rec = json.loads(out.read_text())
    assert set(rec["standardization"]) == {"x1", "x2", "x3"}
    assert rec["standardization"]["x1"]["sd"] > 0


def test_fit_with_bootstrap(sim_csv, tmp_path):
    out = tmp_path / "rec.json"
    assert main(["fit", str(sim_csv), "--mode", "known-tau", "--tau", "0.2", "--bootstrap", "12",
                 "--restarts", "1", "--out", str(out)]) == 0
    ci = json.loads(out.read_text())["ci"]
    assert ci["replicates"] == 12
    lo, hi = ci["intervals"]["rd"]
    assert lo <= hi


def test_record_replays_identically(sim_csv, tmp_path):
    out = tmp_path / "rec.json"
    main(["fit", str(sim_csv), "--restarts", "2", "--seed", "17", "--out", str(out)])
    first = json.loads(out.read_text())
    out.unlink()
    assert main(first["argv"]) == 0
    second = json.loads(out.read_text())
    assert first == second


def test_dual_mode_end_to_end(tmp_path):
    path = tmp_path / "dual.csv"
    main(["simulate", "--n", "4000", "--d", "2", "--tau", "0.2", "--tau2", "0.4", "--seed", "3", "--out", str(path)])
    out = tmp_path / "rec.json"
    assert main(["fit", str(path), "--mode", "dual", "--out", str(out)]) == 0
    p = json.loads(out.read_text())["params"]
    assert abs(p["tau1"] - 0.2) < 0.1 and abs(p["tau2"] - 0.4) < 0.1


def test_sweep_grid_parsing():
    grid = parse_tau_grid("0:0.65:14")
    assert len(grid) == 14 and grid[0] == 0.0 and grid[-1] == pytest.approx(0.65)
    assert all(b > a for a, b in zip(grid, grid[1:]))
    assert parse_tau_grid("0.1, 0.3") == [0.1, 0.3]
    for bad in ("0:1:5", "0.5,1.2", "0.3,0.2", "a,b", "0:0.5"):
        with pytest.raises(InputError):
            parse_tau_grid(bad)


def test_sweep_band_and_cross_command_consistency(sim_csv, tmp_path):
    band = tmp_path / "band.csv"
    rec = tmp_path / "sweep.json"
    assert main(["sweep", str(sim_csv), "--tau-grid", "0:0.65:14", "--seed", "3", "--restarts", "2",
                 "--out", str(band), "--record", str(rec)]) == 0
    rows = _read_rows(band)
    assert rows[0] == ["tau", "rd", "ci_lo", "ci_hi", "converged"]
    assert len(rows) == 15
    taus = [float(r[0]) for r in rows[1:]]
    assert all(b > a for a, b in zip(taus, taus[1:]))
    fit_out = tmp_path / "fit.json"
    main(["fit", str(sim_csv), "--mode", "known-tau", "--tau", "0", "--seed", "3", "--restarts", "2",
          "--out", str(fit_out)])
    assert float(rows[1][1]) == json.loads(fit_out.read_text())["estimands"]["rd"]


def test_sweep_singleton_equals_fit(sim_csv, tmp_path):
    band = tmp_path / "band.csv"
    main(["sweep", str(sim_csv), "--tau-grid", "0.25", "--seed", "8", "--out", str(band)])
    fit_out = tmp_path / "fit.json"
    main(["fit", str(sim_csv), "--mode", "known-tau", "--tau", "0.25", "--seed", "8", "--out", str(fit_out)])
    assert float(_read_rows(band)[1][1]) == json.loads(fit_out.read_text())["estimands"]["rd"]


def test_sweep_rejects_out_of_range(sim_csv, tmp_path):
    assert main(["sweep", str(sim_csv), "--tau-grid", "0,1", "--out", str(tmp_path / "b.csv")]) == 1


def test_experiment_smoke(tmp_path):
    prefix = tmp_path / "exp"
    assert main(["experiment", "--axis", "size", "--grid", "250,500", "--replicates", "2", "--d", "2",
                 "--restarts", "1", "--out-prefix", str(prefix)]) == 0
    rows = _read_rows(tmp_path / "exp.csv")
    assert rows[0] == ["grid_value", "mse_adjusted", "mse_unadjusted", "n_failed"]
    assert len(rows) == 3
    report = json.loads((tmp_path / "exp.json").read_text())["report"]
    assert report["axis"] == "size" and report["replicates"] == 2
    assert len(report["true_rd_per_replicate"]) == 2


def test_experiment_reproducible(tmp_path):
    args = ["experiment", "--axis", "tau", "--grid", "0,0.4", "--replicates", "2", "--n", "300",
            "--d", "2", "--restarts", "1", "--seed", "5"]
    main(args + ["--out-prefix", str(tmp_path / "a")])
    main(args + ["--out-prefix", str(tmp_path / "b")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_experiment_bad_grid(tmp_path):
    assert main(["experiment", "--axis", "tau", "--grid", "0.9,1.2", "--out-prefix", str(tmp_path / "e")]) == 1


def test_mi_command(tmp_path, capsys):
    path = tmp_path / "ind.csv"
    main(["simulate", "--n", "10000", "--d", "3", "--tau", "0.25", "--phi-scale", "0", "--seed", "2",
          "--out", str(path)])
    capsys.readouterr()
    assert main(["mi", str(path)]) == 0
    first = capsys.readouterr().out
    value = float(first)
    assert value < 0.01
    assert len(first.strip().split(".")[1]) == 6
    main(["mi", str(path)])
    assert capsys.readouterr().out == first
    assert main(["mi", str(path), "--target", "a_obs2"]) == 1


def _write(path, text):
    path.write_bytes(text.encode())
    return path


@pytest.mark.parametrize(
    "body,needle",
    [
        ("y,a_obs,x1\n1,0,0.5\n2,0,0.1\n", "row 3"),
        ("y,a_obs,x1\n1,0,0.5\n1,,0.1\n", "missing value"),
        ("y,a_obs,x1\n1,0,abc\n", "not a number"),
        ("y,a_obs,x1\n1,0,0.5,7\n", "expected 3 fields"),
        ("y,x1\n1,0.5\n", "a_obs"),
        ("y,a_obs,x1\n1,0,inf\n", "non-finite"),
    ],
)
def test_ingestion_errors_are_positional(tmp_path, body, needle):
    path = _write(tmp_path / "bad.csv", body)
    with pytest.raises(InputError, match=needle):
        read_table(path)
    assert main(["fit", str(path)]) == 1


def test_crlf_input_and_covariate_override(tmp_path):
    path = _write(tmp_path / "crlf.csv", "y,a_obs,x1,x2\r\n1,0,0.5,1\r\n0,1,0.1,2\r\n")
    data = read_table(path)
    assert data.n == 2 and data.d == 2
    only = read_table(path, ["x2"])
    assert only.covariate_names == ("x2",)
    with pytest.raises(InputError):
        read_table(path, ["nope"])
