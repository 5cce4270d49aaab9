import csv
import io
import json
import math

import numpy as np
import pytest

from glmcomplexity import cli


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_annealed_linear_json(capsys):
    code, out, _ = run_cli(capsys, "annealed-l1", "--activation", "linear", "--alpha", "2",
                           "--unconstrained")
    assert code == 0
    doc = json.loads(out)
    assert doc["schema"] == 1 and doc["status"] == "ok"
    rec = doc["results"][0]
    assert abs(rec["complexity"]) <= 1e-3
    np.testing.assert_allclose(abs(rec["l"]), 2**-0.5, atol=1e-4)
    assert len(rec["residuals"]) == 4


def test_annealed_tanh_json(capsys):
    code, out, _ = run_cli(capsys, "annealed-l1", "--activation", "tanh", "--alpha", "2",
                           "--unconstrained")
    rec = json.loads(out)["results"][0]
    assert code == 0
    assert rec["converged"] and max(rec["residuals"]) <= 1e-9
    for key in ("activation", "alpha", "constraint", "l", "lambda0", "lambda1", "g_re", "g_im"):
        assert key in rec


def test_verify_rank2(capsys):
    code, out, _ = run_cli(capsys, "verify", "--check", "rank2", "--n", "100", "--activation", "tanh")
    assert code == 0
    chk = json.loads(out)["results"][0]["checks"]["rank2"]
    assert chk["passed"] and chk["max_distance"] <= 2 / 99


def test_spectrum_csv_matches_mp(capsys):
    code, out, _ = run_cli(capsys, "spectrum", "--activation", "half_square", "--alpha", "2",
                           "--t-grid=-1:5:601", "--format", "csv")
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["t", "density", "log_potential", "residual"]
    data = np.array(rows[1:], dtype=float)
    assert data.shape == (601, 4)
    t, rho = data[:, 0], data[:, 1]
    np.testing.assert_allclose(t, np.linspace(-1, 5, 601))
    # MP law with ratio 1/2: support [(1 - 1/√2)², (1 + 1/√2)²]
    lo, hi = (1 - 2**-0.5) ** 2, (1 + 2**-0.5) ** 2
    assert np.all(rho[(t < lo - 0.05) | (t > hi + 0.05)] <= 1e-3)
    inside = (t > lo + 0.05) & (t < hi - 0.05)
    exact = np.sqrt((hi - t[inside]) * (t[inside] - lo)) / (2 * math.pi * 0.5 * t[inside])
    np.testing.assert_allclose(rho[inside], exact, atol=1e-3)


def test_sweep_order_and_csv(capsys):
    code, out, _ = run_cli(capsys, "annealed-l1", "--activation", "linear", "--alpha", "1.5:3:4",
                           "--unconstrained", "--format", "csv", "--workers", "2")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    np.testing.assert_allclose([float(r["alpha"]) for r in rows], [1.5, 2.0, 2.5, 3.0])
    np.testing.assert_allclose([abs(float(r["l"])) for r in rows],
                               [a**-0.5 for a in (1.5, 2, 2.5, 3)], atol=1e-4)


def test_identical_runs_are_byte_identical(tmp_path):
    path = tmp_path / "out.json"
    argv = ["verify", "--check", "rank2,esd", "--n", "60", "--seeds", "3", "--output", str(path)]
    blobs = []
    for _ in range(2):
        assert cli.main(argv) == 0
        blobs.append(path.read_bytes())
    assert blobs[0] == blobs[1]
    meta = json.loads((tmp_path / "out.json.meta.json").read_text())
    assert {"finished_utc", "runtime_seconds", "backend", "status"} <= set(meta)
    assert b"finished_utc" not in blobs[0]


def test_config_file_with_flag_override(tmp_path, capsys):
    conf = tmp_path / "job.conf"
    conf.write_text("# linear nullity\nactivation = linear\nalpha = 3  # trailing comment\n"
                    "constraint = unconstrained\n\n")
    code, out, _ = run_cli(capsys, "annealed-l1", "--config", str(conf), "--alpha", "2")
    doc = json.loads(out)
    assert code == 0
    assert doc["config"]["activation"] == "linear"
    assert doc["config"]["alpha"] == [2.0]
    np.testing.assert_allclose(abs(doc["results"][0]["l"]), 2**-0.5, atol=1e-4)


def test_output_embeds_resolved_config(capsys):
    _, out, _ = run_cli(capsys, "annealed-l1", "--activation", "linear", "--unconstrained")
    cfg = json.loads(out)["config"]
    assert cfg["epsilon"] == 1e-6 and cfg["grid"] == "trapezoid" and cfg["workers"] == 1


@pytest.mark.parametrize("argv", [
    ["annealed-l1", "--activaton", "tanh"],
    ["annealed-l1", "--alpha", "0.5"],
    ["annealed-l1", "--alpha", "2:0.5:3"],
    ["annealed-l1", "--constraint", "interval", "--lower", "1", "--upper", "0"],
    ["spectrum", "--n", "10"],
    ["frobnicate"],
    ["annealed-l1", "--activation", "relu6"],
])
def test_config_errors_exit_one(capsys, argv):
    code, out, err = run_cli(capsys, *argv)
    assert code == 1
    assert out == "" and "config error" in err


def test_unknown_key_in_file(tmp_path, capsys):
    conf = tmp_path / "bad.conf"
    conf.write_text("activation = tanh\nalpah = 2\n")
    code, _, err = run_cli(capsys, "annealed-l1", "--config", str(conf))
    assert code == 1 and "alpah" in err


def test_failed_point_is_partial(monkeypatch, capsys):
    real = cli.JOBS["annealed-l1"]

    def flaky(cfg, alpha):
        if alpha == 2.0:
            raise RuntimeError("no convergence")
        return real(cfg, alpha)

    monkeypatch.setitem(cli.JOBS, "annealed-l1", flaky)
    code, out, _ = run_cli(capsys, "annealed-l1", "--activation", "linear", "--alpha", "1.5:2.5:3",
                           "--unconstrained")
    doc = json.loads(out)
    assert code == 2
    assert doc["status"] == "partial" and doc["failed_points"] == 1
    assert "no convergence" in doc["results"][1]["error"]
    assert abs(doc["results"][0]["complexity"]) <= 1e-3


def test_failed_check_is_partial(capsys):
    code, out, _ = run_cli(capsys, "verify", "--check", "esd", "--n", "60", "--seeds", "2",
                           "--threshold", "0", "--activation", "tanh")
    assert code == 2
    assert json.loads(out)["results"][0]["checks"]["esd"]["passed"] is False


def test_parse_flags_forms():
    path, flags = cli.parse_flags(["--config", "x.conf", "--alpha=3", "--t-grid", "-1:5:11",
                                   "--unconstrained"])
    assert path == "x.conf"
    assert flags == {"alpha": "3", "t_grid": "-1:5:11", "unconstrained": True}


def test_parse_alpha_sweep():
    np.testing.assert_allclose(cli.parse_alpha("1.5:3:4"), [1.5, 2.0, 2.5, 3.0])
    assert cli.parse_alpha("2") == [2.0]
