import hashlib
import json

import pytest

from epstein_lab import cli, foliation as fol


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_cmc_homogeneous_example(tmp_path):
    out = tmp_path / "cmc"
    rc = cli.main(["cmc-foliate", "--backend", "homogeneous", "--phi-scale", "0", "--h-lo", "-0.9", "--h-hi", "0.9",
                   "--steps", "19", "--out", str(out)])
    assert rc == 0
    rows = (out / "leaves.csv").read_text().splitlines()[1:]
    assert len(rows) == 19
    assert all(float(r.split(",")[1]) < 1e-12 for r in rows)


def test_torus_critical_example(tmp_path):
    out = tmp_path / "tc"
    assert cli.main(["torus-critical", "--F", "1", "0", "1", "--G", "0", "1", "1", "--out", str(out)]) == 0
    tau = json.loads((out / "critical.json").read_text())["tau"]
    assert abs(complex(*tau) - 1j) < 1e-8


def test_manifest_lists_every_file_with_checksum(tmp_path):
    out = tmp_path / "tl"
    assert cli.main(["torus-line", "--t-grid", "0.5", "1", "2", "--out", str(out)]) == 0
    man = _manifest(out)
    listed = {f["path"]: f["sha256"] for f in man["files"]}
    on_disk = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert set(listed) == on_disk
    for name, digest in listed.items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert man["config"]["seed"] == 0 and man["version"]


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"command": "cmc-foliate", "params": {"steps": 3, "h_lo": -0.5, "h_hi": 0.5}}))
    out = tmp_path / "o"
    assert cli.main(["cmc-foliate", "--config", str(cfg), "--steps", "5", "--out", str(out)]) == 0
    man = _manifest(out)
    assert man["config"]["params"]["steps"] == 5
    assert man["config"]["params"]["h_lo"] == -0.5


@pytest.mark.parametrize("doc, field", [
    ({"command": "cmc-foliate", "params": {"tol": -1}}, "params.tol"),
    ({"command": "cmc-foliate", "params": {"stepz": 3}}, "params.stepz"),
    ({"command": "cmc-foliate", "params": {"h_lo": 0.5, "h_hi": 0.1}}, "params.h_hi"),
    ({"command": "cmc-foliate", "seed": -3}, "seed"),
    ({"command": "cmc-foliate", "extra": 1}, "extra"),
    ({"command": "torus-critical", "params": {"F": [0, 0, 1]}}, "params.F"),
])
def test_malformed_config_exits_2_naming_field(tmp_path, capsys, doc, field):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps(doc))
    rc = cli.main([doc["command"], "--config", str(cfg), "--out", str(tmp_path / "x")])
    assert rc == 2
    assert f"'{field}'" in capsys.readouterr().err


def test_unparseable_config(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json")
    assert cli.main(["selftest", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2


def test_thread_env_validation(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "zero")
    assert cli.main(["selftest", "--out", str(tmp_path / "x")]) == 2
    monkeypatch.setenv(cli.THREADS_ENV, "1")
    assert cli.main(["selftest", "--out", str(tmp_path / "y")]) == 0


def test_certificate_failure_exits_1(tmp_path):
    # an impossible collinearity tolerance must fail the certificate
    rc = cli.main(["torus-line", "--t-grid", "0.5", "2", "--collinearity-tol", "1e-300", "--out", str(tmp_path / "o")])
    assert rc == 1
    assert _manifest(tmp_path / "o")["certified"] is False


def test_selftest_deterministic_across_directories(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["selftest", "--seed", "3", "--out", str(a)]) == 0
    assert cli.main(["selftest", "--seed", "3", "--out", str(b)]) == 0
    for f in ("manifest.json", "selftest.csv", "config.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_flat_periods(tmp_path):
    surf = tmp_path / "s.json"
    surf.write_text(json.dumps(fol.square_torus(0.5 + 1j).to_json()))
    cyc = tmp_path / "c.json"
    cyc.write_text(json.dumps([[[0, 0]], [[0, 1]]]))
    out = tmp_path / "o"
    assert cli.main(["flat-periods", "--surface", str(surf), "--cycles", str(cyc), "--out", str(out)]) == 0
    rows = (out / "periods.csv").read_text().splitlines()
    assert rows[1] == "0,1.0,0.0" and rows[2] == "1,0.5,1.0"
    assert cli.main(["flat-periods", "--surface", str(tmp_path / "none.json"), "--cycles", str(cyc),
                     "--out", str(out)]) == 2


def test_minimal_and_halfpipe_runs(tmp_path):
    assert cli.main(["minimal-path", "--out", str(tmp_path / "m")]) == 0
    rep = json.loads((tmp_path / "m" / "extrapolation.json").read_text())
    assert rep["u_exponent"] > 1.99
    assert cli.main(["halfpipe-limit", "--out", str(tmp_path / "h")]) == 0


def test_epstein_surface_run(tmp_path):
    assert cli.main(["epstein-surface", "--metric", "poincare", "--t", "0.5", "--n", "41",
                     "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "surface.obj").exists()


def test_pipeline_error_is_tagged(tmp_path, capsys):
    # an empty edge path is a pipeline error, reported with the stage and exit 1
    surf = tmp_path / "s.json"
    surf.write_text(json.dumps(fol.square_torus().to_json()))
    cyc = tmp_path / "c.json"
    cyc.write_text(json.dumps([[]]))
    rc = cli.main(["flat-periods", "--surface", str(surf), "--cycles", str(cyc), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "stage 'flat-periods'" in capsys.readouterr().err
