import json

import pytest
from fastapi.testclient import TestClient
from test_experiments import tiny_config_dict

from coexist import __version__, cli
from coexist.service.app import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def test_health(client):
    reply = client.get("/health")
    assert reply.status_code == 200
    assert reply.json() == {"status": "ok", "version": __version__}


def test_feasibility_endpoint(client):
    reply = client.post("/feasibility",
                        json={"config": tiny_config_dict(), "seed": 3})
    assert reply.status_code == 200
    body = reply.json()
    assert body["feasible"] is True
    assert len(body["cells"]) == 3
    for cell in body["cells"]:
        assert cell["ceiling_db"] >= body["overall_ceiling_db"]
        assert cell["rho_db"] == pytest.approx(0.0)


def test_solve_endpoint(client):
    reply = client.post("/solve", json={"config": tiny_config_dict(),
                                        "mode": "ee", "seed": 5,
                                        "rho_db": 0.0,
                                        "include_trace": True})
    assert reply.status_code == 200
    body = reply.json()
    assert body["status"] == "converged"
    assert body["ee_bits_per_joule"] > 0
    assert body["rate_bps"] > 0
    assert body["comm_power_w"] <= 0.01 * (1 + 1e-9)
    assert body["min_sdr_margin_db"] >= -1e-6
    assert len(body["trace"]) == body["outer_iters"] + 1


def test_solve_endpoint_infeasible_status(client):
    reply = client.post("/solve", json={"config": tiny_config_dict(),
                                        "mode": "ee", "rho_db": 40.0})
    assert reply.status_code == 200
    assert reply.json()["status"] == "infeasible"
    assert reply.json()["ee_bits_per_joule"] is None


def test_bad_config_is_http_400(client):
    cfg = tiny_config_dict()
    cfg["system"]["amplifier_efficiency"] = 3.0
    reply = client.post("/feasibility", json={"config": cfg})
    assert reply.status_code == 400
    assert "amp_efficiency" in reply.json()["detail"]


def test_bad_mode_is_http_422(client):
    reply = client.post("/solve", json={"config": tiny_config_dict(),
                                        "mode": "nope"})
    assert reply.status_code == 422


def test_validate_sdr_endpoint(client):
    reply = client.post("/validate-sdr",
                        json={"config": tiny_config_dict(), "draws": 20000,
                              "seed": 2, "rho_db": 0.0})
    assert reply.status_code == 200
    body = reply.json()
    assert body["draws"] == 20000
    assert body["max_rel_deviation"] < 0.10
    assert len(body["cells"]) == 3


def test_sweep_endpoint(client, tmp_path):
    cfg = tiny_config_dict(runs=1, modes=("isolated",), rho_db=(0.0,))
    reply = client.post("/sweep", json={"config": cfg,
                                        "out_dir": str(tmp_path / "out")})
    assert reply.status_code == 200
    body = reply.json()
    assert body["records"] == 1
    assert body["runs_csv"].startswith("sweep_id,rho_db")
    assert (tmp_path / "out" / "aggregate.csv").exists()


def run_cli(args):
    try:
        return cli.main(args), None
    except SystemExit as exc:
        return exc.code, None


def test_cli_feasibility_exit_codes(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(tiny_config_dict()))
    code, _ = run_cli(["feasibility", str(path)])
    assert code == 0
    body = json.loads(capsys.readouterr().out)
    assert body["feasible"] is True

    bad = tiny_config_dict()
    bad["statistics"]["min_sdr_db"] = 40.0
    path.write_text(json.dumps(bad))
    code, _ = run_cli(["feasibility", str(path)])
    assert code == 2


def test_cli_solve_and_exit_codes(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(tiny_config_dict()))
    code, _ = run_cli(["solve", str(path), "--rho", "0.0", "--seed", "5"])
    assert code == 0
    body = json.loads(capsys.readouterr().out)
    assert body["status"] == "converged"

    code, _ = run_cli(["solve", str(path), "--rho", "40.0"])
    assert code == 2
    capsys.readouterr()


def test_cli_config_error_exit_code(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text("{broken")
    code, _ = run_cli(["solve", str(path)])
    assert code == 4
    bad = tiny_config_dict()
    bad["system"].pop("bandwidth_hz")
    path.write_text(json.dumps(bad))
    code, _ = run_cli(["solve", str(path)])
    assert code == 4
    code, _ = run_cli(["solve", str(tmp_path / "missing.json")])
    assert code == 4
    capsys.readouterr()


def test_cli_sweep_writes_outputs(tmp_path, capsys):
    cfg = tiny_config_dict(runs=1, modes=("isolated",), rho_db=(0.0,))
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "results"
    code, _ = run_cli(["sweep", str(path), "--out", str(out),
                       "--jobs", "1"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["records"] == 1
    assert (out / "runs.csv").exists()
    assert (out / "aggregate.csv").exists()


def test_cli_validate_sdr(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(tiny_config_dict()))
    code, _ = run_cli(["validate-sdr", str(path), "--draws", "5000",
                       "--rho", "0.0", "--seed", "2"])
    assert code == 0
    body = json.loads(capsys.readouterr().out)
    assert body["draws"] == 5000
