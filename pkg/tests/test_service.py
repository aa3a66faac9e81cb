import numpy as np
from fastapi.testclient import TestClient

import fluctua
from fluctua import scenario
from fluctua.service import app

from test_scenario import base_config

client = TestClient(app, raise_server_exceptions=False)


def test_health():
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok", "version": fluctua.__version__}


def test_run_matches_direct_evaluation():
    cfg = base_config(sweep={"separations": [2.0, 3.0]}, force_step=0.05)
    response = client.post("/run", json={"config": cfg})
    assert response.status_code == 200
    payload = response.json()
    assert payload["all_converged"] is True
    direct = scenario.evaluate_scenario(scenario.parse_config(cfg))
    assert len(payload["rows"]) == len(direct) == 2
    for got, want in zip(payload["rows"], direct):
        assert got["d"] == want.d
        assert got["F_int"] == want.f_int
        assert got["F_eff_total"] == want.f_eff_total
        assert got["force"] == want.force
        assert got["n_modes_used"] == want.n_modes_used
        assert got["tail_estimate"] == want.tail_estimate
        assert got["converged"] is want.converged


def test_run_threads_do_not_change_payload():
    cfg = base_config()
    one = client.post("/run", json={"config": cfg, "threads": 1})
    four = client.post("/run", json={"config": cfg, "threads": 4})
    assert one.status_code == four.status_code == 200
    assert one.json() == four.json()


def test_run_invalid_config_is_422_with_diagnostics():
    cfg = base_config()
    cfg["body2"]["voxels"] = [[0.0, 0.0, 0.0, 0.3]]
    response = client.post("/run", json={"config": cfg})
    assert response.status_code == 422
    diags = response.json()["detail"]["diagnostics"]
    assert isinstance(diags, list) and len(diags) == 1
    assert "invalid scene" in diags[0]


def test_run_rejects_bad_threads():
    response = client.post("/run", json={"config": base_config(), "threads": 0})
    assert response.status_code == 422


def test_run_zero_temperature_nulls():
    cfg = base_config(mode="zero-T")
    del cfg["temperature"]
    response = client.post("/run", json={"config": cfg})
    assert response.status_code == 200
    row = response.json()["rows"][0]
    assert row["F_eff_total"] is None
    assert row["force"] is None
    assert row["F_int"] < 0.0
    assert row["converged"] is True


def test_unconverged_run_is_200_not_error():
    cfg = base_config(grid={"n_max": 3})
    response = client.post("/run", json={"config": cfg})
    assert response.status_code == 200
    payload = response.json()
    assert payload["all_converged"] is False
    assert payload["rows"][0]["converged"] is False


def test_oracle_endpoint():
    response = client.post("/oracle", json={"seed": 21, "instances": 3})
    assert response.status_code == 200
    payload = response.json()
    assert payload["all_ok"] is True
    assert len(payload["rows"]) == 3
    for i, row in enumerate(payload["rows"]):
        assert row["index"] == i
        assert 8 <= row["n_sites"] <= 64
        assert 1 <= row["n_nu"] <= 8
        assert row["factorization_residual"] <= 1e-10
        assert row["mean_force_residual"] <= 1e-10
        assert row["force_equivalence_residual"] <= 1e-9
        assert row["ok"] is True


def test_oracle_corrupt_negative_control():
    response = client.post("/oracle", json={"seed": 21, "instances": 2,
                                            "corrupt": True})
    assert response.status_code == 200
    payload = response.json()
    assert payload["all_ok"] is False
    assert not any(row["ok"] for row in payload["rows"])


def test_oracle_rejects_bad_instance_count():
    response = client.post("/oracle", json={"seed": 21, "instances": 0})
    assert response.status_code == 422
    assert response.json()["detail"]["diagnostics"] == ["instances: must be >= 1"]
