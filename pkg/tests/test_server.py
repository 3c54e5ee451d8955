import pytest
from fastapi.testclient import TestClient

from app.main import app
from app.models.scenario_config import DAConfig, NetworkConfig
from tests.conftest import tiny_scenario


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def _payload(**overrides):
    scenario = tiny_scenario(days=3, da=DAConfig(enabled=False), **overrides)
    return scenario.model_dump(mode="json")


def test_root_and_health(client):
    assert client.get("/health").json()["status"] == "healthy"
    body = client.get("/").json()
    assert body["version"] == "0.1.0"


def test_generate_network(client):
    response = client.post("/network/generate", json=NetworkConfig(n_total=200, seed=1).model_dump())
    assert response.status_code == 200
    body = response.json()
    assert body["n_persons"] == 200
    assert body["group_sizes"]["b"] == 10


def test_generate_network_rejects_bad_parameters(client):
    response = client.post("/network/generate", json={"n_total": 50})
    assert response.status_code == 400
    body = response.json()
    assert body["error"] is True
    assert body["details"]["type"] == "NetworkGenerationError"
    assert body["path"] == "/network/generate"
    assert body["service"]["name"] == "risknet-da"


def test_contact_rate(client):
    body = client.post("/network/contact-rate", json={}).json()
    assert body["mean_contact_rate"] == pytest.approx(37.7, rel=0.01)
    assert 0.0 < body["mean_edge_activity"] < 0.01
    response = client.post("/network/contact-rate", json={"lambda_min": 50, "lambda_max": 10})
    assert response.status_code == 422
    details = response.json()["details"]
    assert details["type"] == "ValidationError"
    assert "validation_errors" in details


def test_predictive_values(client):
    body = client.post(
        "/observations/predictive-values",
        json={"assay": {"sensitivity": 0.8, "specificity": 0.99}, "prevalence": 0.01},
    ).json()
    assert body["ppv"] == pytest.approx(0.446927, abs=1e-6)
    assert body["false_omission_rate"] == pytest.approx(0.0020367, abs=1e-6)
    assert body["positive_error_rate"] == pytest.approx(1.0 - body["ppv"])
    response = client.post(
        "/observations/predictive-values", json={"assay": {"sensitivity": 0.8, "specificity": 0.99}, "prevalence": 0}
    )
    assert response.status_code == 422


def test_scenario_lifecycle(client):
    created = client.post("/scenarios/", json=_payload(name="api-run"))
    assert created.status_code == 200
    run_id = created.json()["id"]

    detail = client.get(f"/scenarios/{run_id}").json()
    assert detail["status"] == "completed"
    assert "daily.csv" in detail["artifacts"]
    assert detail["config"]["name"] == "api-run"

    listed = client.get("/scenarios/", params={"status": "completed"}).json()
    assert run_id in [r["id"] for r in listed]

    artifact = client.get(f"/scenarios/{run_id}/artifacts/daily.csv")
    assert artifact.status_code == 200
    assert artifact.text.startswith("replica,day")
    assert client.get(f"/scenarios/{run_id}/artifacts/.hidden").status_code == 404

    observations = client.get(f"/scenarios/{run_id}/artifacts/observations.csv").content
    replay = client.post(
        f"/scenarios/{run_id}/replay", files={"stream_file": ("stream.csv", observations, "text/csv")}
    )
    assert replay.status_code == 200
    replay_id = replay.json()["id"]
    assert replay.json()["observation_stream"].endswith(".csv")
    assert client.get(f"/scenarios/{replay_id}").json()["status"] == "completed"

    bad = client.post(f"/scenarios/{run_id}/replay", files={"stream_file": ("stream.txt", b"x", "text/plain")})
    assert bad.status_code == 400

    assert client.delete(f"/scenarios/{run_id}").status_code == 200
    assert client.get(f"/scenarios/{run_id}").status_code == 404


def test_failed_scenario_is_recorded(client):
    created = client.post("/scenarios/", json=_payload(name="broken", network_path="/nonexistent/net.npz"))
    run_id = created.json()["id"]
    detail = client.get(f"/scenarios/{run_id}").json()
    assert detail["status"] == "failed"
    assert "net.npz" in detail["error"]
    assert "manifest.json" in detail["artifacts"]


def test_invalid_scenario_rejected(client):
    response = client.post("/scenarios/", json={"days": 0})
    assert response.status_code == 422
    assert client.get("/scenarios/999999").status_code == 404
