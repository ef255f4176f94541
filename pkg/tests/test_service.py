"""Endpoint contract tests for the HTTP service."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from driftcast import __version__
from driftcast.service.app import create_app


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app()) as c:
        yield c


SMALL_EXPERIMENT = {
    "scenario": {
        "preset": "default",
        "duration_hours": 24 * 100,
        "onset": "2019-03-01T00:00:00",
    },
    "context_modes": ["none"],
    "strategies": ["frozen", "ogd"],
    "seeds": [0],
    "pretrain_hours": 24 * 25,
    "validation_hours": 24 * 15,
    "pretrain_epochs": 2,
    "patience": 0,
    "channels": 6,
    "num_blocks": 2,
    "dilations": [2, 4],
}


class TestHealth:
    def test_health(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert body["version"] == __version__


class TestGenerate:
    def test_preset_generation(self, client):
        resp = client.post("/synthetic/generate", json={"scenario": {"preset": "bc1", "seed": 1}})
        assert resp.status_code == 200
        body = resp.json()
        assert body["rows"] == 17520
        assert body["csv_text"].startswith("timestamp,energy,mobility,temperature")
        assert abs(body["channel_means"]["energy"] - 207.27) / 207.27 < 0.10

    def test_deterministic(self, client):
        payload = {"scenario": {"preset": "default", "duration_hours": 24 * 40, "onset": "2019-01-20T00:00:00"}}
        a = client.post("/synthetic/generate", json=payload).json()
        b = client.post("/synthetic/generate", json=payload).json()
        assert a["csv_text"] == b["csv_text"]

    def test_unknown_preset_is_400(self, client):
        resp = client.post("/synthetic/generate", json={"scenario": {"preset": "nope"}})
        assert resp.status_code == 400
        assert "nope" in resp.json()["detail"]

    def test_invalid_severity_is_400(self, client):
        resp = client.post("/synthetic/generate", json={"scenario": {"mobility_collapse": 2.0}})
        assert resp.status_code == 400

    def test_validation_error_is_422(self, client):
        resp = client.post("/synthetic/generate", json={"scenario": {"duration_hours": "soon"}})
        assert resp.status_code == 422


class TestPretrain:
    def test_synthetic_pretrain(self, client):
        payload = {
            "scenario": {"preset": "default", "duration_hours": 24 * 80, "onset": "2019-02-20T00:00:00"},
            "pretrain_hours": 24 * 25,
            "validation_hours": 24 * 10,
            "pretrain_epochs": 1,
            "channels": 6,
            "num_blocks": 2,
            "dilations": [2, 4],
            "seed": 3,
        }
        resp = client.post("/pretrain", json=payload)
        assert resp.status_code == 200
        body = resp.json()
        assert body["checkpoint"]["version"] == "tcn/1"
        assert body["val_mae"] > 0
        assert len(body["checkpoint_hash"]) == 16
        # checkpoint loads back into a working model
        from driftcast.tcn import model_from_payload, tcn_forward

        model = model_from_payload(body["checkpoint"])
        out = tcn_forward(model, np.zeros((1, 24)))
        assert out.shape == (24,)

    def test_csv_roundtrip_pretrain(self, client):
        gen = client.post(
            "/synthetic/generate",
            json={"scenario": {"preset": "default", "duration_hours": 24 * 80, "onset": "2019-02-20T00:00:00"}},
        ).json()
        payload = {
            "source": "csv",
            "csv_text": gen["csv_text"],
            "pretrain_hours": 24 * 25,
            "validation_hours": 24 * 10,
            "pretrain_epochs": 1,
            "channels": 6,
            "num_blocks": 2,
            "dilations": [2, 4],
        }
        resp = client.post("/pretrain", json=payload)
        assert resp.status_code == 200


class TestExperiments:
    def test_small_run(self, client):
        resp = client.post("/experiments/run", json=SMALL_EXPERIMENT)
        assert resp.status_code == 200
        body = resp.json()
        assert body["failures"] == []
        assert body["steps_csv"].startswith("context,strategy,seed,timestamp,period,mae,mse")
        assert body["summary_csv"].startswith("period,context,strategy,")
        strategies = {c["strategy"] for c in body["cells"]}
        assert strategies == {"frozen", "ogd"}
        assert len(body["config_hash"]) == 16

    def test_run_deterministic(self, client):
        a = client.post("/experiments/run", json=SMALL_EXPERIMENT).json()
        b = client.post("/experiments/run", json=SMALL_EXPERIMENT).json()
        assert a["steps_csv"] == b["steps_csv"]
        assert a["summary_csv"] == b["summary_csv"]

    def test_ablate_context_forces_fsnet_and_deltas(self, client):
        payload = dict(SMALL_EXPERIMENT)
        payload.pop("strategies")
        payload["context_modes"] = ["none", "mobility", "temperature", "both"]
        resp = client.post("/experiments/ablate-context", json=payload)
        assert resp.status_code == 200
        body = resp.json()
        assert {c["strategy"] for c in body["cells"]} == {"fsnet"}
        assert {c["context"] for c in body["cells"]} == {"none", "mobility", "temperature", "both"}
        deltas = body["summary"]["context_deltas"]
        assert deltas and {"plus_m", "plus_t", "t_plus_m"} <= set(deltas[0])

    def test_compare_strategies_defaults_to_all(self, client):
        payload = dict(SMALL_EXPERIMENT)
        payload.pop("strategies")
        payload["pretrain_epochs"] = 1
        resp = client.post("/experiments/compare-strategies", json=payload)
        assert resp.status_code == 200
        assert {c["strategy"] for c in resp.json()["cells"]} == {"frozen", "ogd", "er", "derpp", "fsnet"}

    def test_bad_config_is_400(self, client):
        payload = dict(SMALL_EXPERIMENT)
        payload["strategies"] = ["bogus"]
        resp = client.post("/experiments/run", json=payload)
        assert resp.status_code == 400
        assert "bogus" in resp.json()["detail"]


class TestGradcheck:
    def test_passes(self, client):
        resp = client.post("/gradcheck", json={"trials": 10, "seed": 1})
        assert resp.status_code == 200
        body = resp.json()
        assert body["passed"] is True
        assert body["max_rel_err"] < 1e-4
        assert "conv1d_causal" in body["per_op"]
