"""
Tests for the HTTP API: health endpoints, the catalog listing, verification
routes and the error mapping.
"""
import json

import pytest
from fastapi.testclient import TestClient

from geoequiv.core.errors import PositivityError
from geoequiv.main import app

CONSTANT_PAIR = {
    "name": "constant",
    "n": 2,
    "coords": ["x1", "x2"],
    "domain": [[-5, 5], [-5, 5]],
    "g": [[1, 0], [0, 1]],
    "gbar": [[2, 0], [0, 3]],
    "sample_box": [[-1, 1], [-1, 1]],
}


@pytest.fixture
def client():
    return TestClient(app)


class TestHealth:
    """Test the root and health endpoints."""

    def test_root(self, client):
        """Test the root endpoint."""
        response = client.get("/")
        assert response.status_code == 200
        assert response.json()["message"] == "GeoEquiv verification API"

    def test_health(self, client):
        """Test the health endpoint."""
        response = client.get("/health")
        assert response.status_code == 200
        assert response.json()["status"] == "healthy"


class TestCatalogRoutes:
    """Test the catalog listing."""

    def test_list_catalog(self, client):
        """Test that every entry is listed with its flag."""
        response = client.get("/api/v1/catalog")
        assert response.status_code == 200
        entries = {entry["name"]: entry for entry in response.json()}
        assert len(entries) == 7
        assert entries["control-nonequivalent"]["equivalent"] is False


class TestVerifyRoutes:
    """Test the verification routes."""

    def test_rank_of_inline_pair(self, client):
        """Test a small rank run on an inline definition."""
        body = {"source": {"definition": CONSTANT_PAIR}, "samples": 10}
        response = client.post("/api/v1/verify/rank", json=body)
        assert response.status_code == 200
        data = response.json()
        assert data["pair"] == "constant"
        assert data["verdict"] == "PASS"

    def test_brackets_of_control(self, client):
        """Test that the negative control returns a FAIL report, not an error."""
        body = {"source": {"catalog": "control-nonequivalent"}, "samples": 10}
        response = client.post("/api/v1/verify/brackets", json=body)
        assert response.status_code == 200
        assert response.json()["verdict"] == "FAIL"

    def test_unknown_catalog_entry(self, client):
        """Test that an unknown entry maps to 404 with the available names."""
        response = client.post("/api/v1/verify/check", json={"source": {"catalog": "torus"}})
        assert response.status_code == 404
        data = response.json()
        assert data["error_code"] == "CATALOG_ERROR"
        assert "flat" in data["details"]["available"]

    def test_invalid_catalog_parameter(self, client):
        """Test that an invalid parameter is a configuration error."""
        body = {"source": {"catalog": "proportional", "params": {"c": -1.0}}, "samples": 5}
        response = client.post("/api/v1/verify/rank", json=body)
        assert response.status_code == 422
        assert response.json()["error_code"] == "CATALOG_ERROR"

    def test_invalid_run_config(self, client):
        """Test request validation of the run configuration."""
        body = {"source": {"catalog": "flat"}, "power": 0}
        response = client.post("/api/v1/verify/sinjukov", json=body)
        assert response.status_code == 422

    def test_two_sources_rejected(self, client):
        """Test that a source with two origins fails validation."""
        body = {"source": {"catalog": "flat", "file": "pair.json"}}
        response = client.post("/api/v1/verify/check", json=body)
        assert response.status_code == 422

    def test_numerical_failure_maps_to_400(self, client, mocker):
        """Test that numerical errors are returned as 400 ErrorResponse bodies."""
        service = mocker.patch("geoequiv.api.verify.verification_service")
        service.run_brackets.side_effect = PositivityError("gbar is not positive definite", {"smallest_pivot": -1.0})
        response = client.post("/api/v1/verify/brackets", json={"source": {"catalog": "flat"}})
        assert response.status_code == 400
        assert response.json() == {
            "error_code": "NOT_POSITIVE_DEFINITE",
            "message": "gbar is not positive definite",
            "details": {"smallest_pivot": -1.0},
        }

    def test_emit_path_rejected(self, client, tmp_path):
        """Test that a request cannot make the server write a file."""
        target = tmp_path / "out.csv"
        body = {"source": {"catalog": "flat"}, "samples": 5, "emit": str(target)}
        response = client.post("/api/v1/verify/rank", json=body)
        assert response.status_code == 422
        data = response.json()
        assert data["error_code"] == "INVALID_CONFIGURATION"
        assert data["details"]["fields"] == ["emit"]
        assert not target.exists()

    def test_file_source_rejected(self, client, tmp_path):
        """Test that a request cannot make the server read a definition file."""
        path = tmp_path / "constant.json"
        path.write_text(json.dumps(CONSTANT_PAIR))
        response = client.post("/api/v1/verify/brackets", json={"source": {"file": str(path)}})
        assert response.status_code == 422
        assert response.json()["details"]["fields"] == ["source.file"]
