import pytest
from fastapi.testclient import TestClient

from krylovlab.config.settings import settings
from krylovlab.core.linalg import SymTridiagonal
from krylovlab.services.io_service import write_matrix
from main import app


@pytest.fixture
def client(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "output_dir", str(tmp_path / "outputs"))
    with TestClient(app) as c:
        yield c


def test_root(client):
    body = client.get("/").json()
    assert body["message"] == settings.app_name
    assert body["health"] == "/api/v01/health"


def test_health_reports_output_dir(client, tmp_path):
    response = client.get("/api/v01/health/")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "healthy"
    assert body["config"]["output_dir_exists"] is True
    assert body["config"]["output_dir"] == str(tmp_path / "outputs")


def test_kinds(client):
    body = client.get("/api/v01/experiments/kinds").json()
    assert "verify-lemmas" in body["experiments"]
    assert "ftilde_rho_member" in body["matrices"]
    assert "extremal" in body["start_vectors"]


def test_run_linear_race(client):
    spec = {
        "kind": "linear-race",
        "recipe": {"kind": "ftilde_rho_member", "n": 20, "rho": 0.5, "seed": 1},
        "start": {"kind": "extremal"},
        "eps": [1e-3],
        "max_steps": 60,
    }
    response = client.post("/api/v01/experiments/run", json=spec)
    assert response.status_code == 200
    table = response.json()
    assert table["columns"][0] == "epsilon"
    assert len(table["rows"]) == 1
    assert table["metadata"]["experiment"] == "linear-race"


def test_run_writes_output_inside_output_dir(client, tmp_path):
    spec = {
        "kind": "eig-race",
        "recipe": {"kind": "random_tridiag", "n": 12},
        "eps": [1e-3],
        "output_path": "races/race.csv",
    }
    assert client.post("/api/v01/experiments/run", json=spec).status_code == 200
    assert (tmp_path / "outputs" / "races" / "race.csv").exists()


@pytest.mark.parametrize("name", ["../escaped.csv", "ABSOLUTE"])
def test_run_output_outside_output_dir_is_rejected(client, tmp_path, name):
    target = tmp_path / "elsewhere" / "escaped.csv"
    spec = {
        "kind": "eig-race",
        "recipe": {"kind": "random_tridiag", "n": 6},
        "eps": [1e-3],
        "output_path": str(target) if name == "ABSOLUTE" else name,
    }
    assert client.post("/api/v01/experiments/run", json=spec).status_code == 422
    assert not target.exists()
    assert not (tmp_path / "escaped.csv").exists()


@pytest.mark.parametrize(
    "spec",
    [
        {"kind": "eig-race"},
        {"kind": "eig-race", "recipe": {"kind": "random_tridiag", "n": 5}, "eps": [1.5]},
        {"kind": "linear-race", "recipe": {"kind": "scott_like_201"}},
        {"kind": "unknown"},
    ],
)
def test_invalid_spec_is_rejected(client, spec):
    assert client.post("/api/v01/experiments/run", json=spec).status_code == 422


def test_missing_matrix_file_is_rejected(client):
    spec = {"kind": "eig-race", "recipe": {"kind": "explicit_file", "path": "/nonexistent/m.txt"}}
    assert client.post("/api/v01/experiments/run", json=spec).status_code == 422


def test_matrix_text(client):
    response = client.post("/api/v01/experiments/matrix", json={"kind": "increasing_offdiag_501", "n": 4})
    assert response.status_code == 200
    body = response.json()
    assert body["n"] == 4
    assert body["text"].splitlines()[0] == "4 tridiagonal"
    assert body["text"].splitlines()[2] == "0.25 0.5 0.75"


def test_matrix_recipe_validation(client):
    response = client.post("/api/v01/experiments/matrix", json={"kind": "ftilde_rho_member", "n": 4})
    assert response.status_code == 422


def test_matrix_file_outside_output_dir_is_rejected(client):
    response = client.post("/api/v01/experiments/matrix", json={"kind": "explicit_file", "path": "/etc/passwd"})
    assert response.status_code == 422
    assert "root:" not in response.text


def test_matrix_file_inside_output_dir(client, tmp_path):
    write_matrix(SymTridiagonal([1.0, 2.0, 3.0], [0.5, 0.25]), tmp_path / "outputs" / "m.txt")
    response = client.post("/api/v01/experiments/matrix", json={"kind": "explicit_file", "path": "m.txt"})
    assert response.status_code == 200
    assert response.json()["text"].splitlines()[0] == "3 tridiagonal"

    spec = {"kind": "eig-race", "recipe": {"kind": "explicit_file", "path": "m.txt"}, "eps": [1e-3]}
    assert client.post("/api/v01/experiments/run", json=spec).status_code == 200


def test_parse_error_does_not_echo_file_content(client, tmp_path):
    (tmp_path / "outputs" / "bad.txt").write_text("hunter2 secret\n1 2\n", encoding="utf-8")
    response = client.post("/api/v01/experiments/matrix", json={"kind": "explicit_file", "path": "bad.txt"})
    assert response.status_code == 422
    assert "第 1 行" in response.json()["detail"]
    assert "hunter2" not in response.text
