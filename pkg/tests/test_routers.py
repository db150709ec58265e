import pytest
from fastapi.testclient import TestClient

from main import app


class _Queue:
    def __init__(self):
        self.calls = []

    def delay(self, *args):
        self.calls.append(args)


@pytest.fixture
def store(monkeypatch):
    runs = {}

    def create_run(run_id, request):
        runs[run_id] = {"_id": run_id, "request": request, "status": "pending", "result": None}
        return runs[run_id]

    queue = _Queue()
    monkeypatch.setattr("app.run_service.create_run", create_run)
    monkeypatch.setattr("app.run_service.get_run_by_id", runs.get)
    monkeypatch.setattr("app.run_service.perform_synthesis_run", queue)
    return runs, queue


@pytest.fixture
def client():
    return TestClient(app)


def _request(tmp_path):
    for name in ("in.nrrd", "template.nrrd"):
        (tmp_path / name).write_bytes(b"")
    return {
        "input_path": str(tmp_path / "in.nrrd"),
        "template_path": str(tmp_path / "template.nrrd"),
        "out_dir": str(tmp_path / "out"),
    }


def test_start_and_get_run(client, store, tmp_path):
    runs, queue = store
    response = client.post("/app/start-run", json=_request(tmp_path))
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "pending"
    assert body["id"] in runs
    assert queue.calls[0][0] == body["id"]
    assert queue.calls[0][1]["config"]["synthesis"]["radius"] == 2

    fetched = client.get(f"/app/get-run/{body['id']}")
    assert fetched.status_code == 200
    assert fetched.json() == {"id": body["id"], "status": "pending", "result": None}


def test_missing_input_file_is_rejected(client, store, tmp_path):
    request = _request(tmp_path)
    request["input_path"] = str(tmp_path / "absent.nrrd")
    response = client.post("/app/start-run", json=request)
    assert response.status_code == 400
    assert "input file not found" in response.json()["detail"]
    assert store[1].calls == []


def test_unknown_run_is_404(client, store):
    assert client.get("/app/get-run/nope").status_code == 404


def test_invalid_config_is_422(client, store, tmp_path):
    request = _request(tmp_path)
    request["config"] = {"synthesis": {"radius": -1}}
    assert client.post("/app/start-run", json=request).status_code == 422
