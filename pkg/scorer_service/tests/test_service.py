import threading
import time

import pytest
from fastapi.testclient import TestClient

from scorer_service.model import PairScorer, Variant
from scorer_service.service import create_app
from scorer_service.training import save_checkpoint

from scorer_helpers import TINY_MODEL, make_examples, overfit_spec, write_examples


@pytest.fixture
def warm_root(tmp_path):
    """Checkpoint root with an untrained tiny model saved for both variants."""
    for variant in Variant:
        save_checkpoint(PairScorer(variant, TINY_MODEL), tmp_path / "ckpt")
    return tmp_path / "ckpt"


@pytest.fixture
def client(warm_root):
    return TestClient(create_app(checkpoint_root=warm_root, max_batch=8))


class TestPredict:
    def test_empty_pairs(self, client):
        resp = client.post("/predict", json={"pairs": []})
        assert resp.status_code == 200
        assert resp.json()["scores"] == []

    def test_alignment_and_range(self, client):
        pairs = [
            {"left_text": f"person {i} words", "right_text": f"spot {i} description"}
            for i in range(5)
        ]
        resp = client.post("/predict", json={"pairs": pairs})
        assert resp.status_code == 200
        scores = resp.json()["scores"]
        assert len(scores) == 5
        assert all(1.0 <= s <= 5.0 for s in scores)

    def test_deterministic(self, client):
        pairs = [{"left_text": "likes hiking", "right_text": "a forest trail"}]
        a = client.post("/predict", json={"pairs": pairs}).json()["scores"]
        b = client.post("/predict", json={"pairs": pairs}).json()["scores"]
        assert a == b

    def test_no_checkpoint_503(self, tmp_path):
        cold = TestClient(create_app(checkpoint_root=tmp_path / "empty"))
        resp = cold.post(
            "/predict", json={"pairs": [{"left_text": "x", "right_text": "y"}]}
        )
        assert resp.status_code == 503

    def test_over_batch_limit_413(self, client):
        pairs = [{"left_text": "a", "right_text": "b"}] * 9
        assert client.post("/predict", json={"pairs": pairs}).status_code == 413

    def test_empty_text_400(self, client):
        resp = client.post(
            "/predict", json={"pairs": [{"left_text": "", "right_text": "y"}]}
        )
        assert resp.status_code == 400

    def test_dialogue_direct_variant(self, client):
        pairs = [
            {
                "left_text": "A: I love beaches\nB: I prefer museums",
                "right_text": "sunny coastline",
                "target_speaker": "B",
            }
        ]
        resp = client.post("/predict", json={"variant": "dialogue_direct", "pairs": pairs})
        assert resp.status_code == 200
        assert len(resp.json()["scores"]) == 1


class TestHealth:
    def test_reports_checkpoint_digest(self, client, warm_root):
        resp = client.get("/health")
        body = resp.json()
        assert body["status"] == "ok"
        assert body["variant"] == "biencoder_sumrec"
        digests = [p.name for p in (warm_root / "biencoder_sumrec").iterdir()]
        assert body["checkpoint_digest"] in digests

    def test_cold_service_null_digest(self, tmp_path):
        cold = TestClient(create_app(checkpoint_root=tmp_path / "empty"))
        assert cold.get("/health").json()["checkpoint_digest"] is None


class TestTrainEndpoint:
    def _paths(self, tmp_path):
        examples = make_examples()
        return (
            str(write_examples(tmp_path / "train.jsonl", examples)),
            str(write_examples(tmp_path / "val.jsonl", examples[:8])),
        )

    def _body(self, tmp_path, **overrides):
        train_path, val_path = self._paths(tmp_path)
        body = {
            "train_path": train_path,
            "val_path": val_path,
            "learning_rate": 1e-2,
            "max_epochs": 5,
            "patience": 5,
            "model": TINY_MODEL.to_dict(),
        }
        body.update(overrides)
        return body

    def _wait(self, client, job_id, timeout=120):
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            status = client.get(f"/train/{job_id}").json()
            if status["status"] != "running":
                return status
            time.sleep(0.05)
        raise TimeoutError("training job did not finish")

    def test_full_cycle_updates_served_model(self, tmp_path):
        client = TestClient(create_app(checkpoint_root=tmp_path / "ckpt"))
        resp = client.post("/train", json=self._body(tmp_path))
        assert resp.status_code == 202
        job_id = resp.json()["job_id"]

        status = self._wait(client, job_id)
        assert status["status"] == "done", status.get("error")
        assert len(status["epoch_losses"]) == 5
        assert status["checkpoint_digest"]

        health = client.get("/health").json()
        assert health["checkpoint_digest"] == status["checkpoint_digest"]
        pairs = [{"left_text": "some person", "right_text": "some spot"}]
        assert client.post("/predict", json={"pairs": pairs}).status_code == 200

    def test_concurrent_train_409(self, tmp_path):
        client = TestClient(create_app(checkpoint_root=tmp_path / "ckpt"))
        first = client.post("/train", json=self._body(tmp_path, max_epochs=200))
        assert first.status_code == 202
        second = client.post("/train", json=self._body(tmp_path))
        assert second.status_code == 409
        self._wait(client, first.json()["job_id"])

    def test_missing_dataset_400(self, tmp_path):
        client = TestClient(create_app(checkpoint_root=tmp_path / "ckpt"))
        body = self._body(tmp_path, train_path=str(tmp_path / "nope.jsonl"))
        assert client.post("/train", json=body).status_code == 400

    def test_unknown_job_404(self, tmp_path):
        client = TestClient(create_app(checkpoint_root=tmp_path / "ckpt"))
        assert client.get("/train/deadbeef").status_code == 404


class TestLiveRoundTrip:
    """Serve over real HTTP and drive it with the recommendation pipeline's
    remote-scorer client."""

    @pytest.fixture
    def live_url(self, warm_root):
        import uvicorn

        app = create_app(checkpoint_root=warm_root, max_batch=8)
        config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
        server = uvicorn.Server(config)
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time.monotonic() + 15
        while not server.started:
            if time.monotonic() > deadline:
                raise TimeoutError("server did not start")
            time.sleep(0.02)
        port = server.servers[0].sockets[0].getsockname()[1]
        yield f"http://127.0.0.1:{port}"
        server.should_exit = True
        thread.join(timeout=10)

    def test_remote_biencoder_three_pair_batch(self, live_url):
        """Acceptance: primary pipeline's remote bi-encoder estimator round-trips
        a 3-pair batch against the live service."""
        sumrec_scoring = pytest.importorskip("sumrec.scoring")
        client = sumrec_scoring.RemoteScorerClient(live_url)
        pairs = [
            {"left_text": "enjoys quiet nature walks", "right_text": "forest park [SEP] calm"},
            {"left_text": "loves street food", "right_text": "night market"},
            {"left_text": "museum fan", "right_text": "history museum"},
        ]
        scores = client.predict(pairs)
        assert len(scores) == 3
        assert all(1.0 <= s <= 5.0 for s in scores)
        digest = client_health(live_url)
        assert digest
        print("\nACCEPTANCE PASS: serving contract (3-pair round trip via live HTTP)")


def client_health(base_url):
    import requests

    return requests.get(f"{base_url}/health", timeout=10).json()["checkpoint_digest"]
