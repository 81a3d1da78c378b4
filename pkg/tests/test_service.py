"""The HTTP service: management API, browser surface, published schemas."""

import base64
import json
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from btweb.service import (
    JobView,
    PublishReport,
    StatusReport,
    create_app,
    parse_endpoint,
    schema_documents,
)

from gatewaynet import GatewayNode, gateway_sim

SITE = {
    "index.html": b"<html><body>service</body></html>",
    "css/site.css": b"body { margin: 0 }",
}


@pytest.fixture
def client(tmp_path):
    sim = gateway_sim(seed=12)
    gw = GatewayNode(sim, 0, tmp_path).start()
    app = create_app(node=gw.node)
    with TestClient(app) as test_client:
        yield test_client, gw
    if gw.node.running:
        gw.node.shutdown()


def b64_site():
    return {name: base64.b64encode(data).decode() for name, data in SITE.items()}


def test_status_is_a_valid_contract(client):
    test_client, gw = client
    response = test_client.get("/api/status")
    assert response.status_code == 200
    report = StatusReport.model_validate(response.json())
    assert report.running is True
    assert report.node_id == gw.node.node_id.hex()


def test_publish_then_browse(client):
    test_client, _ = client
    response = test_client.post("/api/sites", json={"files": b64_site(), "name": "pages"})
    assert response.status_code == 200
    report = PublishReport.model_validate(response.json())
    assert report.files == 2
    assert report.magnet.startswith("magnet:?xt=urn:btih:")

    page = test_client.get(f"/btih/{report.infohash}/index.html")
    assert page.status_code == 200
    assert page.content == SITE["index.html"]
    assert page.headers["content-type"].startswith("text/html")

    etag = page.headers["etag"]
    again = test_client.get(
        f"/btih/{report.infohash}/index.html", headers={"If-None-Match": etag}
    )
    assert again.status_code == 304

    snapshot = test_client.get("/status")
    assert snapshot.status_code == 200
    assert StatusReport.model_validate(snapshot.json()).sites[0].infohash == report.infohash


def test_publish_rejects_bad_requests(client):
    test_client, _ = client
    both = test_client.post(
        "/api/sites", json={"files": b64_site(), "path": "/tmp/x"}
    )
    assert both.status_code == 422
    neither = test_client.post("/api/sites", json={})
    assert neither.status_code == 422
    garbage = test_client.post("/api/sites", json={"files": {"index.html": "!!not-b64!!"}})
    assert garbage.status_code == 400
    missing_dir = test_client.post("/api/sites", json={"path": "/nonexistent-site-dir"})
    assert missing_dir.status_code == 400


def test_load_job_lifecycle(client):
    test_client, _ = client
    target = "f" * 40
    response = test_client.post(
        "/api/loads", json={"url": f"magnet:?xt=urn:btih:{target}"}
    )
    assert response.status_code == 202
    job = JobView.model_validate(response.json())
    assert job.infohash == target
    assert job.phase in ("resolving", "discovering")

    listing = test_client.get("/api/jobs")
    assert [j["infohash"] for j in listing.json()] == [target]

    single = test_client.get(f"/api/jobs/{target}")
    assert JobView.model_validate(single.json()) == JobView.model_validate(listing.json()[0])

    assert test_client.get("/api/jobs/" + "0" * 40).status_code == 404
    assert test_client.get("/api/jobs/zz").status_code == 400
    assert test_client.post("/api/loads", json={"url": "magnet:?xt=urn:btih:short"}).status_code == 400


def test_stop_route_parks_the_browser_surface(client):
    test_client, gw = client
    stopped = test_client.post("/api/stop")
    report = StatusReport.model_validate(stopped.json())
    assert report.http_enabled is False
    assert report.running is True  # background seeding stays up by default

    page = test_client.get("/btih/" + "a" * 40 + "/")
    assert page.status_code == 503
    assert gw.node.running


def test_non_get_browser_requests_are_rejected(client):
    test_client, _ = client
    response = test_client.post("/btih/" + "a" * 40 + "/index.html")
    assert response.status_code == 400
    assert response.json() == {"error": "only GET is supported"}


def test_magnet_redirects_to_site_path(client):
    test_client, _ = client
    target = "c" * 40
    response = test_client.get(
        "/magnet",
        params={"uri": f"magnet:?xt=urn:btih:{target}"},
        follow_redirects=False,
    )
    assert response.status_code == 303
    assert response.headers["location"] == f"/btih/{target}/"


def test_endpoint_parsing():
    peer = parse_endpoint("10.0.0.1:6881")
    assert (peer.ip_str, peer.port) == ("10.0.0.1", 6881)
    for bad in ("nocolon", "1.2.3.4:", "1.2.3.4:x", ":6881x"):
        with pytest.raises(ValueError):
            parse_endpoint(bad)


def test_published_schema_files_are_in_sync():
    docs = Path(__file__).resolve().parent.parent / "docs" / "schemas"
    generated = schema_documents()
    on_disk = {p.stem.replace(".schema", ""): p for p in docs.glob("*.schema.json")}
    assert set(on_disk) == set(generated)
    for name, document in generated.items():
        assert json.loads(on_disk[name].read_text()) == document
