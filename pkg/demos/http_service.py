"""The HTTP surface, end to end, without binding a port.

Builds the same app `iotseek serve` runs and drives it in process: query,
trace fetch, NDJSON ingest, nearest-k reads, and an atomic reindex.
"""

from __future__ import annotations

import json

from fastapi.testclient import TestClient

from iotseek.config import AppConfig
from iotseek.server import build_state, create_app

ORIGIN = {"lat": 43.6817, "lon": -79.3916}


def main() -> None:
    state = build_state(AppConfig())  # no data_dir: generates the demo dataset
    client = TestClient(create_app(state))

    health = client.get("/health").json()
    print(f"health: {health['services']} services, {health['documents']} documents, "
          f"index {health['index_hash'][:12]}…")

    body = client.post("/query", json={"query": "quiet dog park", "origin": ORIGIN}).json()
    print(f"\nPOST /query -> route {body['route']}, {len(body['alternatives'])} alternatives")
    print(f"  recommendation: {body['recommendation']['Service Name']}")

    trace = client.get(f"/traces/{body['trace_id']}").json()
    print(f"  trace {body['trace_id'][:12]}… has {len(trace['steps'])} steps")

    doc = {
        "node_id": "demo-1", "service_name": "dog park", "display_name": "Demo Park",
        "address": "1 Demo St", "location": {"lat": 43.6818, "lon": -79.3917},
        "occupancy_factor": 0.05, "rate": 5.0,
    }
    lines = "\n".join(json.dumps({"node_id": "demo-1", "topic": "input",
                                  "payload": doc, "sent_at": 1.0}) for _ in range(1))
    resp = client.post("/ingest?allow_create=true", content=lines,
                       headers={"content-type": "application/x-ndjson"})
    print(f"\nPOST /ingest -> {resp.json()}")

    near = client.get("/collections/dog park/near",
                      params={"lat": ORIGIN["lat"], "lon": ORIGIN["lon"], "k": 3}).json()
    print("GET /collections/dog park/near ->",
          [f"{h['display_name']} ({h['distance_m']:.0f} m)" for h in near])

    re1 = client.post("/admin/reindex").json()
    re2 = client.post("/admin/reindex").json()
    print(f"\nPOST /admin/reindex -> {re1['entries']} entries, deterministic: "
          f"{re1['index_hash'] == re2['index_hash']}")


if __name__ == "__main__":
    main()
