"""Walk the HTTP API end to end without binding a port.

Uses the in-process test client against the same app `trajsim serve` runs,
so every request/response below is exactly what a network client sees.

    python3 demos/service_walkthrough.py
"""

import json

from fastapi.testclient import TestClient

from trajsim.service import ServiceConfig, create_app


def pretty(label, payload):
    print(f"\n{label}")
    print(json.dumps(payload, indent=2, sort_keys=True))


def main():
    client = TestClient(create_app(ServiceConfig()))

    pretty("GET /healthz", client.get("/healthz").json())

    created = client.post(
        "/sessions",
        json={
            "backend": "oracle",
            "profile": {"age": 58, "gender": "male", "chief_complaint": "fever"},
            "diagnostics": {"primary": {"content": "community-acquired pneumonia"}},
            "seed": 11,
        },
    )
    descriptor = created.json()
    sid = descriptor["id"]
    pretty(f"POST /sessions -> {created.status_code}", descriptor)

    stepped = client.post(
        f"/sessions/{sid}/step",
        json={
            "at": 120,
            "actions": [
                {"kind": "inquiry", "code": "wbc count", "display_name": "white cell count"},
                {"kind": "intervention", "code": "antibiotics course", "detail": {"agent": "ceftriaxone"}},
            ],
        },
    )
    # interventions come back with outcome: null, inquiries carry a value
    pretty(f"POST /sessions/{sid}/step -> {stepped.status_code}", stepped.json())

    recheck = client.post(
        f"/sessions/{sid}/step",
        json={"at": 480, "actions": [{"kind": "inquiry", "code": "wbc count"}]},
    )
    pretty(f"POST /sessions/{sid}/step -> {recheck.status_code}", recheck.json())

    # stepping backwards in time is refused, session left as it was
    stale = client.post(
        f"/sessions/{sid}/step",
        json={"at": 480, "actions": [{"kind": "inquiry", "code": "wbc count"}]},
    )
    pretty(f"POST at a non-advancing time -> {stale.status_code}", stale.json())

    branched = client.post(f"/sessions/{sid}/branch", json={"at_step": 1})
    pretty(f"POST /sessions/{sid}/branch -> {branched.status_code}", branched.json())

    fetched = client.get(f"/sessions/{sid}")
    pretty(f"GET /sessions/{sid} -> {fetched.status_code}", fetched.json())


if __name__ == "__main__":
    main()
