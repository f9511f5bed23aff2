import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from rangecollect.core import read_records
from rangecollect.service import SurveyService, ServiceError, create_app


def one_shot_survey(**qkw):
    q = {"prompt": "Monthly income?",
         "domain": [0.0, 10000.0],
         "mechanism": {"topology": "canonical", "m": 2,
                       "sampler": {"kind": "uniform", "a": 0.0,
                                   "b": 10000.0}}}
    q.update(qkw)
    return {"title": "income study", "questions": [q]}


def progressive_survey(max_rounds=3, **qkw):
    q = {"prompt": "Age?",
         "domain": [0.0, 100.0],
         "mechanism": {"topology": "canonical", "m": 2,
                       "sampler": {"kind": "uniform", "a": 0.0, "b": 100.0},
                       "progressive": {"max_rounds": max_rounds, "tau": 0.0}},
         "allow_opt_out": True}
    q.update(qkw)
    return {"title": "age study", "questions": [q]}


@pytest.fixture
def client(tmp_path):
    service = SurveyService(log_path=tmp_path / "events.jsonl", seed=7)
    with TestClient(create_app(service)) as c:
        c.service = service
        yield c
    service.close()


# ---------------------------------------------------------------------------
# validation


def test_create_survey_validation_paths(client):
    r = client.post("/surveys", json={"title": "", "questions": []})
    assert r.status_code == 400 and r.json()["field"] == "title"

    doc = one_shot_survey()
    del doc["questions"][0]["domain"]
    r = client.post("/surveys", json=doc)
    assert r.status_code == 400
    assert r.json()["field"] == "questions[0].domain"

    doc = one_shot_survey(domain=[5.0, 5.0])
    r = client.post("/surveys", json=doc)
    assert r.json()["field"] == "questions[0].domain"

    doc = one_shot_survey()
    doc["questions"][0]["mechanism"]["topology"] = "torus"
    r = client.post("/surveys", json=doc)
    assert r.status_code == 400
    assert r.json()["code"] == "validation"
    assert r.json()["field"] == "questions[0].mechanism"

    doc = progressive_survey()
    doc["questions"][0]["allow_opt_out"] = False
    r = client.post("/surveys", json=doc)
    assert r.json()["field"] == "questions[0].allow_opt_out"


def test_forbidden_fields_rejected(client):
    doc = one_shot_survey()
    doc["questions"][0]["email"] = "a@b.c"
    r = client.post("/surveys", json=doc)
    assert r.status_code == 400
    assert r.json()["code"] == "forbidden_field"
    assert "email" in r.json()["field"]


def test_not_found_paths(client):
    assert client.post("/surveys/svy-99/sessions").status_code == 404
    assert client.get("/sessions/ses-99/questions/0").status_code == 404
    sid = client.post("/surveys", json=one_shot_survey()).json()["id"]
    ses = client.post(f"/surveys/{sid}/sessions").json()["session_id"]
    assert client.get(f"/sessions/{ses}/questions/5").status_code == 404


# ---------------------------------------------------------------------------
# one-shot flow


def test_one_shot_flow_and_reserve(client):
    sid = client.post("/surveys", json=one_shot_survey()).json()["id"]
    ses = client.post(f"/surveys/{sid}/sessions").json()["session_id"]
    q = client.get(f"/sessions/{ses}/questions/0").json()
    assert q["round"] == 1 and q["max_rounds"] == 1
    assert len(q["choices"]) == 2 and q["choices"][0].startswith("≤")
    # a second GET re-serves the same issue, no fresh anchors
    q2 = client.get(f"/sessions/{ses}/questions/0").json()
    assert q2["issue_id"] == q["issue_id"] and q2["anchors"] == q["anchors"]

    r = client.post(f"/sessions/{ses}/questions/0/answer",
                    json={"issue_id": q["issue_id"], "choice": 1})
    assert r.json()["state"] == "QuestionDone"
    # question now closed
    assert client.get(f"/sessions/{ses}/questions/0").status_code == 409


def test_idempotent_duplicate_answer(client):
    sid = client.post("/surveys", json=one_shot_survey()).json()["id"]
    ses = client.post(f"/surveys/{sid}/sessions").json()["session_id"]
    q = client.get(f"/sessions/{ses}/questions/0").json()
    body = {"issue_id": q["issue_id"], "choice": 2}
    first = client.post(f"/sessions/{ses}/questions/0/answer", json=body)
    second = client.post(f"/sessions/{ses}/questions/0/answer", json=body)
    assert second.status_code == 200
    assert second.json() == first.json()
    # exactly one record in the export
    export = client.get(f"/surveys/{sid}/questions/0/export").text
    assert len(export.strip().splitlines()) == 1


def test_stale_issue_rejected(client):
    sid = client.post("/surveys", json=one_shot_survey()).json()["id"]
    ses = client.post(f"/surveys/{sid}/sessions").json()["session_id"]
    client.get(f"/sessions/{ses}/questions/0")
    r = client.post(f"/sessions/{ses}/questions/0/answer",
                    json={"issue_id": "iss-999", "choice": 1})
    assert r.status_code == 409
    assert r.json()["code"] == "stale_question"


def test_bad_choice_rejected(client):
    sid = client.post("/surveys", json=one_shot_survey()).json()["id"]
    ses = client.post(f"/surveys/{sid}/sessions").json()["session_id"]
    q = client.get(f"/sessions/{ses}/questions/0").json()
    r = client.post(f"/sessions/{ses}/questions/0/answer",
                    json={"issue_id": q["issue_id"], "choice": 3})
    assert r.status_code == 400 and r.json()["field"] == "choice"


def test_exact_entry_fidelity(client):
    sid = client.post("/surveys",
                      json=one_shot_survey(allow_exact=True)).json()["id"]
    ses = client.post(f"/surveys/{sid}/sessions").json()["session_id"]
    q = client.get(f"/sessions/{ses}/questions/0").json()
    u = q["anchors"][0]
    # exact above the anchor paired with choice 1 contradicts itself
    r = client.post(f"/sessions/{ses}/questions/0/answer",
                    json={"issue_id": q["issue_id"], "choice": 1,
                          "exact": u + 1.0})
    assert r.status_code == 422
    assert r.json()["code"] == "fidelity_violation"
    # exact alone infers the choice
    r = client.post(f"/sessions/{ses}/questions/0/answer",
                    json={"issue_id": q["issue_id"], "exact": u + 1.0})
    assert r.status_code == 200
    export = client.get(f"/surveys/{sid}/questions/0/export").text
    rec = read_records(export.splitlines())[0]
    assert rec.exact == pytest.approx(u + 1.0)
    assert rec.choice == 2


def test_exact_not_allowed_by_default(client):
    sid = client.post("/surveys", json=one_shot_survey()).json()["id"]
    ses = client.post(f"/surveys/{sid}/sessions").json()["session_id"]
    q = client.get(f"/sessions/{ses}/questions/0").json()
    r = client.post(f"/sessions/{ses}/questions/0/answer",
                    json={"issue_id": q["issue_id"], "exact": 5.0})
    assert r.status_code == 400 and r.json()["field"] == "exact"


# ---------------------------------------------------------------------------
# progressive flow


def test_progressive_narrows_and_finishes(client):
    sid = client.post("/surveys", json=progressive_survey(3)).json()["id"]
    ses = client.post(f"/surveys/{sid}/sessions").json()["session_id"]
    widths = []
    for rnd in range(1, 4):
        q = client.get(f"/sessions/{ses}/questions/0").json()
        assert q["round"] == rnd and q["max_rounds"] == 3
        widths.append(q["coverage"])
        r = client.post(f"/sessions/{ses}/questions/0/answer",
                        json={"issue_id": q["issue_id"], "choice": 1}).json()
        assert r["state"] == ("QuestionDone" if rnd == 3 else "NextRound")
    assert widths[0] == pytest.approx(1.0)
    assert widths[2] < widths[1] < widths[0]
    export = client.get(f"/surveys/{sid}/questions/0/export").text
    rec = read_records(export.splitlines())[0]
    assert rec.topology == "canonical"


def test_progressive_opt_out_round1_is_null(client):
    sid = client.post("/surveys", json=progressive_survey(3)).json()["id"]
    ses = client.post(f"/surveys/{sid}/sessions").json()["session_id"]
    q = client.get(f"/sessions/{ses}/questions/0").json()
    r = client.post(f"/sessions/{ses}/questions/0/answer",
                    json={"issue_id": q["issue_id"], "opt_out": True}).json()
    assert r["state"] == "NullResponse"
    export = client.get(f"/surveys/{sid}/questions/0/export").text
    rec = read_records(export.splitlines())[0]
    assert rec.is_null


def test_progressive_opt_out_later_keeps_rounds(client):
    sid = client.post("/surveys", json=progressive_survey(3)).json()["id"]
    ses = client.post(f"/surveys/{sid}/sessions").json()["session_id"]
    q = client.get(f"/sessions/{ses}/questions/0").json()
    client.post(f"/sessions/{ses}/questions/0/answer",
                json={"issue_id": q["issue_id"], "choice": 2})
    q = client.get(f"/sessions/{ses}/questions/0").json()
    r = client.post(f"/sessions/{ses}/questions/0/answer",
                    json={"issue_id": q["issue_id"], "opt_out": True}).json()
    assert r["state"] == "QuestionDone"
    export = client.get(f"/surveys/{sid}/questions/0/export").text
    rec = read_records(export.splitlines())[0]
    assert not rec.is_null and rec.exact is None


def test_rounds_first_vs_all_estimate(client):
    sid = client.post("/surveys", json=progressive_survey(2)).json()["id"]
    rng = np.random.default_rng(0)
    for _ in range(40):
        y = float(rng.uniform(0, 100))
        ses = client.post(f"/surveys/{sid}/sessions").json()["session_id"]
        for _ in range(2):
            q = client.get(f"/sessions/{ses}/questions/0")
            if q.status_code == 409:
                break
            q = q.json()
            choice = 1 if y <= q["anchors"][0] else 2
            client.post(f"/sessions/{ses}/questions/0/answer",
                        json={"issue_id": q["issue_id"], "choice": choice})
    est_all = client.get(f"/surveys/{sid}/questions/0/estimate").json()
    est_first = client.get(
        f"/surveys/{sid}/questions/0/estimate?rounds=first").json()
    assert est_all["n_records"] == est_first["n_records"] == 40
    # later rounds narrow ranges, so plug-in coverage cannot be larger
    assert est_all["coverage"]["tau"] <= est_first["coverage"]["tau"] + 1e-9
    bad = client.get(f"/surveys/{sid}/questions/0/estimate?rounds=half")
    assert bad.status_code == 400


# ---------------------------------------------------------------------------
# selective suppression


def test_selective_suppression_emits_nulls(client):
    q = {"prompt": "salary?", "domain": [0.0, 1.0],
         "mechanism": {"topology": "canonical", "m": 2,
                       "sampler": {"kind": "uniform", "a": 0.0, "b": 1.0},
                       "selective": {"tau": 0.6, "rho": 0.3}}}
    sid = client.post("/surveys",
                      json={"title": "s", "questions": [q]}).json()["id"]
    rng = np.random.default_rng(1)
    kept = nulls = 0
    for _ in range(120):
        y = float(rng.uniform())
        ses = client.post(f"/surveys/{sid}/sessions").json()["session_id"]
        qd = client.get(f"/sessions/{ses}/questions/0").json()
        choice = 1 if y <= qd["anchors"][0] else 2
        r = client.post(f"/sessions/{ses}/questions/0/answer",
                        json={"issue_id": qd["issue_id"],
                              "choice": choice}).json()
        if r["state"] == "NullResponse":
            nulls += 1
        else:
            kept += 1
    assert nulls > 0 and kept > 0
    assert kept / (kept + nulls) < 0.5  # well below half at rho = 0.3
    export = client.get(f"/surveys/{sid}/questions/0/export").text
    recs = read_records(export.splitlines())
    assert sum(r.is_null for r in recs) == nulls
    assert len(recs) == 120


# ---------------------------------------------------------------------------
# log replay and determinism


def test_anchors_logged_before_serving(tmp_path):
    log = tmp_path / "ev.jsonl"
    service = SurveyService(log_path=log, seed=3)
    sid = service.create_survey(one_shot_survey())
    ses = service.start_session(sid)
    payload = service.next_question(ses, 0)
    events = [json.loads(l) for l in log.read_text().splitlines()]
    issued = [e for e in events if e["event"] == "question_issued"]
    assert issued and issued[0]["anchors"] == payload["anchors"]
    service.close()


def test_replay_reconstructs_state_and_export(tmp_path):
    log = tmp_path / "ev.jsonl"
    service = SurveyService(log_path=log, seed=11)
    sid = service.create_survey(progressive_survey(3))
    rng = np.random.default_rng(5)
    for _ in range(10):
        y = float(rng.uniform(0, 100))
        ses = service.start_session(sid)
        while True:
            try:
                q = service.next_question(ses, 0)
            except ServiceError:
                break
            choice = 1 if y <= q["anchors"][0] else 2
            service.submit_answer(ses, 0, {"issue_id": q["issue_id"],
                                           "choice": choice})
    export = service.export_records(sid, 0)
    service.close()

    replayed = SurveyService(log_path=log, seed=11)
    assert replayed.export_records(sid, 0) == export
    # replay continues numbering where the log left off
    ses = replayed.start_session(sid)
    q = replayed.next_question(ses, 0)
    assert q["round"] == 1
    replayed.close()


def test_replay_preserves_selective_draws(tmp_path):
    log = tmp_path / "ev.jsonl"
    q = {"prompt": "x", "domain": [0.0, 1.0],
         "mechanism": {"topology": "canonical", "m": 2,
                       "sampler": {"kind": "uniform", "a": 0.0, "b": 1.0},
                       "selective": {"tau": 0.0, "rho": 0.5}}}
    service = SurveyService(log_path=log, seed=2)
    sid = service.create_survey({"title": "t", "questions": [q]})
    results = []
    for _ in range(30):
        ses = service.start_session(sid)
        qd = service.next_question(ses, 0)
        r = service.submit_answer(ses, 0, {"issue_id": qd["issue_id"],
                                           "choice": 1})
        results.append(r["state"])
    export = service.export_records(sid, 0)
    service.close()
    # the W draw is recorded in the event, never redrawn on replay
    replayed = SurveyService(log_path=log, seed=999)
    assert replayed.export_records(sid, 0) == export
    replayed.close()
    assert "NullResponse" in results and "QuestionDone" in results


def test_estimate_includes_reference_distance(client):
    ref = [[float(x), (x + 1) / 10.0] for x in range(10)]
    sid = client.post("/surveys", json=one_shot_survey(
        domain=[0.0, 9.0], reference_cdf=ref,
        mechanism={"topology": "canonical", "m": 2,
                   "sampler": {"kind": "uniform", "a": 0.0,
                               "b": 9.0}})).json()["id"]
    rng = np.random.default_rng(8)
    for _ in range(25):
        y = float(rng.integers(0, 10))
        ses = client.post(f"/surveys/{sid}/sessions").json()["session_id"]
        q = client.get(f"/sessions/{ses}/questions/0").json()
        client.post(f"/sessions/{ses}/questions/0/answer",
                    json={"issue_id": q["issue_id"],
                          "choice": 1 if y <= q["anchors"][0] else 2})
    est = client.get(f"/surveys/{sid}/questions/0/estimate").json()
    assert "energy_distance_vs_reference" in est
    assert est["energy_distance_vs_reference"] >= 0.0


def test_estimate_without_data_is_409(client):
    sid = client.post("/surveys", json=one_shot_survey()).json()["id"]
    r = client.get(f"/surveys/{sid}/questions/0/estimate")
    assert r.status_code == 409 and r.json()["code"] == "no_data"
