"""Live collection service: surveys with randomized range questions served
over HTTP+JSON, backed by an append-only JSON-lines event log.

The log is the source of truth: anchors are appended before they are served,
answers reference the issued question, and replaying the log reconstructs
all session state and the exported dataset byte-for-byte.  Session ids are
opaque counters; no respondent identifiers exist anywhere in the schema.
"""

from __future__ import annotations

import io
import json
import threading
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .core import (
    NEG_INF,
    POS_INF,
    Interval,
    NullRecord,
    PrivatizedRecord,
    Range,
    canonical_partition,
)
from .coverage import CoverageReport, individual_coverage
from .estimation import NoData, energy_distance, npmle
from .mechanisms import MechanismConfig, config_from_dict

FORBIDDEN_KEYS = {"name", "email", "ip", "user", "user_id", "respondent",
                  "phone", "address"}


class ServiceError(Exception):
    def __init__(self, code: str, message: str, field: str | None = None,
                 status: int = 400):
        super().__init__(message)
        self.code = code
        self.message = message
        self.field = field
        self.status = status

    def body(self) -> dict:
        doc = {"code": self.code, "message": self.message}
        if self.field is not None:
            doc["field"] = self.field
        return doc


def _err(code, message, field=None, status=400):
    return ServiceError(code, message, field=field, status=status)


def _parse_mechanism(qdoc: dict) -> MechanismConfig:
    """Mechanism parsing for the survey wire format: the schema tag is
    implied, and selective gating measures coverage against a uniform
    prior over the question's domain."""
    from scipy.stats import uniform

    mech = dict(qdoc["mechanism"])
    mech.setdefault("schema", 1)
    lo, hi = qdoc["domain"]
    return config_from_dict(mech, selective_prior=uniform(lo, hi - lo))


@dataclass
class Question:
    prompt: str
    domain: tuple[float, float]
    cfg: MechanismConfig
    allow_exact: bool = False
    allow_opt_out: bool = False
    display_precision: int = 1
    reference_cdf: list | None = None  # optional [[x, F], ...] for evaluation

    @property
    def progressive(self) -> bool:
        return self.cfg.progressive is not None


@dataclass
class Survey:
    id: str
    title: str
    questions: list[Question]
    created_at: float


@dataclass
class QuestionState:
    """Per-session, per-question progress."""

    status: str = "active"  # active | done | null
    round: int = 0
    pending: dict | None = None  # {"issue_id", "anchors", "round"}
    rounds: list = dc_field(default_factory=list)  # chosen Range per round
    anchor_history: list = dc_field(default_factory=list)
    choices: list = dc_field(default_factory=list)
    exact: float | None = None
    suppressed: bool = False
    answered: dict = dc_field(default_factory=dict)  # issue_id -> response doc


@dataclass
class Session:
    id: str
    survey_id: str
    questions: list[QuestionState]
    closed: bool = False


def _fmt(x: float, prec: int) -> str:
    return f"{round(x, prec):g}"


def choice_labels(question: Question, anchors: list[float]) -> list[str]:
    """Human-readable labels under the half-open convention."""
    prec = question.display_precision
    if question.cfg.topology == "ring" and not question.progressive:
        labels = [f"≤ {_fmt(anchors[0], prec)} or > {_fmt(anchors[-1], prec)}"]
        for a, b in zip(anchors, anchors[1:]):
            labels.append(f"{_fmt(a, prec)} – {_fmt(b, prec)}")
        return labels
    labels = [f"≤ {_fmt(anchors[0], prec)}"]
    for a, b in zip(anchors, anchors[1:]):
        labels.append(f"{_fmt(a, prec)} – {_fmt(b, prec)}")
    labels.append(f"> {_fmt(anchors[-1], prec)}")
    return labels


def _scan_forbidden(obj, path=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            if k.lower() in FORBIDDEN_KEYS:
                raise _err("forbidden_field",
                           f"respondent-identifying field not allowed: {k}",
                           field=f"{path}{k}")
            _scan_forbidden(v, f"{path}{k}.")
    elif isinstance(obj, list):
        for v in obj:
            _scan_forbidden(v, path)


class SurveyService:
    """Event-sourced survey state; thread-safe via a single writer lock."""

    def __init__(self, log_path: str | Path | None = None, seed: int = 0,
                 clock=time.time):
        self._lock = threading.Lock()
        self._clock = clock
        self.seed = seed
        self.surveys: dict[str, Survey] = {}
        self.sessions: dict[str, Session] = {}
        self._counters = {"survey": 0, "session": 0, "issue": 0}
        self._log_path = Path(log_path) if log_path is not None else None
        self._log_fh = None
        if self._log_path is not None and self._log_path.exists():
            with open(self._log_path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self._apply(json.loads(line))
        if self._log_path is not None:
            self._log_fh = open(self._log_path, "a", encoding="utf-8")

    # -- event plumbing ----------------------------------------------------

    def _emit(self, event: dict):
        _scan_forbidden(event)
        if self._log_fh is not None:
            self._log_fh.write(json.dumps(event, separators=(",", ":")) + "\n")
            self._log_fh.flush()
        self._apply(event)

    def _apply(self, event: dict):
        kind = event["event"]
        if kind == "survey_created":
            doc = event["survey"]
            questions = [
                Question(
                    prompt=q["prompt"],
                    domain=(q["domain"][0], q["domain"][1]),
                    cfg=_parse_mechanism(q),
                    allow_exact=q.get("allow_exact", False),
                    allow_opt_out=q.get("allow_opt_out", False),
                    display_precision=q.get("display_precision", 1),
                    reference_cdf=q.get("reference_cdf"),
                )
                for q in doc["questions"]
            ]
            self.surveys[doc["id"]] = Survey(
                id=doc["id"], title=doc["title"], questions=questions,
                created_at=doc["created_at"])
            self._counters["survey"] += 1
        elif kind == "session_started":
            survey = self.surveys[event["survey_id"]]
            self.sessions[event["session_id"]] = Session(
                id=event["session_id"], survey_id=survey.id,
                questions=[QuestionState() for _ in survey.questions])
            self._counters["session"] += 1
        elif kind == "question_issued":
            st = self.sessions[event["session_id"]].questions[event["qi"]]
            st.pending = {"issue_id": event["issue_id"],
                          "anchors": list(event["anchors"]),
                          "round": event["round"]}
            self._counters["issue"] += 1
        elif kind == "answer_recorded":
            self._apply_answer(event)
        elif kind == "session_closed":
            self.sessions[event["session_id"]].closed = True
        else:
            raise ValueError(f"unknown event kind {kind!r}")

    def _apply_answer(self, event: dict):
        session = self.sessions[event["session_id"]]
        qi = event["qi"]
        st = session.questions[qi]
        question = self.surveys[session.survey_id].questions[qi]
        answer = event["answer"]
        result = event["result"]
        st.answered[event["issue_id"]] = result
        anchors = st.pending["anchors"] if st.pending else []
        st.pending = None
        if answer.get("opt_out"):
            st.status = "null" if st.round == 0 else "done"
            return
        st.round += 1
        if result.get("suppressed"):
            st.suppressed = True
            st.status = "null"
            return
        if answer.get("exact") is not None and question.allow_exact:
            st.exact = float(answer["exact"])
        chosen = self._chosen_range(question, anchors, answer, st)
        st.rounds.append(chosen)
        st.anchor_history.append(anchors)
        st.choices.append(answer.get("choice"))
        st.status = result["status"]

    def _chosen_range(self, question: Question, anchors: list[float],
                      answer: dict, st: QuestionState) -> Range:
        if question.progressive:
            u = anchors[0]
            if answer["choice"] == 1:
                return Range.of((NEG_INF, u))
            return Range.of((u, POS_INF))
        partition = question.cfg.partition_for(anchors)
        if answer.get("exact") is not None:
            idx = answer.get("choice") or partition.locate(float(answer["exact"]))
        else:
            idx = answer["choice"]
        return partition.ranges[idx - 1]

    # -- public operations ---------------------------------------------------

    def create_survey(self, doc: dict) -> str:
        with self._lock:
            title = doc.get("title")
            questions = doc.get("questions")
            if not title:
                raise _err("validation", "title is required", field="title")
            if not questions:
                raise _err("validation", "at least one question is required",
                           field="questions")
            for i, q in enumerate(questions):
                self._validate_question(q, f"questions[{i}]")
            sid = f"svy-{self._counters['survey'] + 1}"
            self._emit({"event": "survey_created", "survey": {
                "id": sid, "title": title, "questions": questions,
                "created_at": self._clock()}})
            return sid

    def _validate_question(self, q: dict, path: str):
        for key in ("prompt", "domain", "mechanism"):
            if key not in q:
                raise _err("validation", f"{key} is required",
                           field=f"{path}.{key}")
        lo, hi = q["domain"]
        if not (lo < hi):
            raise _err("validation", "domain must satisfy lo < hi",
                       field=f"{path}.domain")
        try:
            cfg = _parse_mechanism(q)
        except (ValueError, KeyError) as exc:
            raise _err("validation", f"bad mechanism: {exc}",
                       field=f"{path}.mechanism") from exc
        if cfg.progressive is not None and not q.get("allow_opt_out", False):
            raise _err("validation",
                       "progressive questions require allow_opt_out",
                       field=f"{path}.allow_opt_out")

    def start_session(self, survey_id: str) -> str:
        with self._lock:
            if survey_id not in self.surveys:
                raise _err("not_found", f"no survey {survey_id}", status=404)
            sid = f"ses-{self._counters['session'] + 1}"
            self._emit({"event": "session_started", "survey_id": survey_id,
                        "session_id": sid})
            return sid

    def _session_question(self, session_id: str, qi: int):
        session = self.sessions.get(session_id)
        if session is None:
            raise _err("not_found", f"no session {session_id}", status=404)
        survey = self.surveys[session.survey_id]
        if not (0 <= qi < len(survey.questions)):
            raise _err("not_found", f"no question {qi}", status=404)
        return session, survey.questions[qi], session.questions[qi]

    def _issue_rng(self) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence([self.seed, self._counters["issue"]]))

    def next_question(self, session_id: str, qi: int) -> dict:
        """Issue (or re-serve) the current round's question.  Anchors are
        logged before the payload is returned."""
        with self._lock:
            session, question, st = self._session_question(session_id, qi)
            if st.status != "active":
                raise _err("session_closed", f"question is {st.status}",
                           status=409)
            if st.pending is None:
                anchors = self._draw_anchors(question, st)
                issue_id = f"iss-{self._counters['issue'] + 1}"
                self._emit({"event": "question_issued",
                            "session_id": session_id, "qi": qi,
                            "issue_id": issue_id, "round": st.round + 1,
                            "anchors": anchors})
            return self._payload(question, st)

    def _draw_anchors(self, question: Question, st: QuestionState) -> list[float]:
        rng = self._issue_rng()
        if question.progressive:
            lo, hi = self._current_bounds(question, st)
            return [float(rng.uniform(lo, hi))]
        return [float(a) for a in question.cfg.sampler.draw(rng)]

    def _current_bounds(self, question: Question, st: QuestionState):
        r = self._cumulative_range(question, st)
        part = r.parts[0]
        lo = part.lo if part.lo != NEG_INF else question.domain[0]
        hi = part.hi if part.hi != POS_INF else question.domain[1]
        return lo, hi

    def _cumulative_range(self, question: Question, st: QuestionState) -> Range:
        r = Range.of(question.domain)
        for chosen in st.rounds:
            r = r.intersect(chosen)
        return r

    def _payload(self, question: Question, st: QuestionState) -> dict:
        anchors = st.pending["anchors"]
        max_rounds = (question.cfg.progressive.max_rounds
                      if question.progressive else 1)
        cumulative = self._cumulative_range(question, st)
        lo, hi = question.domain
        width = sum(min(p.hi, hi) - max(p.lo, lo) for p in cumulative.parts
                    if min(p.hi, hi) > max(p.lo, lo))
        return {
            "prompt": question.prompt,
            "choices": choice_labels(question, anchors),
            "anchors": anchors,
            "allow_exact": question.allow_exact,
            "allow_opt_out": question.allow_opt_out,
            "round": st.pending["round"],
            "max_rounds": max_rounds,
            "issue_id": st.pending["issue_id"],
            "coverage": width / (hi - lo),
        }

    def submit_answer(self, session_id: str, qi: int, body: dict) -> dict:
        with self._lock:
            session, question, st = self._session_question(session_id, qi)
            issue_id = body.get("issue_id")
            if issue_id in st.answered:
                return st.answered[issue_id]  # idempotent duplicate post
            if st.status != "active":
                raise _err("session_closed", f"question is {st.status}",
                           status=409)
            if st.pending is None or issue_id != st.pending["issue_id"]:
                raise _err("stale_question",
                           "answer does not reference the issued question",
                           field="issue_id", status=409)
            answer = self._validate_answer(question, st, body)
            result = self._resolve(question, st, answer)
            self._emit({"event": "answer_recorded", "session_id": session_id,
                        "qi": qi, "issue_id": issue_id, "answer": answer,
                        "result": result})
            if st.status != "active" and all(
                    s.status != "active" for s in session.questions):
                self._emit({"event": "session_closed",
                            "session_id": session_id})
            return result

    def _validate_answer(self, question: Question, st: QuestionState,
                         body: dict) -> dict:
        if body.get("opt_out"):
            if not question.allow_opt_out:
                raise _err("validation", "opt-out is not allowed here",
                           field="opt_out")
            return {"opt_out": True}
        anchors = st.pending["anchors"]
        exact = body.get("exact")
        choice = body.get("choice")
        if exact is not None:
            if not question.allow_exact:
                raise _err("validation", "exact entry is not allowed here",
                           field="exact")
            exact = float(exact)
            if question.progressive:
                u = anchors[0]
                implied = 1 if exact <= u else 2
                if choice is not None and choice != implied:
                    raise _err("fidelity_violation",
                               "exact value outside the chosen range",
                               field="exact", status=422)
                return {"choice": implied, "exact": exact}
            partition = question.cfg.partition_for(anchors)
            if choice is not None:
                if not partition.ranges[choice - 1].contains(exact):
                    raise _err("fidelity_violation",
                               "exact value outside the chosen range",
                               field="exact", status=422)
            else:
                choice = partition.locate(exact)
            return {"choice": int(choice), "exact": exact}
        m = 2 if question.progressive else question.cfg.m
        if not isinstance(choice, int) or not (1 <= choice <= m):
            raise _err("validation", f"choice must be in 1..{m}",
                       field="choice")
        return {"choice": choice}

    def _resolve(self, question: Question, st: QuestionState,
                 answer: dict) -> dict:
        """Decide the post-answer state (and the selective gate) without
        mutating; mutation happens in _apply via the logged event."""
        if answer.get("opt_out"):
            status = "null" if st.round == 0 else "done"
            return {"status": status, "state": ("NullResponse" if status ==
                                                "null" else "QuestionDone")}
        suppressed = False
        if question.cfg.selective is not None and not question.progressive:
            sel = question.cfg.selective
            rng = self._issue_rng()
            w = bool(rng.uniform() < sel.rho)
            chosen = self._chosen_range(question, st.pending["anchors"],
                                        answer, st)
            from .coverage import prior_mass
            cov = prior_mass(sel.prior, chosen) if answer.get("exact") is None \
                else 0.0
            suppressed = not (w and cov >= sel.tau)
        if suppressed:
            return {"status": "null", "state": "NullResponse",
                    "suppressed": True}
        if question.progressive and answer.get("exact") is None:
            prog = question.cfg.progressive
            if st.round + 1 < prog.max_rounds:
                return {"status": "active", "state": "NextRound"}
        return {"status": "done", "state": "QuestionDone"}

    # -- export and estimation -----------------------------------------------

    def _survey_records(self, survey_id: str, qi: int, rounds: str = "all"):
        survey = self.surveys.get(survey_id)
        if survey is None:
            raise _err("not_found", f"no survey {survey_id}", status=404)
        if not (0 <= qi < len(survey.questions)):
            raise _err("not_found", f"no question {qi}", status=404)
        question = survey.questions[qi]
        out = []
        for session in self.sessions.values():
            if session.survey_id != survey_id:
                continue
            st = session.questions[qi]
            if st.status == "null" or (st.status == "active" and not st.rounds):
                if st.status == "null":
                    out.append(NullRecord(meta={"session": session.id}))
                continue
            if not st.rounds:
                continue
            use = st.rounds[:1] if rounds == "first" else st.rounds
            meta = {"session": session.id}
            if st.status == "active":
                meta["partial"] = True
            out.append(self._record_for(question, st, use, meta))
        return out

    def _record_for(self, question: Question, st: QuestionState,
                    rounds: list[Range], meta: dict):
        exact = st.exact
        if not question.progressive:
            # one-shot: the original anchors/partition/choice are authoritative
            anchors = st.anchor_history[0]
            return PrivatizedRecord(
                anchors=tuple(anchors), topology=question.cfg.topology,
                partition=question.cfg.partition_for(anchors),
                choice=st.choices[0], exact=exact, meta=meta)
        cumulative = Range.of(question.domain)
        for chosen in rounds:
            cumulative = cumulative.intersect(chosen)
        endpoints = sorted({e for p in cumulative.parts
                            for e in (p.lo, p.hi)
                            if e not in (NEG_INF, POS_INF)})
        partition = canonical_partition(endpoints)
        probe = exact if exact is not None else _interior_point(cumulative)
        choice = partition.locate(probe)
        return PrivatizedRecord(
            anchors=tuple(endpoints), topology="canonical",
            partition=partition, choice=choice, exact=exact, meta=meta)

    def export_records(self, survey_id: str, qi: int) -> str:
        with self._lock:
            records = self._survey_records(survey_id, qi)
        buf = io.StringIO()
        for rec in records:
            buf.write(rec.to_json() + "\n")
        return buf.getvalue()

    def estimate(self, survey_id: str, qi: int, rounds: str = "all") -> dict:
        if rounds not in ("all", "first"):
            raise _err("validation", "rounds must be 'all' or 'first'",
                       field="rounds")
        with self._lock:
            records = [r for r in self._survey_records(survey_id, qi, rounds)
                       if not r.is_null]
            question = self.surveys[survey_id].questions[qi]
        if not records:
            raise _err("no_data", "no informative records yet", status=409)
        try:
            result = npmle(records)
        except NoData as exc:
            raise _err("no_data", str(exc), status=409) from exc
        covs = np.asarray([individual_coverage(r, result.cdf) for r in records])
        report = CoverageReport(
            tau=float(np.mean(covs)),
            stderr=float(np.std(covs, ddof=1) / np.sqrt(covs.size))
            if covs.size > 1 else 0.0,
            n=covs.size, prior_tag="npmle-plug-in")
        doc = {"cdf": result.cdf.jumps, "coverage": report.to_dict(),
               "n_records": len(records), "rounds": rounds}
        if question.reference_cdf:
            from .core import StepCDF

            xs = [p[0] for p in question.reference_cdf]
            fs = [p[1] for p in question.reference_cdf]
            ref = StepCDF(xs, fs)
            lo = min(question.domain[0], xs[0]) - 1.0
            hi = max(question.domain[1], xs[-1]) + 1.0
            doc["energy_distance_vs_reference"] = energy_distance(
                result.cdf, ref, (lo, hi))
        return doc

    def close(self):
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None


def _interior_point(r: Range) -> float:
    p = r.parts[0]
    if p.hi != POS_INF:
        return p.hi
    if p.lo != NEG_INF:
        return p.lo + 1.0
    return 0.0


# ---------------------------------------------------------------------------
# HTTP layer


def create_app(service: SurveyService):
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse, PlainTextResponse

    app = FastAPI(title="rangecollect survey service")
    app.state.service = service

    @app.exception_handler(ServiceError)
    async def _service_error(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content=exc.body())

    @app.post("/surveys", status_code=201)
    async def create_survey(body: dict):
        return {"id": service.create_survey(body)}

    @app.post("/surveys/{survey_id}/sessions", status_code=201)
    async def start_session(survey_id: str):
        return {"session_id": service.start_session(survey_id)}

    @app.get("/sessions/{session_id}/questions/{qi}")
    async def next_question(session_id: str, qi: int):
        return service.next_question(session_id, qi)

    @app.post("/sessions/{session_id}/questions/{qi}/answer")
    async def submit_answer(session_id: str, qi: int, body: dict):
        return service.submit_answer(session_id, qi, body)

    @app.get("/surveys/{survey_id}/questions/{qi}/export")
    async def export_records(survey_id: str, qi: int):
        return PlainTextResponse(service.export_records(survey_id, qi),
                                 media_type="application/jsonl")

    @app.get("/surveys/{survey_id}/questions/{qi}/estimate")
    async def estimate(survey_id: str, qi: int, rounds: str = "all"):
        return service.estimate(survey_id, qi, rounds)

    return app
