"""Blinded perceptual study: trial serving, response collection, statistics.

Each trial presents a triad (ground truth plus two method outputs) in an
order randomized per (rater, trial) from a recorded seed. The payload sent
to a rater carries only opaque image tokens, never method names. Submitted
responses are appended to a newline-delimited JSON results file; provenance
is resolved into the stored record at submission time, after the rater has
answered.

Note: no ``from __future__ import annotations`` here; the request model is
defined inside ``create_app`` and its annotation must stay a real class for
the framework to treat it as the request body.
"""

import hashlib
import json
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import CasganError, ConfigError, DataError
from .rng import numpy_rng

ROLES = ("target", "a", "b")
GROUND_TRUTH_LABEL = "ground_truth"
SCORE_RANGE = (1, 2, 3, 4)


class DuplicateResponseError(CasganError):
    """A (rater, trial) pair already has a stored response."""


class UnknownTrialError(CasganError):
    pass


class ResponseValidationError(CasganError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class StudyTriad:
    trial_id: str
    target_path: str
    candidate_a_path: str
    candidate_b_path: str
    method_a: str
    method_b: str

    def path_for(self, role: str) -> str:
        return {
            "target": self.target_path,
            "a": self.candidate_a_path,
            "b": self.candidate_b_path,
        }[role]

    @property
    def methods(self) -> dict:
        return {"target": GROUND_TRUTH_LABEL, "a": self.method_a, "b": self.method_b}


def load_study_manifest(path) -> tuple[list[StudyTriad], Path]:
    path = Path(path)
    with open(path) as fh:
        payload = json.load(fh)
    triads = []
    seen = set()
    for entry in payload.get("triads", []):
        trial_id = entry["trial_id"]
        if trial_id in seen:
            raise DataError(f"duplicate trial_id '{trial_id}' in study manifest")
        seen.add(trial_id)
        cands = entry["candidates"]
        triads.append(
            StudyTriad(
                trial_id=trial_id,
                target_path=entry["target"],
                candidate_a_path=cands["a"]["path"],
                candidate_b_path=cands["b"]["path"],
                method_a=cands["a"]["method"],
                method_b=cands["b"]["method"],
            )
        )
    if not triads:
        raise DataError(f"study manifest {path} lists no triads")
    return triads, path.parent


class Study:
    """Trial bookkeeping for one study manifest and one results file."""

    def __init__(self, triads, results_path, seed: int = 0, base_dir=None):
        self.triads = list(triads)
        self.by_id = {t.trial_id: t for t in self.triads}
        self.index_of = {t.trial_id: i for i, t in enumerate(self.triads)}
        self.results_path = Path(results_path)
        self.seed = seed
        self.base_dir = Path(base_dir) if base_dir else None
        self._lock = threading.Lock()
        self._answered: set[tuple[str, str]] = set()
        self._tokens: dict[str, tuple[str, str]] = {}
        for t in self.triads:
            for role in ROLES:
                self._tokens[self.image_token(t.trial_id, role)] = (t.trial_id, role)
        if self.results_path.exists():
            for record in self.load_records():
                self._answered.add((record["rater"], record["trial_id"]))

    @classmethod
    def from_manifest(cls, manifest_path, results_path, seed: int = 0) -> "Study":
        triads, base_dir = load_study_manifest(manifest_path)
        return cls(triads, results_path, seed=seed, base_dir=base_dir)

    def image_token(self, trial_id: str, role: str) -> str:
        raw = f"{self.seed}:{trial_id}:{role}".encode()
        return hashlib.sha256(raw).hexdigest()[:16]

    def resolve_token(self, token: str):
        if token not in self._tokens:
            raise UnknownTrialError(f"unknown image token '{token}'")
        trial_id, role = self._tokens[token]
        path = Path(self.by_id[trial_id].path_for(role))
        if self.base_dir and not path.is_absolute():
            path = self.base_dir / path
        return path

    def served_order(self, rater: str, trial_id: str):
        """Deterministic per-(rater, trial) role permutation, recorded with the seed."""
        index = self.index_of[trial_id]
        rng = numpy_rng(self.seed, "study-order", rater, index)
        return [ROLES[i] for i in rng.permutation(3)]

    def answered_count(self, rater: str) -> int:
        with self._lock:
            return sum(1 for r, _ in self._answered if r == rater)

    def next_trial(self, rater: str) -> dict:
        """The first trial this rater has not answered; blinded payload."""
        if not rater:
            raise ResponseValidationError("rater", "must be non-empty")
        with self._lock:
            pending = [t for t in self.triads if (rater, t.trial_id) not in self._answered]
            answered = len(self.triads) - len(pending)
        if not pending:
            return {"done": True, "index": len(self.triads), "total": len(self.triads)}
        trial = pending[0]
        order = self.served_order(rater, trial.trial_id)
        return {
            "done": False,
            "trial_id": trial.trial_id,
            "index": answered,
            "total": len(self.triads),
            "images": [self.image_token(trial.trial_id, role) for role in order],
        }

    def submit(self, rater: str, trial_id: str, real_choice: int, scores) -> dict:
        if not rater:
            raise ResponseValidationError("rater", "must be non-empty")
        if trial_id not in self.by_id:
            raise UnknownTrialError(f"unknown trial_id '{trial_id}'")
        if not isinstance(real_choice, int) or real_choice not in (0, 1, 2):
            raise ResponseValidationError("real_choice", "must be an integer in 0..2")
        scores = list(scores)
        if len(scores) != 3:
            raise ResponseValidationError("scores", "must contain exactly 3 values")
        for i, s in enumerate(scores):
            if not isinstance(s, int) or s not in SCORE_RANGE:
                raise ResponseValidationError(f"scores[{i}]", "must be an integer in 1..4")

        triad = self.by_id[trial_id]
        order = self.served_order(rater, trial_id)
        record = {
            "trial_id": trial_id,
            "rater": rater,
            "served_order": order,
            "real_choice": real_choice,
            "scores": scores,
            "methods": triad.methods,
            "received_at": datetime.now(timezone.utc).isoformat(),
        }
        with self._lock:
            key = (rater, trial_id)
            if key in self._answered:
                raise DuplicateResponseError(
                    f"rater '{rater}' already answered trial '{trial_id}'; first response retained"
                )
            self.results_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.results_path, "a") as fh:
                fh.write(json.dumps(record) + "\n")
            self._answered.add(key)
        return record

    def load_records(self) -> list[dict]:
        if not self.results_path.exists():
            return []
        with open(self.results_path) as fh:
            return [json.loads(line) for line in fh if line.strip()]


def read_records(results_path) -> list[dict]:
    path = Path(results_path)
    if not path.is_file():
        raise DataError(f"results file not found: {path}")
    with open(path) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if not records:
        raise DataError(f"results file {path} holds no records")
    return records


def summarize_study(records) -> list[dict]:
    """Per-method mean score, population SD, and percent chosen as real."""
    scores: dict[str, list] = {}
    real_counts: dict[str, int] = {}
    for record in records:
        methods = record["methods"]
        order = record["served_order"]
        for pos, role in enumerate(order):
            method = methods[role]
            scores.setdefault(method, []).append(record["scores"][pos])
            real_counts.setdefault(method, 0)
        chosen = methods[order[record["real_choice"]]]
        real_counts[chosen] += 1

    n_trials = len(records)
    rows = []
    ordered = sorted(scores, key=lambda m: (m == GROUND_TRUTH_LABEL, m))
    for method in ordered:
        values = np.asarray(scores[method], dtype=np.float64)
        rows.append(
            {
                "method": method,
                "n": int(values.size),
                "mean": float(values.mean()),
                "sd": float(values.std()),  # population SD (divide by n)
                "real_pct": 100.0 * real_counts[method] / n_trials,
            }
        )
    return rows


def create_app(study: Study, frontend_dir=None):
    """HTTP surface: GET /api/trial/next, POST /api/response, blinded images."""
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import FileResponse
    from pydantic import BaseModel, Field

    class ResponseBody(BaseModel):
        rater: str = Field(min_length=1)
        trial_id: str = Field(min_length=1)
        real_choice: int = Field(ge=0, le=2)
        scores: list[int] = Field(min_length=3, max_length=3)

    app = FastAPI(title="perceptual study")

    @app.get("/api/trial/next")
    def trial_next(rater: str):
        try:
            return study.next_trial(rater)
        except ResponseValidationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/api/response")
    def response(body: ResponseBody):
        for i, s in enumerate(body.scores):
            if s not in SCORE_RANGE:
                raise HTTPException(422, detail=f"scores[{i}]: must be an integer in 1..4")
        try:
            record = study.submit(body.rater, body.trial_id, body.real_choice, body.scores)
        except DuplicateResponseError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except UnknownTrialError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ResponseValidationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        nxt = study.next_trial(body.rater)
        return {"accepted": True, "trial_id": record["trial_id"], "next_index": nxt["index"]}

    @app.get("/api/image/{token}")
    def image(token: str):
        try:
            path = study.resolve_token(token)
        except UnknownTrialError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        if not path.is_file():
            raise HTTPException(status_code=404, detail=f"image file missing: {path.name}")
        return FileResponse(path)

    if frontend_dir is not None:
        from fastapi.staticfiles import StaticFiles

        frontend_dir = Path(frontend_dir)
        if not (frontend_dir / "index.html").is_file():
            raise ConfigError(f"frontend dir {frontend_dir} has no index.html")
        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="frontend")
    else:

        @app.get("/")
        def root():
            return {"service": "perceptual study", "trials": len(study.triads)}

    return app
