"""Online evaluation service: submission intake, scoring and leaderboard.

State lives in ``DATA_DIR``:

* ``submissions.jsonl`` - append-only log, one scored submission per line.
* ``bodies/<sha256>.json`` - verbatim submission bodies, content addressed.

The leaderboard is rebuilt from the log on startup, so replaying the log
always reproduces it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse

from paveval.dataset import Dataset, parse_ground_truth, parse_submission
from paveval.errors import ParseError, PavevalError, ValidationError
from paveval.scoring import evaluate

log = logging.getLogger(__name__)

IOU_THRESHOLD = 0.5
ENV = {"gt": "PAVEVAL_GT", "teams": "PAVEVAL_TEAMS", "addr": "PAVEVAL_ADDR", "data": "PAVEVAL_DATA"}
DEFAULT_ADDR = "127.0.0.1:8000"


class AuthError(PavevalError):
    pass


class GroundTruthMissing(PavevalError):
    pass


class UnknownImagesError(ValidationError):
    def __init__(self, image_ids: Sequence[str]):
        self.image_ids = list(image_ids)
        super().__init__(f"unknown image_ids: {self.image_ids}")


@dataclass(frozen=True)
class Team:
    team_id: str
    display_name: str
    token: str


@dataclass(frozen=True)
class SubmissionRecord:
    submission_id: int
    team_id: str
    received_at: str  # ISO 8601, UTC
    mean_f1: float
    per_class_f1: dict[str, float] = field(default_factory=dict)
    body_sha256: str | None = None

    def to_dict(self, with_body: bool = False) -> dict:
        d = {
            "submission_id": self.submission_id,
            "team_id": self.team_id,
            "received_at": self.received_at,
            "mean_f1": self.mean_f1,
            "per_class_f1": dict(self.per_class_f1),
        }
        if with_body:
            d["body_sha256"] = self.body_sha256
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> SubmissionRecord:
        return cls(
            int(d["submission_id"]),
            str(d["team_id"]),
            str(d["received_at"]),
            float(d["mean_f1"]),
            {str(k): float(v) for k, v in d.get("per_class_f1", {}).items()},
            d.get("body_sha256"),
        )


@dataclass(frozen=True)
class LeaderboardEntry:
    rank: int
    display_name: str
    mean_f1: float
    team_id: str = field(default="", compare=False)

    def to_dict(self) -> dict:
        return {"rank": self.rank, "display_name": self.display_name, "mean_f1": self.mean_f1}


def parse_teams(json_text: str | bytes) -> list[Team]:
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", f"line {exc.lineno}") from None
    if not isinstance(doc, list):
        raise ParseError("top level must be an array", "$")
    teams = []
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict):
            raise ParseError("entry must be an object", f"$[{i}]")
        for key in ("team_id", "display_name", "token"):
            if not isinstance(entry.get(key), str) or not entry[key]:
                raise ParseError("must be a non-empty string", f"$[{i}].{key}")
        teams.append(Team(entry["team_id"], entry["display_name"], entry["token"]))
    return teams


def rank_leaderboard(
    history: Sequence[SubmissionRecord], display_names: Mapping[str, str]
) -> list[LeaderboardEntry]:
    """Best score per team, highest first; ties go to the earlier submission."""
    best: dict[str, tuple[float, int]] = {}
    for rec in history:
        current = best.get(rec.team_id)
        if current is None or rec.mean_f1 > current[0]:
            best[rec.team_id] = (rec.mean_f1, rec.submission_id)
    ordered = sorted(best.items(), key=lambda item: (-item[1][0], item[1][1]))
    return [
        LeaderboardEntry(rank, display_names.get(team_id, team_id), score, team_id)
        for rank, (team_id, (score, _)) in enumerate(ordered, start=1)
    ]


class SubmissionStore:
    """Append-only submission log plus content-addressed body storage."""

    def __init__(self, data_dir: str | os.PathLike):
        self.root = Path(data_dir)
        self.bodies = self.root / "bodies"
        self.log_path = self.root / "submissions.jsonl"
        self.bodies.mkdir(parents=True, exist_ok=True)

    def load(self) -> list[SubmissionRecord]:
        """Read the log; a torn final line (crash mid-append) is cut off."""
        if not self.log_path.exists():
            return []
        raw = self.log_path.read_bytes()
        complete, sep, tail = raw.rpartition(b"\n")
        if tail:
            log.warning("dropping torn final log line (%d bytes)", len(tail))
            with open(self.log_path, "r+b") as fh:
                fh.truncate(len(complete) + len(sep))
        records = []
        for lineno, line in enumerate(complete.decode("utf-8").split("\n"), start=1):
            if not line.strip():
                continue
            try:
                records.append(SubmissionRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise ParseError("corrupt submission log entry", f"{self.log_path} line {lineno}") from None
        return records

    def put_body(self, body: bytes) -> str:
        digest = hashlib.sha256(body).hexdigest()
        path = self.bodies / f"{digest}.json"
        if not path.exists():
            tmp = path.with_suffix(f".tmp{threading.get_ident()}")
            tmp.write_bytes(body)
            os.replace(tmp, path)
        return digest

    def append(self, record: SubmissionRecord) -> None:
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record.to_dict(with_body=True)) + "\n")
            fh.flush()
            os.fsync(fh.fileno())


class EvaluationService:
    """Scoring and leaderboard state shared by all requests."""

    def __init__(
        self,
        teams: Sequence[Team],
        data_dir: str | os.PathLike,
        ground_truth: Dataset | None = None,
    ):
        self.teams = {t.team_id: t for t in teams}
        if len(self.teams) != len(teams):
            raise ValidationError("duplicate team_id in teams file")
        self._by_token = {t.token: t for t in teams}
        if len(self._by_token) != len(teams):
            raise ValidationError("duplicate token in teams file")
        self.ground_truth = ground_truth
        self.store = SubmissionStore(data_dir)
        self._lock = threading.Lock()
        self._history = self.store.load()
        self._next_id = max((r.submission_id for r in self._history), default=0) + 1
        self._leaderboard = rank_leaderboard(self._history, self._display_names())

    def _display_names(self) -> dict[str, str]:
        return {t.team_id: t.display_name for t in self.teams.values()}

    def authenticate(self, token: str | None) -> Team:
        team = self._by_token.get(token or "")
        if team is None:
            raise AuthError("unknown or missing team token")
        return team

    def score(self, body: bytes | str) -> tuple[float, dict[str, float]]:
        if self.ground_truth is None:
            raise GroundTruthMissing("ground truth not loaded")
        predictions = parse_submission(body)
        unknown = sorted(k for k in predictions if k not in self.ground_truth)
        if unknown:
            raise UnknownImagesError(unknown)
        report = evaluate(self.ground_truth, predictions, IOU_THRESHOLD)
        return report.mean_f1, report.per_class_f1()

    def submit(self, token: str | None, body: bytes | str) -> dict:
        """Authenticate, score and persist one submission."""
        team = self.authenticate(token)
        mean_f1, per_class = self.score(body)
        raw = body.encode("utf-8") if isinstance(body, str) else body
        record = self.record_score(team.team_id, mean_f1, per_class, raw)
        return {
            "submission_id": record.submission_id,
            "mean_f1": record.mean_f1,
            "per_class_f1": record.per_class_f1,
            "rank": self.rank_of(team.team_id),
        }

    def record_score(
        self,
        team_id: str,
        mean_f1: float,
        per_class_f1: Mapping[str, float] | None = None,
        body: bytes | None = None,
    ) -> SubmissionRecord:
        """Persist an already computed score (also the library entry point)."""
        if team_id not in self.teams:
            raise ValidationError(f"unknown team_id {team_id!r}")
        digest = self.store.put_body(body) if body is not None else None
        with self._lock:
            record = SubmissionRecord(
                self._next_id,
                team_id,
                datetime.now(timezone.utc).isoformat(),
                float(mean_f1),
                dict(per_class_f1 or {}),
                digest,
            )
            self.store.append(record)
            self._next_id += 1
            self._history.append(record)
            self._leaderboard = rank_leaderboard(self._history, self._display_names())
        return record

    def leaderboard(self) -> list[LeaderboardEntry]:
        return list(self._leaderboard)

    def rank_of(self, team_id: str) -> int | None:
        for entry in self._leaderboard:
            if entry.team_id == team_id:
                return entry.rank
        return None

    def history(self, team_id: str) -> list[SubmissionRecord]:
        if team_id not in self.teams:
            raise KeyError(team_id)
        with self._lock:
            return [r for r in self._history if r.team_id == team_id]


# ------------------------------------------------------------------- HTTP


def _token_from_header(value: str | None) -> str | None:
    if not value:
        return None
    scheme, _, rest = value.partition(" ")
    if rest and scheme.lower() == "bearer":
        return rest.strip()
    return value.strip()


def create_app(service: EvaluationService):
    app = FastAPI(title="paveval", docs_url=None, redoc_url=None)
    app.state.service = service

    @app.exception_handler(AuthError)
    def _auth(request: Request, exc: AuthError):
        return JSONResponse({"error": str(exc)}, status_code=401)

    @app.exception_handler(GroundTruthMissing)
    def _no_gt(request: Request, exc: GroundTruthMissing):
        return JSONResponse({"error": str(exc)}, status_code=503)

    @app.exception_handler(UnknownImagesError)
    def _unknown(request: Request, exc: UnknownImagesError):
        return JSONResponse({"error": str(exc), "image_ids": exc.image_ids}, status_code=422)

    @app.exception_handler(ValidationError)
    def _invalid(request: Request, exc: ValidationError):
        return JSONResponse({"error": str(exc), "path": getattr(exc, "path", None)}, status_code=400)

    @app.post("/api/v1/submissions")
    async def submit(request: Request):
        body = await request.body()
        token = _token_from_header(request.headers.get("authorization"))
        service.authenticate(token)
        return await run_in_threadpool(service.submit, token, body)

    @app.get("/api/v1/leaderboard")
    def leaderboard():
        return [e.to_dict() for e in service.leaderboard()]

    @app.get("/api/v1/teams/{team_id}/submissions")
    def history(team_id: str):
        try:
            records = service.history(team_id)
        except KeyError:
            return JSONResponse({"error": f"unknown team {team_id!r}"}, status_code=404)
        return [r.to_dict() for r in records]

    return app


@dataclass
class ServiceConfig:
    gt: str | None
    teams: str
    addr: str
    data: str

    @classmethod
    def resolve(
        cls,
        gt: str | None = None,
        teams: str | None = None,
        addr: str | None = None,
        data: str | None = None,
        environ: Mapping[str, str] = os.environ,
    ) -> ServiceConfig:
        """Explicit values win; environment variables fill the gaps."""
        teams = teams or environ.get(ENV["teams"])
        data = data or environ.get(ENV["data"])
        if not teams:
            raise ValidationError(f"teams file required (--teams or {ENV['teams']})")
        if not data:
            raise ValidationError(f"data directory required (--data or {ENV['data']})")
        return cls(
            gt or environ.get(ENV["gt"]),
            teams,
            addr or environ.get(ENV["addr"]) or DEFAULT_ADDR,
            data,
        )

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.addr.rpartition(":")
        try:
            return host or "127.0.0.1", int(port)
        except ValueError:
            raise ValidationError(f"bad listen address {self.addr!r}") from None


def build_service(config: ServiceConfig) -> EvaluationService:
    teams = parse_teams(Path(config.teams).read_text(encoding="utf-8"))
    gt = None
    if config.gt:
        gt = parse_ground_truth(Path(config.gt).read_bytes())
        log.info("loaded ground truth: %d images, %d boxes", len(gt), gt.box_count())
    else:
        log.warning("no ground truth configured; submissions will get 503")
    return EvaluationService(teams, config.data, gt)


def serve(config: ServiceConfig) -> None:
    import uvicorn

    service = build_service(config)
    host, port = config.host_port
    uvicorn.run(create_app(service), host=host, port=port, log_level="info")
