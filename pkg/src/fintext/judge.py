"""External judge clients and offline stubs.

Two wire contracts:

* pair judge: request carries ``query_text``, ``doc_text``, ``check_type``
  ("sufficiency" for positives, "answerability" for negatives); the response
  carries a boolean ``verdict`` and a ``rationale`` string.
* topic judge: request carries a rendered scoring prompt; the response body is
  the judge's raw text, parsed downstream into three 1..3 criterion scores.

Credentials for HTTP endpoints come from the ``FINTEXT_JUDGE_TOKEN``
environment variable (sent as a bearer token).
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import requests

from fintext.errors import JudgeError

CHECK_SUFFICIENCY = "sufficiency"
CHECK_ANSWERABILITY = "answerability"

_TOKEN_ENV = "FINTEXT_JUDGE_TOKEN"


@dataclass(frozen=True)
class Verdict:
    verdict: bool
    rationale: str = ""


class PairJudge(Protocol):
    def judge_pair(self, query_text: str, doc_text: str, check_type: str) -> Verdict:
        ...


class TopicJudge(Protocol):
    def score(self, prompt: str) -> str:
        ...


def _auth_headers() -> dict[str, str]:
    token = os.environ.get(_TOKEN_ENV, "")
    return {"Authorization": f"Bearer {token}"} if token else {}


class HttpPairJudge:
    """POSTs pair checks to a JSON endpoint."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def judge_pair(self, query_text: str, doc_text: str, check_type: str) -> Verdict:
        try:
            resp = requests.post(
                self.endpoint,
                json={
                    "query_text": query_text,
                    "doc_text": doc_text,
                    "check_type": check_type,
                },
                headers=_auth_headers(),
                timeout=self.timeout,
            )
            resp.raise_for_status()
            body = resp.json()
            return Verdict(verdict=bool(body["verdict"]), rationale=str(body.get("rationale", "")))
        except (requests.RequestException, KeyError, ValueError) as exc:
            raise JudgeError(f"pair judge call failed: {exc}") from exc


class StubPairJudge:
    """Scripted pair judge for offline runs.

    Spec: ``{"default": true, "overrides": [{"check_type": ..., "query_text":
    ..., "doc_text": ..., "verdict": false}]}``. An override applies when every
    key it carries matches the request.
    """

    def __init__(self, default: bool = True, overrides: list[dict] | None = None):
        self.default = default
        self.overrides = overrides or []

    @classmethod
    def from_file(cls, path: str | Path) -> "StubPairJudge":
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(default=bool(spec.get("default", True)), overrides=spec.get("overrides", []))

    def judge_pair(self, query_text: str, doc_text: str, check_type: str) -> Verdict:
        request = {
            "query_text": query_text,
            "doc_text": doc_text,
            "check_type": check_type,
        }
        for rule in self.overrides:
            if all(request.get(k) == v for k, v in rule.items() if k != "verdict"):
                return Verdict(verdict=bool(rule["verdict"]), rationale="stub override")
        return Verdict(verdict=self.default, rationale="stub default")


class HttpTopicJudge:
    """POSTs a rendered prompt; the response body is the judge's raw text."""

    def __init__(self, endpoint: str, timeout: float = 60.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def score(self, prompt: str) -> str:
        try:
            resp = requests.post(
                self.endpoint,
                json={"prompt": prompt},
                headers=_auth_headers(),
                timeout=self.timeout,
            )
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise JudgeError(f"topic judge call failed: {exc}") from exc
        try:
            body = resp.json()
            if isinstance(body, dict) and "response" in body:
                return str(body["response"])
        except ValueError:
            pass
        return resp.text


class FileStubTopicJudge:
    """Replays canned responses from a file, one JSON value per line.

    String lines are returned verbatim; object lines are re-serialized. The
    sequence cycles when more calls arrive than lines exist.
    """

    def __init__(self, responses: list[str]):
        if not responses:
            raise JudgeError("topic judge stub has no responses")
        self.responses = responses
        self._cursor = 0
        self._lock = threading.Lock()  # callers may score concurrently

    @classmethod
    def from_file(cls, path: str | Path) -> "FileStubTopicJudge":
        responses = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            value = json.loads(line)
            responses.append(value if isinstance(value, str) else json.dumps(value))
        return cls(responses)

    def score(self, prompt: str) -> str:
        with self._lock:
            response = self.responses[self._cursor % len(self.responses)]
            self._cursor += 1
        return response
