"""Action and observation algebra exchanged between policy, controller, and environment.

Actions are the policy-facing vocabulary; observations are everything the
engine sends back. Both serialize to single-line JSON objects tagged with a
``kind`` field so external adapters can speak the same wire format.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Union

from .errors import ActionParseError


class Family(str, Enum):
    REPOSCAN = "reposcan"
    DATAOPS = "dataops"


class Outcome(str, Enum):
    SUCCESS = "success"
    FALSE_COMPLETION = "false_completion"
    PREMATURE_STOP = "premature_stop"
    BUDGET_EXHAUSTED = "budget_exhausted"


class UnitStatus(str, Enum):
    PENDING = "pending"
    ATTEMPTED = "attempted"
    PASSED = "passed"


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Search:
    query: str
    page: int = 0


@dataclass(frozen=True)
class Submit:
    # Repeats inside ids are data, not an error; order is preserved.
    ids: tuple[str, ...]


@dataclass(frozen=True)
class Inspect:
    unit_id: str


@dataclass(frozen=True)
class Edit:
    unit_id: str
    payload: str


@dataclass(frozen=True)
class RunCheck:
    unit_id: str


@dataclass(frozen=True)
class SubmitUnit:
    unit_id: str


@dataclass(frozen=True)
class Final:
    completion_claim: bool
    reported_count: int | None = None


@dataclass(frozen=True)
class AskUser:
    message: str


Action = Union[Search, Submit, Inspect, Edit, RunCheck, SubmitUnit, Final, AskUser]


@dataclass(frozen=True)
class Malformed:
    """Placeholder recorded when a policy emitted something unparseable."""

    raw: str
    reason: str = "parse_error"


_FAMILY_ACTIONS: dict[Family, tuple[type, ...]] = {
    Family.REPOSCAN: (Search, Submit, Final, AskUser),
    Family.DATAOPS: (Inspect, Edit, RunCheck, SubmitUnit, Final, AskUser),
}


def is_legal_for_family(action: Action, family: Family) -> bool:
    return isinstance(action, _FAMILY_ACTIONS[Family(family)])


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    artifact_id: str
    preview: str


@dataclass(frozen=True)
class SearchResults:
    query: str
    page: int
    candidates: tuple[Candidate, ...]


@dataclass(frozen=True)
class SubmitFeedback:
    accepted: tuple[str, ...]
    rejected: tuple[str, ...]
    duplicates: tuple[str, ...]
    valid_count: int
    remaining: int


@dataclass(frozen=True)
class UnitFeedback:
    unit_id: str
    verdict: Verdict
    detail: str
    status_after: UnitStatus


@dataclass(frozen=True)
class ControllerNotice:
    reason: str
    valid_count: int
    remaining: int


@dataclass(frozen=True)
class Terminal:
    outcome: Outcome


Observation = Union[SearchResults, SubmitFeedback, UnitFeedback, ControllerNotice, Terminal]


# ---------------------------------------------------------------------------
# Wire format
# ---------------------------------------------------------------------------

_ACTION_KINDS: dict[type, str] = {
    Search: "search",
    Submit: "submit",
    Inspect: "inspect",
    Edit: "edit",
    RunCheck: "run_check",
    SubmitUnit: "submit_unit",
    Final: "final",
    AskUser: "ask_user",
}


def action_to_dict(action: Action) -> dict:
    if isinstance(action, Search):
        return {"kind": "search", "query": action.query, "page": action.page}
    if isinstance(action, Submit):
        return {"kind": "submit", "ids": list(action.ids)}
    if isinstance(action, Inspect):
        return {"kind": "inspect", "unit_id": action.unit_id}
    if isinstance(action, Edit):
        return {"kind": "edit", "unit_id": action.unit_id, "payload": action.payload}
    if isinstance(action, RunCheck):
        return {"kind": "run_check", "unit_id": action.unit_id}
    if isinstance(action, SubmitUnit):
        return {"kind": "submit_unit", "unit_id": action.unit_id}
    if isinstance(action, Final):
        return {
            "kind": "final",
            "completion_claim": action.completion_claim,
            "reported_count": action.reported_count,
        }
    if isinstance(action, AskUser):
        return {"kind": "ask_user", "message": action.message}
    raise ActionParseError(f"not an action: {action!r}")


def _require_str(obj: dict, key: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str):
        raise ActionParseError(f"field {key!r} must be a string")
    return value


def action_from_dict(obj: object) -> Action:
    """Decode one action record; raises ActionParseError on any shape violation."""
    if not isinstance(obj, dict):
        raise ActionParseError("action record must be an object")
    kind = obj.get("kind")
    if kind == "search":
        page = obj.get("page", 0)
        if not isinstance(page, int) or isinstance(page, bool) or page < 0:
            raise ActionParseError("search.page must be a non-negative integer")
        return Search(query=_require_str(obj, "query"), page=page)
    if kind == "submit":
        ids = obj.get("ids")
        if not isinstance(ids, list) or not all(isinstance(x, str) for x in ids):
            raise ActionParseError("submit.ids must be a list of strings")
        return Submit(ids=tuple(ids))
    if kind == "inspect":
        return Inspect(unit_id=_require_str(obj, "unit_id"))
    if kind == "edit":
        return Edit(unit_id=_require_str(obj, "unit_id"), payload=_require_str(obj, "payload"))
    if kind == "run_check":
        return RunCheck(unit_id=_require_str(obj, "unit_id"))
    if kind == "submit_unit":
        return SubmitUnit(unit_id=_require_str(obj, "unit_id"))
    if kind == "final":
        claim = obj.get("completion_claim")
        if not isinstance(claim, bool):
            raise ActionParseError("final.completion_claim must be a boolean")
        reported = obj.get("reported_count")
        if reported is not None and (
            not isinstance(reported, int) or isinstance(reported, bool) or reported < 0
        ):
            raise ActionParseError("final.reported_count must be a non-negative integer or null")
        return Final(completion_claim=claim, reported_count=reported)
    if kind == "ask_user":
        return AskUser(message=_require_str(obj, "message"))
    raise ActionParseError(f"unknown action kind: {kind!r}")


def observation_to_dict(obs: Observation) -> dict:
    if isinstance(obs, SearchResults):
        return {
            "kind": "search_results",
            "query": obs.query,
            "page": obs.page,
            "candidates": [
                {"artifact_id": c.artifact_id, "preview": c.preview} for c in obs.candidates
            ],
        }
    if isinstance(obs, SubmitFeedback):
        return {
            "kind": "submit_feedback",
            "accepted": list(obs.accepted),
            "rejected": list(obs.rejected),
            "duplicates": list(obs.duplicates),
            "valid_count": obs.valid_count,
            "remaining": obs.remaining,
        }
    if isinstance(obs, UnitFeedback):
        return {
            "kind": "unit_feedback",
            "unit_id": obs.unit_id,
            "verdict": obs.verdict.value,
            "detail": obs.detail,
            "status_after": obs.status_after.value,
        }
    if isinstance(obs, ControllerNotice):
        return {
            "kind": "controller_notice",
            "reason": obs.reason,
            "valid_count": obs.valid_count,
            "remaining": obs.remaining,
        }
    if isinstance(obs, Terminal):
        return {"kind": "terminal", "outcome": obs.outcome.value}
    raise ActionParseError(f"not an observation: {obs!r}")
