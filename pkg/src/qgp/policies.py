"""Scripted deterministic policies plus the external subprocess adapter.

Scripted policies are pure functions of the public task view and the step
history, so identical (task, seed) inputs replay identical action sequences.
Each one reproduces a specific behavior: duplicate resubmission, premature
stopping, unsupported completion claims, no-submit work loops, redundant
searching, or a straightforward greedy/solver baseline.
"""

from __future__ import annotations

import json
import queue
import re
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .actions import (
    Action,
    AskUser,
    Edit,
    Family,
    Final,
    Inspect,
    Malformed,
    RunCheck,
    Search,
    SearchResults,
    Submit,
    SubmitFeedback,
    SubmitUnit,
    UnitFeedback,
    UnitStatus,
    Verdict,
    action_from_dict,
    observation_to_dict,
)
from .core import PublicTaskView, UnitPublicView
from .errors import AdapterError, ConfigurationError

History = Sequence[tuple[object, object]]


class PolicyKind(str, Enum):
    DUPLICATOR = "duplicator"
    EARLY_STOPPER = "early_stopper"
    FALSE_COMPLETER = "false_completer"
    NO_SUBMIT_LOOPER = "no_submit_looper"
    GREEDY_ORACLE = "greedy_oracle"
    SOLVER = "solver"
    REDUNDANT_SEARCHER = "redundant_searcher"
    EXTERNAL = "external"


def decide(policy, view: PublicTaskView, history: History, seed: int):
    return policy.decide(view, history, seed)


# ---------------------------------------------------------------------------
# History derivation helpers
# ---------------------------------------------------------------------------


def _objective_tokens(view: PublicTaskView) -> list[str]:
    return [t for t in view.objective_text.lower().split() if len(t) >= 2]


def _first_token(view: PublicTaskView) -> str:
    tokens = _objective_tokens(view)
    return tokens[0] if tokens else "artifact"


def _latest_search(history: History) -> SearchResults | None:
    for _, obs in reversed(history):
        if isinstance(obs, SearchResults):
            return obs
    return None


def _filler_action(view: PublicTaskView) -> Action:
    if Family(view.family) == Family.REPOSCAN:
        return Search(query=_first_token(view), page=0)
    assert view.units
    return Inspect(unit_id=view.units[0].unit_id)


# ---------------------------------------------------------------------------
# Retrieval policies
# ---------------------------------------------------------------------------


@dataclass
class DuplicatorPolicy:
    """Submits one full result page, then fixates on resubmitting one id."""

    label: str = PolicyKind.DUPLICATOR.value

    def decide(self, view: PublicTaskView, history: History, seed: int) -> Action:
        searches = [obs for _, obs in history if isinstance(obs, SearchResults)]
        if not searches:
            return Search(query=_first_token(view), page=0)
        if not any(isinstance(a, Submit) for a, _ in history):
            latest = searches[-1]
            if not latest.candidates:
                return Search(query=latest.query, page=latest.page + 1)
            return Submit(ids=tuple(c.artifact_id for c in latest.candidates))
        for _, obs in history:
            if isinstance(obs, SubmitFeedback) and obs.accepted:
                return Submit(ids=(obs.accepted[0],))
        for results in searches:
            if results.candidates:
                return Submit(ids=(results.candidates[0].artifact_id,))
        return Search(query=searches[-1].query, page=searches[-1].page + 1)


@dataclass
class EarlyStopperPolicy:
    """Asks the user long before the target could be met."""

    stop_step: int = 1
    label: str = PolicyKind.EARLY_STOPPER.value

    def decide(self, view: PublicTaskView, history: History, seed: int) -> Action:
        if len(history) + 1 >= self.stop_step:
            return AskUser(message="I have made some progress; should I continue?")
        return _filler_action(view)


@dataclass
class FalseCompleterPolicy:
    """Claims completion at a fixed step regardless of verified progress."""

    final_step: int = 3
    claim_count: int | None = None
    label: str = PolicyKind.FALSE_COMPLETER.value

    def decide(self, view: PublicTaskView, history: History, seed: int) -> Action:
        if len(history) + 1 >= self.final_step:
            reported = self.claim_count if self.claim_count is not None else view.target_count
            return Final(completion_claim=True, reported_count=reported)
        return _filler_action(view)


@dataclass
class GreedyOraclePolicy:
    """Searches objective tokens in order with ascending pages and submits
    every unseen candidate; finals only once the verifier reports zero
    remaining."""

    submit_batch: int = 10
    label: str = PolicyKind.GREEDY_ORACLE.value

    def decide(self, view: PublicTaskView, history: History, seed: int) -> Action:
        last_feedback = None
        for _, obs in reversed(history):
            if isinstance(obs, SubmitFeedback):
                last_feedback = obs
                break
        if last_feedback is not None and last_feedback.remaining == 0:
            return Final(completion_claim=True, reported_count=last_feedback.valid_count)

        seen: dict[str, None] = {}
        pages: dict[str, set[int]] = {}
        exhausted: set[str] = set()
        submitted: set[str] = set()
        for action, obs in history:
            if isinstance(obs, SearchResults):
                pages.setdefault(obs.query, set()).add(obs.page)
                if not obs.candidates:
                    exhausted.add(obs.query)
                for candidate in obs.candidates:
                    seen.setdefault(candidate.artifact_id, None)
            if isinstance(action, Submit):
                submitted.update(action.ids)
        pending = [cid for cid in seen if cid not in submitted]
        if pending:
            return Submit(ids=tuple(pending[: self.submit_batch]))
        for token in _objective_tokens(view):
            if token in exhausted:
                continue
            searched = pages.get(token)
            next_page = max(searched) + 1 if searched else 0
            return Search(query=token, page=next_page)
        return AskUser(message="all objective queries are exhausted")


@dataclass
class RedundantSearcherPolicy:
    """Re-searches page zero and resubmits a small candidate prefix, modelling
    a policy that neither remembers pages nor what it already submitted."""

    submit_width: int = 3
    submits_per_search: int = 3
    label: str = PolicyKind.REDUNDANT_SEARCHER.value

    def decide(self, view: PublicTaskView, history: History, seed: int) -> Action:
        token = _first_token(view)
        cycle = 1 + self.submits_per_search
        if len(history) % cycle == 0:
            return Search(query=token, page=0)
        latest = _latest_search(history)
        if latest is None:
            return Search(query=token, page=0)
        return Submit(ids=tuple(c.artifact_id for c in latest.candidates[: self.submit_width]))


# ---------------------------------------------------------------------------
# Backlog policies
# ---------------------------------------------------------------------------


@dataclass
class _UnitTrace:
    status: UnitStatus = UnitStatus.PENDING
    inspected: bool = False
    edits: int = 0
    checks_since_change: int = 0
    last_fail_detail: str = ""
    accepted: bool = False


def _derive_unit_traces(view: PublicTaskView, history: History) -> dict[str, _UnitTrace]:
    assert view.units is not None
    traces = {u.unit_id: _UnitTrace() for u in view.units}
    for action, obs in history:
        if isinstance(obs, UnitFeedback) and obs.unit_id in traces:
            trace = traces[obs.unit_id]
            trace.status = obs.status_after
            if isinstance(action, Inspect):
                trace.inspected = True
            elif isinstance(action, Edit):
                trace.edits += 1
                trace.checks_since_change = 0
            elif isinstance(action, RunCheck):
                trace.checks_since_change += 1
                if obs.verdict == Verdict.FAIL:
                    trace.last_fail_detail = obs.detail
        elif isinstance(obs, SubmitFeedback):
            for unit_id in list(obs.accepted) + list(obs.duplicates):
                if unit_id in traces:
                    traces[unit_id].accepted = True
    return traces


_QUOTED = re.compile(r'"([^"]*)"')


def derive_edit_payload(unit: UnitPublicView, fail_detail: str) -> str:
    """Build a repair payload from the public prompt plus the last diagnostic."""
    prompt_quotes = _QUOTED.findall(unit.prompt)
    detail_quotes = _QUOTED.findall(fail_detail)
    if unit.kind in ("csv_field_check", "csv_count_check"):
        column = prompt_quotes[0] if prompt_quotes else ""
        row_key = prompt_quotes[1] if len(prompt_quotes) > 1 else ""
        value = detail_quotes[0] if detail_quotes else ""
        return json.dumps({"row_key": row_key, "column": column, "value": value})
    if unit.kind == "metadata_repair":
        key = prompt_quotes[0] if prompt_quotes else ""
        value = detail_quotes[1] if len(detail_quotes) > 1 else ""
        return json.dumps({"key": key, "value": value})
    if unit.kind == "consistency_answer":
        return prompt_quotes[-1] if prompt_quotes else ""
    return ""


def _next_work_action(unit: UnitPublicView, trace: _UnitTrace) -> Action | None:
    """One work step for this unit, or None when done or given up."""
    if trace.status == UnitStatus.PASSED:
        return None
    if not trace.inspected:
        return Inspect(unit_id=unit.unit_id)
    if trace.checks_since_change == 0:
        return RunCheck(unit_id=unit.unit_id)
    if trace.edits == 0:
        payload = derive_edit_payload(unit, trace.last_fail_detail)
        return Edit(unit_id=unit.unit_id, payload=payload)
    # One repair attempt per unit; a still-failing unit is abandoned.
    return None


@dataclass
class SolverPolicy:
    """Inspect, check, repair if needed, recheck, submit; unit by unit."""

    label: str = PolicyKind.SOLVER.value

    def decide(self, view: PublicTaskView, history: History, seed: int) -> Action:
        traces = _derive_unit_traces(view, history)
        assert view.units is not None
        for unit in view.units:
            trace = traces[unit.unit_id]
            if trace.status == UnitStatus.PASSED and not trace.accepted:
                return SubmitUnit(unit_id=unit.unit_id)
            action = _next_work_action(unit, trace)
            if action is not None:
                return action
        done = sum(1 for t in traces.values() if t.accepted)
        return Final(completion_claim=True, reported_count=done)


@dataclass
class NoSubmitLooperPolicy:
    """Does the work but never submits anything, then loops on inspection.

    With loop_unit set the policy degenerates to a pure stall: it inspects
    that one unit on every step and never works at all.
    """

    loop_unit: str | None = None
    label: str = PolicyKind.NO_SUBMIT_LOOPER.value

    def decide(self, view: PublicTaskView, history: History, seed: int) -> Action:
        if self.loop_unit is not None:
            return Inspect(unit_id=self.loop_unit)
        traces = _derive_unit_traces(view, history)
        assert view.units is not None
        for unit in view.units:
            action = _next_work_action(unit, traces[unit.unit_id])
            if action is not None:
                return action
        return Inspect(unit_id=view.units[0].unit_id)


# ---------------------------------------------------------------------------
# External subprocess adapter
# ---------------------------------------------------------------------------


class _PipeReader(threading.Thread):
    def __init__(self, pipe) -> None:
        super().__init__(daemon=True)
        self.pipe = pipe
        self.lines: queue.Queue = queue.Queue()

    def run(self) -> None:
        try:
            for line in self.pipe:
                self.lines.put(line)
        except ValueError:
            pass
        self.lines.put(None)


@dataclass
class ExternalAdapterPolicy:
    """Line-delimited protocol: one request record out, one action record back."""

    command: list[str]
    timeout: float = 30.0
    label: str = PolicyKind.EXTERNAL.value
    _process: subprocess.Popen | None = field(default=None, repr=False)
    _reader: _PipeReader | None = field(default=None, repr=False)

    def _ensure_started(self) -> None:
        if self._process is not None:
            return
        try:
            self._process = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
            )
        except OSError as exc:
            raise AdapterError(f"could not launch adapter {self.command!r}: {exc}") from exc
        assert self._process.stdout is not None
        self._reader = _PipeReader(self._process.stdout)
        self._reader.start()

    def decide(self, view: PublicTaskView, history: History, seed: int) -> Action | Malformed:
        self._ensure_started()
        assert self._process is not None and self._reader is not None
        step = len(history) + 1
        last_observation = None
        if history:
            last = history[-1][1]
            try:
                last_observation = observation_to_dict(last)
            except Exception:
                last_observation = None
        request = {
            "task_id": view.task_id,
            "family": Family(view.family).value,
            "objective": view.objective_text,
            "target_count": view.target_count,
            "budget_remaining": view.budget - len(history),
            "step": step,
            "last_observation": last_observation,
        }
        try:
            assert self._process.stdin is not None
            self._process.stdin.write(json.dumps(request) + "\n")
            self._process.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise AdapterError(f"adapter pipe closed: {exc}") from exc
        try:
            line = self._reader.lines.get(timeout=self.timeout)
        except queue.Empty:
            return Malformed(raw="", reason="adapter_timeout")
        if line is None:
            raise AdapterError("adapter closed its output stream")
        line = line.strip()
        try:
            return action_from_dict(json.loads(line))
        except Exception:
            return Malformed(raw=line)

    def close(self) -> None:
        if self._process is None:
            return
        try:
            if self._process.stdin is not None:
                self._process.stdin.close()
            self._process.terminate()
            self._process.wait(timeout=5)
        except Exception:
            self._process.kill()
        self._process = None


# ---------------------------------------------------------------------------
# Factory
# ---------------------------------------------------------------------------


def build_policy(kind: PolicyKind | str, **params):
    kind = PolicyKind(kind)
    if kind == PolicyKind.DUPLICATOR:
        return DuplicatorPolicy()
    if kind == PolicyKind.EARLY_STOPPER:
        return EarlyStopperPolicy(stop_step=int(params.get("stop_step", 1)))
    if kind == PolicyKind.FALSE_COMPLETER:
        claim = params.get("claim_count")
        return FalseCompleterPolicy(
            final_step=int(params.get("final_step", 3)),
            claim_count=None if claim is None else int(claim),
        )
    if kind == PolicyKind.NO_SUBMIT_LOOPER:
        return NoSubmitLooperPolicy(loop_unit=params.get("loop_unit"))
    if kind == PolicyKind.GREEDY_ORACLE:
        return GreedyOraclePolicy()
    if kind == PolicyKind.SOLVER:
        return SolverPolicy()
    if kind == PolicyKind.REDUNDANT_SEARCHER:
        return RedundantSearcherPolicy(
            submit_width=int(params.get("submit_width", 3)),
            submits_per_search=int(params.get("submits_per_search", 3)),
        )
    if kind == PolicyKind.EXTERNAL:
        command = params.get("command")
        if not command:
            raise ConfigurationError("external policy requires a command")
        if isinstance(command, str):
            command = shlex.split(command)
        return ExternalAdapterPolicy(
            command=list(command), timeout=float(params.get("timeout", 30.0))
        )
    raise ConfigurationError(f"unknown policy kind: {kind!r}")
