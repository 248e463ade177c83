"""Execution contracts between policy and environment.

Controllers never see hidden valid sets or checker expectations; they work
from proposed actions and the feedback already returned to the policy. Every
modification they make is logged as an intervention, so assistance stays
visible in the run record.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .actions import (
    Action,
    AskUser,
    ControllerNotice,
    Edit,
    Final,
    Inspect,
    Observation,
    RunCheck,
    Search,
    SearchResults,
    Submit,
    SubmitFeedback,
    SubmitUnit,
    UnitFeedback,
    UnitStatus,
)
from .core import RunContext, StepDecision
from .errors import ConfigurationError


class ControllerKind(str, Enum):
    STANDARD = "standard"
    VERIFIER_GATED = "verifier_gated"
    STATE_QGP = "state_qgp"
    UNIT_QGP = "unit_qgp"
    ABLATION = "ablation"


class AblationFlag(str, Enum):
    DEDUPE_ONLY = "dedupe_only"
    PAGE_MEMORY_ONLY = "page_memory_only"
    DEDUPE_PLUS_PAGE_NO_BUFFER = "dedupe_plus_page_no_buffer"


class InterventionKind(str, Enum):
    BLOCKED_TERMINATION = "blocked_termination"
    DEDUP_FILTERED = "dedup_filtered"
    PAGE_ADVANCED = "page_advanced"
    REPAIRED_TO_SEARCH = "repaired_to_search"
    STEERED_TO_UNIT = "steered_to_unit"
    ROUTED_TO_CHECK = "routed_to_check"
    ROUTED_TO_SUBMIT = "routed_to_submit"
    NO_PROGRESS_STOP = "no_progress_stop"


@dataclass
class Intervention:
    step: int
    kind: InterventionKind
    detail: str


@dataclass(frozen=True)
class ControllerConfig:
    kind: ControllerKind
    ablation_flags: AblationFlag | None = None
    no_progress_limit: int = 6

    def __post_init__(self) -> None:
        if self.kind == ControllerKind.ABLATION and self.ablation_flags is None:
            raise ConfigurationError("ablation controller requires ablation_flags")
        if self.no_progress_limit < 1:
            raise ConfigurationError("no_progress_limit must be >= 1")


def standard_transform(action: Action, ctx: RunContext) -> Action:
    """The passthrough contract: well-formed actions execute unchanged."""
    return action


def gate_termination(
    action: Action, valid_count: int, target_count: int
) -> Action | ControllerNotice:
    """Block Final/AskUser while the count invariant is unmet."""
    if isinstance(action, (Final, AskUser)) and valid_count < target_count:
        remaining = target_count - valid_count
        return ControllerNotice(
            reason=(
                f"termination blocked: target not met, {remaining} of "
                f"{target_count} still required"
            ),
            valid_count=valid_count,
            remaining=remaining,
        )
    return action


class StandardController:
    kind_label = ControllerKind.STANDARD.value

    def transform(self, action: Action, ctx: RunContext) -> StepDecision:
        return StepDecision(action=standard_transform(action, ctx))

    def observe(self, action: object, observation: Observation, ctx: RunContext) -> None:
        pass


class VerifierGatedController:
    kind_label = ControllerKind.VERIFIER_GATED.value

    def transform(self, action: Action, ctx: RunContext) -> StepDecision:
        gated = gate_termination(action, ctx.valid_count, ctx.target_count)
        if isinstance(gated, ControllerNotice):
            iv = Intervention(
                step=ctx.step,
                kind=InterventionKind.BLOCKED_TERMINATION,
                detail=gated.reason,
            )
            return StepDecision(notice=gated, interventions=[iv])
        return StepDecision(action=gated)

    def observe(self, action: object, observation: Observation, ctx: RunContext) -> None:
        pass


# ---------------------------------------------------------------------------
# State-tracking retrieval controller (and its ablation variants)
# ---------------------------------------------------------------------------


@dataclass
class StateQgpState:
    submitted_ids: set[str] = field(default_factory=set)
    seen_pages: set[tuple[str, int]] = field(default_factory=set)
    last_query: str | None = None
    next_unseen_page: dict[str, int] = field(default_factory=dict)
    # Ordered set: search-result ids seen but not yet submitted.
    candidate_buffer: dict[str, None] = field(default_factory=dict)

    def next_page(self, query: str) -> int:
        page = 0
        while (query, page) in self.seen_pages:
            page += 1
        return page


class StateQgpController:
    """Retrieval persistence state: dedupe, page memory, buffered repair, gating.

    The ablation variants reuse this machinery with individual features
    switched off; the full controller enables everything.
    """

    def __init__(
        self,
        *,
        gate: bool = True,
        dedupe: bool = True,
        page_memory: bool = True,
        buffered_submit: bool = True,
        label: str = ControllerKind.STATE_QGP.value,
    ) -> None:
        self.gate = gate
        self.dedupe = dedupe
        self.page_memory = page_memory
        self.buffered_submit = buffered_submit
        self.kind_label = label
        self.state = StateQgpState()

    # -- helpers ----------------------------------------------------------

    def _fallback_query(self, ctx: RunContext) -> str:
        if self.state.last_query:
            return self.state.last_query
        tokens = [t for t in ctx.objective_text.lower().split() if len(t) >= 2]
        return tokens[0] if tokens else ctx.objective_text.strip() or "artifact"

    def _repair_to_search(self, ctx: RunContext, ivs: list[Intervention]) -> StepDecision:
        query = self._fallback_query(ctx)
        page = self.state.next_page(query)
        ivs.append(
            Intervention(
                step=ctx.step,
                kind=InterventionKind.REPAIRED_TO_SEARCH,
                detail=f"empty submission repaired to search {query!r} page {page}",
            )
        )
        self.state.last_query = query
        return StepDecision(action=Search(query=query, page=page), interventions=ivs)

    # -- contract ----------------------------------------------------------

    def transform(self, action: Action, ctx: RunContext) -> StepDecision:
        ivs: list[Intervention] = []
        if self.gate:
            gated = gate_termination(action, ctx.valid_count, ctx.target_count)
            if isinstance(gated, ControllerNotice):
                ivs.append(
                    Intervention(
                        step=ctx.step,
                        kind=InterventionKind.BLOCKED_TERMINATION,
                        detail=gated.reason,
                    )
                )
                return StepDecision(notice=gated, interventions=ivs)

        if isinstance(action, Search):
            self.state.last_query = action.query
            if self.page_memory and (action.query, action.page) in self.state.seen_pages:
                page = self.state.next_page(action.query)
                ivs.append(
                    Intervention(
                        step=ctx.step,
                        kind=InterventionKind.PAGE_ADVANCED,
                        detail=(
                            f"seen page {action.page} of {action.query!r} advanced to {page}"
                        ),
                    )
                )
                return StepDecision(action=Search(action.query, page), interventions=ivs)
            return StepDecision(action=action)

        if isinstance(action, Submit) and self.dedupe:
            filtered: list[str] = []
            batch_keys: set[str] = set()
            for raw in action.ids:
                key = raw.strip()
                if key in self.state.submitted_ids or key in batch_keys:
                    continue
                batch_keys.add(key)
                filtered.append(raw)
            if filtered:
                forwarded = Submit(ids=tuple(filtered))
                self.state.submitted_ids.update(i.strip() for i in filtered)
                for key in batch_keys:
                    self.state.candidate_buffer.pop(key, None)
                if forwarded.ids != action.ids:
                    dropped = len(action.ids) - len(filtered)
                    ivs.append(
                        Intervention(
                            step=ctx.step,
                            kind=InterventionKind.DEDUP_FILTERED,
                            detail=f"filtered {dropped} already-submitted or repeated ids",
                        )
                    )
                return StepDecision(action=forwarded, interventions=ivs)
            # Everything was filtered out: substitute buffered candidates, else search.
            if self.buffered_submit and self.state.candidate_buffer:
                batch = list(self.state.candidate_buffer)[: ctx.page_size]
                for key in batch:
                    self.state.candidate_buffer.pop(key, None)
                self.state.submitted_ids.update(batch)
                ivs.append(
                    Intervention(
                        step=ctx.step,
                        kind=InterventionKind.DEDUP_FILTERED,
                        detail=(
                            f"fully duplicate submission replaced with {len(batch)} "
                            f"buffered candidates"
                        ),
                    )
                )
                return StepDecision(action=Submit(ids=tuple(batch)), interventions=ivs)
            if self.page_memory:
                return self._repair_to_search(ctx, ivs)
            if tuple(filtered) != action.ids:
                ivs.append(
                    Intervention(
                        step=ctx.step,
                        kind=InterventionKind.DEDUP_FILTERED,
                        detail="all ids were duplicates; forwarding empty submission",
                    )
                )
            return StepDecision(action=Submit(ids=()), interventions=ivs)

        return StepDecision(action=action)

    def observe(self, action: object, observation: Observation, ctx: RunContext) -> None:
        if isinstance(observation, SearchResults):
            self.state.seen_pages.add((observation.query, observation.page))
            self.state.next_unseen_page[observation.query] = self.state.next_page(
                observation.query
            )
            for candidate in observation.candidates:
                key = candidate.artifact_id.strip()
                if key not in self.state.submitted_ids:
                    self.state.candidate_buffer.setdefault(key, None)
        elif isinstance(observation, SubmitFeedback) and isinstance(action, Submit):
            # Track forwarded ids even when dedupe is off (ablation variants).
            self.state.submitted_ids.update(i.strip() for i in action.ids)
            for raw in action.ids:
                self.state.candidate_buffer.pop(raw.strip(), None)


def ablation_controller(flag: AblationFlag) -> StateQgpController:
    """Component ablations; none of them gate termination or buffer candidates
    beyond what their flag allows."""
    label = f"{ControllerKind.ABLATION.value}:{flag.value}"
    if flag == AblationFlag.DEDUPE_ONLY:
        return StateQgpController(
            gate=False, dedupe=True, page_memory=False, buffered_submit=False, label=label
        )
    if flag == AblationFlag.PAGE_MEMORY_ONLY:
        return StateQgpController(
            gate=False, dedupe=False, page_memory=True, buffered_submit=False, label=label
        )
    if flag == AblationFlag.DEDUPE_PLUS_PAGE_NO_BUFFER:
        return StateQgpController(
            gate=False, dedupe=True, page_memory=True, buffered_submit=False, label=label
        )
    raise ConfigurationError(f"unknown ablation flag: {flag!r}")


# ---------------------------------------------------------------------------
# Backlog work-unit controller
# ---------------------------------------------------------------------------


@dataclass
class UnitQgpState:
    unit_status_view: dict[str, UnitStatus] = field(default_factory=dict)
    last_action_per_unit: dict[str, str] = field(default_factory=dict)
    steps_without_progress: int = 0
    steering_target: str | None = None
    recoveries: int = 0


class UnitQgpController:
    """Backlog persistence: route edits to checks, passes to submits, stalls to
    pending units; give up routing (but never gating) after a long stall."""

    def __init__(self, no_progress_limit: int = 6) -> None:
        self.kind_label = ControllerKind.UNIT_QGP.value
        self.k = no_progress_limit
        self.state = UnitQgpState()
        self.pending_check: str | None = None
        # unit -> step at which a pass was observed without a submit yet
        self.awaiting_submit: dict[str, int] = {}
        self.accepted_units: set[str] = set()
        self.failed_units: set[str] = set()
        self.routed_units: set[str] = set()
        self.last_proposal: Action | None = None
        self.stopped = False
        self._stop_logged = False

    def _status(self, unit_id: str) -> UnitStatus:
        return self.state.unit_status_view.get(unit_id, UnitStatus.PENDING)

    def _first_open_unit(self, ctx: RunContext) -> str | None:
        for unit_id in ctx.unit_order:
            if self._status(unit_id) != UnitStatus.PASSED:
                return unit_id
        return None

    def _due_submit(self, ctx: RunContext) -> str | None:
        for unit_id in ctx.unit_order:
            observed = self.awaiting_submit.get(unit_id)
            if observed is not None and ctx.step - observed >= 2:
                return unit_id
        return None

    def transform(self, action: Action, ctx: RunContext) -> StepDecision:
        ivs: list[Intervention] = []
        proposal = action
        # Gating is unconditional while the target is unmet, even after the
        # controller has stopped repairing a stalled run.
        gated = gate_termination(action, ctx.valid_count, ctx.target_count)
        if isinstance(gated, ControllerNotice):
            ivs.append(
                Intervention(
                    step=ctx.step,
                    kind=InterventionKind.BLOCKED_TERMINATION,
                    detail=gated.reason,
                )
            )
            self.last_proposal = proposal
            return StepDecision(notice=gated, interventions=ivs)

        if not self.stopped and self.state.steps_without_progress >= 2 * self.k:
            self.stopped = True
            if not self._stop_logged:
                self._stop_logged = True
                ivs.append(
                    Intervention(
                        step=ctx.step,
                        kind=InterventionKind.NO_PROGRESS_STOP,
                        detail=(
                            f"no progress for {2 * self.k} steps; "
                            f"routing disabled, budget will exhaust"
                        ),
                    )
                )
        if self.stopped:
            self.last_proposal = proposal
            return StepDecision(action=action, interventions=ivs)

        rewritten: Action | None = None
        if self.pending_check is not None:
            unit = self.pending_check
            self.pending_check = None
            if not (isinstance(action, RunCheck) and action.unit_id == unit):
                rewritten = RunCheck(unit_id=unit)
                ivs.append(
                    Intervention(
                        step=ctx.step,
                        kind=InterventionKind.ROUTED_TO_CHECK,
                        detail=f"post-edit action routed to checker for {unit}",
                    )
                )
                self.routed_units.add(unit)
        if rewritten is None:
            due = self._due_submit(ctx)
            if due is not None and not (
                isinstance(action, SubmitUnit) and action.unit_id == due
            ):
                rewritten = SubmitUnit(unit_id=due)
                ivs.append(
                    Intervention(
                        step=ctx.step,
                        kind=InterventionKind.ROUTED_TO_SUBMIT,
                        detail=f"passed unit {due} routed to submission",
                    )
                )
                self.routed_units.add(due)
        if rewritten is None and self.state.steps_without_progress >= self.k:
            stale = isinstance(action, Inspect) or action == self.last_proposal
            target = self._first_open_unit(ctx)
            if stale and target is not None:
                candidate = Inspect(unit_id=target)
                if candidate != action:
                    rewritten = candidate
                    self.state.steering_target = target
                    ivs.append(
                        Intervention(
                            step=ctx.step,
                            kind=InterventionKind.STEERED_TO_UNIT,
                            detail=f"stalled policy steered to first open unit {target}",
                        )
                    )
                    self.routed_units.add(target)
        self.last_proposal = proposal
        return StepDecision(action=rewritten or action, interventions=ivs)

    def observe(self, action: object, observation: Observation, ctx: RunContext) -> None:
        progressed = False
        if isinstance(observation, UnitFeedback):
            unit_id = observation.unit_id
            self.state.last_action_per_unit[unit_id] = type(action).__name__
            previous = self._status(unit_id)
            self.state.unit_status_view[unit_id] = observation.status_after
            if isinstance(action, Edit) and observation.status_after != UnitStatus.PASSED:
                # The next policy action must run this unit's checker.
                self.pending_check = unit_id
            if isinstance(action, RunCheck):
                if observation.status_after == UnitStatus.PASSED:
                    if previous != UnitStatus.PASSED:
                        progressed = True
                        if unit_id not in self.accepted_units:
                            self.awaiting_submit.setdefault(unit_id, ctx.step)
                        if unit_id in self.failed_units and unit_id in self.routed_units:
                            self.state.recoveries += 1
                else:
                    self.failed_units.add(unit_id)
        elif isinstance(observation, SubmitFeedback):
            if observation.accepted:
                progressed = True
                for unit_id in observation.accepted:
                    self.accepted_units.add(unit_id)
                    self.awaiting_submit.pop(unit_id, None)
            for unit_id in observation.duplicates:
                self.awaiting_submit.pop(unit_id, None)
        if progressed:
            self.state.steps_without_progress = 0
        else:
            self.state.steps_without_progress += 1


# ---------------------------------------------------------------------------
# Factory
# ---------------------------------------------------------------------------


def build_controller(config: ControllerConfig):
    if config.kind == ControllerKind.STANDARD:
        return StandardController()
    if config.kind == ControllerKind.VERIFIER_GATED:
        return VerifierGatedController()
    if config.kind == ControllerKind.STATE_QGP:
        return StateQgpController()
    if config.kind == ControllerKind.UNIT_QGP:
        return UnitQgpController(no_progress_limit=config.no_progress_limit)
    if config.kind == ControllerKind.ABLATION:
        assert config.ablation_flags is not None
        return ablation_controller(config.ablation_flags)
    raise ConfigurationError(f"unknown controller kind: {config.kind!r}")
