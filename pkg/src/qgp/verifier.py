"""Hidden valid set and verdict issuing.

The verifier is the only component that knows which identifiers count. It
answers per-identifier verdicts and count snapshots; nothing it emits ever
enumerates hidden members that the caller has not itself submitted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .core import normalize_id


class IdVerdict(str, Enum):
    ACCEPT_NEW = "accept_new"
    DUPLICATE = "duplicate"
    REJECT = "reject"


@dataclass
class HiddenValidSet:
    members: frozenset[str]
    accepted: set[str] = field(default_factory=set)
    submitted: set[str] = field(default_factory=set)

    @classmethod
    def from_ids(cls, ids: Iterable[str]) -> "HiddenValidSet":
        return cls(members=frozenset(normalize_id(x) for x in ids))

    def is_valid(self, raw: str) -> bool:
        return normalize_id(raw) in self.members


@dataclass(frozen=True)
class StatusSnapshot:
    valid_count: int
    target_count: int
    remaining: int


def judge_ids(verifier: HiddenValidSet, ids: Sequence[str]) -> list[tuple[str, IdVerdict]]:
    """Judge a batch left to right, updating the accepted set as it goes.

    Any identifier previously submitted (in an earlier batch or earlier in this
    one) is a duplicate regardless of validity; a fresh valid identifier is
    accepted exactly once.
    """
    verdicts: list[tuple[str, IdVerdict]] = []
    for raw in ids:
        key = normalize_id(raw)
        if key in verifier.accepted or key in verifier.submitted:
            verdicts.append((key, IdVerdict.DUPLICATE))
        elif key in verifier.members:
            verifier.accepted.add(key)
            verdicts.append((key, IdVerdict.ACCEPT_NEW))
        else:
            verdicts.append((key, IdVerdict.REJECT))
        verifier.submitted.add(key)
    return verdicts


def snapshot(verifier: HiddenValidSet, target_count: int) -> StatusSnapshot:
    valid = len(verifier.accepted)
    return StatusSnapshot(
        valid_count=valid,
        target_count=target_count,
        remaining=max(0, target_count - valid),
    )
