"""Repository-scan task family: artifact indexing, predicates, search, manifests.

A snapshot is a local directory tree. Indexing turns it into an immutable
corpus of artifact records; a predicate over those records defines a hidden
valid set; search is deterministic ranked pagination over the same corpus.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

from .actions import (
    Action,
    Candidate,
    Family,
    Observation,
    Search,
    SearchResults,
    Submit,
)
from .core import PublicTaskView, RunLedger, TaskSpec, record_submission
from .errors import ConfigurationError, GenerationError
from .seeding import derive_seed, stream
from .verifier import HiddenValidSet, judge_ids

PAGE_SIZE = 10
TEXT_TRUNCATE_BYTES = 64 * 1024
REPOSCAN_BUDGETS = {10: 30, 25: 60, 50: 100, 100: 180}

KIND_SOURCE = "source"
KIND_TEST = "test"
KIND_DOCUMENTATION = "documentation"
KIND_CONFIGURATION = "configuration"

_DOC_SUFFIXES = {".rst", ".md"}
_CONFIG_SUFFIXES = {".cfg", ".toml", ".ini", ".yaml"}
_TOKEN_RE = re.compile(r"[a-z][a-z0-9_]{3,}")


@dataclass
class ArtifactRecord:
    artifact_id: str
    relpath: str
    kind: str
    text: str
    preview: str
    blob: str = field(repr=False, compare=False, default="")

    def __post_init__(self) -> None:
        if not self.blob:
            self.blob = (self.text + "\n" + self.relpath).lower()


def classify_kind(relpath: str) -> str:
    parts = relpath.split("/")
    dirs = parts[:-1]
    name = parts[-1]
    suffix = ("." + name.rsplit(".", 1)[1]) if "." in name else ""
    if any(d in ("test", "tests") for d in dirs):
        return KIND_TEST
    if suffix in _DOC_SUFFIXES or "docs" in dirs:
        return KIND_DOCUMENTATION
    if suffix in _CONFIG_SUFFIXES:
        return KIND_CONFIGURATION
    return KIND_SOURCE


def _walk_files(root: Path) -> list[Path]:
    files = []
    for path in sorted(root.rglob("*")):
        if path.is_file() and ".git" not in path.relative_to(root).parts:
            files.append(path)
    return files


def index_snapshot(root: str | Path) -> list[ArtifactRecord]:
    """Index a snapshot into records, ordered by relpath then kind.

    Binary files are skipped via a null-byte heuristic; text is truncated to
    the first 64 KiB so indexing stays bounded and deterministic.
    """
    root = Path(root)
    if not root.is_dir():
        raise ConfigurationError(f"snapshot root not readable: {root}")
    records = []
    for path in _walk_files(root):
        data = path.read_bytes()
        if b"\0" in data[:8192]:
            continue
        text = data[:TEXT_TRUNCATE_BYTES].decode("utf-8", errors="replace")
        relpath = path.relative_to(root).as_posix()
        kind = classify_kind(relpath)
        records.append(
            ArtifactRecord(
                artifact_id=f"{relpath}#{kind}",
                relpath=relpath,
                kind=kind,
                text=text,
                preview=text[:200],
            )
        )
    records.sort(key=lambda r: (r.relpath, r.kind))
    return records


def snapshot_digest(root: str | Path) -> str:
    """Content hash over sorted (relpath, bytes) pairs of the whole snapshot."""
    root = Path(root)
    h = hashlib.sha256()
    for path in _walk_files(root):
        relpath = path.relative_to(root).as_posix()
        data = path.read_bytes()
        h.update(relpath.encode("utf-8"))
        h.update(b"\0")
        h.update(str(len(data)).encode("ascii"))
        h.update(b"\0")
        h.update(data)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Predicates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KeywordOrPattern:
    keywords: tuple[str, ...]
    patterns: tuple[str, ...] = ()


@dataclass(frozen=True)
class PathAndContent:
    path_substring: str
    content_substring: str


@dataclass(frozen=True)
class TestOrDocumentation:
    __test__ = False  # keep pytest collection away from the Test- prefix

    kinds: tuple[str, ...] = (KIND_TEST, KIND_DOCUMENTATION)


Predicate = Union[KeywordOrPattern, PathAndContent, TestOrDocumentation]

_COMPILED: dict[str, re.Pattern] = {}


def _compiled(pattern: str) -> re.Pattern:
    found = _COMPILED.get(pattern)
    if found is None:
        try:
            found = re.compile(pattern, re.IGNORECASE)
        except re.error as exc:
            raise GenerationError(f"invalid predicate pattern {pattern!r}: {exc}") from exc
        _COMPILED[pattern] = found
    return found


def evaluate_predicate(artifact: ArtifactRecord, predicate: Predicate) -> bool:
    if isinstance(predicate, KeywordOrPattern):
        if any(k.lower() in artifact.blob for k in predicate.keywords):
            return True
        return any(_compiled(p).search(artifact.text) for p in predicate.patterns)
    if isinstance(predicate, PathAndContent):
        if predicate.path_substring not in artifact.relpath:
            return False
        return predicate.content_substring.lower() in artifact.text.lower()
    if isinstance(predicate, TestOrDocumentation):
        return artifact.kind in predicate.kinds
    raise ConfigurationError(f"unknown predicate: {predicate!r}")


def predicate_to_dict(predicate: Predicate) -> dict:
    if isinstance(predicate, KeywordOrPattern):
        return {
            "type": "keyword_or_pattern",
            "keywords": list(predicate.keywords),
            "patterns": list(predicate.patterns),
        }
    if isinstance(predicate, PathAndContent):
        return {
            "type": "path_and_content",
            "path_substring": predicate.path_substring,
            "content_substring": predicate.content_substring,
        }
    if isinstance(predicate, TestOrDocumentation):
        return {"type": "test_or_documentation", "kinds": list(predicate.kinds)}
    raise ConfigurationError(f"unknown predicate: {predicate!r}")


def predicate_from_dict(obj: dict) -> Predicate:
    ptype = obj.get("type")
    if ptype == "keyword_or_pattern":
        return KeywordOrPattern(
            keywords=tuple(obj["keywords"]), patterns=tuple(obj.get("patterns", []))
        )
    if ptype == "path_and_content":
        return PathAndContent(
            path_substring=obj["path_substring"],
            content_substring=obj["content_substring"],
        )
    if ptype == "test_or_documentation":
        return TestOrDocumentation(kinds=tuple(obj["kinds"]))
    raise ConfigurationError(f"unknown predicate type: {ptype!r}")


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


def search(
    corpus: Sequence[ArtifactRecord], query: str, page: int, page_size: int = PAGE_SIZE
) -> SearchResults:
    """Rank by how many query tokens appear in text-plus-path, then paginate.

    Zero-score artifacts are excluded; ties break on ascending artifact id, so
    identical (query, page) requests always return identical results.
    """
    if page < 0 or page_size < 1:
        raise ConfigurationError("page must be >= 0 and page_size >= 1")
    tokens = [t for t in dict.fromkeys(query.lower().split()) if t]
    scored: list[tuple[int, str, ArtifactRecord]] = []
    for artifact in corpus:
        score = sum(1 for t in tokens if t in artifact.blob)
        if score > 0:
            scored.append((-score, artifact.artifact_id, artifact))
    scored.sort(key=lambda item: (item[0], item[1]))
    window = scored[page * page_size : (page + 1) * page_size]
    candidates = tuple(
        Candidate(artifact_id=a.artifact_id, preview=a.preview) for _, _, a in window
    )
    return SearchResults(query=query, page=page, candidates=candidates)


# ---------------------------------------------------------------------------
# Manifest generation
# ---------------------------------------------------------------------------

PREDICATE_FAMILIES = ("keyword_or_pattern", "path_and_content", "test_or_documentation")
_MAX_SAMPLING_ATTEMPTS = 200
# Tokens this common across a corpus make degenerate "match everything" predicates.
_MAX_DF_FRACTION = 0.6


@dataclass(frozen=True)
class ReposcanTask:
    spec: TaskSpec
    snapshot: str
    predicate: Predicate
    valid_ids: tuple[str, ...]


@dataclass
class SnapshotInfo:
    name: str
    root: str
    digest: str
    artifact_count: int


@dataclass
class ReposcanManifest:
    metadata: dict
    snapshots: list[SnapshotInfo]
    tasks: list[ReposcanTask]


def build_token_table(corpus: Sequence[ArtifactRecord]) -> Counter:
    """Document frequency of word tokens over the corpus."""
    table: Counter = Counter()
    for artifact in corpus:
        table.update(set(_TOKEN_RE.findall(artifact.blob)))
    return table


def _matches(corpus: Sequence[ArtifactRecord], predicate: Predicate) -> list[str]:
    return [a.artifact_id for a in corpus if evaluate_predicate(a, predicate)]


def _band_tokens(table: Counter, target: int, corpus_size: int) -> list[str]:
    low = target
    high = max(4 * target, target + 20)
    cap = max(int(corpus_size * _MAX_DF_FRACTION), target + 1)
    return sorted(t for t, df in table.items() if low <= df <= min(high, cap))


def _sample_keyword_predicate(rng, corpus, table, target):
    candidates = _band_tokens(table, target, len(corpus))
    if not candidates:
        return None
    for _ in range(_MAX_SAMPLING_ATTEMPTS):
        primary = rng.choice(candidates)
        extras = [t for t in candidates if t != primary]
        keywords = [primary]
        if extras and rng.random() < 0.5:
            keywords.append(rng.choice(extras))
        predicate = KeywordOrPattern(
            keywords=tuple(keywords), patterns=(re.escape(primary),)
        )
        if len(_matches(corpus, predicate)) >= target:
            return predicate
    return None


def _sample_path_content_predicate(rng, corpus, table, target):
    top_dirs = sorted({a.relpath.split("/", 1)[0] + "/" for a in corpus if "/" in a.relpath})
    if not top_dirs:
        return None
    band = _band_tokens(table, target, len(corpus))
    # Also consider moderately more common tokens; the path filter narrows them.
    wide = sorted(
        t for t, df in table.items() if target <= df <= max(6 * target, target + 40)
    )
    pool = band or wide
    if not pool:
        return None
    for _ in range(_MAX_SAMPLING_ATTEMPTS):
        token = rng.choice(pool if rng.random() < 0.5 else wide or pool)
        dirs = list(top_dirs)
        rng.shuffle(dirs)
        for directory in dirs:
            predicate = PathAndContent(path_substring=directory, content_substring=token)
            if len(_matches(corpus, predicate)) >= target:
                return predicate
    return None


def _sample_test_doc_predicate(rng, corpus, table, target):
    predicate = TestOrDocumentation()
    if len(_matches(corpus, predicate)) >= target:
        return predicate
    return None


_SAMPLERS = {
    "keyword_or_pattern": _sample_keyword_predicate,
    "path_and_content": _sample_path_content_predicate,
    "test_or_documentation": _sample_test_doc_predicate,
}


def _objective_text(predicate: Predicate, target: int) -> str:
    # Leading tokens are the searchable handles; scripted policies query them in order.
    if isinstance(predicate, KeywordOrPattern):
        head = " ".join(predicate.keywords)
        return f"{head} : find and submit {target} distinct repository artifacts matching these keywords"
    if isinstance(predicate, PathAndContent):
        return (
            f"{predicate.content_substring} {predicate.path_substring} : submit {target} distinct "
            f"artifacts under {predicate.path_substring} mentioning {predicate.content_substring}"
        )
    return (
        f"tests test docs .md .rst : submit {target} distinct test or documentation artifacts"
    )


def generate_manifest(
    snapshots: Sequence[str | Path],
    targets: Sequence[int] = (10, 25, 50, 100),
    instances_per_target: int = 9,
    seed: int = 0,
    budget_map: dict[int, int] | None = None,
) -> ReposcanManifest:
    """Build the task manifest: per target, instances cycle snapshot/predicate pairs.

    The hidden valid set of each task is exactly the set of corpus artifacts
    satisfying its predicate; generation retries predicate parameters from the
    seeded stream until the match count reaches the target.
    """
    budgets = dict(REPOSCAN_BUDGETS if budget_map is None else budget_map)
    roots = [Path(p) for p in snapshots]
    if not roots:
        raise GenerationError("at least one snapshot is required")
    infos: list[SnapshotInfo] = []
    corpora: dict[str, list[ArtifactRecord]] = {}
    tables: dict[str, Counter] = {}
    used_names: set[str] = set()
    for root in roots:
        corpus = index_snapshot(root)
        name = root.name or "snapshot"
        while name in used_names:
            name += "_"
        used_names.add(name)
        corpora[name] = corpus
        tables[name] = build_token_table(corpus)
        infos.append(
            SnapshotInfo(
                name=name,
                root=str(root),
                digest=snapshot_digest(root),
                artifact_count=len(corpus),
            )
        )

    combos = [(info.name, fam) for info in infos for fam in PREDICATE_FAMILIES]
    tasks: list[ReposcanTask] = []
    for target in targets:
        if target not in budgets:
            raise GenerationError(f"no budget configured for target {target}")
        for idx in range(instances_per_target):
            snap_name, fam = combos[idx % len(combos)]
            rng = stream(seed, "reposcan", snap_name, fam, target, idx)
            corpus = corpora[snap_name]
            predicate = _SAMPLERS[fam](rng, corpus, tables[snap_name], target)
            if predicate is None:
                raise GenerationError(
                    f"no {fam} predicate with >= {target} matches in snapshot {snap_name!r}"
                )
            valid_ids = tuple(sorted(_matches(corpus, predicate)))
            task_id = f"reposcan-{snap_name}-{fam}-n{target}-i{idx}"
            spec = TaskSpec(
                task_id=task_id,
                family=Family.REPOSCAN,
                objective_text=_objective_text(predicate, target),
                target_count=target,
                budget=budgets[target],
                seed=derive_seed(seed, task_id),
                verifier_config=task_id,
            )
            tasks.append(
                ReposcanTask(
                    spec=spec, snapshot=snap_name, predicate=predicate, valid_ids=valid_ids
                )
            )
    metadata = {
        "seed": seed,
        "targets": list(targets),
        "instances_per_target": instances_per_target,
        "budget_map": {str(k): v for k, v in sorted(budgets.items())},
        "task_count": len(tasks),
    }
    return ReposcanManifest(metadata=metadata, snapshots=infos, tasks=tasks)


# ---------------------------------------------------------------------------
# Manifest file format
# ---------------------------------------------------------------------------

PUBLIC_TASK_FIELDS = ("task_id", "family", "objective_text", "target_count", "budget", "seed")


def manifest_to_dict(manifest: ReposcanManifest) -> dict:
    return {
        "format": "qgp-manifest",
        "family": Family.REPOSCAN.value,
        "version": 1,
        "metadata": manifest.metadata,
        "snapshots": [
            {
                "name": s.name,
                "root": s.root,
                "digest": s.digest,
                "artifact_count": s.artifact_count,
            }
            for s in manifest.snapshots
        ],
        "tasks": [
            {
                "task_id": t.spec.task_id,
                "family": Family.REPOSCAN.value,
                "objective_text": t.spec.objective_text,
                "target_count": t.spec.target_count,
                "budget": t.spec.budget,
                "seed": t.spec.seed,
                "snapshot": t.snapshot,
                "hidden": {
                    "predicate": predicate_to_dict(t.predicate),
                    "valid_ids": list(t.valid_ids),
                },
            }
            for t in manifest.tasks
        ],
    }


def write_manifest(manifest: ReposcanManifest, path: str | Path) -> str:
    payload = json.dumps(manifest_to_dict(manifest), sort_keys=True, indent=1)
    Path(path).write_text(payload + "\n", encoding="utf-8")
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _task_from_dict(obj: dict) -> ReposcanTask:
    spec = TaskSpec(
        task_id=obj["task_id"],
        family=Family(obj["family"]),
        objective_text=obj["objective_text"],
        target_count=obj["target_count"],
        budget=obj["budget"],
        seed=obj["seed"],
        verifier_config=obj["task_id"],
    )
    hidden = obj["hidden"]
    return ReposcanTask(
        spec=spec,
        snapshot=obj["snapshot"],
        predicate=predicate_from_dict(hidden["predicate"]),
        valid_ids=tuple(hidden["valid_ids"]),
    )


def load_manifest(path: str | Path) -> ReposcanManifest:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("format") != "qgp-manifest" or obj.get("family") != Family.REPOSCAN.value:
        raise ConfigurationError(f"not a reposcan manifest: {path}")
    snapshots = [SnapshotInfo(**s) for s in obj["snapshots"]]
    tasks = [_task_from_dict(t) for t in obj["tasks"]]
    ids = [t.spec.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ConfigurationError(f"duplicate task ids in manifest: {path}")
    return ReposcanManifest(metadata=obj["metadata"], snapshots=snapshots, tasks=tasks)


def load_public_tasks(path: str | Path) -> list[dict]:
    """Policy-facing loader: hidden sections are never materialized."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    rows = []
    for task in obj.get("tasks", []):
        rows.append({k: task[k] for k in PUBLIC_TASK_FIELDS if k in task})
    return rows


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------


class ReposcanEnvironment:
    """Serves Search and Submit for one task over an indexed corpus."""

    family = Family.REPOSCAN

    def __init__(
        self,
        task: TaskSpec,
        corpus: Sequence[ArtifactRecord],
        valid_ids: Sequence[str],
        page_size: int = PAGE_SIZE,
    ) -> None:
        self.task = task
        self.corpus = list(corpus)
        self.page_size = page_size
        self.hidden = HiddenValidSet.from_ids(valid_ids)

    def public_view(self) -> PublicTaskView:
        return PublicTaskView(
            task_id=self.task.task_id,
            family=Family.REPOSCAN,
            objective_text=self.task.objective_text,
            target_count=self.task.target_count,
            budget=self.task.budget,
        )

    def execute(self, action: Action, ledger: RunLedger) -> Observation:
        if isinstance(action, Search):
            return search(self.corpus, action.query, action.page, self.page_size)
        if isinstance(action, Submit):
            prior_accepted = frozenset(self.hidden.accepted)
            verdicts = {
                key: key in self.hidden.members
                for key in (i.strip() for i in action.ids)
            }
            judge_ids(self.hidden, action.ids)
            _, feedback = record_submission(ledger, action.ids, verdicts, prior_accepted)
            return feedback
        raise ConfigurationError(f"reposcan cannot execute {action!r}")
