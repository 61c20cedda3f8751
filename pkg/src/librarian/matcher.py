"""Similarity scoring and library-version identification.

An unknown binary's five metadata sets are compared against every index
record with a Jaccard coefficient over tag-namespaced elements.  Scores
strictly above the threshold identify by metadata; exact content hashes
break ties between indistinguishable versions; version banners found in
read-only strings confirm a metadata answer or substitute for one when
the scores stay low.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .errors import EmptyIndex
from .features import FeatureVector
from .heuristics import StringMatch, VersionHeuristic, scan_strings

DEFAULT_THRESHOLD = 0.85

TAG_BY_FEATURE = {
    "exported_functions": "EXP_FUNC",
    "imported_functions": "IMP_FUNC",
    "exported_globals": "EXP_GLOB",
    "imported_globals": "IMP_GLOB",
    "dependencies": "DEP",
}
TAGS = tuple(TAG_BY_FEATURE.values())


def tagged_set(fv: FeatureVector) -> frozenset[tuple[str, str]]:
    """Namespace the five metadata sets so equal names in different
    feature classes never collide."""
    elements: set[tuple[str, str]] = set()
    for key, tag in TAG_BY_FEATURE.items():
        elements.update((tag, name) for name in getattr(fv, key))
    return frozenset(elements)


def bin2sim(fv1: FeatureVector, fv2: FeatureVector) -> float:
    """Jaccard coefficient over the two tagged feature sets, in [0, 1].

    Two empty vectors score 0: symbol-less binaries share no evidence
    (those are resolved through version strings instead).
    """
    a = tagged_set(fv1)
    b = tagged_set(fv2)
    union = len(a | b)
    if union == 0:
        return 0.0
    return len(a & b) / union


@dataclass(frozen=True)
class ContributionReport:
    """How much each feature class contributed to a match."""

    shares: dict[str, float]
    intersection_size: int


def contribution_factors(fv1: FeatureVector, fv2: FeatureVector) -> ContributionReport:
    """Per-feature share of the matching (intersected) elements.

    Shares sum to 1 for a non-empty intersection and are all zero when
    the vectors share nothing.
    """
    common = tagged_set(fv1) & tagged_set(fv2)
    total = len(common)
    if total == 0:
        return ContributionReport(shares={tag: 0.0 for tag in TAGS}, intersection_size=0)
    counts = {tag: 0 for tag in TAGS}
    for tag, _name in common:
        counts[tag] += 1
    return ContributionReport(
        shares={tag: counts[tag] / total for tag in TAGS},
        intersection_size=total,
    )


class MatchStatus(str, enum.Enum):
    IDENTIFIED = "identified"
    TIED = "tied"
    LOW_CONFIDENCE = "low_confidence"
    UNKNOWN = "unknown"


class MatchMethod(str, enum.Enum):
    METADATA = "metadata"
    STRINGS = "strings"
    BOTH = "both"
    HASH = "hash"


@dataclass(frozen=True)
class Candidate:
    library: str
    version: str
    arch: str
    score: float


@dataclass(frozen=True)
class MatchResult:
    status: MatchStatus
    candidates: tuple[Candidate, ...]
    method: MatchMethod
    confirmed_by_strings: bool = False
    string_evidence: tuple[StringMatch, ...] = ()

    @property
    def best(self) -> Candidate | None:
        return self.candidates[0] if self.candidates else None

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "method": self.method.value,
            "confirmed_by_strings": self.confirmed_by_strings,
            "candidates": [
                {
                    "library": c.library,
                    "version": c.version,
                    "arch": c.arch,
                    "score": c.score,
                }
                for c in self.candidates
            ],
            "string_evidence": [
                {
                    "library": e.library,
                    "matched_text": e.matched_text,
                    "version": e.version,
                    "source": e.source,
                }
                for e in self.string_evidence
            ],
        }


def _sorted_candidates(cands: list[Candidate]) -> tuple[Candidate, ...]:
    return tuple(sorted(cands, key=lambda c: (-c.score, c.library, c.version)))


def identify(fv: FeatureVector, store, heuristics: Sequence[VersionHeuristic] | None = None,
             threshold: float = DEFAULT_THRESHOLD) -> MatchResult:
    """Run the full identification pipeline for one feature vector.

    Scores ``fv`` against every record in ``store``, then decides:

    * top score strictly above ``threshold``: a single candidate
      (library, version) identifies by metadata; several distinct
      candidates at the same top score fall back to an exact content
      hash, else the tie is reported as such;
    * top score at or below the threshold: a version-banner hit
      identifies by strings; otherwise the best partial scores are
      reported as low confidence, or unknown when nothing intersects.

    Version banners found for an identified library set
    ``confirmed_by_strings`` when the versions agree; a disagreeing
    banner keeps the metadata answer and leaves the conflict visible in
    ``string_evidence``.
    """
    records = store.records if hasattr(store, "records") else list(store)
    if not records:
        raise EmptyIndex("identification requires a non-empty index")
    if heuristics is None:
        heuristics = getattr(store, "heuristics", [])

    query = tagged_set(fv)
    scored: list[tuple[float, object]] = []
    for rec in records:
        other = tagged_set(rec.fv)
        union = len(query | other)
        score = (len(query & other) / union) if union else 0.0
        scored.append((score, rec))

    top_score = max(score for score, _ in scored)
    hits = tuple(scan_strings(fv.rodata_strings, heuristics))

    if top_score > threshold:
        top_records = [rec for score, rec in scored if score == top_score]
        groups: dict[tuple[str, str], list] = {}
        for rec in top_records:
            groups.setdefault((rec.library, rec.version), []).append(rec)

        winner_key: tuple[str, str] | None = None
        method = MatchMethod.METADATA
        if len(groups) == 1:
            winner_key = next(iter(groups))
        else:
            for rec in top_records:
                if rec.sha256 == fv.binary_meta.file_sha256:
                    winner_key = (rec.library, rec.version)
                    method = MatchMethod.HASH
                    break

        if winner_key is None:
            cands = [
                Candidate(lib, ver, _pick_arch(recs, fv), top_score)
                for (lib, ver), recs in groups.items()
            ]
            return MatchResult(
                status=MatchStatus.TIED,
                candidates=_sorted_candidates(cands),
                method=MatchMethod.METADATA,
                string_evidence=hits,
            )

        confirmed = False
        lib, ver = winner_key
        same_lib_hits = [h for h in hits if h.library.casefold() == lib.casefold()]
        if same_lib_hits:
            confirmed = any(h.version == ver for h in same_lib_hits)
        if confirmed and method is MatchMethod.METADATA:
            method = MatchMethod.BOTH
        return MatchResult(
            status=MatchStatus.IDENTIFIED,
            candidates=(Candidate(lib, ver, _pick_arch(groups[winner_key], fv), top_score),),
            method=method,
            confirmed_by_strings=confirmed,
            string_evidence=hits,
        )

    if hits:
        chosen = hits[0]
        return MatchResult(
            status=MatchStatus.IDENTIFIED,
            candidates=(
                Candidate(chosen.library, chosen.version, fv.binary_meta.arch, top_score),
            ),
            method=MatchMethod.STRINGS,
            string_evidence=hits,
        )

    if top_score > 0.0:
        best: dict[tuple[str, str], tuple[float, object]] = {}
        for score, rec in scored:
            key = (rec.library, rec.version)
            if key not in best or score > best[key][0]:
                best[key] = (score, rec)
        cands = [
            Candidate(lib, ver, rec.arch, score)
            for (lib, ver), (score, rec) in best.items()
            if score > 0.0
        ]
        return MatchResult(
            status=MatchStatus.LOW_CONFIDENCE,
            candidates=_sorted_candidates(cands)[:3],
            method=MatchMethod.METADATA,
            string_evidence=hits,
        )

    return MatchResult(
        status=MatchStatus.UNKNOWN,
        candidates=(),
        method=MatchMethod.METADATA,
        string_evidence=hits,
    )


def _pick_arch(records: list, fv: FeatureVector) -> str:
    for rec in records:
        if rec.arch == fv.binary_meta.arch:
            return rec.arch
    return min(rec.arch for rec in records)


@dataclass
class MethodTally:
    """Counts of identification outcomes over a batch."""

    methods: dict[str, int] = field(default_factory=dict)
    statuses: dict[str, int] = field(default_factory=dict)

    def add(self, result: MatchResult) -> None:
        self.statuses[result.status.value] = self.statuses.get(result.status.value, 0) + 1
        if result.status is MatchStatus.IDENTIFIED:
            self.methods[result.method.value] = self.methods.get(result.method.value, 0) + 1

    def share(self, method: str) -> float:
        total = sum(self.methods.values())
        return self.methods.get(method, 0) / total if total else 0.0

    def to_dict(self) -> dict:
        return {"methods": dict(sorted(self.methods.items())),
                "statuses": dict(sorted(self.statuses.items()))}


def batch_identify(fvs: Sequence[FeatureVector], store,
                   heuristics: Sequence[VersionHeuristic] | None = None,
                   threshold: float = DEFAULT_THRESHOLD,
                   jobs: int = 1) -> tuple[list[MatchResult], MethodTally]:
    """Identify many vectors; results keep the input order."""
    records = store.records if hasattr(store, "records") else list(store)
    if not records:
        raise EmptyIndex("identification requires a non-empty index")

    def work(fv: FeatureVector) -> MatchResult:
        return identify(fv, store, heuristics, threshold)

    if jobs > 1 and len(fvs) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, fvs))
    else:
        results = [work(fv) for fv in fvs]

    tally = MethodTally()
    for result in results:
        tally.add(result)
    return results, tally
