"""CVE mapping and patch-latency analytics over app release histories.

Identified (library, version) pairs are matched against a local CVE
database, then app timelines are folded into per-library residency
spans.  Two latencies fall out of the dates: how long the library's
developers took to ship a patch after disclosure, and how long the app
kept the vulnerable version after that patch existed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InvalidPair, SchemaError


def _parse_date(value, where: str) -> date:
    if not isinstance(value, str):
        raise SchemaError(f"{where}: date must be an ISO-8601 string")
    try:
        return date.fromisoformat(value)
    except ValueError as exc:
        raise SchemaError(f"{where}: bad date {value!r}: {exc}") from exc


@dataclass(frozen=True)
class CveEntry:
    """One vulnerability record with its patch information.

    ``affected_versions`` is an explicit list in the library's own
    versioning scheme; range expressions are expanded when the database
    is authored.  Patches may legitimately predate disclosure.
    """

    cve_id: str
    library: str
    affected_versions: tuple[str, ...]
    disclosure_date: date
    patch_version: str
    patch_release_date: date
    severity: str = ""
    description: str = ""


def load_cvedb(doc: str | bytes | list) -> list[CveEntry]:
    """Parse and validate a CVE database (a JSON array of entries)."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"cvedb: invalid JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise SchemaError("cvedb: document must be a JSON array")

    entries: list[CveEntry] = []
    seen: set[tuple[str, str]] = set()
    for i, raw in enumerate(doc):
        where = f"cvedb entry {i}"
        if not isinstance(raw, dict):
            raise SchemaError(f"{where}: must be an object")
        try:
            entry = CveEntry(
                cve_id=raw["cve_id"],
                library=raw["library"],
                affected_versions=tuple(raw["affected_versions"]),
                disclosure_date=_parse_date(raw["disclosure_date"], where),
                patch_version=raw["patch_version"],
                patch_release_date=_parse_date(raw["patch_release_date"], where),
                severity=raw.get("severity", ""),
                description=raw.get("description", ""),
            )
        except KeyError as exc:
            raise SchemaError(f"{where}: missing required field {exc.args[0]!r}") from exc
        if not entry.affected_versions:
            raise SchemaError(f"{where}: affected_versions must be non-empty")
        if entry.patch_version in entry.affected_versions:
            raise SchemaError(
                f"{where}: patch_version {entry.patch_version!r} listed as affected"
            )
        key = (entry.cve_id, entry.library.casefold())
        if key in seen:
            raise SchemaError(f"{where}: duplicate {entry.cve_id} for {entry.library}")
        seen.add(key)
        entries.append(entry)
    return entries


def load_cvedb_file(path: str | Path) -> list[CveEntry]:
    return load_cvedb(Path(path).read_text("utf-8"))


def flag_vulnerable(library: str, version: str, cvedb: Iterable[CveEntry]) -> list[CveEntry]:
    """CVEs affecting exactly this (library, version) pair.

    Library names compare case-insensitively; versions must appear
    verbatim in the entry's affected list.
    """
    needle = library.casefold()
    return [
        e for e in cvedb
        if e.library.casefold() == needle and version in e.affected_versions
    ]


@dataclass(frozen=True)
class AppRelease:
    version_code: int
    release_date: date
    identified_libs: tuple[tuple[str, str], ...]  # (library, version) pairs


@dataclass(frozen=True)
class AppTimeline:
    app_id: str
    versions: tuple[AppRelease, ...]


def load_timeline(doc: str | bytes | dict) -> AppTimeline:
    """Parse one app's release history and check its ordering invariants."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"timeline: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "app_id" not in doc or "versions" not in doc:
        raise SchemaError("timeline: must be an object with 'app_id' and 'versions'")

    releases: list[AppRelease] = []
    for i, raw in enumerate(doc["versions"]):
        where = f"timeline {doc['app_id']} version {i}"
        try:
            libs = tuple((lib, ver) for lib, ver in raw["identified_libs"])
            releases.append(
                AppRelease(
                    version_code=int(raw["version_code"]),
                    release_date=_parse_date(raw["release_date"], where),
                    identified_libs=libs,
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{where}: {exc}") from exc

    for prev, cur in zip(releases, releases[1:]):
        if cur.version_code <= prev.version_code:
            raise SchemaError(
                f"timeline {doc['app_id']}: version_code must be strictly increasing"
            )
        if cur.release_date < prev.release_date:
            raise SchemaError(
                f"timeline {doc['app_id']}: release_date must be non-decreasing"
            )
    return AppTimeline(app_id=doc["app_id"], versions=tuple(releases))


FIX_UPDATED = "updated"
FIX_REMOVED = "removed"
FIX_STILL_PRESENT = "still_present"


@dataclass(frozen=True)
class LibrarySpan:
    """A maximal run of consecutive app versions carrying one library version."""

    app_id: str
    library: str
    lib_version: str
    first_seen: date
    last_seen: date
    fix_date: date | None
    fix_kind: str  # updated | removed | still_present


def compute_spans(timeline: AppTimeline) -> list[LibrarySpan]:
    """Fold a timeline into library residency spans.

    A span ends when the next release drops the (library, version) pair:
    ``updated`` when the library reappears at another version,
    ``removed`` when it vanishes entirely, ``still_present`` when the
    run reaches the last known release (no fix yet).  Non-contiguous
    presence yields separate spans.
    """
    spans: list[LibrarySpan] = []
    releases = timeline.versions
    active: dict[tuple[str, str], int] = {}  # pair -> index of first release in run

    for i, release in enumerate(releases):
        current = set(release.identified_libs)
        previous = set(releases[i - 1].identified_libs) if i > 0 else set()
        for pair in current - previous:
            active[pair] = i
        for pair in previous - current:
            start = active.pop(pair)
            lib, ver = pair
            next_libs = {l for l, _ in release.identified_libs}
            spans.append(
                LibrarySpan(
                    app_id=timeline.app_id,
                    library=lib,
                    lib_version=ver,
                    first_seen=releases[start].release_date,
                    last_seen=releases[i - 1].release_date,
                    fix_date=release.release_date,
                    fix_kind=FIX_UPDATED if lib in next_libs else FIX_REMOVED,
                )
            )

    for pair, start in active.items():
        lib, ver = pair
        spans.append(
            LibrarySpan(
                app_id=timeline.app_id,
                library=lib,
                lib_version=ver,
                first_seen=releases[start].release_date,
                last_seen=releases[-1].release_date,
                fix_date=None,
                fix_kind=FIX_STILL_PRESENT,
            )
        )

    spans.sort(key=lambda s: (s.first_seen, s.library, s.lib_version))
    return spans


def ttrp(cve: CveEntry) -> int:
    """Days from disclosure to patch availability (negative if the patch
    shipped first — surfaced, never clamped)."""
    return (cve.patch_release_date - cve.disclosure_date).days


def ttaf(span: LibrarySpan, cve: CveEntry) -> int | None:
    """Days the app kept the vulnerable version after a patch existed.

    Measured from patch availability to the release that removed or
    updated the library; None while the library is still present.  The
    span may well predate the patch; exposure is counted from the patch
    release either way.
    """
    if cve.library.casefold() != span.library.casefold() or \
            span.lib_version not in cve.affected_versions:
        raise InvalidPair(
            f"{cve.cve_id} does not apply to {span.library} {span.lib_version}"
        )
    if span.fix_date is None:
        return None
    return (span.fix_date - cve.patch_release_date).days


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    n = len(values)
    if n == 0:
        return 0.0, 0.0
    mean = sum(values) / n
    if n == 1:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


@dataclass(frozen=True)
class PairRow:
    """One (span, CVE) pairing with its computed latencies."""

    app_id: str
    library: str
    lib_version: str
    cve_id: str
    disclosure_date: date
    patch_release_date: date
    first_seen: date
    last_seen: date
    fix_date: date | None
    fix_kind: str
    ttrp_days: int
    ttaf_days: int | None
    excluded: bool  # fixed before the CVE existed; kept out of averages
    outdated_days: int | None  # for still-present spans, vs. the as-of date


@dataclass(frozen=True)
class StudyReport:
    as_of: date
    pairs: tuple[PairRow, ...]
    ttrp_mean: float
    ttrp_se: float
    ttrp_n: int
    ttaf_mean: float
    ttaf_se: float
    ttaf_n: int
    ttaf_app_weighted_mean: float
    per_app: tuple[tuple[str, float, int], ...]  # (app_id, mean ttaf, pairs)
    per_library: tuple[tuple[str, float, int], ...]
    still_vulnerable_count: int
    outdated_mean: float
    outdated_se: float

    def to_dict(self) -> dict:
        return {
            "as_of": self.as_of.isoformat(),
            "ttrp": {"mean": self.ttrp_mean, "se": self.ttrp_se, "n": self.ttrp_n},
            "ttaf": {
                "mean": self.ttaf_mean,
                "se": self.ttaf_se,
                "n": self.ttaf_n,
                "app_weighted_mean": self.ttaf_app_weighted_mean,
            },
            "still_vulnerable": {
                "count": self.still_vulnerable_count,
                "outdated_mean": self.outdated_mean,
                "outdated_se": self.outdated_se,
            },
            "per_app": [
                {"app_id": a, "mean_ttaf": m, "n": n} for a, m, n in self.per_app
            ],
            "per_library": [
                {"library": l, "mean_ttaf": m, "n": n} for l, m, n in self.per_library
            ],
            "pairs": [pair_to_dict(p) for p in self.pairs],
        }


def pair_to_dict(p: PairRow) -> dict:
    return {
        "app_id": p.app_id,
        "library": p.library,
        "lib_version": p.lib_version,
        "cve_id": p.cve_id,
        "disclosure_date": p.disclosure_date.isoformat(),
        "patch_release_date": p.patch_release_date.isoformat(),
        "first_seen": p.first_seen.isoformat(),
        "last_seen": p.last_seen.isoformat(),
        "fix_date": p.fix_date.isoformat() if p.fix_date else None,
        "fix_kind": p.fix_kind,
        "ttrp_days": p.ttrp_days,
        "ttaf_days": p.ttaf_days,
        "excluded": p.excluded,
        "outdated_days": p.outdated_days,
    }


def aggregate(spans: Iterable[LibrarySpan], cvedb: Sequence[CveEntry],
              as_of: date) -> StudyReport:
    """Pair spans with the CVEs that apply to them and summarize latencies.

    TTRP is averaged over distinct CVEs; TTAF over (app, lib_version,
    cve) triples, with an app-weighted mean reported alongside since the
    two weightings differ whenever one app carries several vulnerable
    libraries.  Spans fixed before their CVE's disclosure are excluded
    from the TTAF averages (the developer cannot have been reacting to
    it) but stay visible in the pair rows.  Uncertainty is the standard
    error of the mean.
    """
    pairs: list[PairRow] = []
    for span in sorted(
        set(spans), key=lambda s: (s.app_id, s.library, s.lib_version, s.first_seen)
    ):
        for cve in flag_vulnerable(span.library, span.lib_version, cvedb):
            fixed_before_disclosure = (
                span.fix_date is not None and span.fix_date < cve.disclosure_date
            )
            pairs.append(
                PairRow(
                    app_id=span.app_id,
                    library=span.library,
                    lib_version=span.lib_version,
                    cve_id=cve.cve_id,
                    disclosure_date=cve.disclosure_date,
                    patch_release_date=cve.patch_release_date,
                    first_seen=span.first_seen,
                    last_seen=span.last_seen,
                    fix_date=span.fix_date,
                    fix_kind=span.fix_kind,
                    ttrp_days=ttrp(cve),
                    ttaf_days=ttaf(span, cve),
                    excluded=fixed_before_disclosure,
                    outdated_days=(as_of - cve.patch_release_date).days
                    if span.fix_date is None
                    else None,
                )
            )

    # One TTAF per (app, lib_version, cve): reintroduced libraries keep
    # their earliest fix.
    ttaf_by_triple: dict[tuple[str, str, str], tuple[int, str]] = {}
    for p in pairs:
        if p.ttaf_days is None or p.excluded:
            continue
        key = (p.app_id, p.lib_version, p.cve_id)
        if key not in ttaf_by_triple or p.ttaf_days < ttaf_by_triple[key][0]:
            ttaf_by_triple[key] = (p.ttaf_days, p.library)

    ttrp_by_cve = {(p.cve_id, p.library.casefold()): p.ttrp_days for p in pairs}
    ttrp_mean, ttrp_se = _mean_se(list(ttrp_by_cve.values()))
    ttaf_values = [days for days, _ in ttaf_by_triple.values()]
    ttaf_mean, ttaf_se = _mean_se(ttaf_values)

    per_app_values: dict[str, list[int]] = {}
    for (app_id, _ver, _cve), (days, _lib) in ttaf_by_triple.items():
        per_app_values.setdefault(app_id, []).append(days)
    per_app = tuple(
        sorted(
            ((app, sum(v) / len(v), len(v)) for app, v in per_app_values.items()),
            key=lambda t: (-t[1], t[0]),
        )
    )
    app_means = [m for _, m, _ in per_app]
    app_weighted = sum(app_means) / len(app_means) if app_means else 0.0

    per_lib_values: dict[str, list[int]] = {}
    for (_app, _ver, _cve), (days, library) in ttaf_by_triple.items():
        per_lib_values.setdefault(library, []).append(days)
    per_library = tuple(
        sorted(
            ((lib, sum(v) / len(v), len(v)) for lib, v in per_lib_values.items()),
            key=lambda t: (-t[1], t[0]),
        )
    )

    still = [p for p in pairs if p.outdated_days is not None]
    outdated_mean, outdated_se = _mean_se([p.outdated_days for p in still])

    return StudyReport(
        as_of=as_of,
        pairs=tuple(pairs),
        ttrp_mean=ttrp_mean,
        ttrp_se=ttrp_se,
        ttrp_n=len(ttrp_by_cve),
        ttaf_mean=ttaf_mean,
        ttaf_se=ttaf_se,
        ttaf_n=len(ttaf_values),
        ttaf_app_weighted_mean=app_weighted,
        per_app=per_app,
        per_library=per_library,
        still_vulnerable_count=len(still),
        outdated_mean=outdated_mean,
        outdated_se=outdated_se,
    )


_PAIR_FIELDS = (
    "app_id", "library", "lib_version", "cve_id", "disclosure_date",
    "patch_release_date", "first_seen", "last_seen", "fix_date", "fix_kind",
    "ttrp_days", "ttaf_days", "excluded", "outdated_days",
)


def write_report_csvs(report: StudyReport, out_dir: str | Path) -> list[Path]:
    """Emit the pair rows and both aggregate tables as CSV files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    pairs_path = out / "span_cve_pairs.csv"
    with open(pairs_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=_PAIR_FIELDS)
        writer.writeheader()
        for p in report.pairs:
            writer.writerow(pair_to_dict(p))
    written.append(pairs_path)

    apps_path = out / "apps_by_ttaf.csv"
    with open(apps_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["app_id", "mean_ttaf_days", "n"])
        writer.writerows(report.per_app)
    written.append(apps_path)

    libs_path = out / "libraries_by_ttaf.csv"
    with open(libs_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["library", "mean_ttaf_days", "n"])
        writer.writerows(report.per_library)
    written.append(libs_path)
    return written
