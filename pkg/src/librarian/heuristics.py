"""Per-library version-string heuristics.

Each heuristic pairs a library name with regex patterns that locate a
version banner inside read-only strings.  A shipped set covers fifteen
widely embedded libraries; new heuristics can be derived automatically
from indexed ground-truth binaries by generalizing the numeric part of
strings that recur across versions.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping, Sequence

from .errors import SchemaError

# A version token: dotted numerics with an optional trailing letter tag
# ("1.0.2k", "2019.4.1f1"), or a bare number as a last resort.
_VERSION_TOKEN = re.compile(r"[0-9]+(?:\.[0-9]+)*(?:[a-z][0-9]*)?")


@dataclass(frozen=True)
class VersionHeuristic:
    """Regex patterns identifying one library's version banner.

    ``anchored`` heuristics must match a rodata string in full (used for
    bare-number patterns that would otherwise fire on any numeric text);
    all others are substring searches.  ``version_group`` names the
    capture convention; the shipped rule is ``first-version-token``.
    """

    library: str
    patterns: tuple[str, ...]
    version_group: str = "first-version-token"
    anchored: bool = False

    def __post_init__(self):
        object.__setattr__(self, "_compiled", tuple(re.compile(p) for p in self.patterns))

    @property
    def compiled(self) -> tuple[re.Pattern, ...]:
        return self._compiled  # type: ignore[attr-defined]


@dataclass(frozen=True)
class StringMatch:
    """One heuristic hit inside one rodata string."""

    library: str
    matched_text: str
    version: str
    source: str


def extract_version(source: str, start: int, end: int) -> str | None:
    """Pull the version text out of a matched banner.

    The first version token that starts inside the matched span wins;
    dotted tokens are preferred over bare numbers.  The token is read
    from the underlying string, so a version like "3.1.11" survives even
    when the locating pattern only spans "3.1.1".
    """
    first_bare: str | None = None
    for m in _VERSION_TOKEN.finditer(source, start):
        if m.start() >= end:
            break
        if "." in m.group():
            return m.group()
        if first_bare is None:
            first_bare = m.group()
    return first_bare


def match_string(heuristic: VersionHeuristic, text: str) -> StringMatch | None:
    """Best hit of one heuristic against one string (longest span wins)."""
    best: StringMatch | None = None
    for pat in heuristic.compiled:
        m = pat.fullmatch(text) if heuristic.anchored else pat.search(text)
        if m is None:
            continue
        version = extract_version(text, m.start(), max(m.end(), m.start() + 1))
        if not version:
            continue
        if best is None or len(m.group()) > len(best.matched_text):
            best = StringMatch(heuristic.library, m.group(), version, text)
    return best


def scan_strings(strings: Iterable[str], heuristics: Sequence[VersionHeuristic]) -> list[StringMatch]:
    """All heuristic hits over a string list, in evidence order.

    Strings are visited in their original order; within one string, hits
    are ordered longest matched span first, ties broken by library name.
    """
    hits: list[StringMatch] = []
    for text in strings:
        per_string = [m for h in heuristics if (m := match_string(h, text))]
        per_string.sort(key=lambda m: (-len(m.matched_text), m.library))
        hits.extend(per_string)
    return hits


def heuristics_from_json(doc: str | bytes | list) -> list[VersionHeuristic]:
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"heuristics: invalid JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise SchemaError("heuristics: document must be a JSON array")
    out = []
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict) or "library" not in entry or "patterns" not in entry:
            raise SchemaError(f"heuristics: entry {i} must have 'library' and 'patterns'")
        try:
            out.append(
                VersionHeuristic(
                    library=entry["library"],
                    patterns=tuple(entry["patterns"]),
                    version_group=entry.get("version_group", "first-version-token"),
                    anchored=bool(entry.get("anchored", False)),
                )
            )
        except re.error as exc:
            raise SchemaError(f"heuristics: entry {i} has invalid pattern: {exc}") from exc
    return out


def heuristics_to_json(heuristics: Sequence[VersionHeuristic]) -> list[dict]:
    out = []
    for h in heuristics:
        doc = {
            "library": h.library,
            "patterns": list(h.patterns),
            "version_group": h.version_group,
        }
        if h.anchored:
            doc["anchored"] = True
        out.append(doc)
    return out


def load_builtin_heuristics() -> list[VersionHeuristic]:
    """The shipped per-library heuristics, compiled and ready."""
    text = resources.files("librarian").joinpath("data/heuristics.json").read_text("utf-8")
    return heuristics_from_json(text)


# Extra lowercase search keys accepted when looking for a library's own
# name inside its banner strings.
LIBRARY_ALIASES: Mapping[str, tuple[str, ...]] = {
    "jpeg-turbo": ("libjpeg-turbo", "libjpeg"),
    "xml2": ("libxml2", "libxml"),
    "libvpx": ("webm", "vpx"),
    "vorbis": ("libvorbis", "xiph.org vorbis"),
    "libavcodec": ("lavc",),
    "libavfilter": ("lavf",),
    "sqlite3": ("sqlite",),
}

_PLACEHOLDER = "\x00V\x00"


def _version_pattern(versions: Iterable[str]) -> str:
    pat = r"[0-9]+(\.[0-9]+)*"
    if any(re.fullmatch(r"[0-9]+(\.[0-9]+)*[a-z]", v) for v in versions):
        pat += "[a-z]?"
    return pat


def derive_heuristic(records, aliases: Mapping[str, Sequence[str]] | None = None) -> VersionHeuristic | None:
    """Generalize a version heuristic from ground-truth records.

    Needs at least two records of the same library with distinct
    versions.  Looks for rodata strings that appear in every record
    identically except for the embedded version text, contain the
    record's exact version, and mention the library name (or an alias,
    case-insensitively).  The version text is then widened to a numeric
    pattern, with an optional trailing lowercase letter when the
    observed versions carry one.  Returns None when no such string
    family exists.
    """
    records = list(records)
    libraries = {r.library for r in records}
    if len(libraries) != 1:
        raise ValueError("derive_heuristic needs records of a single library")
    library = libraries.pop()
    versions = {r.version for r in records}
    if len(records) < 2 or len(versions) < 2:
        raise ValueError("derive_heuristic needs >= 2 records with distinct versions")

    if aliases is None:
        aliases = LIBRARY_ALIASES
    needles = {library.lower(), *aliases.get(library.lower(), ())}

    family: set[str] | None = None
    for record in records:
        templates = set()
        for text in record.fv.rodata_strings:
            if record.version not in text:
                continue
            lowered = text.lower()
            if not any(n in lowered for n in needles):
                continue
            templates.add(text.replace(record.version, _PLACEHOLDER))
        family = templates if family is None else family & templates
        if not family:
            return None

    template = min(family)
    chunks = template.split(_PLACEHOLDER)
    pattern = _version_pattern(versions).join(re.escape(c) for c in chunks)
    return VersionHeuristic(library=library, patterns=(pattern,))


def merge_heuristics(base: Sequence[VersionHeuristic],
                     extra: Iterable[VersionHeuristic]) -> list[VersionHeuristic]:
    """Fold newly derived heuristics into an existing list.

    Patterns for an already-known library are unioned (order preserved,
    duplicates dropped); new libraries are appended.
    """
    merged = {h.library: h for h in base}
    order = [h.library for h in base]
    for h in extra:
        if h.library in merged:
            old = merged[h.library]
            patterns = old.patterns + tuple(p for p in h.patterns if p not in old.patterns)
            merged[h.library] = VersionHeuristic(
                library=old.library,
                patterns=patterns,
                version_group=old.version_group,
                anchored=old.anchored,
            )
        else:
            merged[h.library] = h
            order.append(h.library)
    return [merged[name] for name in order]
