"""Ground-truth index of known library versions.

The index is a plain directory: one feature-vector JSON per record under
``<library>/<version>/<arch>-<sha8>.json``, a ``manifest.json`` listing
all records, and a ``heuristics.json`` with the active version-string
heuristics.  Everything is human-diffable and reloads byte-identically.
Reads are lock-free; writers serialize on a manifest lock file.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from filelock import FileLock

from .elf import parse_elf
from .errors import ConflictingLabel, SchemaError
from .features import (
    FeatureVector,
    NoiseFilter,
    build_feature_vector,
    canon_dumps,
    fv_to_dict,
    parse_fv,
    parse_fv_label,
)
from .heuristics import (
    VersionHeuristic,
    heuristics_from_json,
    heuristics_to_json,
    load_builtin_heuristics,
)

MANIFEST_NAME = "manifest.json"
HEURISTICS_NAME = "heuristics.json"
MANIFEST_SCHEMA_VERSION = 1

_UNSAFE_PATH_CHARS = re.compile(r"[^A-Za-z0-9._+-]")


@dataclass(frozen=True)
class KnownLibVersion:
    """One ground-truth record: a labeled feature vector plus its hash."""

    library: str
    version: str
    arch: str
    fv: FeatureVector
    sha256: str
    source: str = ""


def _safe_component(text: str) -> str:
    return _UNSAFE_PATH_CHARS.sub("_", text) or "_"


def record_rel_path(record: KnownLibVersion) -> str:
    return "{}/{}/{}-{}.json".format(
        _safe_component(record.library),
        _safe_component(record.version),
        _safe_component(record.arch),
        record.sha256[:8],
    )


class IndexStore:
    """Directory-backed collection of known library versions."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.records: list[KnownLibVersion] = []
        self.heuristics: list[VersionHeuristic] = []
        self._by_sha: dict[str, KnownLibVersion] = {}

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def create(cls, root: str | Path) -> "IndexStore":
        """Initialize an empty index (shipped heuristics included)."""
        store = cls(root)
        store.root.mkdir(parents=True, exist_ok=True)
        store.heuristics = load_builtin_heuristics()
        store._write_manifest()
        store._write_heuristics()
        return store

    @classmethod
    def load(cls, root: str | Path) -> "IndexStore":
        store = cls(root)
        manifest_path = store.root / MANIFEST_NAME
        if not manifest_path.is_file():
            raise SchemaError(f"no index manifest at {manifest_path}")
        try:
            manifest = json.loads(manifest_path.read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"index manifest: invalid JSON: {exc}") from exc
        if manifest.get("schema_version") != MANIFEST_SCHEMA_VERSION:
            raise SchemaError(
                f"index manifest: unsupported schema_version {manifest.get('schema_version')!r}"
            )
        for entry in manifest.get("records", []):
            path = store.root / entry["path"]
            doc = json.loads(path.read_text("utf-8"))
            fv = parse_fv(doc)
            label = parse_fv_label(doc)
            record = KnownLibVersion(
                library=entry["library"],
                version=entry["version"],
                arch=entry["arch"],
                fv=fv,
                sha256=entry["sha256"],
                source=entry.get("source", ""),
            )
            if label is not None and label != (record.library, record.version):
                raise SchemaError(
                    f"index record {entry['path']}: label {label} disagrees with manifest"
                )
            store._attach(record)

        heur_path = store.root / HEURISTICS_NAME
        if heur_path.is_file():
            store.heuristics = heuristics_from_json(heur_path.read_text("utf-8"))
        else:
            store.heuristics = load_builtin_heuristics()
        return store

    @classmethod
    def open(cls, root: str | Path) -> "IndexStore":
        """Load an existing index or create a fresh one."""
        root = Path(root)
        if (root / MANIFEST_NAME).is_file():
            return cls.load(root)
        return cls.create(root)

    # -- queries -----------------------------------------------------------

    def __len__(self) -> int:
        return len(self.records)

    def lookup_sha(self, sha256: str) -> KnownLibVersion | None:
        return self._by_sha.get(sha256)

    def candidates(self, arch: str | None = None) -> list[KnownLibVersion]:
        """All records; ones matching ``arch`` sort first, none are dropped."""
        ordered = sorted(
            self.records, key=lambda r: (r.library, r.version, r.arch, r.sha256)
        )
        if arch is None:
            return ordered
        return [r for r in ordered if r.arch == arch] + [
            r for r in ordered if r.arch != arch
        ]

    def records_for(self, library: str) -> list[KnownLibVersion]:
        return [r for r in self.candidates() if r.library.casefold() == library.casefold()]

    # -- mutation ----------------------------------------------------------

    def add(self, data: bytes, library: str, version: str, source: str = "",
            noise_filter: NoiseFilter | None = None,
            file_name: str | None = None) -> KnownLibVersion:
        """Index one ground-truth binary.

        Re-adding identical bytes with identical labels is a no-op;
        identical bytes under a different (library, version) raise
        :class:`ConflictingLabel`.
        """
        image = parse_elf(data, file_name or f"{library}-{version}")
        fv = build_feature_vector(image, noise_filter)
        record = KnownLibVersion(
            library=library,
            version=version,
            arch=image.machine,
            fv=fv,
            sha256=image.file_sha256,
            source=source,
        )

        existing = self._by_sha.get(record.sha256)
        if existing is not None:
            if (existing.library, existing.version) != (library, version):
                raise ConflictingLabel(
                    f"sha256 {record.sha256[:12]} already indexed as "
                    f"{existing.library} {existing.version}, refusing label "
                    f"{library} {version}"
                )
            return existing

        lock = FileLock(str(self.root / (MANIFEST_NAME + ".lock")))
        with lock:
            self._attach(record)
            rel = record_rel_path(record)
            path = self.root / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(
                canon_dumps(fv_to_dict(fv, (library, version))), encoding="utf-8"
            )
            self._write_manifest()
        return record

    def set_heuristics(self, heuristics: list[VersionHeuristic]) -> None:
        self.heuristics = list(heuristics)
        self._write_heuristics()

    # -- persistence -------------------------------------------------------

    def _attach(self, record: KnownLibVersion) -> None:
        self.records.append(record)
        self._by_sha[record.sha256] = record

    def _write_manifest(self) -> None:
        entries = [
            {
                "library": r.library,
                "version": r.version,
                "arch": r.arch,
                "sha256": r.sha256,
                "source": r.source,
                "path": record_rel_path(r),
            }
            for r in sorted(
                self.records, key=lambda r: (r.library, r.version, r.arch, r.sha256)
            )
        ]
        doc = {"schema_version": MANIFEST_SCHEMA_VERSION, "records": entries}
        (self.root / MANIFEST_NAME).write_text(canon_dumps(doc), encoding="utf-8")

    def _write_heuristics(self) -> None:
        doc = heuristics_to_json(self.heuristics)
        (self.root / HEURISTICS_NAME).write_text(canon_dumps(doc), encoding="utf-8")
