"""APK ingestion: locate native shared objects and identify them.

An APK is a ZIP archive; native binaries live under ``lib/<abi>/``.
Entries are streamed and hashed member-by-member — archives are never
unpacked to disk, and only the binary currently under analysis is held
in memory.
"""

from __future__ import annotations

import hashlib
import json
import re
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .elf import parse_elf
from .errors import CorruptArchive, EmptyIndex, MalformedElf, NotAZip, UnsupportedClass
from .features import NoiseFilter, build_feature_vector
from .heuristics import VersionHeuristic
from .matcher import DEFAULT_THRESHOLD, MatchResult, identify

KNOWN_ABIS = ("armeabi", "armeabi-v7a", "arm64-v8a", "x86", "x86_64")

_APK_NAME = re.compile(r"^(?P<app_id>.+)-(?P<version_code>[0-9]+)\.apk$")

_HASH_CHUNK = 1 << 20


@dataclass(frozen=True)
class ApkEntry:
    abi: str  # one of KNOWN_ABIS or "other"
    inner_path: str
    size: int
    sha256: str


@dataclass(frozen=True)
class ApkInventory:
    apk_path: str
    apk_sha256: str
    app_id: str
    version_code: int | None
    entries: tuple[ApkEntry, ...]


@dataclass(frozen=True)
class EntryResult:
    """Identification outcome for one native binary inside an APK."""

    inner_path: str
    abi: str
    sha256: str
    match: MatchResult | None = None
    error: str | None = None


def _classify_abi(inner_path: str) -> str | None:
    parts = inner_path.split("/")
    if len(parts) < 3 or parts[0] != "lib" or not inner_path.endswith(".so"):
        return None
    return parts[1] if parts[1] in KNOWN_ABIS else "other"


def _open_zip(path: str | Path) -> zipfile.ZipFile:
    try:
        return zipfile.ZipFile(path, "r")
    except FileNotFoundError:
        raise
    except zipfile.BadZipFile as exc:
        if zipfile.is_zipfile(path):
            raise CorruptArchive(f"{path}: {exc}") from exc
        raise NotAZip(f"{path} is not a ZIP archive") from exc


def _entry_sha256(zf: zipfile.ZipFile, info: zipfile.ZipInfo) -> str:
    digest = hashlib.sha256()
    with zf.open(info) as fh:
        while chunk := fh.read(_HASH_CHUNK):
            digest.update(chunk)
    return digest.hexdigest()


def _file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        while chunk := fh.read(_HASH_CHUNK):
            digest.update(chunk)
    return digest.hexdigest()


def _app_identity(path: Path) -> tuple[str, int | None]:
    """App id and version code from the sidecar metadata or the filename.

    The sidecar is ``<apk>.meta.json`` with ``app_id`` and
    ``version_code`` keys; without one, a ``<app_id>-<version_code>.apk``
    filename is split, and failing that the bare stem is the app id.
    """
    sidecar = path.with_name(path.name + ".meta.json")
    if sidecar.is_file():
        meta = json.loads(sidecar.read_text("utf-8"))
        app_id = meta.get("app_id", path.stem)
        code = meta.get("version_code")
        return app_id, int(code) if code is not None else None
    m = _APK_NAME.match(path.name)
    if m:
        return m.group("app_id"), int(m.group("version_code"))
    return path.stem, None


def scan_apk(path: str | Path) -> ApkInventory:
    """Enumerate the native shared objects of one APK.

    Collects every ``lib/<abi>/**.so`` member with its size and streamed
    sha256.  An APK without native binaries yields an empty inventory.
    """
    path = Path(path)
    entries: list[ApkEntry] = []
    with _open_zip(path) as zf:
        for info in zf.infolist():
            abi = _classify_abi(info.filename)
            if abi is None or info.is_dir():
                continue
            try:
                sha = _entry_sha256(zf, info)
            except zipfile.BadZipFile as exc:
                raise CorruptArchive(
                    f"{path}:{info.filename}: {exc}", offset=info.header_offset
                ) from exc
            entries.append(
                ApkEntry(abi=abi, inner_path=info.filename, size=info.file_size, sha256=sha)
            )
    app_id, version_code = _app_identity(path)
    return ApkInventory(
        apk_path=str(path),
        apk_sha256=_file_sha256(path),
        app_id=app_id,
        version_code=version_code,
        entries=tuple(entries),
    )


def identify_apk(path: str | Path, store,
                 heuristics: Sequence[VersionHeuristic] | None = None,
                 threshold: float = DEFAULT_THRESHOLD,
                 noise_filter: NoiseFilter | None = None,
                 inventory: ApkInventory | None = None) -> list[EntryResult]:
    """Extract and identify every native binary in an APK.

    Entries that fail ELF parsing are reported with their error instead
    of being dropped; the output order matches the inventory.
    """
    if inventory is None:
        inventory = scan_apk(path)
    if noise_filter is None:
        noise_filter = NoiseFilter.default()
    records = store.records if hasattr(store, "records") else list(store)
    if not records:
        raise EmptyIndex("identification requires a non-empty index")

    results: list[EntryResult] = []
    with _open_zip(path) as zf:
        for entry in inventory.entries:
            try:
                data = zf.read(entry.inner_path)
                image = parse_elf(data, entry.inner_path.rsplit("/", 1)[-1])
                fv = build_feature_vector(image, noise_filter)
                match = identify(fv, store, heuristics, threshold)
            except (MalformedElf, UnsupportedClass, zipfile.BadZipFile) as exc:
                results.append(
                    EntryResult(
                        inner_path=entry.inner_path,
                        abi=entry.abi,
                        sha256=entry.sha256,
                        error=f"{type(exc).__name__}: {exc}",
                    )
                )
                continue
            results.append(
                EntryResult(
                    inner_path=entry.inner_path,
                    abi=entry.abi,
                    sha256=entry.sha256,
                    match=match,
                )
            )
    return results


def entry_result_to_dict(result: EntryResult) -> dict:
    doc: dict = {
        "inner_path": result.inner_path,
        "abi": result.abi,
        "sha256": result.sha256,
    }
    if result.match is not None:
        doc["match"] = result.match.to_dict()
    if result.error is not None:
        doc["error"] = result.error
    return doc
