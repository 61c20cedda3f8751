"""Feature vectors: the six-feature fingerprint of one binary.

Five metadata sets (exported/imported functions, exported/imported
globals, DT_NEEDED dependencies) drive similarity scoring; the ordered
read-only strings are kept alongside as raw material for version
banners.  A configurable noise filter strips platform plumbing (C++
runtime symbols, libc calls, system libraries) so fingerprints stay
stable across architectures and toolchains.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any

from .elf import ElfImage, extract_strings
from .errors import SchemaError

FV_SCHEMA_VERSION = 1

FEATURE_KEYS = (
    "exported_functions",
    "imported_functions",
    "exported_globals",
    "imported_globals",
    "dependencies",
)


@dataclass(frozen=True)
class BinaryMeta:
    file_name: str
    file_sha256: str
    arch: str
    file_size: int


@dataclass(frozen=True)
class FeatureVector:
    exported_functions: frozenset[str]
    imported_functions: frozenset[str]
    exported_globals: frozenset[str]
    imported_globals: frozenset[str]
    dependencies: frozenset[str]
    rodata_strings: tuple[str, ...]
    binary_meta: BinaryMeta

    def metadata_sets(self) -> dict[str, frozenset[str]]:
        return {key: getattr(self, key) for key in FEATURE_KEYS}

    @property
    def metadata_size(self) -> int:
        return sum(len(getattr(self, key)) for key in FEATURE_KEYS)


@dataclass(frozen=True)
class NoiseFilter:
    """Denylists applied to the five metadata sets.

    ``prefix_rules`` drop any symbol starting with one of the prefixes,
    ``exact_rules`` drop exact symbol names, and ``dependency_denylist``
    drops system libraries from DT_NEEDED (compared with and without a
    trailing ``.so...`` suffix).  Filtering is idempotent.
    """

    prefix_rules: tuple[str, ...] = ()
    exact_rules: frozenset[str] = frozenset()
    dependency_denylist: frozenset[str] = frozenset()

    def keep_symbol(self, name: str) -> bool:
        if name in self.exact_rules:
            return False
        return not any(name.startswith(p) for p in self.prefix_rules)

    def keep_dependency(self, name: str) -> bool:
        if name in self.dependency_denylist:
            return False
        # "libc.so.6" and "libc.so" both reduce to "libc".
        stem = name.split(".so")[0]
        return stem not in self.dependency_denylist

    def filter_symbols(self, names: frozenset[str]) -> frozenset[str]:
        return frozenset(n for n in names if self.keep_symbol(n))

    def filter_dependencies(self, names: frozenset[str]) -> frozenset[str]:
        return frozenset(n for n in names if self.keep_dependency(n))

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseFilter":
        for key in ("prefixes", "exact", "dependency_denylist"):
            if key not in doc:
                raise SchemaError(f"noise filter config missing {key!r}")
            if not isinstance(doc[key], list):
                raise SchemaError(f"noise filter {key!r} must be an array")
        return cls(
            prefix_rules=tuple(doc["prefixes"]),
            exact_rules=frozenset(doc["exact"]),
            dependency_denylist=frozenset(doc["dependency_denylist"]),
        )

    @classmethod
    def from_path(cls, path: str | Path) -> "NoiseFilter":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> "NoiseFilter":
        text = resources.files("librarian").joinpath("data/noise_filter.json").read_text("utf-8")
        return cls.from_dict(json.loads(text))

    @classmethod
    def none(cls) -> "NoiseFilter":
        """A filter that drops nothing (useful for tests and debugging)."""
        return cls()


def build_feature_vector(image: ElfImage, noise_filter: NoiseFilter | None = None) -> FeatureVector:
    """Classify an image's dynamic symbols into the five metadata sets.

    Only GLOBAL/WEAK symbols with DEFAULT or PROTECTED visibility are
    considered: defined functions export, defined objects are exported
    globals, undefined functions (or untyped imports) are imported
    functions, undefined objects are imported globals.  The noise filter
    is applied to all five sets afterwards.
    """
    if noise_filter is None:
        noise_filter = NoiseFilter.default()

    exp_func: set[str] = set()
    imp_func: set[str] = set()
    exp_glob: set[str] = set()
    imp_glob: set[str] = set()
    for sym in image.dynamic_symbols:
        if sym.binding not in ("GLOBAL", "WEAK"):
            continue
        if sym.visibility not in ("DEFAULT", "PROTECTED"):
            continue
        if sym.defined:
            if sym.sym_type == "FUNC":
                exp_func.add(sym.name)
            elif sym.sym_type in ("OBJECT", "TLS"):
                exp_glob.add(sym.name)
        else:
            if sym.sym_type in ("FUNC", "NOTYPE"):
                imp_func.add(sym.name)
            elif sym.sym_type in ("OBJECT", "TLS"):
                imp_glob.add(sym.name)

    strings: list[str] = []
    for name in sorted(image.rodata_bytes):
        strings.extend(extract_strings(image.rodata_bytes[name]))

    return FeatureVector(
        exported_functions=noise_filter.filter_symbols(frozenset(exp_func)),
        imported_functions=noise_filter.filter_symbols(frozenset(imp_func)),
        exported_globals=noise_filter.filter_symbols(frozenset(exp_glob)),
        imported_globals=noise_filter.filter_symbols(frozenset(imp_glob)),
        dependencies=noise_filter.filter_dependencies(frozenset(image.needed_libraries)),
        rodata_strings=tuple(strings),
        binary_meta=BinaryMeta(
            file_name=image.file_name,
            file_sha256=image.file_sha256,
            arch=image.machine,
            file_size=image.file_size,
        ),
    )


def apply_filter(fv: FeatureVector, noise_filter: NoiseFilter) -> FeatureVector:
    """Re-apply a noise filter to an already-built vector."""
    return replace(
        fv,
        exported_functions=noise_filter.filter_symbols(fv.exported_functions),
        imported_functions=noise_filter.filter_symbols(fv.imported_functions),
        exported_globals=noise_filter.filter_symbols(fv.exported_globals),
        imported_globals=noise_filter.filter_symbols(fv.imported_globals),
        dependencies=noise_filter.filter_dependencies(fv.dependencies),
    )


def canon_dumps(doc: Any) -> str:
    """Canonical JSON text: sorted keys, 2-space indent, trailing newline."""
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=True) + "\n"


def fv_to_dict(fv: FeatureVector, library: tuple[str, str] | None = None) -> dict:
    doc: dict[str, Any] = {
        "schema_version": FV_SCHEMA_VERSION,
        "binary": {
            "file_name": fv.binary_meta.file_name,
            "sha256": fv.binary_meta.file_sha256,
            "arch": fv.binary_meta.arch,
            "file_size": fv.binary_meta.file_size,
        },
        "features": {key: sorted(getattr(fv, key)) for key in FEATURE_KEYS},
        "rodata_strings": list(fv.rodata_strings),
    }
    if library is not None:
        doc["library"] = {"name": library[0], "version": library[1]}
    return doc


def serialize_fv(fv: FeatureVector, library: tuple[str, str] | None = None) -> str:
    """Serialize a feature vector to deterministic JSON text.

    Metadata sets are emitted sorted; rodata strings keep their original
    order.  ``library`` adds the optional ground-truth label block.
    """
    return canon_dumps(fv_to_dict(fv, library))


def _require(doc: dict, key: str, kind: type, where: str) -> Any:
    if key not in doc:
        raise SchemaError(f"{where}: missing required field {key!r}")
    value = doc[key]
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        raise SchemaError(f"{where}: field {key!r} must be {kind.__name__}")
    return value


def _string_array(doc: dict, key: str, where: str) -> list[str]:
    value = _require(doc, key, list, where)
    if not all(isinstance(v, str) for v in value):
        raise SchemaError(f"{where}: field {key!r} must contain only strings")
    return value


def parse_fv(doc: str | bytes | dict) -> FeatureVector:
    """Parse a feature-vector JSON document (inverse of serialize_fv).

    Unknown fields are ignored; missing required fields, wrong types and
    unsupported schema versions raise :class:`SchemaError`.
    """
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"feature vector: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("feature vector: document must be a JSON object")

    version = _require(doc, "schema_version", int, "feature vector")
    if version != FV_SCHEMA_VERSION:
        raise SchemaError(f"feature vector: unsupported schema_version {version}")

    binary = _require(doc, "binary", dict, "feature vector")
    meta = BinaryMeta(
        file_name=_require(binary, "file_name", str, "binary"),
        file_sha256=_require(binary, "sha256", str, "binary"),
        arch=_require(binary, "arch", str, "binary"),
        file_size=_require(binary, "file_size", int, "binary"),
    )

    feats = _require(doc, "features", dict, "feature vector")
    sets = {key: frozenset(_string_array(feats, key, "features")) for key in FEATURE_KEYS}

    strings = _string_array(doc, "rodata_strings", "feature vector")
    for s in strings:
        if len(s) < 4 or not all(0x20 <= ord(c) <= 0x7E for c in s):
            raise SchemaError(f"feature vector: invalid rodata string {s!r}")

    return FeatureVector(
        exported_functions=sets["exported_functions"],
        imported_functions=sets["imported_functions"],
        exported_globals=sets["exported_globals"],
        imported_globals=sets["imported_globals"],
        dependencies=sets["dependencies"],
        rodata_strings=tuple(strings),
        binary_meta=meta,
    )


def parse_fv_label(doc: str | bytes | dict) -> tuple[str, str] | None:
    """Return the optional ground-truth (library, version) label, if any."""
    if isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    label = doc.get("library") if isinstance(doc, dict) else None
    if label is None:
        return None
    if not isinstance(label, dict):
        raise SchemaError("feature vector: 'library' must be an object")
    return (
        _require(label, "name", str, "library"),
        _require(label, "version", str, "library"),
    )
