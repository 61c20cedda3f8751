"""Native-library version identification and CVE-exposure analytics."""

from .elf import ElfImage, RawSymbol, extract_strings, parse_elf, parse_elf_file
from .errors import (
    ConflictingLabel,
    CorruptArchive,
    EmptyIndex,
    InvalidPair,
    LibrarianError,
    MalformedElf,
    NotAZip,
    SchemaError,
    UnsupportedClass,
)
from .features import FeatureVector, NoiseFilter, build_feature_vector, parse_fv, serialize_fv
from .heuristics import VersionHeuristic, derive_heuristic, load_builtin_heuristics
from .index import IndexStore, KnownLibVersion
from .matcher import (
    MatchMethod,
    MatchResult,
    MatchStatus,
    batch_identify,
    bin2sim,
    contribution_factors,
    identify,
)
from .apk import ApkInventory, identify_apk, scan_apk
from .vulns import (
    AppTimeline,
    CveEntry,
    LibrarySpan,
    aggregate,
    compute_spans,
    flag_vulnerable,
    load_cvedb,
    ttaf,
    ttrp,
)

__version__ = "0.1.0"

__all__ = [
    "ApkInventory",
    "AppTimeline",
    "ConflictingLabel",
    "CorruptArchive",
    "CveEntry",
    "ElfImage",
    "EmptyIndex",
    "FeatureVector",
    "IndexStore",
    "InvalidPair",
    "KnownLibVersion",
    "LibrarianError",
    "LibrarySpan",
    "MalformedElf",
    "MatchMethod",
    "MatchResult",
    "MatchStatus",
    "NoiseFilter",
    "NotAZip",
    "RawSymbol",
    "SchemaError",
    "UnsupportedClass",
    "VersionHeuristic",
    "aggregate",
    "batch_identify",
    "bin2sim",
    "build_feature_vector",
    "compute_spans",
    "contribution_factors",
    "derive_heuristic",
    "extract_strings",
    "flag_vulnerable",
    "identify",
    "identify_apk",
    "load_builtin_heuristics",
    "load_cvedb",
    "parse_elf",
    "parse_elf_file",
    "parse_fv",
    "scan_apk",
    "serialize_fv",
    "ttaf",
    "ttrp",
]
