"""HTTP service wrapping the core package.

Keeps a ground-truth index hot in memory and answers identification
queries from many clients, which beats reloading the index for every
binary when a scanning farm is at work.  Binaries are POSTed as raw
``application/octet-stream`` bodies; everything else is JSON.

Run it with::

    LIBRARIAN_INDEX=/path/to/index uvicorn --factory librarian.service:app_factory
"""

from __future__ import annotations

import os
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query, Request
from pydantic import BaseModel, Field

from .elf import parse_elf
from .errors import LibrarianError, MalformedElf, UnsupportedClass
from .features import NoiseFilter, build_feature_vector, fv_to_dict
from .index import IndexStore
from .matcher import DEFAULT_THRESHOLD, MatchResult, MatchStatus, identify
from .vulns import CveEntry, flag_vulnerable, load_cvedb_file


class HealthResponse(BaseModel):
    status: str
    records: int
    heuristics: int
    cve_entries: int


class RecordSummary(BaseModel):
    library: str
    version: str
    arch: str
    sha256: str
    source: str = ""


class CandidateModel(BaseModel):
    library: str
    version: str
    arch: str
    score: float


class StringEvidenceModel(BaseModel):
    library: str
    matched_text: str
    version: str
    source: str


class MatchResultModel(BaseModel):
    status: str
    method: str
    confirmed_by_strings: bool
    candidates: list[CandidateModel]
    string_evidence: list[StringEvidenceModel]


class CveModel(BaseModel):
    cve_id: str
    library: str
    affected_versions: list[str]
    disclosure_date: str
    patch_version: str
    patch_release_date: str
    severity: str = ""
    description: str = ""


class IdentifyResponse(BaseModel):
    file_name: str
    result: MatchResultModel
    cves: list[CveModel] = Field(default_factory=list)


class BinaryInfoModel(BaseModel):
    file_name: str
    sha256: str
    arch: str
    file_size: int


class FeatureVectorModel(BaseModel):
    schema_version: int
    binary: BinaryInfoModel
    features: dict[str, list[str]]
    rodata_strings: list[str]


class VulnQuery(BaseModel):
    library: str
    version: str


def _match_model(result: MatchResult) -> MatchResultModel:
    return MatchResultModel.model_validate(result.to_dict())


def _cve_model(entry: CveEntry) -> CveModel:
    return CveModel(
        cve_id=entry.cve_id,
        library=entry.library,
        affected_versions=list(entry.affected_versions),
        disclosure_date=entry.disclosure_date.isoformat(),
        patch_version=entry.patch_version,
        patch_release_date=entry.patch_release_date.isoformat(),
        severity=entry.severity,
        description=entry.description,
    )


def create_app(index_dir: str | Path, *, threshold: float = DEFAULT_THRESHOLD,
               cvedb_path: str | Path | None = None,
               noise_filter_path: str | Path | None = None) -> FastAPI:
    """Build the service around one loaded index."""
    store = IndexStore.load(index_dir)
    noise_filter = (
        NoiseFilter.from_path(noise_filter_path) if noise_filter_path else NoiseFilter.default()
    )
    cvedb = load_cvedb_file(cvedb_path) if cvedb_path else []

    app = FastAPI(title="librarian", version="0.1.0")

    async def read_binary(request: Request) -> bytes:
        data = await request.body()
        if not data:
            raise HTTPException(status_code=400, detail="empty request body")
        return data

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(
            status="ok",
            records=len(store),
            heuristics=len(store.heuristics),
            cve_entries=len(cvedb),
        )

    @app.get("/records", response_model=list[RecordSummary])
    def records(arch: str | None = Query(default=None)) -> list[RecordSummary]:
        return [
            RecordSummary(
                library=r.library, version=r.version, arch=r.arch,
                sha256=r.sha256, source=r.source,
            )
            for r in store.candidates(arch)
        ]

    @app.post("/extract", response_model=FeatureVectorModel)
    async def extract(request: Request,
                      file_name: str = Query(default="binary.so")) -> FeatureVectorModel:
        data = await read_binary(request)
        try:
            fv = build_feature_vector(parse_elf(data, file_name), noise_filter)
        except (MalformedElf, UnsupportedClass) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return FeatureVectorModel.model_validate(fv_to_dict(fv))

    @app.post("/identify", response_model=IdentifyResponse)
    async def identify_binary(
        request: Request,
        file_name: str = Query(default="binary.so"),
        threshold_override: float | None = Query(default=None, alias="threshold",
                                                 gt=0.0, le=1.0),
    ) -> IdentifyResponse:
        data = await read_binary(request)
        try:
            fv = build_feature_vector(parse_elf(data, file_name), noise_filter)
            result = identify(fv, store, threshold=threshold_override or threshold)
        except (MalformedElf, UnsupportedClass) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except LibrarianError as exc:
            raise HTTPException(status_code=503, detail=str(exc))
        cves: list[CveModel] = []
        if cvedb and result.status is MatchStatus.IDENTIFIED:
            best = result.best
            cves = [_cve_model(e) for e in flag_vulnerable(best.library, best.version, cvedb)]
        return IdentifyResponse(file_name=file_name, result=_match_model(result), cves=cves)

    @app.post("/vulnerabilities", response_model=list[CveModel])
    def vulnerabilities(query: VulnQuery) -> list[CveModel]:
        return [_cve_model(e) for e in flag_vulnerable(query.library, query.version, cvedb)]

    return app


def app_factory() -> FastAPI:
    """Uvicorn factory; configuration comes from the environment.

    LIBRARIAN_INDEX (required), LIBRARIAN_CVEDB, LIBRARIAN_FILTER,
    LIBRARIAN_THRESHOLD.
    """
    index_dir = os.environ.get("LIBRARIAN_INDEX")
    if not index_dir:
        raise RuntimeError("set LIBRARIAN_INDEX to the index directory")
    return create_app(
        index_dir,
        threshold=float(os.environ.get("LIBRARIAN_THRESHOLD", DEFAULT_THRESHOLD)),
        cvedb_path=os.environ.get("LIBRARIAN_CVEDB"),
        noise_filter_path=os.environ.get("LIBRARIAN_FILTER"),
    )
