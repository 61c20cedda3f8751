"""Command-line front end wiring the whole pipeline together.

Exit codes are scriptable: 0 success (or identified), 1 usage error,
2 I/O or parse failure (including any per-file failure in a batch),
3 tied or low-confidence identification, 4 unknown binary.
"""

from __future__ import annotations

import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import date
from pathlib import Path

import click

from . import apk as apkmod
from . import vulns
from .elf import ELF_MAGIC, parse_elf
from .errors import LibrarianError
from .features import NoiseFilter, build_feature_vector, canon_dumps, fv_to_dict, parse_fv
from .heuristics import derive_heuristic, merge_heuristics
from .index import IndexStore
from .matcher import (
    DEFAULT_THRESHOLD,
    MatchResult,
    MatchStatus,
    contribution_factors,
    identify,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_AMBIGUOUS = 3
EXIT_UNKNOWN = 4

_STATUS_EXIT = {
    MatchStatus.IDENTIFIED: EXIT_OK,
    MatchStatus.TIED: EXIT_AMBIGUOUS,
    MatchStatus.LOW_CONFIDENCE: EXIT_AMBIGUOUS,
    MatchStatus.UNKNOWN: EXIT_UNKNOWN,
}

_threshold_option = click.option(
    "--threshold", type=click.FloatRange(0.0, 1.0, min_open=True), default=DEFAULT_THRESHOLD,
    show_default=True, help="Similarity a metadata match must strictly exceed.")
_filter_option = click.option(
    "--filter", "filter_path", type=click.Path(exists=True, dir_okay=False), default=None,
    help="Noise-filter JSON (defaults to the built-in filter).")
_index_option = click.option(
    "--index", "index_dir", type=click.Path(file_okay=False), required=True,
    help="Index directory.")
_format_option = click.option(
    "--output-format", type=click.Choice(["json", "csv", "human"]), default="json",
    show_default=True, help="Stdout format.")
_jobs_option = click.option(
    "--jobs", type=click.IntRange(min=1), default=None,
    help="Parallel workers (defaults to the CPU count).")


def _noise_filter(filter_path: str | None) -> NoiseFilter:
    return NoiseFilter.from_path(filter_path) if filter_path else NoiseFilter.default()


def _load_fv(path: Path, noise_filter: NoiseFilter):
    """Accept either an ELF binary or a feature-vector JSON file."""
    data = path.read_bytes()
    if data[:4] == ELF_MAGIC:
        return build_feature_vector(parse_elf(data, path.name), noise_filter)
    return parse_fv(data)


def _echo_json(doc) -> None:
    click.echo(canon_dumps(doc), nl=False)


def _echo_csv(rows: list[dict]) -> None:
    if not rows:
        return
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    click.echo(buf.getvalue(), nl=False)


@click.group(name="librarian")
def cli() -> None:
    """Identify native-library versions and audit their CVE exposure."""


# ---------------------------------------------------------------------------
# extract


@cli.command("extract")
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", "out_dir", type=click.Path(file_okay=False), default=".",
              show_default=True, help="Directory for the feature-vector JSON files.")
@_filter_option
def cmd_extract(paths: tuple[str, ...], out_dir: str, filter_path: str | None) -> int:
    """Write one feature-vector JSON per binary (ELF files or APKs)."""
    noise_filter = _noise_filter(filter_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    failures = 0

    for raw in paths:
        path = Path(raw)
        try:
            with path.open("rb") as fh:
                head = fh.read(4)
            if head[:4] == ELF_MAGIC:
                fv = build_feature_vector(parse_elf(path.read_bytes(), path.name), noise_filter)
                target = out / f"{path.name}.fv.json"
                target.write_text(canon_dumps(fv_to_dict(fv)), encoding="utf-8")
            else:
                failures += _extract_apk(path, out, noise_filter)
        except (LibrarianError, OSError) as exc:
            click.echo(f"extract: {path}: {exc}", err=True)
            failures += 1
    return EXIT_IO if failures else EXIT_OK


def _extract_apk(path: Path, out: Path, noise_filter: NoiseFilter) -> int:
    inventory = apkmod.scan_apk(path)
    failures = 0
    with apkmod._open_zip(path) as zf:
        for entry in inventory.entries:
            try:
                data = zf.read(entry.inner_path)
                fv = build_feature_vector(
                    parse_elf(data, entry.inner_path.rsplit("/", 1)[-1]), noise_filter
                )
            except LibrarianError as exc:
                click.echo(f"extract: {path}:{entry.inner_path}: {exc}", err=True)
                failures += 1
                continue
            target = out / path.stem / entry.abi / f"{Path(entry.inner_path).name}.fv.json"
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(canon_dumps(fv_to_dict(fv)), encoding="utf-8")
    return failures


# ---------------------------------------------------------------------------
# index


@cli.group("index")
def cmd_index() -> None:
    """Manage the ground-truth index."""


@cmd_index.command("add")
@click.argument("binary", type=click.Path(exists=True, dir_okay=False))
@_index_option
@click.option("--library", required=True)
@click.option("--version", "version_", required=True)
@click.option("--source", default="", help="Free-text provenance of the binary.")
@_filter_option
def cmd_index_add(binary: str, index_dir: str, library: str, version_: str,
                  source: str, filter_path: str | None) -> int:
    """Add one labeled ground-truth binary to the index."""
    store = IndexStore.open(index_dir)
    path = Path(binary)
    record = store.add(
        path.read_bytes(), library, version_, source,
        noise_filter=_noise_filter(filter_path), file_name=path.name,
    )
    click.echo(f"indexed {record.library} {record.version} ({record.arch}, "
               f"{record.sha256[:12]})")
    return EXIT_OK


@cmd_index.command("build")
@click.option("--from", "src_dir", type=click.Path(exists=True, file_okay=False), required=True,
              help="Tree of ground-truth binaries laid out as <library>/<version>/<file>.")
@_index_option
@click.option("--source", default="", help="Provenance recorded for every binary.")
@_filter_option
def cmd_index_build(src_dir: str, index_dir: str, source: str, filter_path: str | None) -> int:
    """Index every binary in a <library>/<version>/ directory tree."""
    store = IndexStore.open(index_dir)
    noise_filter = _noise_filter(filter_path)
    added = 0
    failures = 0
    for lib_dir in sorted(p for p in Path(src_dir).iterdir() if p.is_dir()):
        for ver_dir in sorted(p for p in lib_dir.iterdir() if p.is_dir()):
            for binary in sorted(p for p in ver_dir.iterdir() if p.is_file()):
                try:
                    store.add(binary.read_bytes(), lib_dir.name, ver_dir.name,
                              source, noise_filter=noise_filter, file_name=binary.name)
                    added += 1
                except LibrarianError as exc:
                    click.echo(f"index build: {binary}: {exc}", err=True)
                    failures += 1
    click.echo(f"indexed {added} binaries ({len(store)} records total)")
    return EXIT_IO if failures else EXIT_OK


@cmd_index.command("derive-heuristics")
@_index_option
@click.option("--library", "libraries", multiple=True,
              help="Restrict derivation to these libraries (repeatable).")
def cmd_index_derive(index_dir: str, libraries: tuple[str, ...]) -> int:
    """Derive version heuristics from indexed records and persist them."""
    store = IndexStore.load(index_dir)
    names = sorted({r.library for r in store.records})
    if libraries:
        names = [n for n in names if n in libraries]
    derived = []
    for name in names:
        records = store.records_for(name)
        if len({r.version for r in records}) < 2:
            click.echo(f"derive-heuristics: {name}: need >= 2 distinct versions, skipped",
                       err=True)
            continue
        heuristic = derive_heuristic(records)
        if heuristic is None:
            click.echo(f"derive-heuristics: {name}: no shared version-bearing string",
                       err=True)
            continue
        derived.append(heuristic)
        click.echo(f"{name}: {heuristic.patterns[0]}")
    if derived:
        store.set_heuristics(merge_heuristics(store.heuristics, derived))
    return EXIT_OK


# ---------------------------------------------------------------------------
# identify


def _human_match(result: MatchResult) -> str:
    lines = [f"status: {result.status.value}  method: {result.method.value}"]
    for c in result.candidates:
        lines.append(f"  {c.library} {c.version} [{c.arch}] score={c.score:.4f}")
    for e in result.string_evidence:
        lines.append(f"  banner: {e.library} {e.version} ({e.matched_text!r})")
    return "\n".join(lines)


def _match_csv_rows(result: MatchResult) -> list[dict]:
    rows = []
    for c in result.candidates:
        rows.append({
            "status": result.status.value,
            "method": result.method.value,
            "library": c.library,
            "version": c.version,
            "arch": c.arch,
            "score": c.score,
            "confirmed_by_strings": result.confirmed_by_strings,
        })
    return rows or [{
        "status": result.status.value, "method": result.method.value,
        "library": "", "version": "", "arch": "", "score": "",
        "confirmed_by_strings": result.confirmed_by_strings,
    }]


@cli.command("identify")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@_index_option
@_threshold_option
@_filter_option
@_format_option
def cmd_identify(path: str, index_dir: str, threshold: float,
                 filter_path: str | None, output_format: str) -> int:
    """Identify one binary (an ELF file or a feature-vector JSON)."""
    store = IndexStore.load(index_dir)
    fv = _load_fv(Path(path), _noise_filter(filter_path))
    result = identify(fv, store, threshold=threshold)
    if output_format == "json":
        _echo_json(result.to_dict())
    elif output_format == "csv":
        _echo_csv(_match_csv_rows(result))
    else:
        click.echo(_human_match(result))
    return _STATUS_EXIT[result.status]


@cli.command("contrib")
@click.argument("path_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("path_b", type=click.Path(exists=True, dir_okay=False))
@_filter_option
@_format_option
def cmd_contrib(path_a: str, path_b: str, filter_path: str | None,
                output_format: str) -> int:
    """Per-feature contribution shares between two binaries."""
    noise_filter = _noise_filter(filter_path)
    report = contribution_factors(
        _load_fv(Path(path_a), noise_filter), _load_fv(Path(path_b), noise_filter)
    )
    doc = {"intersection_size": report.intersection_size, "shares": report.shares}
    if output_format == "json":
        _echo_json(doc)
    elif output_format == "csv":
        _echo_csv([{"feature": tag, "share": share} for tag, share in report.shares.items()])
    else:
        click.echo(f"intersection: {report.intersection_size}")
        for tag, share in report.shares.items():
            click.echo(f"  {tag}: {share:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# scan


def _scan_one(path: Path, store: IndexStore, threshold: float,
              noise_filter: NoiseFilter, cvedb) -> dict:
    inventory = apkmod.scan_apk(path)
    results = apkmod.identify_apk(
        path, store, threshold=threshold, noise_filter=noise_filter, inventory=inventory
    )
    entries = []
    for res in results:
        doc = apkmod.entry_result_to_dict(res)
        cves: list[str] = []
        if cvedb and res.match is not None and res.match.status is MatchStatus.IDENTIFIED:
            best = res.match.best
            cves = [e.cve_id for e in vulns.flag_vulnerable(best.library, best.version, cvedb)]
        doc["cves"] = cves
        entries.append(doc)
    return {
        "apk": str(path),
        "app_id": inventory.app_id,
        "version_code": inventory.version_code,
        "apk_sha256": inventory.apk_sha256,
        "entries": entries,
    }


@cli.command("scan")
@click.argument("apks", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@_index_option
@click.option("--cvedb", "cvedb_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="CVE database JSON for vulnerability flagging.")
@_threshold_option
@_filter_option
@_jobs_option
@_format_option
def cmd_scan(apks: tuple[str, ...], index_dir: str, cvedb_path: str | None,
             threshold: float, filter_path: str | None, jobs: int | None,
             output_format: str) -> int:
    """Scan APKs: identified libraries plus any CVEs they carry."""
    store = IndexStore.load(index_dir)
    noise_filter = _noise_filter(filter_path)
    cvedb = vulns.load_cvedb_file(cvedb_path) if cvedb_path else []
    jobs = jobs or os.cpu_count() or 1

    def work(raw: str) -> dict:
        try:
            return _scan_one(Path(raw), store, threshold, noise_filter, cvedb)
        except (LibrarianError, OSError) as exc:
            return {"apk": raw, "error": f"{type(exc).__name__}: {exc}"}

    if jobs > 1 and len(apks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(work, apks))
    else:
        reports = [work(raw) for raw in apks]

    if output_format == "json":
        _echo_json(reports)
    elif output_format == "csv":
        rows = []
        for report in reports:
            for entry in report.get("entries", []):
                match = entry.get("match") or {}
                best = (match.get("candidates") or [{}])[0]
                rows.append({
                    "apk": report["apk"],
                    "inner_path": entry["inner_path"],
                    "abi": entry["abi"],
                    "status": match.get("status", "error"),
                    "library": best.get("library", ""),
                    "version": best.get("version", ""),
                    "cves": ";".join(entry.get("cves", [])),
                    "error": entry.get("error", ""),
                })
            if "error" in report:
                rows.append({"apk": report["apk"], "inner_path": "", "abi": "",
                             "status": "error", "library": "", "version": "",
                             "cves": "", "error": report["error"]})
        _echo_csv(rows)
    else:
        for report in reports:
            click.echo(report["apk"])
            if "error" in report:
                click.echo(f"  error: {report['error']}")
                continue
            for entry in report.get("entries", []):
                match = entry.get("match")
                if match and match["candidates"]:
                    best = match["candidates"][0]
                    line = (f"  {entry['inner_path']} [{entry['abi']}]: "
                            f"{match['status']} {best['library']} {best['version']}")
                else:
                    line = (f"  {entry['inner_path']} [{entry['abi']}]: "
                            f"{entry.get('error') or (match or {}).get('status', '?')}")
                if entry.get("cves"):
                    line += "  CVEs: " + ", ".join(entry["cves"])
                click.echo(line)

    failed = any("error" in r for r in reports)
    return EXIT_IO if failed else EXIT_OK


# ---------------------------------------------------------------------------
# study


@cli.command("study")
@click.option("--timelines", "timelines_dir", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Directory of per-app timeline JSON files.")
@click.option("--cvedb", "cvedb_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--as-of", "as_of_raw", default=None,
              help="Reference date (ISO) for outdatedness; defaults to today.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              help="Directory for report.json and the CSV tables.")
@_format_option
def cmd_study(timelines_dir: str, cvedb_path: str, as_of_raw: str | None,
              out_dir: str, output_format: str) -> int:
    """Compute patch-latency analytics over app release histories."""
    if as_of_raw is None:
        as_of = date.today()
    else:
        try:
            as_of = date.fromisoformat(as_of_raw)
        except ValueError as exc:
            raise click.BadParameter(str(exc), param_hint="--as-of")

    cvedb = vulns.load_cvedb_file(cvedb_path)
    spans = []
    timeline_files = sorted(Path(timelines_dir).glob("*.json"))
    if not timeline_files:
        click.echo(f"study: no timeline files in {timelines_dir}", err=True)
        return EXIT_IO
    for path in timeline_files:
        timeline = vulns.load_timeline(path.read_text("utf-8"))
        spans.extend(vulns.compute_spans(timeline))

    report = vulns.aggregate(spans, cvedb, as_of)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(canon_dumps(report.to_dict()), encoding="utf-8")
    vulns.write_report_csvs(report, out)

    if output_format == "json":
        _echo_json(report.to_dict())
    elif output_format == "csv":
        _echo_csv([vulns.pair_to_dict(p) for p in report.pairs])
    else:
        click.echo(f"as of {report.as_of.isoformat()}:")
        click.echo(f"  patch released after disclosure: "
                   f"{report.ttrp_mean:.2f} +/- {report.ttrp_se:.2f} days "
                   f"(n={report.ttrp_n})")
        click.echo(f"  fix applied after patch: "
                   f"{report.ttaf_mean:.2f} +/- {report.ttaf_se:.2f} days "
                   f"(n={report.ttaf_n})")
        click.echo(f"  still vulnerable: {report.still_vulnerable_count} "
                   f"(outdated {report.outdated_mean:.2f} +/- {report.outdated_se:.2f} days)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def main(argv: list[str] | None = None) -> int:
    """Invoke the CLI, mapping errors onto the documented exit codes."""
    try:
        rv = cli.main(args=argv, standalone_mode=False)
        return rv if isinstance(rv, int) else EXIT_OK
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_IO
    except (LibrarianError, OSError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
