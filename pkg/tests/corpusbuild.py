"""Build the compiled test corpus: one toy library at several tagged
versions for two architectures.

Each version is a tiny C translation unit whose exported symbol set
evolves the way real libraries evolve (patch releases keep the ABI,
minors add entry points, majors rename things).  Binaries are linked
with -nostdlib so the fixtures carry no toolchain symbols.

Runnable standalone:  python tests/corpusbuild.py --out /tmp/corpus
"""

from __future__ import annotations

import argparse
import shutil
import subprocess
from dataclasses import dataclass
from pathlib import Path

LIBRARY = "simzip"

_BASE = [
    "sz_init", "sz_free", "sz_compress", "sz_decompress", "sz_crc32",
    "sz_version", "sz_set_level", "sz_get_level", "sz_stream_open",
    "sz_stream_close", "sz_stream_read", "sz_stream_write",
    "sz_buffer_grow", "sz_buffer_free",
]

_V2 = [
    "sz_ctx_new", "sz_ctx_free", "sz_compress2", "sz_decompress2",
    "sz_crc32", "sz_version", "sz_set_level", "sz_get_level",
    "sz_stream_open", "sz_stream_close", "sz_stream_read",
    "sz_stream_write", "sz_stream_seek", "sz_buffer_free",
]

# version -> exported function names (two int globals are always present)
VERSIONS: dict[str, list[str]] = {
    "1.0.0": _BASE,
    "1.0.1": _BASE,  # ABI-identical patch release: indistinguishable by features
    "1.1.0": _BASE + ["sz_compress_bound", "sz_crc32_combine"],
    "1.2.0": [f for f in _BASE if f != "sz_buffer_grow"]
    + ["sz_compress_bound", "sz_crc32_combine", "sz_dict_set", "sz_dict_get"],
    "2.0.0": _V2,
    "2.0.1": _V2 + ["sz_ctx_reset"],
    "2.1.0": _V2 + ["sz_ctx_reset", "sz_compress_stream", "sz_decompress_stream"],
    "3.0.0": ["sz3_open", "sz3_close", "sz3_pull", "sz3_push", "sz3_crc", "sz_version"],
}

ARCH_CC: dict[str, list[str]] = {
    "x86_64": ["cc"],
    "arm64": ["clang", "--target=aarch64-linux-gnu", "-fuse-ld=lld"],
    "arm": ["clang", "--target=armv7a-linux-gnueabihf", "-fuse-ld=lld"],
}


@dataclass(frozen=True)
class BuiltBinary:
    path: Path
    library: str
    version: str
    arch: str


def toolchain_available(arch: str) -> bool:
    cc = ARCH_CC[arch][0]
    if shutil.which(cc) is None:
        return False
    if arch != "x86_64" and shutil.which("ld.lld") is None and shutil.which("lld") is None:
        return False
    return True


def version_source(version: str) -> str:
    functions = VERSIONS[version]
    # The build tag makes ABI-identical releases differ in file content
    # (and so in hash) without touching the exported feature set.
    lines = [
        "int sz_default_level = 6;",
        "int sz_table_size = 256;",
        f'static const char build_tag[] = "simzip build {version}";',
        "const char *sz_build(void) { return build_tag; }",
    ]
    for i, name in enumerate(functions):
        lines.append(f"int {name}(int x) {{ return x + {i + 1}; }}")
    return "\n".join(lines) + "\n"


def compile_shared(source: str, out_path: Path, arch: str,
                   extra_cflags: list[str] | None = None) -> Path:
    """Compile a C snippet into a -nostdlib shared object for ``arch``."""
    src_path = out_path.with_suffix(".c")
    src_path.write_text(source, encoding="utf-8")
    cmd = ARCH_CC[arch] + [
        "-shared", "-fPIC", "-nostdlib", "-o", str(out_path), str(src_path),
    ] + (extra_cflags or [])
    subprocess.run(cmd, check=True, capture_output=True)
    return out_path


def build_corpus(out_dir: str | Path, arches: tuple[str, ...] = ("x86_64", "arm64"),
                 ) -> list[BuiltBinary]:
    out = Path(out_dir)
    built: list[BuiltBinary] = []
    for version, _functions in VERSIONS.items():
        for arch in arches:
            target = out / arch / f"lib{LIBRARY}-{version}.so"
            target.parent.mkdir(parents=True, exist_ok=True)
            compile_shared(version_source(version), target, arch)
            built.append(BuiltBinary(target, LIBRARY, version, arch))
    return built


DISPATCH_SOURCE = """\
static const char cfg[] = "General configuration for OpenCV 2.4.11";
const char *toy_dispatch(const char *op) { (void)op; return cfg; }
"""


def build_dispatch_fixture(out_dir: str | Path, arch: str = "x86_64") -> Path:
    """A stripped-down library exporting a single dispatch function and
    carrying a version banner in .rodata."""
    out = Path(out_dir) / "libdispatch.so"
    out.parent.mkdir(parents=True, exist_ok=True)
    return compile_shared(DISPATCH_SOURCE, out, arch)


ANSWER_PROVIDER_SOURCE = """\
int printf(const char *fmt, ...) { (void)fmt; return 0; }
"""

ANSWER_SOURCE = """\
extern int printf(const char *fmt, ...);
int g_state = 7;
int answer(void) { printf("hi"); return 42; }
"""


def build_answer_fixture(out_dir: str | Path) -> Path:
    """The classification fixture: exports answer() and g_state, imports
    printf, and depends on (a fake) libc.so."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    provider = out / "libc.so"
    compile_shared(ANSWER_PROVIDER_SOURCE, provider, "x86_64",
                   extra_cflags=["-Wl,-soname,libc.so"])
    target = out / "libanswer.so"
    src = target.with_suffix(".c")
    src.write_text(ANSWER_SOURCE, encoding="utf-8")
    cmd = ARCH_CC["x86_64"] + [
        "-shared", "-fPIC", "-nostdlib", "-o", str(target), str(src),
        f"-L{out}", "-l:libc.so", "-Wl,--no-as-needed",
    ]
    subprocess.run(cmd, check=True, capture_output=True)
    return target


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--arch", action="append", choices=sorted(ARCH_CC),
                        help="architectures to build (repeatable)")
    args = parser.parse_args()
    arches = tuple(args.arch) if args.arch else ("x86_64", "arm64")
    for arch in arches:
        if not toolchain_available(arch):
            raise SystemExit(f"no toolchain for {arch}")
    built = build_corpus(args.out, arches)
    for b in built:
        print(f"{b.library} {b.version} [{b.arch}] -> {b.path}")


if __name__ == "__main__":
    main()
