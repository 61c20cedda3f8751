from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import corpusbuild  # noqa: E402


def _toolchains_ok() -> bool:
    return corpusbuild.toolchain_available("x86_64") and corpusbuild.toolchain_available("arm64")


requires_toolchain = pytest.mark.skipif(
    not _toolchains_ok(), reason="needs cc + clang/lld cross toolchain"
)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory) -> list[corpusbuild.BuiltBinary]:
    """The simzip corpus: every tagged version compiled for two arches."""
    if not _toolchains_ok():
        pytest.skip("needs cc + clang/lld cross toolchain")
    out = tmp_path_factory.mktemp("corpus")
    return corpusbuild.build_corpus(out)


@pytest.fixture(scope="session")
def answer_so(tmp_path_factory) -> Path:
    """Shared object exporting answer()/g_state, importing printf,
    DT_NEEDED = [libc.so]."""
    if not corpusbuild.toolchain_available("x86_64"):
        pytest.skip("needs a C compiler")
    return corpusbuild.build_answer_fixture(tmp_path_factory.mktemp("answer"))


@pytest.fixture(scope="session")
def dispatch_so(tmp_path_factory) -> Path:
    """Single-export dispatcher with an embedded version banner."""
    if not corpusbuild.toolchain_available("x86_64"):
        pytest.skip("needs a C compiler")
    return corpusbuild.build_dispatch_fixture(tmp_path_factory.mktemp("dispatch"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One visible pass/fail line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            if getattr(report, "when", "call") not in ("call", "collect", "setup"):
                continue
            if outcome == "skipped" and report.when != "setup":
                continue
            if outcome == "passed" and report.when != "call":
                continue
            name = nodeid.split("::")[-1]
            lines.append((name, outcome.upper()))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, outcome in sorted(set(lines)):
            terminalreporter.write_line(f"{outcome:7s} {name}")
