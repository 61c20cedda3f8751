import re
import subprocess

import pytest
from hypothesis import given
from hypothesis import strategies as st

from librarian.elf import extract_strings, parse_elf, parse_elf_file
from librarian.errors import MalformedElf, UnsupportedClass

from elfbuild import Sym, build_elf, strip_section_table


def readelf_exported_functions(path) -> set[str]:
    """Independent oracle: defined GLOBAL FUNC names per binutils readelf."""
    out = subprocess.run(
        ["readelf", "--dyn-syms", "--wide", str(path)],
        check=True, capture_output=True, text=True,
    ).stdout
    names = set()
    for line in out.splitlines():
        m = re.match(
            r"\s*\d+:\s+\S+\s+\S+\s+FUNC\s+GLOBAL\s+\S+\s+(\S+)\s+(\S+)", line
        )
        if m and m.group(1) != "UND":
            names.add(m.group(2))
    return names


class TestParseElf:
    def test_bad_magic(self):
        with pytest.raises(MalformedElf):
            parse_elf(b"MZ\x90\x00 definitely not an elf", "a.so")

    def test_empty_input(self):
        with pytest.raises(MalformedElf):
            parse_elf(b"", "a.so")

    def test_truncated_header(self):
        blob = build_elf([Sym("foo")])
        with pytest.raises(MalformedElf):
            parse_elf(blob[:40], "a.so")

    def test_unsupported_class(self):
        blob = bytearray(build_elf([Sym("foo")]))
        blob[4] = 9
        with pytest.raises(UnsupportedClass):
            parse_elf(bytes(blob), "a.so")

    def test_out_of_bounds_section_table(self):
        blob = bytearray(build_elf([Sym("foo")]))
        # push e_shoff far beyond the end of the file
        import struct
        struct.pack_into("<Q", blob, 0x28, len(blob) + 4096)
        with pytest.raises(MalformedElf) as exc:
            parse_elf(bytes(blob), "a.so")
        assert exc.value.offset is not None

    def test_minimal_shared_object(self, answer_so):
        image = parse_elf_file(answer_so)
        assert image.elf_class == "ELF64"
        assert image.endianness == "little"
        assert image.machine == "x86_64"
        by_name = {s.name: s for s in image.dynamic_symbols}
        answer = by_name["answer"]
        assert answer.sym_type == "FUNC"
        assert answer.binding == "GLOBAL"
        assert answer.defined
        assert not by_name["printf"].defined
        assert image.needed_libraries == ("libc.so",)

    def test_machine_tag_arm64(self, corpus):
        arm = next(b for b in corpus if b.arch == "arm64")
        assert parse_elf_file(arm.path).machine == "arm64"

    def test_purity(self, answer_so):
        data = answer_so.read_bytes()
        assert parse_elf(data, "x.so") == parse_elf(data, "x.so")

    def test_exports_match_readelf_oracle(self, corpus):
        for built in corpus:
            image = parse_elf_file(built.path)
            mine = {
                s.name for s in image.dynamic_symbols
                if s.defined and s.binding == "GLOBAL" and s.sym_type == "FUNC"
            }
            assert mine == readelf_exported_functions(built.path), built.path

    def test_empty_names_discarded(self):
        image = parse_elf(build_elf([Sym("keeper")]), "a.so")
        assert all(s.name for s in image.dynamic_symbols)

    def test_elf32_little(self):
        blob = build_elf([Sym("foo")], bits=32, machine="x86")
        image = parse_elf(blob, "a.so")
        assert image.elf_class == "ELF32"
        assert image.machine == "x86"
        assert [s.name for s in image.dynamic_symbols] == ["foo"]

    def test_big_endian_parses_with_warning(self, caplog):
        blob = build_elf([Sym("foo")], endian="big", machine="ppc64")
        with caplog.at_level("WARNING"):
            image = parse_elf(blob, "a.so")
        assert image.endianness == "big"
        assert image.machine == "other(21)"
        assert [s.name for s in image.dynamic_symbols] == ["foo"]
        assert any("big-endian" in r.message for r in caplog.records)

    def test_needed_order_preserved(self):
        blob = build_elf([], needed=["libz.so", "liba.so", "libm.so"])
        image = parse_elf(blob, "a.so")
        assert image.needed_libraries == ("libz.so", "liba.so", "libm.so")

    def test_rodata_section_collected(self):
        blob = build_elf([Sym("f")], rodata=b"hello world\x00\x01\x02")
        image = parse_elf(blob, "a.so")
        assert image.rodata_bytes[".rodata"].startswith(b"hello world")


class TestSectionStripped:
    def test_fallback_recovers_symbols_and_needed(self, answer_so):
        stripped = strip_section_table(answer_so.read_bytes())
        image = parse_elf(stripped, "stripped.so")
        names = {s.name for s in image.dynamic_symbols}
        assert {"answer", "g_state", "printf"} <= names
        assert image.needed_libraries == ("libc.so",)

    def test_fallback_matches_section_parse(self, corpus):
        built = next(b for b in corpus if b.arch == "arm64" and b.version == "1.1.0")
        data = built.path.read_bytes()
        full = parse_elf(data, "full.so")
        stripped = parse_elf(strip_section_table(data), "stripped.so")
        assert {s.name for s in full.dynamic_symbols} == {
            s.name for s in stripped.dynamic_symbols
        }

    def test_fallback_recovers_rodata_strings(self, corpus):
        built = next(b for b in corpus if b.arch == "arm64" and b.version == "1.0.0")
        stripped = parse_elf(strip_section_table(built.path.read_bytes()), "s.so")
        strings = []
        for blob in stripped.rodata_bytes.values():
            strings.extend(extract_strings(blob))
        assert "simzip build 1.0.0" in strings

    def test_fallback_masks_symbol_names(self, corpus):
        built = next(b for b in corpus if b.arch == "arm64" and b.version == "1.0.0")
        stripped = parse_elf(strip_section_table(built.path.read_bytes()), "s.so")
        strings = []
        for blob in stripped.rodata_bytes.values():
            strings.extend(extract_strings(blob))
        assert "sz_compress" not in strings


class TestExtractStrings:
    def test_short_run_excluded(self):
        assert extract_strings(b"abc\x00abcd\x00") == ["abcd"]

    def test_version_banner(self):
        assert extract_strings(b"FFmpeg version 3.1.11\x00") == ["FFmpeg version 3.1.11"]

    def test_end_of_section_terminates(self):
        assert extract_strings(b"abcd") == ["abcd"]

    def test_non_nul_terminator_drops_run(self):
        assert extract_strings(b"abcd\x01efghij\x00") == ["efghij"]

    def test_empty_input(self):
        assert extract_strings(b"") == []

    def test_byte_order_preserved(self):
        assert extract_strings(b"zzzz\x00aaaa\x00") == ["zzzz", "aaaa"]

    @given(st.binary(max_size=2048))
    def test_output_always_printable_and_long_enough(self, blob):
        for s in extract_strings(blob):
            assert len(s) >= 4
            assert all(0x20 <= ord(c) <= 0x7E for c in s)

    @given(st.binary(max_size=512))
    def test_every_result_is_a_substring(self, blob):
        for s in extract_strings(blob):
            assert s.encode("ascii") in blob
