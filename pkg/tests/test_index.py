import json

import pytest

from librarian.errors import ConflictingLabel, SchemaError
from librarian.features import NoiseFilter
from librarian.index import IndexStore, record_rel_path

from elfbuild import Sym, build_elf


def blob(symbols, salt: bytes = b""):
    return build_elf([Sym(s) for s in symbols], rodata=b"payload:" + salt + b"\x00")


class TestIndexAdd:
    def test_write_then_read(self, tmp_path):
        store = IndexStore.create(tmp_path / "idx")
        store.add(blob(["f1", "f2"]), "libtoy", "1.0", "unit test")
        reloaded = IndexStore.load(tmp_path / "idx")
        assert len(reloaded) == 1
        record = reloaded.records[0]
        assert (record.library, record.version) == ("libtoy", "1.0")
        assert record.arch == "x86_64"
        assert record.source == "unit test"
        assert record.fv.exported_functions == {"f1", "f2"}
        assert record.fv.binary_meta.file_sha256 == record.sha256

    def test_duplicate_add_is_noop(self, tmp_path):
        store = IndexStore.create(tmp_path / "idx")
        data = blob(["f1"])
        store.add(data, "libtoy", "1.0")
        store.add(data, "libtoy", "1.0")
        assert len(store) == 1

    def test_conflicting_label_rejected(self, tmp_path):
        store = IndexStore.create(tmp_path / "idx")
        data = blob(["f1"])
        store.add(data, "libtoy", "1.0")
        with pytest.raises(ConflictingLabel):
            store.add(data, "libtoy", "2.0")

    def test_same_version_different_builds_coexist(self, tmp_path):
        store = IndexStore.create(tmp_path / "idx")
        store.add(blob(["f1"], b"a"), "libtoy", "1.0")
        store.add(blob(["f1"], b"b"), "libtoy", "1.0")
        assert len(store) == 2

    def test_record_layout_on_disk(self, tmp_path):
        store = IndexStore.create(tmp_path / "idx")
        record = store.add(blob(["f1"]), "libtoy", "1.0")
        expected = tmp_path / "idx" / "libtoy" / "1.0" / f"x86_64-{record.sha256[:8]}.json"
        assert expected.is_file()
        assert record_rel_path(record) == f"libtoy/1.0/x86_64-{record.sha256[:8]}.json"
        doc = json.loads(expected.read_text())
        assert doc["library"] == {"name": "libtoy", "version": "1.0"}

    def test_unsafe_names_sanitized(self, tmp_path):
        store = IndexStore.create(tmp_path / "idx")
        record = store.add(blob(["f1"]), "lib/evil", "1.0:2")
        assert "/" not in record_rel_path(record).split("/", 1)[0]
        assert (tmp_path / "idx" / "lib_evil").is_dir()

    def test_custom_filter_respected(self, tmp_path):
        store = IndexStore.create(tmp_path / "idx")
        nf = NoiseFilter(exact_rules=frozenset({"f1"}))
        record = store.add(blob(["f1", "f2"]), "libtoy", "1.0", noise_filter=nf)
        assert record.fv.exported_functions == {"f2"}


class TestCandidates:
    def _store(self, tmp_path):
        store = IndexStore.create(tmp_path / "idx")
        store.add(blob(["f1"], b"1"), "alpha", "1.0")
        store.add(build_elf([Sym("f2")], machine="arm64"), "beta", "1.0")
        store.add(blob(["f3"], b"3"), "gamma", "1.0")
        return store

    def test_empty_store(self, tmp_path):
        assert IndexStore.create(tmp_path / "idx").candidates() == []

    def test_arch_filter_reorders_never_drops(self, tmp_path):
        store = self._store(tmp_path)
        ordered = store.candidates("arm64")
        assert len(ordered) == 3
        assert ordered[0].arch == "arm64"
        assert {r.arch for r in ordered[1:]} == {"x86_64"}

    def test_length_invariant(self, tmp_path):
        store = self._store(tmp_path)
        for arch in (None, "x86_64", "arm64", "mips"):
            assert len(store.candidates(arch)) == 3


class TestPersistence:
    def test_round_trip_byte_identical(self, tmp_path):
        first = tmp_path / "idx1"
        store = IndexStore.create(first)
        store.add(blob(["f1", "f2"]), "libtoy", "1.0")
        store.add(blob(["g1"]), "other", "2.1")

        manifest_before = (first / "manifest.json").read_bytes()
        reloaded = IndexStore.load(first)
        reloaded._write_manifest()
        assert (first / "manifest.json").read_bytes() == manifest_before

        assert [(r.library, r.version, r.sha256) for r in reloaded.candidates()] == [
            (r.library, r.version, r.sha256) for r in store.candidates()
        ]
        assert all(
            a.fv == b.fv for a, b in zip(reloaded.candidates(), store.candidates())
        )

    def test_hash_registry(self, tmp_path):
        store = IndexStore.create(tmp_path / "idx")
        record = store.add(blob(["f1"]), "libtoy", "1.0")
        assert store.lookup_sha(record.sha256) is record
        assert store.lookup_sha("0" * 64) is None
        reloaded = IndexStore.load(tmp_path / "idx")
        found = reloaded.lookup_sha(record.sha256)
        assert found is not None and found.version == "1.0"

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(SchemaError):
            IndexStore.load(tmp_path / "nope")

    def test_heuristics_persisted(self, tmp_path):
        store = IndexStore.create(tmp_path / "idx")
        assert (tmp_path / "idx" / "heuristics.json").is_file()
        reloaded = IndexStore.load(tmp_path / "idx")
        assert {h.library for h in reloaded.heuristics} == {
            h.library for h in store.heuristics
        }
        assert len(reloaded.heuristics) == 15

    def test_open_creates_or_loads(self, tmp_path):
        first = IndexStore.open(tmp_path / "idx")
        first.add(blob(["f1"]), "libtoy", "1.0")
        second = IndexStore.open(tmp_path / "idx")
        assert len(second) == 1
