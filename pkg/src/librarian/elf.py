"""Struct-based ELF reader for native shared objects.

Parses 32- and 64-bit ELF files in either byte order and exposes exactly
the material the fingerprinting pipeline needs: the dynamic symbol table,
DT_NEEDED dependencies, and read-only data bytes.  Section-stripped
binaries (no section header table) are handled through the program
headers and the PT_DYNAMIC segment, since app packages do ship such
files.

No disassembly, relocation processing, or debug-info handling — only
load-time metadata.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import struct
from dataclasses import dataclass, field

from .errors import MalformedElf, UnsupportedClass

logger = logging.getLogger(__name__)

ELF_MAGIC = b"\x7fELF"

ELFCLASS32 = 1
ELFCLASS64 = 2
ELFDATA2LSB = 1
ELFDATA2MSB = 2

EM_386 = 3
EM_ARM = 40
EM_X86_64 = 62
EM_AARCH64 = 183

_MACHINE_TAGS = {
    EM_386: "x86",
    EM_X86_64: "x86_64",
    EM_ARM: "arm",
    EM_AARCH64: "arm64",
}

SHT_PROGBITS = 1
SHT_SYMTAB = 2
SHT_STRTAB = 3
SHT_DYNAMIC = 6
SHT_DYNSYM = 11

SHF_WRITE = 0x1
SHF_ALLOC = 0x2
SHF_EXECINSTR = 0x4

PT_LOAD = 1
PT_DYNAMIC = 2

PF_X = 0x1
PF_W = 0x2
PF_R = 0x4

DT_NULL = 0
DT_NEEDED = 1
DT_HASH = 4
DT_STRTAB = 5
DT_SYMTAB = 6
DT_STRSZ = 10
DT_SYMENT = 11
DT_GNU_HASH = 0x6FFFFEF5
DT_VERSYM = 0x6FFFFFF0

SHN_UNDEF = 0

STB_NAMES = {0: "LOCAL", 1: "GLOBAL", 2: "WEAK"}
STT_NAMES = {0: "NOTYPE", 1: "OBJECT", 2: "FUNC", 6: "TLS"}
STV_NAMES = {0: "DEFAULT", 1: "INTERNAL", 2: "HIDDEN", 3: "PROTECTED"}


@dataclass(frozen=True)
class RawSymbol:
    """One named entry of a symbol table."""

    name: str
    sym_type: str  # FUNC | OBJECT | NOTYPE | TLS | other
    binding: str  # GLOBAL | WEAK | LOCAL | other
    defined: bool
    visibility: str  # DEFAULT | PROTECTED | HIDDEN | INTERNAL


@dataclass(frozen=True)
class ElfImage:
    """Parsed view of one ELF shared object."""

    elf_class: str  # "ELF32" | "ELF64"
    endianness: str  # "little" | "big"
    machine: str  # x86 | x86_64 | arm | arm64 | other(<code>)
    dynamic_symbols: tuple[RawSymbol, ...]
    needed_libraries: tuple[str, ...]
    rodata_bytes: dict[str, bytes]  # section (or segment) name -> bytes
    file_sha256: str
    file_name: str
    file_size: int
    static_symbols: tuple[RawSymbol, ...] = field(default=(), compare=False)


@dataclass
class _Shdr:
    name: str
    sh_type: int
    flags: int
    addr: int
    offset: int
    size: int
    link: int
    entsize: int


@dataclass
class _Phdr:
    p_type: int
    flags: int
    offset: int
    vaddr: int
    filesz: int
    memsz: int


class _Reader:
    """Bounds-checked accessor over the raw file bytes."""

    def __init__(self, data: bytes):
        self.data = data

    def slice(self, offset: int, size: int, what: str) -> bytes:
        if offset < 0 or size < 0 or offset + size > len(self.data):
            raise MalformedElf(f"{what} out of bounds", offset=offset)
        return self.data[offset : offset + size]

    def unpack(self, fmt: str, offset: int, what: str) -> tuple:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.slice(offset, size, what))

    def cstring(self, table: bytes, offset: int) -> str:
        if offset < 0 or offset >= len(table):
            return ""
        end = table.find(b"\x00", offset)
        if end == -1:
            end = len(table)
        return table[offset:end].decode("latin-1")


def parse_elf(data: bytes, file_name: str) -> ElfImage:
    """Parse a shared object into an :class:`ElfImage`.

    Raises :class:`MalformedElf` for bad magic, truncated headers or
    out-of-bounds tables, and :class:`UnsupportedClass` when EI_CLASS is
    neither ELF32 nor ELF64.
    """
    if len(data) < 4 or data[:4] != ELF_MAGIC:
        raise MalformedElf("not an ELF file: bad magic", offset=0)
    if len(data) < 16:
        raise MalformedElf("truncated e_ident", offset=len(data))

    ei_class = data[4]
    ei_data = data[5]
    if ei_class not in (ELFCLASS32, ELFCLASS64):
        raise UnsupportedClass(f"unsupported EI_CLASS {ei_class}")
    if ei_data not in (ELFDATA2LSB, ELFDATA2MSB):
        raise MalformedElf(f"unknown EI_DATA {ei_data}", offset=5)

    is64 = ei_class == ELFCLASS64
    end = "<" if ei_data == ELFDATA2LSB else ">"
    if ei_data == ELFDATA2MSB:
        logger.warning("%s: big-endian ELF; no supported Android ABI is big-endian", file_name)

    r = _Reader(data)
    if is64:
        (e_type, e_machine, _ver, _entry, e_phoff, e_shoff, _flags, _ehsize,
         e_phentsize, e_phnum, e_shentsize, e_shnum, e_shstrndx,
         ) = r.unpack(end + "HHIQQQIHHHHHH", 16, "ELF header")
    else:
        (e_type, e_machine, _ver, _entry, e_phoff, e_shoff, _flags, _ehsize,
         e_phentsize, e_phnum, e_shentsize, e_shnum, e_shstrndx,
         ) = r.unpack(end + "HHIIIIIHHHHHH", 16, "ELF header")

    machine = _MACHINE_TAGS.get(e_machine, f"other({e_machine})")

    sections = _read_sections(r, end, is64, e_shoff, e_shnum, e_shentsize, e_shstrndx)
    segments = _read_segments(r, end, is64, e_phoff, e_phnum, e_phentsize)

    dynsyms: list[RawSymbol] = []
    statics: list[RawSymbol] = []
    needed: list[str] = []
    rodata: dict[str, bytes] = {}

    dynsym_sec = next((s for s in sections if s.sh_type == SHT_DYNSYM), None)
    if dynsym_sec is not None:
        dynsyms = _symbols_from_section(r, end, is64, sections, dynsym_sec)
        symtab_sec = next((s for s in sections if s.sh_type == SHT_SYMTAB), None)
        if symtab_sec is not None:
            statics = _symbols_from_section(r, end, is64, sections, symtab_sec)
        needed = _needed_from_section(r, end, is64, sections)
        rodata = _rodata_from_sections(r, sections)
    else:
        # Section table absent or stripped of the dynamic symbol table:
        # recover everything from the program headers.
        dyn_seg = next((p for p in segments if p.p_type == PT_DYNAMIC), None)
        covered: list[tuple[int, int]] = []
        if dyn_seg is not None:
            dynsyms, needed, covered = _dynamic_from_segments(r, end, is64, segments, dyn_seg)
        if sections:
            rodata = _rodata_from_sections(r, sections)
        else:
            rodata = _rodata_from_segments(r, segments, covered)

    dynsyms = [s for s in dynsyms if s.name]
    statics = [s for s in statics if s.name]

    return ElfImage(
        elf_class="ELF64" if is64 else "ELF32",
        endianness="little" if ei_data == ELFDATA2LSB else "big",
        machine=machine,
        dynamic_symbols=tuple(dynsyms),
        needed_libraries=tuple(needed),
        rodata_bytes=rodata,
        file_sha256=hashlib.sha256(data).hexdigest(),
        file_name=file_name,
        file_size=len(data),
        static_symbols=tuple(statics),
    )


def parse_elf_file(path) -> ElfImage:
    """Read ``path`` and parse it; the image's file_name is the basename."""
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_elf(data, os.path.basename(str(path)))


# A maximal run of printable ASCII; the character class excludes NUL so
# each regex match is automatically maximal.
_PRINTABLE_RUN = re.compile(rb"[\x20-\x7e]{4,}")


def extract_strings(rodata: bytes) -> list[str]:
    """Harvest printable strings from read-only data.

    Returns, in byte order, every maximal run of printable ASCII
    (0x20-0x7E) of length >= 4 that is terminated by a NUL byte or by the
    end of the data.  Runs cut short by any other byte are dropped.
    """
    out: list[str] = []
    for m in _PRINTABLE_RUN.finditer(rodata):
        terminator = rodata[m.end() : m.end() + 1]
        if terminator == b"" or terminator == b"\x00":
            out.append(m.group().decode("ascii"))
    return out


# ---------------------------------------------------------------------------
# section-header path


def _read_sections(r: _Reader, end: str, is64: bool, shoff: int, shnum: int,
                   shentsize: int, shstrndx: int) -> list[_Shdr]:
    if shoff == 0 or shnum == 0:
        return []
    fmt = end + ("IIQQQQIIQQ" if is64 else "IIIIIIIIII")
    want = struct.calcsize(fmt)
    if shentsize < want:
        raise MalformedElf(f"section header entry size {shentsize} too small", offset=shoff)
    raw: list[tuple] = []
    for i in range(shnum):
        raw.append(r.unpack(fmt, shoff + i * shentsize, f"section header {i}"))

    names = b""
    if 0 < shstrndx < shnum:
        _, sh_type, _, _, offset, size, _, _, _, _ = raw[shstrndx]
        if sh_type == SHT_STRTAB:
            names = r.slice(offset, size, "section name table")

    sections = []
    for i, f in enumerate(raw):
        sh_name, sh_type, flags, addr, offset, size, link, _info, _align, entsize = f
        sections.append(
            _Shdr(
                name=r.cstring(names, sh_name),
                sh_type=sh_type,
                flags=flags,
                addr=addr,
                offset=offset,
                size=size,
                link=link,
                entsize=entsize,
            )
        )
    return sections


def _read_segments(r: _Reader, end: str, is64: bool, phoff: int, phnum: int,
                   phentsize: int) -> list[_Phdr]:
    if phoff == 0 or phnum == 0:
        return []
    fmt = end + ("IIQQQQQQ" if is64 else "IIIIIIII")
    want = struct.calcsize(fmt)
    if phentsize < want:
        raise MalformedElf(f"program header entry size {phentsize} too small", offset=phoff)
    segments = []
    for i in range(phnum):
        f = r.unpack(fmt, phoff + i * phentsize, f"program header {i}")
        if is64:
            p_type, flags, offset, vaddr, _paddr, filesz, memsz, _align = f
        else:
            p_type, offset, vaddr, _paddr, filesz, memsz, flags, _align = f
        segments.append(_Phdr(p_type, flags, offset, vaddr, filesz, memsz))
    return segments


def _decode_symbol(end: str, is64: bool, entry: bytes, strtab: bytes, r: _Reader) -> RawSymbol:
    if is64:
        st_name, st_info, st_other, st_shndx = struct.unpack(end + "IBBH", entry[:8])
    else:
        st_name, _value, _size, st_info, st_other, st_shndx = struct.unpack(end + "IIIBBH", entry)
    return RawSymbol(
        name=r.cstring(strtab, st_name),
        sym_type=STT_NAMES.get(st_info & 0xF, "other"),
        binding=STB_NAMES.get(st_info >> 4, "other"),
        defined=st_shndx != SHN_UNDEF,
        visibility=STV_NAMES.get(st_other & 0x3, "DEFAULT"),
    )


def _symbols_from_section(r: _Reader, end: str, is64: bool, sections: list[_Shdr],
                          sec: _Shdr) -> list[RawSymbol]:
    entsize = 24 if is64 else 16
    if sec.entsize:
        entsize = sec.entsize
    table = r.slice(sec.offset, sec.size, f"symbol table {sec.name!r}")
    strtab = b""
    if 0 <= sec.link < len(sections):
        link = sections[sec.link]
        strtab = r.slice(link.offset, link.size, f"string table for {sec.name!r}")
    syms = []
    for off in range(0, len(table) - entsize + 1, entsize):
        syms.append(_decode_symbol(end, is64, table[off : off + entsize], strtab, r))
    return syms


def _needed_from_section(r: _Reader, end: str, is64: bool, sections: list[_Shdr]) -> list[str]:
    dyn = next((s for s in sections if s.sh_type == SHT_DYNAMIC), None)
    if dyn is None:
        return []
    strtab = b""
    if 0 <= dyn.link < len(sections):
        link = sections[dyn.link]
        strtab = r.slice(link.offset, link.size, "dynamic string table")
    return [
        r.cstring(strtab, val)
        for tag, val in _iter_dynamic(r, end, is64, dyn.offset, dyn.size)
        if tag == DT_NEEDED
    ]


def _rodata_from_sections(r: _Reader, sections: list[_Shdr]) -> dict[str, bytes]:
    out: dict[str, bytes] = {}
    for s in sections:
        if s.sh_type != SHT_PROGBITS:
            continue
        ro_alloc = (s.flags & SHF_ALLOC) and not (s.flags & (SHF_WRITE | SHF_EXECINSTR))
        if ro_alloc or s.name == ".comment":
            out[s.name] = r.slice(s.offset, s.size, f"section {s.name!r}")
    return out


# ---------------------------------------------------------------------------
# program-header fallback (section-stripped binaries)


def _iter_dynamic(r: _Reader, end: str, is64: bool, offset: int, size: int):
    fmt = end + ("qQ" if is64 else "iI")
    step = struct.calcsize(fmt)
    pos = offset
    limit = offset + size
    while pos + step <= limit:
        tag, val = r.unpack(fmt, pos, "dynamic entry")
        if tag == DT_NULL:
            break
        yield tag, val
        pos += step


def _vaddr_to_offset(segments: list[_Phdr], vaddr: int) -> int | None:
    for p in segments:
        if p.p_type == PT_LOAD and p.vaddr <= vaddr < p.vaddr + p.filesz:
            return vaddr - p.vaddr + p.offset
    return None


def _gnu_hash_symcount(r: _Reader, end: str, is64: bool, offset: int) -> tuple[int, int]:
    """Return (symbol count, table size in bytes) from a GNU hash table."""
    nbuckets, symoffset, bloom_size, _shift = r.unpack(end + "IIII", offset, "GNU hash header")
    word = 8 if is64 else 4
    buckets_off = offset + 16 + bloom_size * word
    buckets = r.unpack(end + f"{nbuckets}I", buckets_off, "GNU hash buckets")
    chains_off = buckets_off + nbuckets * 4
    max_idx = symoffset - 1
    for b in buckets:
        if b == 0:
            continue
        idx = b
        while True:
            (entry,) = r.unpack(end + "I", chains_off + (idx - symoffset) * 4, "GNU hash chain")
            if idx > max_idx:
                max_idx = idx
            if entry & 1:
                break
            idx += 1
    symcount = max_idx + 1
    size = (chains_off - offset) + (symcount - symoffset) * 4
    return symcount, size


def _dynamic_from_segments(r: _Reader, end: str, is64: bool, segments: list[_Phdr],
                           dyn_seg: _Phdr) -> tuple[list[RawSymbol], list[str], list[tuple[int, int]]]:
    """Recover dynamic symbols and DT_NEEDED without a section table.

    Also returns the file ranges occupied by the dynamic-linking tables so
    the read-only segment harvest can mask them out.
    """
    tags: dict[int, int] = {}
    needed_vals: list[int] = []
    for tag, val in _iter_dynamic(r, end, is64, dyn_seg.offset, dyn_seg.filesz):
        if tag == DT_NEEDED:
            needed_vals.append(val)
        else:
            tags.setdefault(tag, val)

    covered: list[tuple[int, int]] = [(dyn_seg.offset, dyn_seg.filesz)]
    strtab_off = _vaddr_to_offset(segments, tags[DT_STRTAB]) if DT_STRTAB in tags else None
    strsz = tags.get(DT_STRSZ, 0)
    strtab = b""
    if strtab_off is not None and strsz:
        strtab = r.slice(strtab_off, strsz, "dynamic string table")
        covered.append((strtab_off, strsz))
    needed = [r.cstring(strtab, v) for v in needed_vals]

    symtab_off = _vaddr_to_offset(segments, tags[DT_SYMTAB]) if DT_SYMTAB in tags else None
    if symtab_off is None:
        return [], needed, covered

    syment = tags.get(DT_SYMENT, 24 if is64 else 16)
    symcount = None
    if DT_GNU_HASH in tags:
        gh_off = _vaddr_to_offset(segments, tags[DT_GNU_HASH])
        if gh_off is not None:
            symcount, gh_size = _gnu_hash_symcount(r, end, is64, gh_off)
            covered.append((gh_off, gh_size))
    if symcount is None and DT_HASH in tags:
        h_off = _vaddr_to_offset(segments, tags[DT_HASH])
        if h_off is not None:
            nbucket, nchain = r.unpack(end + "II", h_off, "SysV hash header")
            symcount = nchain
            covered.append((h_off, 8 + 4 * (nbucket + nchain)))
    if symcount is None and strtab_off is not None and strtab_off > symtab_off:
        # No hash table: assume the common layout where .dynsym directly
        # precedes .dynstr.
        symcount = (strtab_off - symtab_off) // syment

    syms: list[RawSymbol] = []
    if symcount:
        table = r.slice(symtab_off, symcount * syment, "dynamic symbol table")
        covered.append((symtab_off, symcount * syment))
        if DT_VERSYM in tags:
            vs_off = _vaddr_to_offset(segments, tags[DT_VERSYM])
            if vs_off is not None:
                covered.append((vs_off, 2 * symcount))
        for off in range(0, len(table) - syment + 1, syment):
            syms.append(_decode_symbol(end, is64, table[off : off + syment], strtab, r))
    return syms, needed, covered


def _rodata_from_segments(r: _Reader, segments: list[_Phdr],
                          covered: list[tuple[int, int]]) -> dict[str, bytes]:
    out: dict[str, bytes] = {}
    for i, p in enumerate(segments):
        if p.p_type != PT_LOAD:
            continue
        if not (p.flags & PF_R) or p.flags & (PF_W | PF_X):
            continue
        data = bytearray(r.slice(p.offset, p.filesz, f"segment {i}"))
        # Blank the dynamic-linking tables so their contents (symbol
        # names and the like) are not mistaken for read-only strings.
        for off, size in covered:
            lo = max(off, p.offset)
            hi = min(off + size, p.offset + p.filesz)
            if lo < hi:
                data[lo - p.offset : hi - p.offset] = b"\x00" * (hi - lo)
        out[f"segment{i}"] = bytes(data)
    return out
