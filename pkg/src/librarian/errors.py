"""Exception types shared across the toolkit."""

from __future__ import annotations


class LibrarianError(Exception):
    """Base class for all errors raised by this package."""


class MalformedElf(LibrarianError):
    """The input is not a well-formed ELF file.

    ``offset`` points at the file position where parsing gave up
    (bad magic, truncated header, out-of-bounds table, ...).
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at offset {offset:#x})"
        super().__init__(message)
        self.offset = offset


class UnsupportedClass(LibrarianError):
    """EI_CLASS is neither ELF32 nor ELF64."""


class SchemaError(LibrarianError):
    """A JSON document does not match its expected schema."""


class ConflictingLabel(LibrarianError):
    """The same binary content is already indexed under different labels."""


class EmptyIndex(LibrarianError):
    """Identification was requested against an index with no records."""


class NotAZip(LibrarianError):
    """The input file is not a ZIP archive."""


class CorruptArchive(LibrarianError):
    """The ZIP central directory or an archive member is damaged."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (near offset {offset:#x})"
        super().__init__(message)
        self.offset = offset


class InvalidPair(LibrarianError):
    """A CVE was paired with a library span it does not apply to."""
