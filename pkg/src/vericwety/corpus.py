"""Verilog corpus ingestion: module boundary detection and line segmentation.

A corpus is a directory of ``.v``/``.sv`` files. Each top-level
``module ... endmodule`` region becomes one DesignUnit whose lines are
addressable by 1-based number and round-trip byte-exactly.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .errors import ChecksumMismatch, CorpusError, EmptyCorpus

log = logging.getLogger(__name__)

VERILOG_EXTENSIONS = (".v", ".sv")

_WS = " \t\r\f\v"


@dataclass(frozen=True)
class SourceLine:
    line_no: int
    text: str
    is_blank: bool
    is_comment_only: bool


@dataclass(frozen=True)
class DesignUnit:
    design_id: str
    module_name: str
    source_text: str
    lines: tuple[SourceLine, ...]
    origin_path: str

    @property
    def line_count(self) -> int:
        return len(self.lines)

    def numbered_source(self) -> str:
        """Source with 1-based line numbers, as sent to label providers."""
        return "\n".join(f"{ln.line_no}: {ln.text}" for ln in self.lines)


@dataclass(frozen=True)
class ManifestEntry:
    design_id: str
    origin_path: str
    line_count: int
    sha256: str


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]


def _is_ident_start(c: str) -> bool:
    return c.isalpha() or c == "_"


def _is_ident_char(c: str) -> bool:
    return c.isalnum() or c in "_$"


def scan_modules(text: str) -> list[tuple[int, int, str]]:
    """Locate top-level module regions in Verilog source.

    Returns (start_offset, end_offset, module_name) triples where start points
    at the ``module`` keyword and end just past the matching ``endmodule``.
    Keywords inside comments and string literals are ignored; the first
    ``endmodule`` closes the open module (nesting is illegal in Verilog-2005).
    """
    regions: list[tuple[int, int, str]] = []
    n = len(text)
    i = 0
    open_start: int | None = None
    name = ""
    expecting_name = False
    while i < n:
        c = text[i]
        if c == "/" and i + 1 < n and text[i + 1] == "/":
            j = text.find("\n", i)
            i = n if j == -1 else j + 1
        elif c == "/" and i + 1 < n and text[i + 1] == "*":
            j = text.find("*/", i + 2)
            i = n if j == -1 else j + 2
        elif c == '"':
            i += 1
            while i < n and text[i] != '"':
                i += 2 if text[i] == "\\" else 1
            i += 1
        elif _is_ident_start(c):
            j = i
            while j < n and _is_ident_char(text[j]):
                j += 1
            word = text[i:j]
            if word == "module" and open_start is None:
                open_start = i
                name = ""
                expecting_name = True
            elif word == "endmodule" and open_start is not None:
                regions.append((open_start, j, name))
                open_start = None
                expecting_name = False
            elif expecting_name:
                name = word
                expecting_name = False
            i = j
        else:
            i += 1
    if open_start is not None:
        log.warning("module %r never closed; region extended to end of file", name)
        end = n - 1 if text.endswith("\n") else n
        regions.append((open_start, end, name))
    return regions


def _expand_to_lines(text: str, start: int, end: int) -> tuple[int, int]:
    """Widen a region to full lines, excluding the trailing newline."""
    line_start = text.rfind("\n", 0, start) + 1
    nl = text.find("\n", end)
    line_end = len(text) if nl == -1 else nl
    return line_start, line_end


def _classify_comment(line: str, in_block: bool) -> tuple[bool, bool]:
    """Return (every non-whitespace char sits in a comment, carry-out block state)."""
    only = True
    i = 0
    n = len(line)
    while i < n:
        if in_block:
            j = line.find("*/", i)
            if j == -1:
                return only, True
            in_block = False
            i = j + 2
            continue
        c = line[i]
        if c in _WS:
            i += 1
        elif line.startswith("//", i):
            return only, False
        elif line.startswith("/*", i):
            in_block = True
            i += 2
        elif c == '"':
            only = False
            i += 1
            while i < n and line[i] != '"':
                i += 2 if line[i] == "\\" else 1
            i += 1
        else:
            only = False
            i += 1
    return only, in_block


def _segment_text(text: str) -> list[SourceLine]:
    lines = []
    in_block = False
    for no, raw in enumerate(text.split("\n"), start=1):
        blank = raw.strip() == ""
        comment_only, in_block = _classify_comment(raw, in_block)
        lines.append(SourceLine(no, raw, blank, comment_only and not blank))
    return lines


def segment_lines(unit: DesignUnit) -> list[SourceLine]:
    """Split a unit's source into 1-based SourceLines; join(lines) round-trips."""
    if unit.source_text == "":
        raise CorpusError(f"design {unit.design_id} has empty source")
    return _segment_text(unit.source_text)


def _read_text(path: Path) -> str:
    data = path.read_bytes()
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError:
        log.warning("invalid UTF-8 in %s; bad bytes replaced", path)
        return data.decode("utf-8", errors="replace")


def _units_from_file(path: Path, rel_stem: str) -> list[DesignUnit]:
    text = _read_text(path)
    if text == "":
        log.warning("empty design file skipped: %s", path)
        return []
    regions = scan_modules(text)
    if not regions:
        log.warning("no module found in %s; file skipped", path)
        return []
    multi = len(regions) > 1
    units = []
    for k, (start, end, name) in enumerate(regions, start=1):
        ls, le = _expand_to_lines(text, start, end)
        src = text[ls:le]
        design_id = f"{rel_stem}#{k}" if multi else rel_stem
        units.append(
            DesignUnit(
                design_id=design_id,
                module_name=name,
                source_text=src,
                lines=tuple(_segment_text(src)),
                origin_path=str(path),
            )
        )
    return units


def _load_dir(root: Path) -> list[DesignUnit]:
    files = sorted(
        (p for p in root.rglob("*") if p.is_file() and p.suffix in VERILOG_EXTENSIONS),
        key=lambda p: p.relative_to(root).as_posix(),
    )
    units: list[DesignUnit] = []
    seen: set[str] = set()
    for f in files:
        rel = f.relative_to(root).as_posix()
        rel_stem = rel[: -len(f.suffix)]
        for unit in _units_from_file(f, rel_stem):
            if unit.design_id in seen:
                raise CorpusError(f"duplicate design_id {unit.design_id!r} (from {f})")
            seen.add(unit.design_id)
            units.append(unit)
    if not units:
        raise EmptyCorpus(f"no Verilog module found under {root}")
    return units


def load_corpus(path: str | Path) -> list[DesignUnit]:
    """Load designs from a corpus directory or a previously saved manifest.

    Directory: every ``.v``/``.sv`` file is scanned; a file holding k > 1
    modules yields units ``<stem>#1 .. <stem>#k``. Ordering is deterministic
    by (relative path, offset).
    """
    p = Path(path)
    if not p.exists():
        raise CorpusError(f"corpus path does not exist: {p}")
    if p.is_dir():
        return _load_dir(p)
    return _load_from_manifest(p)


def text_sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def build_manifest(units: list[DesignUnit]) -> CorpusManifest:
    return CorpusManifest(
        entries=tuple(
            ManifestEntry(u.design_id, u.origin_path, u.line_count, text_sha256(u.source_text))
            for u in units
        )
    )


def save_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in manifest.entries:
            f.write(
                json.dumps(
                    {
                        "design_id": e.design_id,
                        "origin_path": e.origin_path,
                        "line_count": e.line_count,
                        "sha256": e.sha256,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_manifest(path: str | Path) -> CorpusManifest:
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            entries.append(
                ManifestEntry(rec["design_id"], rec["origin_path"], rec["line_count"], rec["sha256"])
            )
    return CorpusManifest(entries=tuple(entries))


def _load_from_manifest(path: Path) -> list[DesignUnit]:
    manifest = load_manifest(path)
    by_file: dict[str, dict[str, DesignUnit]] = {}
    units = []
    for e in manifest.entries:
        origin = Path(e.origin_path)
        if not origin.is_absolute():
            origin = path.parent / origin
        key = str(origin)
        if key not in by_file:
            if not origin.is_file():
                raise CorpusError(f"manifest references missing file: {origin}")
            rel_stem = origin.name[: -len(origin.suffix)]
            by_file[key] = {u.design_id: u for u in _units_from_file(origin, rel_stem)}
        # manifest ids carry the path-derived stem; match on the #k suffix too
        unit = _match_unit(by_file[key], e.design_id)
        if unit is None:
            raise ChecksumMismatch(f"design {e.design_id} not found in {origin}")
        if unit.line_count != e.line_count or text_sha256(unit.source_text) != e.sha256:
            raise ChecksumMismatch(f"design {e.design_id} changed since manifest was written")
        units.append(
            DesignUnit(e.design_id, unit.module_name, unit.source_text, unit.lines, str(origin))
        )
    if not units:
        raise EmptyCorpus(f"manifest {path} lists no designs")
    return units


def _match_unit(file_units: dict[str, DesignUnit], design_id: str) -> DesignUnit | None:
    # ids in a manifest may be prefixed with subdirectories relative to the
    # original corpus root; file-local ids only know the file stem.
    if design_id in file_units:
        return file_units[design_id]
    tail = design_id.rsplit("/", 1)[-1]
    return file_units.get(tail)


def corpus_stats(units: list[DesignUnit]) -> dict[str, int]:
    return {
        "designs": len(units),
        "total_lines": sum(u.line_count for u in units),
        "blank_lines": sum(1 for u in units for ln in u.lines if ln.is_blank),
        "comment_only_lines": sum(1 for u in units for ln in u.lines if ln.is_comment_only),
    }
